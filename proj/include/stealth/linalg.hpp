#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace stealth {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Row-major storage, used wherever rows are scanned as contiguous vectors.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Byte-level vocabulary.
inline constexpr int kVocabSize = 256;

using Token = std::uint8_t;
using Prompt = std::vector<Token>;

inline Prompt prompt_from_text(std::string_view text) {
  return Prompt(text.begin(), text.end());
}

inline std::string prompt_to_text(const Prompt& p) {
  return std::string(p.begin(), p.end());
}

/// Printable form of a prompt: the text itself, with backslash and non-printable
/// bytes written as \xNN. Distinct prompts give distinct strings.
std::string prompt_id(const Prompt& prompt);
/// Inverse of prompt_id. Throws ValidationError on a malformed escape.
Prompt prompt_from_id(std::string_view id);

inline Prompt concat(const Prompt& a, const Prompt& b) {
  Prompt out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline std::vector<double> to_std(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace stealth

#include <cstring>

namespace stealth {

/// Same shape and identical bit patterns (stricter than ==, which conflates +0 and -0).
template <typename A, typename B>
bool bitwise_equal(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double x = a(i, j);
      const double y = b(i, j);
      if (std::memcmp(&x, &y, sizeof(double)) != 0) return false;
    }
  }
  return true;
}

}  // namespace stealth
