#include "stealth/container.hpp"

#include "stealth/error.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace stealth {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'L', 'T', 'H', 'B', 'I', 'N'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw PipelineError("truncated container");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& os, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  put_u64(os, bits);
}

double get_f64(std::istream& is) {
  const std::uint64_t bits = get_u64(is);
  double x;
  std::memcpy(&x, &bits, sizeof x);
  return x;
}

}  // namespace

NamedArray pack(std::string name, const Matrix& m) {
  NamedArray a{std::move(name), m.rows(), m.cols(), {}};
  a.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.data.push_back(m(i, j));
  return a;
}

NamedArray pack(std::string name, const RowMatrix& m) {
  return NamedArray{std::move(name), m.rows(), m.cols(),
                    std::vector<double>(m.data(), m.data() + m.size())};
}

NamedArray pack(std::string name, const Vector& v) {
  return NamedArray{std::move(name), v.size(), 1, to_std(v)};
}

Matrix unpack_matrix(const NamedArray& a) {
  return unpack_row_matrix(a);
}

RowMatrix unpack_row_matrix(const NamedArray& a) {
  if (static_cast<Eigen::Index>(a.data.size()) != a.rows * a.cols)
    throw PipelineError("array " + a.name + " has inconsistent size");
  return Eigen::Map<const RowMatrix>(a.data.data(), a.rows, a.cols);
}

Vector unpack_vector(const NamedArray& a) {
  if (a.cols != 1 && a.rows * a.cols != 0) throw PipelineError("array " + a.name + " is not a vector");
  return from_std(a.data);
}

const NamedArray& Container::at(const std::string& name) const {
  const auto it = arrays.find(name);
  if (it == arrays.end()) throw PipelineError("container is missing array " + name);
  return it->second;
}

void write_container(const std::filesystem::path& path, nlohmann::json header,
                     const std::vector<NamedArray>& arrays) {
  header["arrays"] = nlohmann::json::array();
  for (const NamedArray& a : arrays)
    header["arrays"].push_back({{"name", a.name}, {"rows", a.rows}, {"cols", a.cols}});
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw PipelineError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof kMagic);
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const NamedArray& a : arrays)
    for (double x : a.data) put_f64(os, x);
  if (!os) throw PipelineError("write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PipelineError("cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || !std::equal(magic, magic + 8, kMagic))
    throw PipelineError(path.string() + " is not a snapshot container");
  const std::uint64_t len = get_u64(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw PipelineError("truncated container header");
  Container c;
  try {
    c.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError(std::string("bad container header: ") + e.what());
  }
  for (const auto& spec : c.header.at("arrays")) {
    NamedArray a;
    a.name = spec.at("name").get<std::string>();
    a.rows = spec.at("rows").get<Eigen::Index>();
    a.cols = spec.at("cols").get<Eigen::Index>();
    a.data.resize(static_cast<std::size_t>(a.rows * a.cols));
    for (double& x : a.data) x = get_f64(is);
    c.arrays.emplace(a.name, std::move(a));
  }
  return c;
}

}  // namespace stealth
