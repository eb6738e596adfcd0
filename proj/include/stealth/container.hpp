#pragma once

// Binary snapshot container shared by models, feature clouds and jet-pack blocks:
//
//   bytes 0..7    magic "STLTHBIN"
//   bytes 8..15   header length L, uint64 little-endian
//   next L bytes  UTF-8 JSON header; header["arrays"] lists {name, rows, cols}
//   remainder     the listed arrays in order, row-major IEEE-754 binary64, little-endian

#include "stealth/linalg.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace stealth {

struct NamedArray {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<double> data;  // row-major
};

NamedArray pack(std::string name, const Matrix& m);
NamedArray pack(std::string name, const RowMatrix& m);
NamedArray pack(std::string name, const Vector& v);
Matrix unpack_matrix(const NamedArray& a);
RowMatrix unpack_row_matrix(const NamedArray& a);
Vector unpack_vector(const NamedArray& a);

struct Container {
  nlohmann::json header;
  std::map<std::string, NamedArray> arrays;

  const NamedArray& at(const std::string& name) const;
  bool has(const std::string& name) const { return arrays.count(name) != 0; }
};

void write_container(const std::filesystem::path& path, nlohmann::json header,
                     const std::vector<NamedArray>& arrays);
Container read_container(const std::filesystem::path& path);

}  // namespace stealth
