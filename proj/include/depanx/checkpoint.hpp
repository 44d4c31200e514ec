#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "depanx/lstm.hpp"

namespace depanx {

enum class Dtype { F32, F64 };

struct NamedTensor {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Dtype dtype = Dtype::F64;
  std::vector<double> values;  // column-major
};

/// EHLM1 container:
///   8 bytes   magic "EHLM1\0\0\0"
///   8 bytes   header length n, little-endian uint64
///   n bytes   JSON header: caller fields, then "tensors": [{name, shape
///             [rows, cols], dtype, order "column-major", offset, nbytes}]
///   payload   little-endian IEEE-754 values; offsets relative to payload start
struct Container {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(std::string_view name) const;
  bool has_tensor(std::string_view name) const;
};

inline constexpr std::string_view kContainerMagic{"EHLM1\0\0\0", 8};

std::string encode_container(const Container& container);
Container decode_container(std::string_view bytes);

void save_container(const Container& container, const std::filesystem::path& path);
Container load_container(const std::filesystem::path& path);

NamedTensor to_tensor(const std::string& name, const Mat& m, Dtype dtype);
Mat to_matrix(const NamedTensor& t);

}  // namespace depanx
