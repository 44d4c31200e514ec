#include "depanx/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "depanx/error.hpp"
#include "depanx/hashing.hpp"

namespace depanx {
namespace {

template <class T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

template <class T>
T get_le(const char* p) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

std::size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }

}  // namespace

const NamedTensor& Container::tensor(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ValidationError("E_CHECKPOINT", "checkpoint has no tensor '" + std::string(name) + "'");
}

bool Container::has_tensor(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

std::string encode_container(const Container& c) {
  nlohmann::ordered_json header = c.header;
  auto index = nlohmann::ordered_json::array();
  std::string payload;
  for (const auto& t : c.tensors) {
    if (static_cast<Eigen::Index>(t.values.size()) != t.rows * t.cols) {
      throw ValidationError("E_CHECKPOINT", "tensor '" + t.name + "' size does not match its shape");
    }
    const std::size_t offset = payload.size();
    for (double v : t.values) {
      if (t.dtype == Dtype::F32) {
        put_le(payload, static_cast<float>(v));
      } else {
        put_le(payload, v);
      }
    }
    index.push_back(nlohmann::ordered_json{
        {"name", t.name},
        {"shape", {t.rows, t.cols}},
        {"dtype", t.dtype == Dtype::F32 ? "f32" : "f64"},
        {"order", "column-major"},
        {"offset", offset},
        {"nbytes", payload.size() - offset},
    });
  }
  header["tensors"] = std::move(index);
  const std::string header_text = header.dump();
  std::string out(kContainerMagic);
  put_le(out, static_cast<std::uint64_t>(header_text.size()));
  out += header_text;
  out += payload;
  return out;
}

Container decode_container(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 8) != kContainerMagic) {
    throw ValidationError("E_CHECKPOINT", "not an EHLM1 container");
  }
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw ValidationError("E_CHECKPOINT", "truncated header");
  Container c;
  try {
    c.header = nlohmann::ordered_json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("E_CHECKPOINT", std::string("bad header: ") + e.what());
  }
  const std::string_view payload = bytes.substr(16 + header_len);
  auto index = c.header.at("tensors");
  c.header.erase("tensors");
  for (const auto& entry : index) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.rows = entry.at("shape").at(0).get<Eigen::Index>();
    t.cols = entry.at("shape").at(1).get<Eigen::Index>();
    const auto dtype = entry.at("dtype").get<std::string>();
    if (dtype != "f32" && dtype != "f64") throw ValidationError("E_CHECKPOINT", "unknown dtype " + dtype);
    if (entry.at("order").get<std::string>() != "column-major") {
      throw ValidationError("E_CHECKPOINT", "unsupported tensor order");
    }
    t.dtype = dtype == "f32" ? Dtype::F32 : Dtype::F64;
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto nbytes = entry.at("nbytes").get<std::size_t>();
    const std::size_t count = static_cast<std::size_t>(t.rows * t.cols);
    if (nbytes != count * dtype_size(t.dtype) || offset + nbytes > payload.size()) {
      throw ValidationError("E_CHECKPOINT", "tensor '" + t.name + "' payload out of bounds");
    }
    t.values.resize(count);
    const char* p = payload.data() + offset;
    for (std::size_t k = 0; k < count; ++k) {
      t.values[k] = t.dtype == Dtype::F32 ? static_cast<double>(get_le<float>(p + 4 * k))
                                          : get_le<double>(p + 8 * k);
    }
    c.tensors.push_back(std::move(t));
  }
  return c;
}

void save_container(const Container& container, const std::filesystem::path& path) {
  write_file_atomic(path, encode_container(container));
}

Container load_container(const std::filesystem::path& path) {
  return decode_container(read_file(path));
}

NamedTensor to_tensor(const std::string& name, const Mat& m, Dtype dtype) {
  NamedTensor t;
  t.name = name;
  t.rows = m.rows();
  t.cols = m.cols();
  t.dtype = dtype;
  t.values.assign(m.data(), m.data() + m.size());
  return t;
}

Mat to_matrix(const NamedTensor& t) {
  Mat m(t.rows, t.cols);
  std::copy(t.values.begin(), t.values.end(), m.data());
  return m;
}

}  // namespace depanx
