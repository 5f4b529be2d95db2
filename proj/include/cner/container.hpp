#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cner/tensor.hpp"

namespace cner {

// Binary model container shared by every model kind:
//
//   magic      8 bytes  "CNERMDL1"
//   metadata   u32 LE byte length, then UTF-8 `key=value\n` lines (keys sorted)
//   count      u32 LE number of records
//   records    sorted by name:
//                u32 LE name length, name bytes, u32 LE rank,
//                rank x u32 LE dims, product(dims) x float32 LE
//
// Readers reject a wrong magic, any truncated field or record, and trailing bytes.

inline constexpr std::string_view kContainerMagic = "CNERMDL1";

class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KindMismatchError : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

struct TensorRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  bool operator==(const TensorRecord&) const = default;
};

struct ModelContainer {
  std::map<std::string, std::string> metadata;
  std::map<std::string, TensorRecord> tensors;

  const std::string& get(const std::string& key) const {
    const auto it = metadata.find(key);
    if (it == metadata.end()) throw ContainerError("container metadata lacks key '" + key + "'");
    return it->second;
  }

  std::string kind() const {
    const auto it = metadata.find("kind");
    return it == metadata.end() ? std::string() : it->second;
  }

  void expect_kind(const std::string& expected) const {
    const std::string actual = kind();
    if (actual != expected) {
      throw KindMismatchError("expected a model of kind '" + expected + "', got '" + (actual.empty() ? "?" : actual) + "'");
    }
  }

  bool operator==(const ModelContainer&) const = default;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw ContainerError(std::string("truncated container: ") + what);
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32(const char* what) {
    const auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string write_container(const ModelContainer& container) {
  std::string meta;
  for (const auto& [key, value] : container.metadata) {
    if (key.empty() || key.find_first_of("=\n") != std::string::npos) {
      throw ContainerError("invalid metadata key '" + key + "'");
    }
    if (value.find('\n') != std::string::npos) throw ContainerError("metadata value for '" + key + "' contains a newline");
    meta += key + "=" + value + "\n";
  }
  std::string out(kContainerMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  detail::put_u32(out, static_cast<std::uint32_t>(container.tensors.size()));
  for (const auto& [name, record] : container.tensors) {
    if (name != record.name) throw ContainerError("tensor record keyed under a different name: '" + name + "'");
    std::size_t count = 1;
    for (auto d : record.dims) count *= d;
    if (record.dims.empty() || count != record.data.size()) {
      throw ContainerError("tensor '" + name + "' has inconsistent dims");
    }
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(record.dims.size()));
    for (auto d : record.dims) detail::put_u32(out, d);
    for (float f : record.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      detail::put_u32(out, bits);
    }
  }
  return out;
}

inline ModelContainer read_container(std::string_view bytes) {
  detail::Reader reader(bytes);
  if (bytes.size() < kContainerMagic.size() || bytes.substr(0, kContainerMagic.size()) != kContainerMagic) {
    throw ContainerError("not a model container (bad magic)");
  }
  reader.take(kContainerMagic.size(), "magic");
  ModelContainer container;
  const std::uint32_t meta_len = reader.u32("metadata length");
  const std::string_view meta = reader.take(meta_len, "metadata block");
  std::size_t pos = 0;
  while (pos < meta.size()) {
    const std::size_t eol = meta.find('\n', pos);
    if (eol == std::string_view::npos) throw ContainerError("metadata block is not newline-terminated");
    const std::string_view line = meta.substr(pos, eol - pos);
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos || eq == 0) throw ContainerError("malformed metadata line");
    container.metadata[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
    pos = eol + 1;
  }
  const std::uint32_t records = reader.u32("record count");
  for (std::uint32_t n = 0; n < records; ++n) {
    TensorRecord record;
    const std::uint32_t name_len = reader.u32("record name length");
    record.name = std::string(reader.take(name_len, "record name"));
    const std::uint32_t rank = reader.u32("record rank");
    if (rank == 0 || rank > 3) throw ContainerError("record '" + record.name + "' has unsupported rank");
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      record.dims.push_back(reader.u32("record dims"));
      count *= record.dims.back();
    }
    if (count == 0) throw ContainerError("record '" + record.name + "' has a zero dimension");
    const std::string_view raw = reader.take(count * 4, "record data");
    record.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(raw[i * 4 + static_cast<std::size_t>(b)]);
      std::memcpy(&record.data[i], &bits, sizeof bits);
    }
    const std::string name = record.name;
    if (!container.tensors.emplace(name, std::move(record)).second) {
      throw ContainerError("duplicate record '" + name + "'");
    }
  }
  if (!reader.done()) throw ContainerError("trailing bytes after the last record");
  return container;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline ModelContainer load_container(const std::string& path) { return read_container(read_file_bytes(path)); }

inline void save_container(const std::string& path, const ModelContainer& container) {
  write_file_bytes(path, write_container(container));
}

/// Stores every parameter as float32.
template <class T>
void store_parameters(ModelContainer& container, const nn::ParameterList<T>& params) {
  for (const auto* p : nn::sorted_by_name(params)) {
    TensorRecord record;
    record.name = p->name;
    for (auto d : p->value.dims()) record.dims.push_back(static_cast<std::uint32_t>(d));
    record.data.reserve(p->value.size());
    for (T v : p->value.values()) record.data.push_back(static_cast<float>(v));
    container.tensors[p->name] = std::move(record);
  }
}

/// Fills `params` from the container; names and shapes must match exactly.
template <class T>
void load_parameters(const ModelContainer& container, const nn::ParameterList<T>& params) {
  if (container.tensors.size() != params.size()) {
    throw ContainerError("container holds " + std::to_string(container.tensors.size()) + " tensors, model expects " +
                         std::to_string(params.size()));
  }
  for (auto* p : params) {
    const auto it = container.tensors.find(p->name);
    if (it == container.tensors.end()) throw ContainerError("container lacks tensor '" + p->name + "'");
    std::vector<std::size_t> dims(it->second.dims.begin(), it->second.dims.end());
    if (dims != p->value.dims()) throw ContainerError("tensor '" + p->name + "' has unexpected shape");
    for (std::size_t i = 0; i < it->second.data.size(); ++i) p->value[i] = static_cast<T>(it->second.data[i]);
    p->zero_grad();
  }
}

// Metadata helpers

// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline long long metadata_int(const ModelContainer& c, const std::string& key) {
  const std::string& v = c.get(key);
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ContainerError("metadata '" + key + "' is not an integer");
  return out;
}

inline double metadata_double(const ModelContainer& c, const std::string& key) {
  const std::string& v = c.get(key);
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ContainerError("metadata '" + key + "' is not a number");
  return out;
}

}  // namespace cner
