// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_CHECKPOINT_HPP_
#define NEFIC_CHECKPOINT_HPP_

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nefic/nn.hpp"

namespace nefic {

// Checkpoint file layout (little-endian):
//   "NFCK" | u32 version | u64 step | u32 cfg_len | cfg JSON |
//   u32 tensor_count | tensors...
// tensor: u32 name_len | name | u8 dtype (0=f32, 1=f64) | u8 ndim |
//         i64 dims[ndim] | raw values
// Same-dtype save/load round-trips parameters bit-exactly; cross-dtype loads
// cast element-wise.
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  NEFIC_CHECK(is.good(), ParseError, "checkpoint truncated reading ", what);
  return v;
}

template <class S>
constexpr uint8_t dtype_tag() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>,
                "checkpoints support float and double parameters");
  return std::is_same_v<S, float> ? 0 : 1;
}

}  // namespace detail

struct CheckpointMeta {
  uint64_t step = 0;
  std::string config_json;
};

template <class S>
void save_checkpoint(const std::string& path, const ParamStore<S>& ps,
                     uint64_t step, const std::string& config_json) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  NEFIC_CHECK(os.good(), IoError, "cannot write checkpoint '", path, "'");
  os.write("NFCK", 4);
  detail::write_pod(os, kCheckpointVersion);
  detail::write_pod(os, step);
  detail::write_pod(os, uint32_t(config_json.size()));
  os.write(config_json.data(), std::streamsize(config_json.size()));
  detail::write_pod(os, uint32_t(ps.entries().size()));
  for (const auto& e : ps.entries()) {
    detail::write_pod(os, uint32_t(e.name.size()));
    os.write(e.name.data(), std::streamsize(e.name.size()));
    detail::write_pod(os, detail::dtype_tag<S>());
    const auto& shape = e.var->shape();
    detail::write_pod(os, uint8_t(shape.size()));
    for (int64_t d : shape) detail::write_pod(os, d);
    os.write(reinterpret_cast<const char*>(e.var->value().data()),
             std::streamsize(size_t(e.var->numel()) * sizeof(S)));
  }
  NEFIC_CHECK(os.good(), IoError, "short write to checkpoint '", path, "'");
}

// Loads a checkpoint into an already-constructed parameter store. The file
// and the store must name exactly the same tensors with the same shapes;
// any mismatch is reported by name so silent architecture drift is
// impossible.
template <class S>
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<S>& ps) {
  std::ifstream is(path, std::ios::binary);
  NEFIC_CHECK(is.good(), IoError, "cannot open checkpoint '", path, "'");
  char magic[4] = {};
  is.read(magic, 4);
  NEFIC_CHECK(is.good() && std::memcmp(magic, "NFCK", 4) == 0, ParseError,
              "'", path, "' is not a checkpoint file");
  const auto version = detail::read_pod<uint32_t>(is, "version");
  NEFIC_CHECK(version == kCheckpointVersion, ParseError, "checkpoint '", path,
              "' has version ", version, ", expected ", kCheckpointVersion);
  CheckpointMeta meta;
  meta.step = detail::read_pod<uint64_t>(is, "step");
  const auto cfg_len = detail::read_pod<uint32_t>(is, "config length");
  meta.config_json.resize(cfg_len);
  is.read(meta.config_json.data(), std::streamsize(cfg_len));
  NEFIC_CHECK(is.good(), ParseError, "checkpoint truncated reading config");
  const auto count = detail::read_pod<uint32_t>(is, "tensor count");
  NEFIC_CHECK(size_t(count) == ps.entries().size(), ParseError, "checkpoint '",
              path, "' holds ", count, " tensors, model expects ",
              ps.entries().size());
  std::vector<bool> filled(ps.entries().size(), false);
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), std::streamsize(name_len));
    NEFIC_CHECK(is.good(), ParseError, "checkpoint truncated reading a name");
    const auto dtype = detail::read_pod<uint8_t>(is, "dtype");
    NEFIC_CHECK(dtype <= 1, ParseError, "checkpoint tensor '", name,
                "' has unknown dtype tag ", int(dtype));
    const auto ndim = detail::read_pod<uint8_t>(is, "rank");
    Shape shape(ndim);
    for (uint8_t d = 0; d < ndim; ++d)
      shape[d] = detail::read_pod<int64_t>(is, "dimension");

    Var<S>* target = ps.find(name);
    NEFIC_CHECK(target != nullptr, ParseError, "checkpoint tensor '", name,
                "' does not exist in the model");
    NEFIC_CHECK(target->shape() == shape, ParseError, "checkpoint tensor '",
                name, "' has shape ", shape_str(shape), ", model expects ",
                shape_str(target->shape()));
    int64_t numel = 1;
    for (int64_t d : shape) numel *= d;
    if (dtype == detail::dtype_tag<S>()) {
      is.read(reinterpret_cast<char*>(target->value().data()),
              std::streamsize(size_t(numel) * sizeof(S)));
    } else if (dtype == 0) {
      std::vector<float> buf(static_cast<size_t>(numel));
      is.read(reinterpret_cast<char*>(buf.data()),
              std::streamsize(buf.size() * sizeof(float)));
      for (int64_t j = 0; j < numel; ++j) target->value()[j] = S(buf[size_t(j)]);
    } else {
      std::vector<double> buf(static_cast<size_t>(numel));
      is.read(reinterpret_cast<char*>(buf.data()),
              std::streamsize(buf.size() * sizeof(double)));
      for (int64_t j = 0; j < numel; ++j) target->value()[j] = S(buf[size_t(j)]);
    }
    NEFIC_CHECK(is.good(), ParseError, "checkpoint truncated reading '", name,
                "'");
    for (size_t e = 0; e < ps.entries().size(); ++e)
      if (ps.entries()[e].name == name) filled[e] = true;
  }
  for (size_t e = 0; e < ps.entries().size(); ++e)
    NEFIC_CHECK(filled[e], ParseError, "checkpoint '", path,
                "' is missing tensor '", ps.entries()[e].name, "'");
  return meta;
}

// Reads only the metadata header (step + embedded config).
inline CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  NEFIC_CHECK(is.good(), IoError, "cannot open checkpoint '", path, "'");
  char magic[4] = {};
  is.read(magic, 4);
  NEFIC_CHECK(is.good() && std::memcmp(magic, "NFCK", 4) == 0, ParseError,
              "'", path, "' is not a checkpoint file");
  const auto version = detail::read_pod<uint32_t>(is, "version");
  NEFIC_CHECK(version == kCheckpointVersion, ParseError, "checkpoint '", path,
              "' has version ", version, ", expected ", kCheckpointVersion);
  CheckpointMeta meta;
  meta.step = detail::read_pod<uint64_t>(is, "step");
  const auto cfg_len = detail::read_pod<uint32_t>(is, "config length");
  meta.config_json.resize(cfg_len);
  is.read(meta.config_json.data(), std::streamsize(cfg_len));
  NEFIC_CHECK(is.good(), ParseError, "checkpoint truncated reading config");
  return meta;
}

}  // namespace nefic

#endif  // NEFIC_CHECKPOINT_HPP_
