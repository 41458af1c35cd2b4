#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "refinery/classifier.hpp"
#include "refinery/hashing.hpp"
#include "refinery/serialize.hpp"

// Checkpoint format (little-endian):
//   magic "LRFY", u32 version, u32 name length, name bytes (UTF-8),
//   u32 num_classes, then for every layer in arch order the layer's tensors
//   (conv/fc: weight, bias; batchnorm: weight, bias, running_mean,
//   running_var), each encoded as u32 rank, u32 dims[rank], f32 payload.
// Round-trips are bit-exact.

namespace refinery {

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_tensor(std::ostream& os, const Tensor& t) {
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) write_u32(os, static_cast<std::uint32_t>(d));
  write_f32_array(os, t.data.data(), t.data.size());
}

inline Tensor read_tensor(std::istream& is, const std::string& path) {
  const std::uint32_t rank = read_u32(is, "tensor rank");
  if (rank > 8) throw IoError(path + ": implausible tensor rank");
  std::vector<std::size_t> shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i)
    shape[i] = read_u32(is, "tensor dim");
  Tensor t(shape);
  read_f32_array(is, t.data.data(), t.data.size(), "tensor payload");
  return t;
}

inline std::vector<const Tensor*> layer_tensors(const LayerSpec& spec,
                                                const LayerParams& p) {
  switch (spec.kind) {
    case LayerKind::Conv3x3:
    case LayerKind::FullyConnected:
      return {&p.weight, &p.bias};
    case LayerKind::BatchNorm:
      return {&p.weight, &p.bias, &p.running_mean, &p.running_var};
    default:
      return {};
  }
}

} // namespace detail

inline void save_checkpoint(const Classifier& model, const std::string& path) {
  auto os = open_output(path);
  write_bytes(os, "LRFY", 4);
  write_u32(os, kCheckpointVersion);
  write_u32(os, static_cast<std::uint32_t>(model.arch.name.size()));
  write_bytes(os, model.arch.name.data(), model.arch.name.size());
  write_u32(os, static_cast<std::uint32_t>(model.arch.num_classes));
  for (std::size_t i = 0; i < model.arch.layers.size(); ++i)
    for (const Tensor* t :
         detail::layer_tensors(model.arch.layers[i], model.params[i]))
      detail::write_tensor(os, *t);
}

/// SHA-256 of the checkpoint encoding of the in-memory model; the identity
/// used for teacher-immutability checks and label-cache keys.
inline std::string model_hash(const Classifier& model) {
  std::ostringstream os(std::ios::binary);
  write_bytes(os, "LRFY", 4);
  write_u32(os, kCheckpointVersion);
  write_u32(os, static_cast<std::uint32_t>(model.arch.name.size()));
  write_bytes(os, model.arch.name.data(), model.arch.name.size());
  write_u32(os, static_cast<std::uint32_t>(model.arch.num_classes));
  for (std::size_t i = 0; i < model.arch.layers.size(); ++i)
    for (const Tensor* t :
         detail::layer_tensors(model.arch.layers[i], model.params[i]))
      detail::write_tensor(os, *t);
  return sha256_hex(os.str());
}

inline Classifier load_checkpoint(const std::string& path) {
  auto is = open_input(path);
  expect_magic(is, "LRFY", path);
  const std::uint32_t version = read_u32(is, "version");
  if (version != kCheckpointVersion)
    throw IoError(path + ": unsupported checkpoint version " +
                  std::to_string(version));
  const std::uint32_t name_len = read_u32(is, "name length");
  if (name_len > 256) throw IoError(path + ": implausible architecture name");
  std::string name(name_len, '\0');
  read_bytes(is, name.data(), name_len, "architecture name");
  const std::uint32_t num_classes = read_u32(is, "num_classes");

  Classifier model;
  model.arch = arch_by_name(name, num_classes);
  model.params.resize(model.arch.layers.size());
  for (std::size_t i = 0; i < model.arch.layers.size(); ++i) {
    LayerParams& p = model.params[i];
    switch (model.arch.layers[i].kind) {
      case LayerKind::Conv3x3:
      case LayerKind::FullyConnected:
        p.weight = detail::read_tensor(is, path);
        p.bias = detail::read_tensor(is, path);
        break;
      case LayerKind::BatchNorm:
        p.weight = detail::read_tensor(is, path);
        p.bias = detail::read_tensor(is, path);
        p.running_mean = detail::read_tensor(is, path);
        p.running_var = detail::read_tensor(is, path);
        break;
      default:
        break;
    }
  }
  // Shape sanity against the declared architecture.
  for (std::size_t i = 0; i < model.arch.layers.size(); ++i) {
    const LayerSpec& l = model.arch.layers[i];
    const LayerParams& p = model.params[i];
    if (l.kind == LayerKind::Conv3x3 &&
        p.weight.shape != std::vector<std::size_t>{l.out, l.in, 3, 3})
      throw IoError(path + ": conv weight shape mismatch at layer " +
                    std::to_string(i));
    if (l.kind == LayerKind::FullyConnected &&
        p.weight.shape != std::vector<std::size_t>{l.out, l.in})
      throw IoError(path + ": fc weight shape mismatch at layer " +
                    std::to_string(i));
  }
  return model;
}

} // namespace refinery
