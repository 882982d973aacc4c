#pragma once

// Binary checkpoint: magic "MBCG", version, shape header, then
// row-major float32 parameter arrays. Byte order is little-endian by
// explicit byte writes, independent of host endianness. Parameters
// quantized through float32 before saving round-trip bitwise.

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>

#include "mbrec/cascade.hpp"
#include "mbrec/core.hpp"

namespace mbrec {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t value) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
  out.write(bytes, 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  char bytes[4];
  in.read(bytes, 4);
  if (!in) throw IoError("checkpoint: truncated file");
  std::uint32_t value = 0;
  for (int i = 0; i < 4; ++i)
    value |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  return value;
}

inline void write_f32(std::ostream& out, float value) {
  write_u32(out, std::bit_cast<std::uint32_t>(value));
}

inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_u32(in)); }

inline void write_matrix(std::ostream& out, const Mat& m) {
  for (std::size_t k = 0; k < m.size(); ++k)
    write_f32(out, static_cast<float>(m.data()[k]));
}

inline Mat read_matrix(std::istream& in, Index rows, Index cols) {
  Mat m(rows, cols);
  for (std::size_t k = 0; k < m.size(); ++k)
    m.data()[k] = static_cast<double>(read_f32(in));
  return m;
}

}  // namespace detail

// Narrows every parameter entry to float32 precision in place. Applied
// before the final evaluation so reported metrics match what the
// checkpoint stores.
inline void quantize_to_f32(CascadeParams& params) {
  for (Mat* t : tensor_list(params))
    for (std::size_t k = 0; k < t->size(); ++k)
      t->data()[k] = static_cast<double>(static_cast<float>(t->data()[k]));
}

inline void save_checkpoint(std::ostream& out, const ModelConfig& config,
                            const CascadeParams& params) {
  config.validate();
  check_params_match(config, params);
  out.write("MBCG", 4);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(params.num_users()));
  detail::write_u32(out, static_cast<std::uint32_t>(params.num_items()));
  detail::write_u32(out, static_cast<std::uint32_t>(config.embed_dim));
  detail::write_u32(out, static_cast<std::uint32_t>(config.num_behaviors()));
  detail::write_u32(out, static_cast<std::uint32_t>(config.aggregation));
  detail::write_u32(out, config.transform_enabled ? 1u : 0u);
  for (Index l : config.layers) detail::write_u32(out, static_cast<std::uint32_t>(l));
  detail::write_matrix(out, params.user_embed);
  detail::write_matrix(out, params.item_embed);
  for (const Mat& w : params.user_transforms) detail::write_matrix(out, w);
  for (const Mat& w : params.item_transforms) detail::write_matrix(out, w);
  if (!out) throw IoError("checkpoint: write failed");
}

inline void save_checkpoint(const std::string& path, const ModelConfig& config,
                            const CascadeParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  save_checkpoint(out, config, params);
  out.flush();
  if (!out) throw IoError("cannot write checkpoint: " + path);
}

inline std::pair<ModelConfig, CascadeParams> load_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "MBCG") throw IoError("checkpoint: bad magic");
  const std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const auto num_users = static_cast<Index>(detail::read_u32(in));
  const auto num_items = static_cast<Index>(detail::read_u32(in));
  const auto dim = static_cast<Index>(detail::read_u32(in));
  const auto num_behaviors = static_cast<Index>(detail::read_u32(in));
  const std::uint32_t agg_code = detail::read_u32(in);
  if (agg_code > 2) throw IoError("checkpoint: unknown aggregation code");
  const std::uint32_t transform_flag = detail::read_u32(in);
  if (transform_flag > 1) throw IoError("checkpoint: bad transform flag");

  ModelConfig config;
  config.embed_dim = dim;
  config.aggregation = static_cast<Aggregation>(agg_code);
  config.transform_enabled = transform_flag == 1;
  config.layers.resize(static_cast<std::size_t>(num_behaviors));
  for (Index& l : config.layers) l = static_cast<Index>(detail::read_u32(in));
  config.validate();

  CascadeParams params;
  params.user_embed = detail::read_matrix(in, num_users, dim);
  params.item_embed = detail::read_matrix(in, num_items, dim);
  if (config.has_transforms()) {
    for (Index b = 1; b < num_behaviors; ++b)
      params.user_transforms.push_back(detail::read_matrix(in, dim, dim));
    for (Index b = 1; b < num_behaviors; ++b)
      params.item_transforms.push_back(detail::read_matrix(in, dim, dim));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("checkpoint: trailing bytes");
  return {std::move(config), std::move(params)};
}

inline std::pair<ModelConfig, CascadeParams> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  return load_checkpoint(in);
}

}  // namespace mbrec
