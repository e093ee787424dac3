#ifndef DBE_CHECKPOINT_HPP
#define DBE_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include "dbe/errors.hpp"
#include "dbe/model.hpp"

namespace dbe {

// Checkpoint layout (all integers little-endian):
//   magic "DBE2" (4 bytes)
//   variant code (0 static, 1 dynamic, 2 binned), V, T, K   u64 each
//   alpha then rho, row-major little-endian IEEE-754 float64
//   TrainConfig as UTF-8 key=value lines through end of file

namespace detail {

inline void write_u64_le(std::ostream& out, std::uint64_t x) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((x >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

inline std::uint64_t read_u64_le(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t x = 0;
  for (int i = 7; i >= 0; --i) x = (x << 8) | buf[i];
  return x;
}

inline void write_f64_array_le(std::ostream& out,
                               const std::vector<double>& xs) {
  for (const double v : xs) write_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

inline void read_f64_array_le(std::istream& in, std::vector<double>& xs) {
  for (double& v : xs) v = std::bit_cast<double>(read_u64_le(in));
}

}  // namespace detail

inline void save_checkpoint(const EmbeddingState& state,
                            const TrainConfig& config,
                            const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + tmp);
    out.write("DBE2", 4);
    detail::write_u64_le(out, static_cast<std::uint64_t>(state.variant));
    detail::write_u64_le(out, state.num_terms);
    detail::write_u64_le(out, state.num_slices);
    detail::write_u64_le(out, state.dim);
    detail::write_f64_array_le(out, state.alpha);
    detail::write_f64_array_le(out, state.rho);
    const std::string kv = config.to_kv();
    out.write(kv.data(), static_cast<std::streamsize>(kv.size()));
    if (!out) throw DataError("failed writing checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::pair<EmbeddingState, TrainConfig> load_checkpoint(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "DBE2", 4) != 0) {
    throw DataError("bad checkpoint magic: " + path);
  }
  const std::uint64_t code = detail::read_u64_le(in);
  if (code > 2) throw DataError("bad variant code in checkpoint: " + path);
  const auto v = static_cast<std::uint32_t>(detail::read_u64_le(in));
  const auto t = static_cast<std::uint32_t>(detail::read_u64_le(in));
  const auto k = static_cast<std::uint32_t>(detail::read_u64_le(in));
  EmbeddingState state(static_cast<Variant>(code), v, t, k);
  detail::read_f64_array_le(in, state.alpha);
  detail::read_f64_array_le(in, state.rho);
  if (!in) throw DataError("truncated checkpoint: " + path);
  std::string kv((std::istreambuf_iterator<char>(in)),
                 std::istreambuf_iterator<char>());
  TrainConfig config;
  config.apply_kv(kv);
  config.validate();
  if (!state.all_finite()) {
    throw NumericError("checkpoint contains non-finite parameters: " + path);
  }
  return {std::move(state), std::move(config)};
}

}  // namespace dbe

#endif  // DBE_CHECKPOINT_HPP
