#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "modeplan/optim.hpp"

namespace modeplan {

// Checkpoint container: little-endian binary, a text metadata section
// (key=value lines) followed by named float64 blocks.
//
//   magic "MPCKPT01"
//   u32 meta_len, meta bytes
//   u32 block_count
//   per block: u32 name_len, name, u32 rank, i32 dims[rank], f64 payload
namespace detail {

inline void put_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t get_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::map<std::string, std::string>& meta,
                            const ParamStore& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write("MPCKPT01", 8);
  std::string meta_text;
  for (const auto& [k, v] : meta) meta_text += k + "=" + v + "\n";
  detail::put_u32(out, uint32_t(meta_text.size()));
  out.write(meta_text.data(), std::streamsize(meta_text.size()));
  detail::put_u32(out, uint32_t(params.size()));
  for (int i = 0; i < params.size(); ++i) {
    const ParamBlock& b = params[i];
    detail::put_u32(out, uint32_t(b.name.size()));
    out.write(b.name.data(), std::streamsize(b.name.size()));
    detail::put_u32(out, uint32_t(b.value.shape.size()));
    for (int d : b.value.shape) {
      int32_t dd = d;
      out.write(reinterpret_cast<const char*>(&dd), 4);
    }
    out.write(reinterpret_cast<const char*>(b.value.data.data()),
              std::streamsize(b.value.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed " + path);
}

// Loads blocks into `params` (created in file order) and returns metadata.
inline std::map<std::string, std::string> load_checkpoint(
    const std::string& path, ParamStore& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "MPCKPT01", 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t meta_len = detail::get_u32(in);
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), meta_len);
  std::map<std::string, std::string> meta;
  size_t pos = 0;
  while (pos < meta_text.size()) {
    size_t nl = meta_text.find('\n', pos);
    if (nl == std::string::npos) nl = meta_text.size();
    std::string line = meta_text.substr(pos, nl - pos);
    size_t eq = line.find('=');
    if (eq != std::string::npos)
      meta[line.substr(0, eq)] = line.substr(eq + 1);
    pos = nl + 1;
  }
  uint32_t count = detail::get_u32(in);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = detail::get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t rank = detail::get_u32(in);
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      int32_t dd = 0;
      in.read(reinterpret_cast<char*>(&dd), 4);
      shape[d] = dd;
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            std::streamsize(t.data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated block in " + path);
    int idx = params.find(name);
    if (idx < 0) {
      // 2-D fallback for blocks created from scratch
      int rows = shape.empty() ? 1 : shape[0];
      int cols = int(t.numel() / std::max(1, rows));
      idx = params.add(name, rows, cols);
    }
    if (params[idx].value.numel() != t.numel())
      throw std::runtime_error("checkpoint: size mismatch for block " + name);
    params[idx].value.shape = t.shape;
    params[idx].value.data = std::move(t.data);
  }
  return meta;
}

}  // namespace modeplan
