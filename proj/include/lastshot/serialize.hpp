#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lastshot/classworld.hpp"
#include "lastshot/matrix.hpp"
#include "lastshot/mlp.hpp"
#include "lastshot/pretrain.hpp"
#include "lastshot/teachers.hpp"

namespace lastshot {

static_assert(std::endian::native == std::endian::little,
              "binary containers are little-endian");

/// Versioned binary container: 8-byte magic, u32 version, then raw
/// little-endian fields in declaration order.
class BinaryWriter {
 public:
  BinaryWriter(const std::string& path, const char magic[8],
               std::uint32_t version)
      : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw IoError("cannot open for write: " + path);
    out_.write(magic, 8);
    put_u32(version);
  }

  void put_u32(std::uint32_t v) { raw(&v, sizeof v); }
  void put_u64(std::uint64_t v) { raw(&v, sizeof v); }
  void put_i32(std::int32_t v) { raw(&v, sizeof v); }
  void put_f64(double v) { raw(&v, sizeof v); }
  void put_u8(std::uint8_t v) { raw(&v, sizeof v); }

  void put_matrix(const Matrix& m) {
    put_u64(m.rows);
    put_u64(m.cols);
    raw(m.data.data(), m.data.size() * sizeof(double));
  }

  void put_mlp(const MlpParams& p) {
    put_u64(p.layers.size());
    for (const auto& l : p.layers) {
      put_matrix(l.weight);
      put_matrix(l.bias);
    }
    put_u64(p.hidden_acts.size());
    for (Activation a : p.hidden_acts) put_u8(static_cast<std::uint8_t>(a));
  }

  void put_ints(const std::vector<int>& v) {
    put_u64(v.size());
    raw(v.data(), v.size() * sizeof(int));
  }

  void put_doubles(const std::vector<double>& v) {
    put_u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }

  void close() {
    out_.close();
    if (!out_) throw IoError("write failed: " + path_);
  }

 private:
  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed: " + path_);
  }
  std::ofstream out_;
  std::string path_;
};

class BinaryReader {
 public:
  BinaryReader(const std::string& path, const char magic[8],
               std::uint32_t expect_version)
      : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open for read: " + path);
    char got[8];
    raw(got, 8);
    if (std::memcmp(got, magic, 8) != 0)
      throw IoError("bad magic in " + path);
    std::uint32_t v = get_u32();
    if (v != expect_version)
      throw IoError("unsupported version " + std::to_string(v) + " in " + path);
  }

  std::uint32_t get_u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
  std::uint64_t get_u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
  std::int32_t get_i32() { std::int32_t v; raw(&v, sizeof v); return v; }
  double get_f64() { double v; raw(&v, sizeof v); return v; }
  std::uint8_t get_u8() { std::uint8_t v; raw(&v, sizeof v); return v; }

  Matrix get_matrix() {
    std::uint64_t r = get_u64(), c = get_u64();
    Matrix m(r, c);
    raw(m.data.data(), m.data.size() * sizeof(double));
    return m;
  }

  MlpParams get_mlp() {
    MlpParams p;
    std::uint64_t n = get_u64();
    for (std::uint64_t i = 0; i < n; ++i) {
      MlpParams::Layer l;
      l.weight = get_matrix();
      l.bias = get_matrix();
      p.layers.push_back(std::move(l));
    }
    std::uint64_t na = get_u64();
    for (std::uint64_t i = 0; i < na; ++i)
      p.hidden_acts.push_back(static_cast<Activation>(get_u8()));
    return p;
  }

  std::vector<int> get_ints() {
    std::vector<int> v(get_u64());
    raw(v.data(), v.size() * sizeof(int));
    return v;
  }

  std::vector<double> get_doubles() {
    std::vector<double> v(get_u64());
    raw(v.data(), v.size() * sizeof(double));
    return v;
  }

 private:
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw IoError("truncated read: " + path_);
  }
  std::ifstream in_;
  std::string path_;
};

inline constexpr char kWorldMagic[8] = {'L', 'S', 'W', 'O', 'R', 'L', 'D', '1'};
inline constexpr std::uint32_t kWorldVersion = 1;

inline void save_world(const ClassWorld& w, const std::string& path) {
  BinaryWriter bw(path, kWorldMagic, kWorldVersion);
  bw.put_u64(w.cfg.latent_dim);
  bw.put_u64(w.cfg.obs_dim);
  bw.put_u64(w.cfg.num_classes);
  bw.put_u64(w.cfg.base_classes);
  bw.put_u64(w.cfg.val_classes);
  bw.put_u64(w.cfg.novel_classes);
  bw.put_f64(w.cfg.within_class_sigma);
  bw.put_u64(w.cfg.mixer_hidden);
  bw.put_u8(w.cfg.identity_mixer ? 1 : 0);
  bw.put_u64(w.seed);
  bw.put_matrix(w.class_means);
  bw.put_mlp(w.mixer);
  bw.put_u8(w.pool_cache ? 1 : 0);
  if (w.pool_cache) {
    bw.put_u64(w.pool_cache->per_class);
    bw.put_u64(w.pool_cache->num_base);
    bw.put_matrix(w.pool_cache->x);
    bw.put_ints(w.pool_cache->labels);
  }
  bw.close();
}

inline ClassWorld load_world(const std::string& path) {
  BinaryReader br(path, kWorldMagic, kWorldVersion);
  ClassWorld w;
  w.cfg.latent_dim = br.get_u64();
  w.cfg.obs_dim = br.get_u64();
  w.cfg.num_classes = br.get_u64();
  w.cfg.base_classes = br.get_u64();
  w.cfg.val_classes = br.get_u64();
  w.cfg.novel_classes = br.get_u64();
  w.cfg.within_class_sigma = br.get_f64();
  w.cfg.mixer_hidden = br.get_u64();
  w.cfg.identity_mixer = br.get_u8() != 0;
  w.seed = br.get_u64();
  w.class_means = br.get_matrix();
  w.mixer = br.get_mlp();
  if (br.get_u8() != 0) {
    auto pool = std::make_shared<BasePool>();
    pool->per_class = br.get_u64();
    pool->num_base = br.get_u64();
    pool->x = br.get_matrix();
    pool->labels = br.get_ints();
    w.pool_cache = pool;
  }
  return w;
}

inline constexpr char kPretrainedMagic[8] = {'L', 'S', 'P', 'R', 'E', 'T', 'R', '1'};
inline constexpr std::uint32_t kPretrainedVersion = 1;

inline void save_pretrained(const PretrainedModel& m, const std::string& path) {
  BinaryWriter bw(path, kPretrainedMagic, kPretrainedVersion);
  bw.put_mlp(m.encoder);
  bw.put_matrix(m.head);
  bw.put_u64(m.num_base);
  bw.put_u8(m.cache_ready ? 1 : 0);
  if (m.cache_ready) {
    bw.put_matrix(m.feature_cache);
    bw.put_matrix(m.class_feature_means);
    bw.put_matrix(m.base_feature_mean);
  }
  bw.close();
}

inline PretrainedModel load_pretrained(const std::string& path) {
  BinaryReader br(path, kPretrainedMagic, kPretrainedVersion);
  PretrainedModel m;
  m.encoder = br.get_mlp();
  m.head = br.get_matrix();
  m.num_base = br.get_u64();
  m.cache_ready = br.get_u8() != 0;
  if (m.cache_ready) {
    m.feature_cache = br.get_matrix();
    m.class_feature_means = br.get_matrix();
    m.base_feature_mean = br.get_matrix();
  }
  return m;
}

inline constexpr char kAnchorMagic[8] = {'L', 'S', 'A', 'N', 'C', 'H', 'R', '1'};
inline constexpr std::uint32_t kAnchorVersion = 1;

/// Persists the built cells of an anchor grid for reuse across runs.
inline void save_anchor_cache(const AnchorGrid& grid, const std::string& path) {
  BinaryWriter bw(path, kAnchorMagic, kAnchorVersion);
  bw.put_u64(grid.seed());
  bw.put_f64(grid.config().step);
  bw.put_u64(grid.config().samples_per_anchor);
  bw.put_u64(grid.config().feature_width);
  auto cells = grid.snapshot();
  bw.put_u64(cells.size());
  for (const auto& [cell, w] : cells) {
    bw.put_u32(cell);
    bw.put_matrix(w);
  }
  bw.close();
}

/// Preloads cached cells into `grid`; rejects caches built under a different
/// seed or geometry (those weights would belong to another feature net).
inline std::size_t load_anchor_cache(AnchorGrid& grid,
                                     const std::string& path) {
  BinaryReader br(path, kAnchorMagic, kAnchorVersion);
  std::uint64_t seed = br.get_u64();
  double step = br.get_f64();
  std::uint64_t samples = br.get_u64();
  std::uint64_t width = br.get_u64();
  if (seed != grid.seed() || step != grid.config().step ||
      samples != grid.config().samples_per_anchor ||
      width != grid.config().feature_width)
    throw IoError("anchor cache " + path +
                  " was built under a different grid configuration");
  std::uint64_t n = br.get_u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint32_t cell = br.get_u32();
    grid.preload(cell, br.get_matrix());
  }
  return n;
}

}  // namespace lastshot
