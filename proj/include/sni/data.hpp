#pragma once

// Dataset ingestion: scan a directory of PNG/JPEG files, decode, centre
// crop, resize, cache as fixed-size float records, stream shuffled batches.
//
// Cache layout (`images.f32`): one record per manifest entry, in manifest
// order. A record is resolution * resolution * 3 little-endian float32
// values, row-major HWC, RGB, in [-1, 1]. The manifest sits next to it as
// `manifest.json`.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sni/tensor.hpp"

namespace sni {

struct ManifestEntry {
  std::string path;  // relative to root, generic separators
  std::string sha256;
  std::uintmax_t bytes = 0;
  bool operator==(const ManifestEntry&) const = default;
};

struct SkipRecord {
  std::string path;
  std::string reason;
  bool operator==(const SkipRecord&) const = default;
};

struct DatasetManifest {
  std::string root;
  int resolution = 0;
  std::string channels = "rgb-hwc-f32le-[-1,1]";
  std::vector<ManifestEntry> entries;
  std::vector<SkipRecord> skipped;
  std::string cache;

  /// Hash over resolution, channel convention and (path, checksum) of every
  /// entry. Independent of root location and cache path.
  std::string content_hash() const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

struct IngestOptions {
  int workers = 2;
};

/// Lists PNG/JPEG files (by extension, case-insensitive) under `root`
/// recursively in lexicographic order of their relative paths, decodes each
/// one and records undecodable files in `skipped`. Throws DataError when the
/// directory is missing or nothing decodes.
DatasetManifest build_manifest(const std::filesystem::path& root, int resolution,
                               const IngestOptions& options = {});

/// Decodes every entry again and writes `images.f32` + `manifest.json` into
/// `cache_dir`. Returns the manifest with `cache` filled in.
DatasetManifest build_cache(const DatasetManifest& manifest, const std::filesystem::path& cache_dir,
                            const IngestOptions& options = {});

/// Reuses `cache_dir` when its manifest matches the directory contents,
/// otherwise (re)builds it.
DatasetManifest ingest(const std::filesystem::path& root, int resolution,
                       const std::filesystem::path& cache_dir, const IngestOptions& options = {});

/// The decoded cache held in memory.
class ImageCache {
 public:
  static ImageCache load(const std::filesystem::path& cache_dir);
  static ImageCache from_records(int resolution, std::vector<float> records);

  int resolution() const { return resolution_; }
  std::size_t size() const { return count_; }
  std::size_t record_length() const { return static_cast<std::size_t>(resolution_) * resolution_ * 3; }
  std::span<const float> record(std::size_t i) const;
  const DatasetManifest& manifest() const { return manifest_; }

  /// Items [first, first + count) as [count, 3, R, R].
  Tensor batch(std::size_t first, std::size_t count) const;

 private:
  int resolution_ = 0;
  std::size_t count_ = 0;
  std::vector<float> data_;
  DatasetManifest manifest_;
};

struct StreamPosition {
  std::uint64_t epoch = 0;
  std::uint64_t offset = 0;
  bool operator==(const StreamPosition&) const = default;
};

/// Epoch e visits a permutation seeded from (seed, e); the last batch of an
/// epoch may be short. With `flip`, each (epoch, item) draws a seeded
/// horizontal flip.
class BatchStream {
 public:
  BatchStream(const ImageCache& cache, int batch_size, std::uint64_t seed, bool flip = false);

  Tensor next();
  StreamPosition position() const { return pos_; }
  void seek(StreamPosition pos);
  std::vector<std::size_t> permutation(std::uint64_t epoch) const;

 private:
  const ImageCache* cache_;
  int batch_size_;
  std::uint64_t seed_;
  bool flip_;
  StreamPosition pos_;
  std::vector<std::size_t> order_;
  std::uint64_t order_epoch_ = ~0ull;
};

}  // namespace sni
