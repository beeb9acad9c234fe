#include "sni/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <future>
#include <numeric>
#include <optional>
#include <random>

#include "sni/error.hpp"
#include "sni/hash.hpp"
#include "sni/image.hpp"
#include "sni/rng.hpp"

namespace sni {

static_assert(std::endian::native == std::endian::little, "cache records are little-endian");

namespace fs = std::filesystem;

namespace {

constexpr const char* kCacheFile = "images.f32";
constexpr const char* kManifestFile = "manifest.json";

bool is_image_path(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

struct Decoded {
  ManifestEntry entry;
  std::optional<Image> image;
  std::string error;
};

Decoded decode_one(const fs::path& root, const std::string& rel, int resolution, bool keep) {
  Decoded d;
  d.entry.path = rel;
  try {
    const auto bytes = read_bytes(root / rel);
    d.entry.bytes = bytes.size();
    d.entry.sha256 = sha256_hex(std::span<const std::uint8_t>(bytes));
    Image img = center_crop_resize(decode_image(bytes), resolution);
    if (keep) d.image = std::move(img);
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  return d;
}

std::vector<std::string> list_images(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset directory " + root.string() + " does not exist");
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && is_image_path(e.path())) {
      out.push_back(fs::relative(e.path(), root).generic_string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Decodes in windows of parallel tasks and hands results to `sink` in
// list order regardless of completion order.
template <typename Sink>
void decode_all(const fs::path& root, const std::vector<std::string>& files, int resolution, bool keep,
                int workers, Sink&& sink) {
  const std::size_t window = static_cast<std::size_t>(std::max(1, workers)) * 4;
  for (std::size_t first = 0; first < files.size(); first += window) {
    const std::size_t last = std::min(files.size(), first + window);
    std::vector<std::future<Decoded>> jobs;
    for (std::size_t i = first; i < last; ++i) {
      const auto policy = workers > 1 ? std::launch::async : std::launch::deferred;
      jobs.push_back(std::async(policy, decode_one, root, files[i], resolution, keep));
    }
    for (auto& j : jobs) sink(j.get());
  }
}

void check_resolution(int resolution) {
  if (resolution < 1) throw DataError("resolution must be positive");
}

DatasetManifest scan(const fs::path& root, int resolution, const IngestOptions& options,
                     std::vector<float>* records) {
  check_resolution(resolution);
  DatasetManifest m;
  m.root = fs::absolute(root).lexically_normal().generic_string();
  m.resolution = resolution;
  const auto files = list_images(root);
  decode_all(root, files, resolution, records != nullptr, options.workers, [&](Decoded d) {
    if (!d.error.empty()) {
      m.skipped.push_back({d.entry.path, d.error});
      return;
    }
    m.entries.push_back(d.entry);
    if (records) records->insert(records->end(), d.image->rgb.begin(), d.image->rgb.end());
  });
  if (m.entries.empty()) {
    throw DataError("no decodable images under " + root.string() + " (" + std::to_string(m.skipped.size()) +
                    " skipped)");
  }
  return m;
}

void write_cache(DatasetManifest& m, const std::vector<float>& records, const fs::path& cache_dir) {
  fs::create_directories(cache_dir);
  m.cache = fs::absolute(cache_dir).lexically_normal().generic_string();
  {
    std::ofstream out(cache_dir / kCacheFile, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(records.data()),
              static_cast<std::streamsize>(records.size() * sizeof(float)));
    if (!out) throw DataError("cannot write cache in " + cache_dir.string());
  }
  std::ofstream out(cache_dir / kManifestFile, std::ios::trunc);
  out << m.to_json().dump(2) << '\n';
  if (!out) throw DataError("cannot write manifest in " + cache_dir.string());
}

}  // namespace

std::string DatasetManifest::content_hash() const {
  nlohmann::json j = {{"resolution", resolution}, {"channels", channels}};
  nlohmann::json e = nlohmann::json::array();
  for (const auto& entry : entries) e.push_back({entry.path, entry.sha256});
  j["entries"] = e;
  return sha256_hex(j.dump());
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json e = nlohmann::json::array(), s = nlohmann::json::array();
  for (const auto& x : entries) e.push_back({{"path", x.path}, {"sha256", x.sha256}, {"bytes", x.bytes}});
  for (const auto& x : skipped) s.push_back({{"path", x.path}, {"reason", x.reason}});
  return {{"format", "sni-dataset"}, {"version", 1},       {"root", root},
          {"resolution", resolution}, {"channels", channels}, {"entries", e},
          {"skipped", s},            {"cache", cache},      {"content_hash", content_hash()}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "sni-dataset" || j.at("version") != 1) throw DataError("not a version-1 dataset manifest");
    DatasetManifest m;
    m.root = j.at("root").get<std::string>();
    m.resolution = j.at("resolution").get<int>();
    m.channels = j.at("channels").get<std::string>();
    for (const auto& e : j.at("entries"))
      m.entries.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>(),
                           e.at("bytes").get<std::uintmax_t>()});
    for (const auto& s : j.at("skipped"))
      m.skipped.push_back({s.at("path").get<std::string>(), s.at("reason").get<std::string>()});
    m.cache = j.value("cache", std::string{});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset manifest: ") + e.what());
  }
}

DatasetManifest build_manifest(const fs::path& root, int resolution, const IngestOptions& options) {
  return scan(root, resolution, options, nullptr);
}

DatasetManifest build_cache(const DatasetManifest& manifest, const fs::path& cache_dir,
                            const IngestOptions& options) {
  std::vector<std::string> files;
  for (const auto& e : manifest.entries) files.push_back(e.path);
  std::vector<float> records;
  records.reserve(files.size() * static_cast<std::size_t>(manifest.resolution) * manifest.resolution * 3);
  DatasetManifest m = manifest;
  decode_all(manifest.root, files, manifest.resolution, true, options.workers, [&](Decoded d) {
    if (!d.error.empty()) throw DataError("entry " + d.entry.path + " no longer decodes: " + d.error);
    records.insert(records.end(), d.image->rgb.begin(), d.image->rgb.end());
  });
  write_cache(m, records, cache_dir);
  return m;
}

DatasetManifest ingest(const fs::path& root, int resolution, const fs::path& cache_dir,
                       const IngestOptions& options) {
  std::vector<float> records;
  DatasetManifest m = scan(root, resolution, options, &records);
  const fs::path existing = cache_dir / kManifestFile;
  if (fs::exists(existing) && fs::exists(cache_dir / kCacheFile)) {
    try {
      std::ifstream in(existing);
      const auto old = DatasetManifest::from_json(nlohmann::json::parse(in));
      if (old.content_hash() == m.content_hash() &&
          fs::file_size(cache_dir / kCacheFile) == records.size() * sizeof(float)) {
        m.cache = old.cache;
        return m;
      }
    } catch (const std::exception&) {
      // Stale or unreadable cache; rebuilt below.
    }
  }
  write_cache(m, records, cache_dir);
  return m;
}

// ---------------------------------------------------------------------------
// ImageCache

ImageCache ImageCache::load(const fs::path& cache_dir) {
  std::ifstream in(cache_dir / kManifestFile);
  if (!in) throw DataError("no dataset manifest in " + cache_dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset manifest: ") + e.what());
  }
  ImageCache c;
  c.manifest_ = DatasetManifest::from_json(j);
  c.resolution_ = c.manifest_.resolution;
  c.count_ = c.manifest_.entries.size();
  const auto bytes = read_bytes(cache_dir / kCacheFile);
  if (bytes.size() != c.count_ * c.record_length() * sizeof(float)) {
    throw DataError("cache size does not match its manifest (" + std::to_string(bytes.size()) + " bytes)");
  }
  c.data_.resize(bytes.size() / sizeof(float));
  std::memcpy(c.data_.data(), bytes.data(), bytes.size());
  return c;
}

ImageCache ImageCache::from_records(int resolution, std::vector<float> records) {
  check_resolution(resolution);
  ImageCache c;
  c.resolution_ = resolution;
  if (records.empty() || records.size() % c.record_length() != 0) {
    throw DataError("record buffer is not a whole number of images");
  }
  c.count_ = records.size() / c.record_length();
  c.data_ = std::move(records);
  c.manifest_.resolution = resolution;
  return c;
}

std::span<const float> ImageCache::record(std::size_t i) const {
  if (i >= count_) throw ArgumentError("image index out of range");
  return std::span<const float>(data_).subspan(i * record_length(), record_length());
}

Tensor ImageCache::batch(std::size_t first, std::size_t count) const {
  const int r = resolution_;
  Tensor t({static_cast<int>(count), 3, r, r});
  for (std::size_t k = 0; k < count; ++k) {
    const auto rec = record(first + k);
    float* dst = t.data() + k * record_length();
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < r * r; ++p) dst[static_cast<std::size_t>(c) * r * r + p] = rec[static_cast<std::size_t>(p) * 3 + c];
  }
  return t;
}

// ---------------------------------------------------------------------------
// BatchStream

BatchStream::BatchStream(const ImageCache& cache, int batch_size, std::uint64_t seed, bool flip)
    : cache_(&cache), batch_size_(batch_size), seed_(seed), flip_(flip) {
  if (batch_size < 1) throw ArgumentError("batch_size must be at least 1");
}

std::vector<std::size_t> BatchStream::permutation(std::uint64_t epoch) const {
  std::vector<std::size_t> order(cache_->size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed_, {epoch}));
  // Fisher-Yates, explicit draws.
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

void BatchStream::seek(StreamPosition pos) {
  if (pos.offset >= cache_->size()) throw ArgumentError("stream offset beyond the dataset");
  pos_ = pos;
}

Tensor BatchStream::next() {
  if (order_epoch_ != pos_.epoch) {
    order_ = permutation(pos_.epoch);
    order_epoch_ = pos_.epoch;
  }
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size_), cache_->size() - pos_.offset);
  const int r = cache_->resolution();
  Tensor t({static_cast<int>(n), 3, r, r});
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t item = order_[pos_.offset + k];
    const auto rec = cache_->record(item);
    const bool mirror = flip_ && (derive_seed(seed_, {pos_.epoch, item, 0xF11Full}) & 1u);
    float* dst = t.data() + k * cache_->record_length();
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) {
          const int sx = mirror ? r - 1 - x : x;
          dst[(static_cast<std::size_t>(c) * r + y) * r + x] = rec[(static_cast<std::size_t>(y) * r + sx) * 3 + c];
        }
  }
  pos_.offset += n;
  if (pos_.offset >= cache_->size()) {
    pos_.offset = 0;
    ++pos_.epoch;
  }
  return t;
}

}  // namespace sni
