#pragma once

// Evaluation metrics: Frechet distance between Gaussian fits of image
// embeddings, perceptual path length in Z and W, and linear separability
// of classifier attributes given latent codes.
//
// The feature extractor, image distance and attribute classifier are
// interfaces; the bundled implementations are seeded random projections.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sni/synthesis.hpp"
#include "sni/tensor.hpp"

namespace sni {

// ---------------------------------------------------------------------------
// Gaussian statistics and FID

struct GaussianStats {
  int dim = 0;
  std::size_t count = 0;
  std::vector<double> mean;
  std::vector<double> cov;  // dim x dim, row-major, unbiased

  /// features: n rows of `dim` entries. Throws ArgumentError when n < 2.
  static GaussianStats from_samples(std::span<const float> features, std::size_t n, int dim);
  static GaussianStats from_moments(std::vector<double> mean, std::vector<double> cov,
                                    std::size_t count = 0);
};

struct FidResult {
  double value = 0.0;
  int clipped_eigenvalues = 0;
  double most_negative_eigenvalue = 0.0;
};

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), with the trace of the
/// square root taken from the eigenvalues of S1^{1/2} S2 S1^{1/2}.
/// Eigenvalues below zero are discarded; those under -1e-6 are counted.
FidResult fid_detailed(const GaussianStats& a, const GaussianStats& b);
double fid(const GaussianStats& a, const GaussianStats& b);

// ---------------------------------------------------------------------------
// Pluggable components

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  virtual int dim() const = 0;
  /// images [N, 3, H, W] -> N * dim() features, row-major.
  virtual std::vector<float> embed(const Tensor& images) const = 0;
};

/// Average-pools to at most `pool` x `pool`, flattens, then
/// relu(P x / sqrt(in)) with a seeded Gaussian P.
class RandomProjectionEmbedding : public FeatureExtractor {
 public:
  explicit RandomProjectionEmbedding(int dim = 64, std::uint64_t seed = 0x5EEDF1D, int pool = 16);
  std::string id() const override;
  int dim() const override { return dim_; }
  std::vector<float> embed(const Tensor& images) const override;

 private:
  int dim_;
  std::uint64_t seed_;
  int pool_;
};

/// Area-averages each image down to at most pool x pool: [N, 3, p, p].
Tensor pool_images(const Tensor& images, int pool);

class ImageDistance {
 public:
  virtual ~ImageDistance() = default;
  virtual std::string id() const = 0;
  /// Per-item distance between a[i] and b[i]; both [N, ...] with equal shapes.
  virtual std::vector<double> operator()(const Tensor& a, const Tensor& b) const = 0;
};

class SquaredL2Distance : public ImageDistance {
 public:
  std::string id() const override { return "squared-l2"; }
  std::vector<double> operator()(const Tensor& a, const Tensor& b) const override;
};

/// Squared L2 between embeddings, optionally scaled.
class EmbeddingDistance : public ImageDistance {
 public:
  explicit EmbeddingDistance(std::shared_ptr<const FeatureExtractor> extractor, double scale = 1.0);
  std::string id() const override;
  std::vector<double> operator()(const Tensor& a, const Tensor& b) const override;

 private:
  std::shared_ptr<const FeatureExtractor> extractor_;
  double scale_;
};

class AttributeClassifier {
 public:
  virtual ~AttributeClassifier() = default;
  virtual std::string id() const = 0;
  virtual int n_attributes() const = 0;
  /// images [N, 3, H, W] -> N * n_attributes() probabilities of the positive class.
  virtual std::vector<float> predict(const Tensor& images) const = 0;
};

/// Attribute k = sigmoid(gain * u_k . x / sqrt(len x)) on the average-pooled
/// pixels x, with seeded Gaussian directions u_k.
class RandomProjectionClassifier : public AttributeClassifier {
 public:
  RandomProjectionClassifier(int n_attributes = 4, std::uint64_t seed = 0xC1A55, float gain = 4.0f);
  std::string id() const override;
  int n_attributes() const override { return n_; }
  std::vector<float> predict(const Tensor& images) const override;

 private:
  int n_;
  std::uint64_t seed_;
  float gain_;
  int pool_ = 16;
};

// ---------------------------------------------------------------------------
// Path length

enum class LatentSpace { z, w };
enum class PathMode { full, end };
std::string to_string(LatentSpace s);
std::string to_string(PathMode m);
LatentSpace latent_space_from_string(const std::string& s);
PathMode path_mode_from_string(const std::string& s);

/// What path length needs from a generator. Z-space samples are full flat
/// latents whose first `style_length` entries are the style code.
struct PathLengthModel {
  std::size_t latent_length = 0;
  std::size_t style_length = 0;
  /// z [N, latent_length], per-item noise seeds -> images [N, ...]
  std::function<Tensor(const Tensor& z, std::span<const std::uint64_t> noise_seeds)> render_z;
  /// style [N, style_length] -> w [N, w_length]; unset means W space is unsupported.
  std::function<Tensor(const Tensor& style)> map_w;
  /// (w [N, ·], spatial [N, latent_length - style_length], seeds) -> images
  std::function<Tensor(const Tensor& w, const Tensor& spatial, std::span<const std::uint64_t>)> render_w;
};

PathLengthModel path_length_model(const GeneratorState& state);

struct PathLengthOptions {
  LatentSpace space = LatentSpace::z;
  PathMode mode = PathMode::full;
  int n_samples = 1000;
  double epsilon = 1e-4;
  std::uint64_t seed = 0;
  int batch_pairs = 16;
};

struct PathLengthResult {
  double value = 0.0;
  std::vector<double> samples;  // per-sample d / eps^2
};

/// Rejects n_samples < 10 and epsilon <= 0 with ArgumentError.
PathLengthResult path_length(const PathLengthModel& model, const ImageDistance& distance,
                             const PathLengthOptions& options);

/// Spherical interpolation of two unnormalised vectors.
std::vector<float> slerp(std::span<const float> a, std::span<const float> b, double t);

// ---------------------------------------------------------------------------
// Linear separability

struct SvmOptions {
  double c = 1.0;
  double tolerance = 1e-4;
  int max_iterations = 1000;
  std::uint64_t seed = 1;
};

/// L2-regularised squared-hinge linear SVM with a bias feature, solved by
/// dual coordinate descent.
struct LinearSvm {
  std::vector<double> weight;
  double bias = 0.0;
  int iterations = 0;

  /// x: n rows of d features; labels in {0, 1}.
  static LinearSvm fit(std::span<const float> x, std::size_t n, int d, std::span<const int> labels,
                       const SvmOptions& options = {});
  double decision(std::span<const float> row) const;
  int predict(std::span<const float> row) const { return decision(row) > 0.0 ? 1 : 0; }
};

/// H(label | prediction) in bits from paired samples.
double conditional_entropy_bits(std::span<const int> labels, std::span<const int> predictions);

struct SeparabilityResult {
  double score = 1.0;  // 2^(sum of entropies)
  std::vector<double> entropies;        // per attribute, NaN when skipped
  std::vector<int> skipped_attributes;  // single class after filtering
};

/// codes: n rows of d; probabilities: n rows of n_attributes positive-class
/// probabilities. Keeps the most confident half per attribute.
SeparabilityResult separability(std::span<const float> codes, std::size_t n, int d,
                                std::span<const float> probabilities, int n_attributes,
                                const SvmOptions& options = {});
SeparabilityResult separability(std::span<const float> codes, std::size_t n, int d,
                                const Tensor& images, const AttributeClassifier& classifier,
                                const SvmOptions& options = {});

// ---------------------------------------------------------------------------
// Generator-level evaluation

struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::string extractor;
  std::string config_hash;
  nlohmann::json settings = nlohmann::json::object();

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

/// Embeds `n` generated images (latents from `seed`, noise fixed per item).
GaussianStats generated_stats(const GeneratorState& state, const FeatureExtractor& extractor,
                              int n, std::uint64_t seed, int batch = 32);

/// images_fn(i, count) returns [count, 3, H, W] for items i..i+count.
GaussianStats image_stats(const std::function<Tensor(std::size_t, std::size_t)>& images_fn,
                          std::size_t n, const FeatureExtractor& extractor, int batch = 64);

MetricReport evaluate_fid(const GeneratorState& state, const GaussianStats& real,
                          const FeatureExtractor& extractor, int n, std::uint64_t seed);
MetricReport evaluate_path_length(const GeneratorState& state, const ImageDistance& distance,
                                  const PathLengthOptions& options);
/// Codes are the full flat Z latents (space z) or mapped style codes (space w).
MetricReport evaluate_separability(const GeneratorState& state,
                                   const AttributeClassifier& classifier, int n,
                                   std::uint64_t seed, LatentSpace space,
                                   const SvmOptions& options = {});

}  // namespace sni
