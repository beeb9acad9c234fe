#include "sni/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "sni/error.hpp"
#include "sni/rng.hpp"

namespace sni {

namespace {

using MatrixXd = Eigen::MatrixXd;

MatrixXd to_matrix(const GaussianStats& s) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      s.cov.data(), s.dim, s.dim);
}

std::vector<float> gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> m(rows * cols);
  for (auto& v : m) v = dist(rng);
  return m;
}

Tensor take_columns(const Tensor& x, std::size_t begin, std::size_t end) {
  const int n = x.dim(0);
  const std::size_t cols = static_cast<std::size_t>(x.dim(1));
  std::vector<float> out;
  out.reserve(n * (end - begin));
  for (int i = 0; i < n; ++i) {
    const float* row = x.data() + i * cols;
    out.insert(out.end(), row + begin, row + end);
  }
  return Tensor({n, static_cast<int>(end - begin)}, std::move(out));
}

Tensor stack_rows(const std::vector<std::vector<float>>& rows) {
  std::vector<float> data;
  for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
  return Tensor({static_cast<int>(rows.size()), static_cast<int>(rows.front().size())}, std::move(data));
}

std::vector<StructuredLatent> sample_latents(const NoiseStructure& s, std::size_t begin,
                                             std::size_t count, std::uint64_t seed) {
  std::vector<StructuredLatent> out;
  for (std::size_t i = begin; i < begin + count; ++i) out.push_back(sample_latent(s, derive_seed(seed, {i})));
  return out;
}

Tensor render_latents(const GeneratorState& state, std::span<const StructuredLatent> latents,
                      std::size_t first_index, std::uint64_t seed) {
  auto [style, spatial] = latent_batch(latents);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < latents.size(); ++i) seeds.push_back(derive_seed(seed, {first_index + i, 1}));
  return state.forward(style, spatial, batch_noise(state, seeds));
}

}  // namespace

// ---------------------------------------------------------------------------
// Gaussian statistics and FID

GaussianStats GaussianStats::from_samples(std::span<const float> features, std::size_t n, int dim) {
  if (n < 2) throw ArgumentError("Gaussian statistics need at least 2 samples");
  if (dim < 1 || features.size() != n * static_cast<std::size_t>(dim)) {
    throw ShapeError("feature buffer does not hold " + std::to_string(n) + " rows of " + std::to_string(dim));
  }
  GaussianStats s;
  s.dim = dim;
  s.count = n;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), dim);
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(i), j) = features[i * dim + j];
  Eigen::VectorXd mu = x.colwise().mean();
  x.rowwise() -= mu.transpose();
  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  cov = 0.5 * (cov + cov.transpose());
  s.mean.assign(mu.data(), mu.data() + dim);
  s.cov.resize(static_cast<std::size_t>(dim) * dim);
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) s.cov[static_cast<std::size_t>(r) * dim + c] = cov(r, c);
  return s;
}

GaussianStats GaussianStats::from_moments(std::vector<double> mean, std::vector<double> cov,
                                          std::size_t count) {
  const std::size_t d = mean.size();
  if (d == 0 || cov.size() != d * d) throw ShapeError("covariance must be dim x dim");
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < r; ++c)
      if (cov[r * d + c] != cov[c * d + r]) throw ArgumentError("covariance must be symmetric");
  GaussianStats s;
  s.dim = static_cast<int>(d);
  s.count = count;
  s.mean = std::move(mean);
  s.cov = std::move(cov);
  return s;
}

FidResult fid_detailed(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim != b.dim || a.dim == 0) {
    throw ShapeError("FID statistics differ in dimension (" + std::to_string(a.dim) + " vs " +
                     std::to_string(b.dim) + ")");
  }
  FidResult r;
  double mean_term = 0.0;
  for (int i = 0; i < a.dim; ++i) {
    const double d = a.mean[i] - b.mean[i];
    mean_term += d * d;
  }
  const MatrixXd s1 = to_matrix(a), s2 = to_matrix(b);

  Eigen::SelfAdjointEigenSolver<MatrixXd> e1(s1);
  Eigen::VectorXd l1 = e1.eigenvalues();
  for (Eigen::Index i = 0; i < l1.size(); ++i) {
    if (l1(i) < -1e-6) {
      ++r.clipped_eigenvalues;
      r.most_negative_eigenvalue = std::min(r.most_negative_eigenvalue, l1(i));
    }
    l1(i) = std::sqrt(std::max(l1(i), 0.0));
  }
  const MatrixXd root1 = e1.eigenvectors() * l1.asDiagonal() * e1.eigenvectors().transpose();
  MatrixXd m = root1 * s2 * root1;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> em(m, Eigen::EigenvaluesOnly);
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < em.eigenvalues().size(); ++i) {
    const double v = em.eigenvalues()(i);
    if (v < -1e-6) {
      ++r.clipped_eigenvalues;
      r.most_negative_eigenvalue = std::min(r.most_negative_eigenvalue, v);
    }
    if (v > 0.0) trace_sqrt += std::sqrt(v);
  }
  const double traces = s1.trace() + s2.trace();
  double value = mean_term + traces - 2.0 * trace_sqrt;
  // Rounding residue of an exact match.
  if (value < 1e-12 * (1.0 + traces + mean_term)) value = 0.0;
  r.value = value;
  return r;
}

double fid(const GaussianStats& a, const GaussianStats& b) { return fid_detailed(a, b).value; }

// ---------------------------------------------------------------------------
// Components

Tensor pool_images(const Tensor& images, int pool) {
  if (images.rank() != 4) throw ShapeError("expected [N, C, H, W] images");
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const int ph = std::min(pool, h), pw = std::min(pool, w);
  Tensor out({n, c, ph, pw});
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const float* src = images.data() + (static_cast<std::size_t>(ni) * c + ci) * h * w;
      float* dst = out.data() + (static_cast<std::size_t>(ni) * c + ci) * ph * pw;
      for (int y = 0; y < ph; ++y) {
        const int y0 = y * h / ph, y1 = (y + 1) * h / ph;
        for (int x = 0; x < pw; ++x) {
          const int x0 = x * w / pw, x1 = (x + 1) * w / pw;
          double acc = 0.0;
          for (int yy = y0; yy < y1; ++yy)
            for (int xx = x0; xx < x1; ++xx) acc += src[static_cast<std::size_t>(yy) * w + xx];
          dst[static_cast<std::size_t>(y) * pw + x] = static_cast<float>(acc / ((y1 - y0) * (x1 - x0)));
        }
      }
    }
  return out;
}

RandomProjectionEmbedding::RandomProjectionEmbedding(int dim, std::uint64_t seed, int pool)
    : dim_(dim), seed_(seed), pool_(pool) {
  if (dim < 1 || pool < 1) throw ArgumentError("embedding dim and pool size must be positive");
}

std::string RandomProjectionEmbedding::id() const {
  return "random-projection(dim=" + std::to_string(dim_) + ",pool=" + std::to_string(pool_) +
         ",seed=" + std::to_string(seed_) + ")";
}

std::vector<float> RandomProjectionEmbedding::embed(const Tensor& images) const {
  const Tensor pooled = pool_images(images, pool_);
  const int n = pooled.dim(0);
  const std::size_t in = pooled.numel() / static_cast<std::size_t>(n);
  const auto p = gaussian_matrix(static_cast<std::size_t>(dim_), in, derive_seed(seed_, {in}));
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      pooled.data(), n, static_cast<Eigen::Index>(in));
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> pm(
      p.data(), dim_, static_cast<Eigen::Index>(in));
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f =
      (x * pm.transpose()) / std::sqrt(static_cast<float>(in));
  std::vector<float> out(f.data(), f.data() + f.size());
  for (auto& v : out) v = std::max(v, 0.0f);
  return out;
}

std::vector<double> SquaredL2Distance::operator()(const Tensor& a, const Tensor& b) const {
  if (a.shape() != b.shape()) throw ShapeError("distance operands differ in shape");
  const int n = a.dim(0);
  const std::size_t per = a.numel() / static_cast<std::size_t>(n);
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < per; ++k) {
      const double d = static_cast<double>(a.data()[i * per + k]) - b.data()[i * per + k];
      acc += d * d;
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

EmbeddingDistance::EmbeddingDistance(std::shared_ptr<const FeatureExtractor> extractor, double scale)
    : extractor_(std::move(extractor)), scale_(scale) {}

std::string EmbeddingDistance::id() const {
  return "embedding-l2(" + extractor_->id() + ",scale=" + std::to_string(scale_) + ")";
}

std::vector<double> EmbeddingDistance::operator()(const Tensor& a, const Tensor& b) const {
  if (a.shape() != b.shape()) throw ShapeError("distance operands differ in shape");
  const auto fa = extractor_->embed(a), fb = extractor_->embed(b);
  const int n = a.dim(0), d = extractor_->dim();
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < d; ++k) {
      const double diff = static_cast<double>(fa[i * d + k]) - fb[i * d + k];
      acc += diff * diff;
    }
    out[static_cast<std::size_t>(i)] = scale_ * acc;
  }
  return out;
}

RandomProjectionClassifier::RandomProjectionClassifier(int n_attributes, std::uint64_t seed, float gain)
    : n_(n_attributes), seed_(seed), gain_(gain) {
  if (n_attributes < 1) throw ArgumentError("classifier needs at least one attribute");
}

std::string RandomProjectionClassifier::id() const {
  return "random-projection-classifier(attributes=" + std::to_string(n_) + ",seed=" +
         std::to_string(seed_) + ",gain=" + std::to_string(gain_) + ")";
}

std::vector<float> RandomProjectionClassifier::predict(const Tensor& images) const {
  const Tensor pooled = pool_images(images, pool_);
  const int n = pooled.dim(0);
  const std::size_t in = pooled.numel() / static_cast<std::size_t>(n);
  const auto u = gaussian_matrix(static_cast<std::size_t>(n_), in, derive_seed(seed_, {in}));
  const float norm = 1.0f / std::sqrt(static_cast<float>(in));
  std::vector<float> out(static_cast<std::size_t>(n) * n_);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n_; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < in; ++j) acc += static_cast<double>(u[k * in + j]) * pooled.data()[i * in + j];
      out[static_cast<std::size_t>(i) * n_ + k] =
          static_cast<float>(1.0 / (1.0 + std::exp(-gain_ * norm * acc)));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Path length

std::string to_string(LatentSpace s) { return s == LatentSpace::z ? "z" : "w"; }
std::string to_string(PathMode m) { return m == PathMode::full ? "full" : "end"; }

LatentSpace latent_space_from_string(const std::string& s) {
  if (s == "z" || s == "Z") return LatentSpace::z;
  if (s == "w" || s == "W") return LatentSpace::w;
  throw ArgumentError("unknown latent space '" + s + "' (expected z or w)");
}

PathMode path_mode_from_string(const std::string& s) {
  if (s == "full") return PathMode::full;
  if (s == "end") return PathMode::end;
  throw ArgumentError("unknown path mode '" + s + "' (expected full or end)");
}

std::vector<float> slerp(std::span<const float> a, std::span<const float> b, double t) {
  if (a.size() != b.size()) throw ShapeError("slerp operands differ in length");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  std::vector<float> out(a.size());
  const double cos_omega = na > 0.0 && nb > 0.0 ? std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0) : 1.0;
  const double omega = std::acos(cos_omega);
  const double sin_omega = std::sin(omega);
  double ca = 1.0 - t, cb = t;
  if (sin_omega > 1e-7) {
    ca = std::sin((1.0 - t) * omega) / sin_omega;
    cb = std::sin(t * omega) / sin_omega;
  }
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<float>(ca * a[i] + cb * b[i]);
  return out;
}

PathLengthModel path_length_model(const GeneratorState& state) {
  PathLengthModel m;
  const auto& s = state.structure();
  m.style_length = static_cast<std::size_t>(s.style_dim());
  m.latent_length = s.total_length();
  const GeneratorState* g = &state;
  m.render_z = [g, style_len = m.style_length](const Tensor& z, std::span<const std::uint64_t> seeds) {
    NoGradGuard no_grad;
    const std::size_t l = static_cast<std::size_t>(z.dim(1));
    return g->forward(take_columns(z, 0, style_len), take_columns(z, style_len, l), batch_noise(*g, seeds));
  };
  m.map_w = [g](const Tensor& style) {
    NoGradGuard no_grad;
    return g->config().styled_layer_count() > 0 ? g->map_style(style) : style;
  };
  m.render_w = [g](const Tensor& w, const Tensor& spatial, std::span<const std::uint64_t> seeds) {
    NoGradGuard no_grad;
    return g->forward_w(w, spatial, batch_noise(*g, seeds));
  };
  return m;
}

PathLengthResult path_length(const PathLengthModel& model, const ImageDistance& distance,
                             const PathLengthOptions& options) {
  if (options.n_samples < 10) {
    throw ArgumentError("path length needs at least 10 samples, got " + std::to_string(options.n_samples));
  }
  if (!(options.epsilon > 0.0)) throw ArgumentError("path length epsilon must be positive");
  if (options.space == LatentSpace::w && (!model.map_w || !model.render_w)) {
    throw ArgumentError("generator does not expose a W space");
  }
  const std::size_t l = model.latent_length, sl = model.style_length;
  const double eps = options.epsilon;
  PathLengthResult result;
  result.samples.reserve(static_cast<std::size_t>(options.n_samples));
  const int batch = std::max(1, options.batch_pairs);

  for (int first = 0; first < options.n_samples; first += batch) {
    const int count = std::min(batch, options.n_samples - first);
    std::vector<std::vector<float>> za, zb;
    std::vector<double> t0(count), t1(count);
    std::vector<std::uint64_t> seeds;
    for (int k = 0; k < count; ++k) {
      const std::uint64_t i = static_cast<std::uint64_t>(first + k);
      std::mt19937_64 rng(derive_seed(options.seed, {i}));
      std::normal_distribution<float> normal(0.0f, 1.0f);
      std::vector<float> a(l), b(l);
      for (auto& v : a) v = normal(rng);
      for (auto& v : b) v = normal(rng);
      double t;
      if (options.mode == PathMode::full) {
        t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        t0[k] = t;
        t1[k] = t + eps;
      } else {
        t = std::bernoulli_distribution(0.5)(rng) ? 1.0 : 0.0;
        t0[k] = t == 0.0 ? 0.0 : 1.0 - eps;
        t1[k] = t == 0.0 ? eps : 1.0;
      }
      za.push_back(std::move(a));
      zb.push_back(std::move(b));
      seeds.push_back(derive_seed(options.seed, {i, 1}));
    }
    std::vector<std::uint64_t> pair_seeds(seeds);
    pair_seeds.insert(pair_seeds.end(), seeds.begin(), seeds.end());

    Tensor images;
    if (options.space == LatentSpace::z) {
      std::vector<std::vector<float>> rows;
      for (int k = 0; k < count; ++k) rows.push_back(slerp(za[k], zb[k], t0[k]));
      for (int k = 0; k < count; ++k) rows.push_back(slerp(za[k], zb[k], t1[k]));
      images = model.render_z(stack_rows(rows), pair_seeds);
    } else {
      std::vector<std::vector<float>> styles;
      for (int k = 0; k < count; ++k) styles.emplace_back(za[k].begin(), za[k].begin() + sl);
      for (int k = 0; k < count; ++k) styles.emplace_back(zb[k].begin(), zb[k].begin() + sl);
      const Tensor w = model.map_w(stack_rows(styles));
      const int wd = w.dim(1);
      std::vector<std::vector<float>> rows, spatial;
      for (int pass = 0; pass < 2; ++pass)
        for (int k = 0; k < count; ++k) {
          const double t = pass == 0 ? t0[k] : t1[k];
          const float* wa = w.data() + static_cast<std::size_t>(k) * wd;
          const float* wb = w.data() + static_cast<std::size_t>(count + k) * wd;
          std::vector<float> r(static_cast<std::size_t>(wd));
          for (int j = 0; j < wd; ++j) r[j] = static_cast<float>((1.0 - t) * wa[j] + t * wb[j]);
          rows.push_back(std::move(r));
          spatial.emplace_back(za[k].begin() + sl, za[k].end());
        }
      images = model.render_w(stack_rows(rows), stack_rows(spatial), pair_seeds);
    }
    check_finite(images, "path_length");
    const int n = images.dim(0);
    const std::size_t per = images.numel() / static_cast<std::size_t>(n);
    Shape half = images.shape();
    half[0] = count;
    Tensor first_half(half, std::vector<float>(images.data(), images.data() + per * count));
    Tensor second_half(half, std::vector<float>(images.data() + per * count, images.data() + per * n));
    const auto d = distance(first_half, second_half);
    for (int k = 0; k < count; ++k) result.samples.push_back(d[k] / (eps * eps));
  }
  double acc = 0.0;
  for (double v : result.samples) acc += v;
  result.value = acc / static_cast<double>(result.samples.size());
  return result;
}

// ---------------------------------------------------------------------------
// Separability

LinearSvm LinearSvm::fit(std::span<const float> x, std::size_t n, int d, std::span<const int> labels,
                         const SvmOptions& options) {
  if (x.size() != n * static_cast<std::size_t>(d) || labels.size() != n) {
    throw ShapeError("svm inputs do not conform");
  }
  const double diag = 0.5 / options.c;
  std::vector<double> w(static_cast<std::size_t>(d) + 1, 0.0);
  std::vector<double> alpha(n, 0.0), qd(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = labels[i] == 1 ? 1.0 : -1.0;
    double q = 1.0 + diag;  // bias feature
    for (int j = 0; j < d; ++j) q += static_cast<double>(x[i * d + j]) * x[i * d + j];
    qd[i] = q;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(options.seed);
  LinearSvm svm;
  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    std::shuffle(order.begin(), order.end(), rng);
    double pg_max = -std::numeric_limits<double>::infinity();
    double pg_min = std::numeric_limits<double>::infinity();
    for (std::size_t i : order) {
      const float* row = x.data() + i * d;
      double wx = w[static_cast<std::size_t>(d)];
      for (int j = 0; j < d; ++j) wx += w[j] * row[j];
      const double g = y[i] * wx - 1.0 + alpha[i] * diag;
      const double pg = alpha[i] > 0.0 ? g : std::min(g, 0.0);
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (std::abs(pg) > 1e-12) {
        const double old = alpha[i];
        alpha[i] = std::max(alpha[i] - g / qd[i], 0.0);
        const double step = (alpha[i] - old) * y[i];
        for (int j = 0; j < d; ++j) w[j] += step * row[j];
        w[static_cast<std::size_t>(d)] += step;
      }
    }
    if (pg_max - pg_min <= options.tolerance) break;
  }
  svm.iterations = iter;
  svm.bias = w.back();
  w.pop_back();
  svm.weight = std::move(w);
  return svm;
}

double LinearSvm::decision(std::span<const float> row) const {
  if (row.size() != weight.size()) throw ShapeError("svm input length mismatch");
  double v = bias;
  for (std::size_t j = 0; j < row.size(); ++j) v += weight[j] * row[j];
  return v;
}

double conditional_entropy_bits(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size() || labels.empty()) throw ShapeError("entropy inputs do not conform");
  double counts[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < labels.size(); ++i) counts[predictions[i] != 0][labels[i] != 0] += 1.0;
  const double n = static_cast<double>(labels.size());
  double h = 0.0;
  for (auto& row : counts) {
    const double np = row[0] + row[1];
    if (np == 0.0) continue;
    for (double c : row)
      if (c > 0.0) h -= (np / n) * (c / np) * std::log2(c / np);
  }
  return h;
}

SeparabilityResult separability(std::span<const float> codes, std::size_t n, int d,
                                std::span<const float> probabilities, int n_attributes,
                                const SvmOptions& options) {
  if (codes.size() != n * static_cast<std::size_t>(d) ||
      probabilities.size() != n * static_cast<std::size_t>(n_attributes)) {
    throw ShapeError("separability inputs do not conform");
  }
  SeparabilityResult r;
  double total = 0.0;
  const std::size_t keep = n / 2;
  for (int a = 0; a < n_attributes; ++a) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto conf = [&](std::size_t i) { return std::abs(probabilities[i * n_attributes + a] - 0.5f); };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return conf(i) > conf(j); });
    order.resize(keep);
    std::vector<float> x;
    std::vector<int> labels;
    for (std::size_t i : order) {
      x.insert(x.end(), codes.begin() + i * d, codes.begin() + (i + 1) * d);
      labels.push_back(probabilities[i * n_attributes + a] > 0.5f ? 1 : 0);
    }
    const auto positives = std::count(labels.begin(), labels.end(), 1);
    if (positives == 0 || positives == static_cast<long>(labels.size())) {
      r.skipped_attributes.push_back(a);
      r.entropies.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const LinearSvm svm = LinearSvm::fit(x, keep, d, labels, options);
    std::vector<int> pred;
    for (std::size_t i = 0; i < keep; ++i) pred.push_back(svm.predict(std::span<const float>(x).subspan(i * d, d)));
    const double h = conditional_entropy_bits(labels, pred);
    r.entropies.push_back(h);
    total += h;
  }
  r.score = std::exp2(total);
  return r;
}

SeparabilityResult separability(std::span<const float> codes, std::size_t n, int d,
                                const Tensor& images, const AttributeClassifier& classifier,
                                const SvmOptions& options) {
  if (images.dim(0) != static_cast<int>(n)) throw ShapeError("one image per code row expected");
  return separability(codes, n, d, classifier.predict(images), classifier.n_attributes(), options);
}

// ---------------------------------------------------------------------------
// Generator-level evaluation

nlohmann::json MetricReport::to_json() const {
  return {{"metric", metric},       {"value", value},           {"samples", samples},
          {"seed", seed},           {"extractor", extractor},   {"config_hash", config_hash},
          {"settings", settings}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.metric = j.at("metric").get<std::string>();
  r.value = j.at("value").get<double>();
  r.samples = j.value("samples", std::size_t{0});
  r.seed = j.value("seed", std::uint64_t{0});
  r.extractor = j.value("extractor", std::string{});
  r.config_hash = j.value("config_hash", std::string{});
  r.settings = j.value("settings", nlohmann::json::object());
  return r;
}

GaussianStats generated_stats(const GeneratorState& state, const FeatureExtractor& extractor, int n,
                              std::uint64_t seed, int batch) {
  NoGradGuard no_grad;
  std::vector<float> features;
  for (int first = 0; first < n; first += batch) {
    const int count = std::min(batch, n - first);
    const auto latents = sample_latents(state.structure(), static_cast<std::size_t>(first),
                                        static_cast<std::size_t>(count), seed);
    const Tensor images = render_latents(state, latents, static_cast<std::size_t>(first), seed);
    check_finite(images, "generated_stats");
    const auto f = extractor.embed(images);
    features.insert(features.end(), f.begin(), f.end());
  }
  return GaussianStats::from_samples(features, static_cast<std::size_t>(n), extractor.dim());
}

GaussianStats image_stats(const std::function<Tensor(std::size_t, std::size_t)>& images_fn,
                          std::size_t n, const FeatureExtractor& extractor, int batch) {
  std::vector<float> features;
  for (std::size_t first = 0; first < n; first += static_cast<std::size_t>(batch)) {
    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch), n - first);
    const auto f = extractor.embed(images_fn(first, count));
    features.insert(features.end(), f.begin(), f.end());
  }
  return GaussianStats::from_samples(features, n, extractor.dim());
}

MetricReport evaluate_fid(const GeneratorState& state, const GaussianStats& real,
                          const FeatureExtractor& extractor, int n, std::uint64_t seed) {
  const auto fake = generated_stats(state, extractor, n, seed);
  const auto r = fid_detailed(real, fake);
  MetricReport rep;
  rep.metric = "fid";
  rep.value = r.value;
  rep.samples = static_cast<std::size_t>(n);
  rep.seed = seed;
  rep.extractor = extractor.id();
  rep.settings = {{"real_samples", real.count}, {"clipped_eigenvalues", r.clipped_eigenvalues},
                  {"most_negative_eigenvalue", r.most_negative_eigenvalue}};
  return rep;
}

MetricReport evaluate_path_length(const GeneratorState& state, const ImageDistance& distance,
                                  const PathLengthOptions& options) {
  const auto r = path_length(path_length_model(state), distance, options);
  MetricReport rep;
  rep.metric = "ppl_" + to_string(options.space) + (options.mode == PathMode::end ? "_end" : "");
  rep.value = r.value;
  rep.samples = static_cast<std::size_t>(options.n_samples);
  rep.seed = options.seed;
  rep.extractor = distance.id();
  rep.settings = {{"space", to_string(options.space)}, {"mode", to_string(options.mode)},
                  {"epsilon", options.epsilon}};
  return rep;
}

MetricReport evaluate_separability(const GeneratorState& state, const AttributeClassifier& classifier,
                                   int n, std::uint64_t seed, LatentSpace space,
                                   const SvmOptions& options) {
  if (n < 4) throw ArgumentError("separability needs at least 4 samples");
  NoGradGuard no_grad;
  std::vector<float> codes, probs;
  int d = 0;
  const int batch = 32;
  for (int first = 0; first < n; first += batch) {
    const int count = std::min(batch, n - first);
    const auto latents = sample_latents(state.structure(), static_cast<std::size_t>(first),
                                        static_cast<std::size_t>(count), seed);
    const Tensor images = render_latents(state, latents, static_cast<std::size_t>(first), seed);
    const auto p = classifier.predict(images);
    probs.insert(probs.end(), p.begin(), p.end());
    if (space == LatentSpace::z) {
      for (const auto& z : latents) {
        const auto f = z.flatten();
        d = static_cast<int>(f.size());
        codes.insert(codes.end(), f.begin(), f.end());
      }
    } else {
      auto [style, spatial] = latent_batch(latents);
      const Tensor w = state.config().styled_layer_count() > 0 ? state.map_style(style) : style;
      const int wd = w.dim(1), sd = spatial.dim(1);
      d = wd + sd;
      for (int i = 0; i < count; ++i) {
        codes.insert(codes.end(), w.data() + i * wd, w.data() + (i + 1) * wd);
        codes.insert(codes.end(), spatial.data() + i * sd, spatial.data() + (i + 1) * sd);
      }
    }
  }
  const auto r = separability(codes, static_cast<std::size_t>(n), d, probs, classifier.n_attributes(), options);
  MetricReport rep;
  rep.metric = "separability_" + to_string(space);
  rep.value = r.score;
  rep.samples = static_cast<std::size_t>(n);
  rep.seed = seed;
  rep.extractor = classifier.id();
  nlohmann::json ent = nlohmann::json::array();
  for (double h : r.entropies) ent.push_back(std::isnan(h) ? nlohmann::json(nullptr) : nlohmann::json(h));
  rep.settings = {{"entropy_unit", "bits"}, {"entropies", ent}, {"skipped_attributes", r.skipped_attributes},
                  {"svm_c", options.c}};
  return rep;
}

}  // namespace sni
