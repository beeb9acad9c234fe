#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "sni/error.hpp"
#include "sni/metrics.hpp"
#include "sni/synthesis.hpp"

using namespace sni;

namespace {

std::vector<float> gaussian(std::size_t n, std::uint64_t seed, float sd = 1.0f) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, sd);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Random orthogonal matrix via Gram-Schmidt, row-major.
std::vector<double> orthogonal(int d, std::uint64_t seed) {
  const auto g = gaussian(static_cast<std::size_t>(d * d), seed);
  std::vector<double> q(g.begin(), g.end());
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < i; ++j) {
      double dot = 0;
      for (int k = 0; k < d; ++k) dot += q[i * d + k] * q[j * d + k];
      for (int k = 0; k < d; ++k) q[i * d + k] -= dot * q[j * d + k];
    }
    double n = 0;
    for (int k = 0; k < d; ++k) n += q[i * d + k] * q[i * d + k];
    for (int k = 0; k < d; ++k) q[i * d + k] /= std::sqrt(n);
  }
  return q;
}

// Q diag(v) Q^T
std::vector<double> rotate_diag(const std::vector<double>& q, const std::vector<double>& v) {
  const int d = static_cast<int>(v.size());
  std::vector<double> out(static_cast<std::size_t>(d * d));
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) {
      double s = 0;
      for (int k = 0; k < d; ++k) s += q[k * d + r] * v[k] * q[k * d + c];
      out[r * d + c] = s;
    }
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < r; ++c) out[r * d + c] = out[c * d + r];
  return out;
}

// G(z) = A z as an [N, m] "image".
PathLengthModel linear_model(const std::vector<double>& a, int m, int d) {
  PathLengthModel model;
  model.latent_length = static_cast<std::size_t>(d);
  model.style_length = static_cast<std::size_t>(d);
  model.render_z = [a, m, d](const Tensor& z, std::span<const std::uint64_t>) {
    const int n = z.dim(0);
    std::vector<float> out(static_cast<std::size_t>(n * m));
    for (int i = 0; i < n; ++i)
      for (int r = 0; r < m; ++r) {
        double s = 0;
        for (int k = 0; k < d; ++k) s += a[r * d + k] * z.values()[i * d + k];
        out[i * m + r] = static_cast<float>(s);
      }
    return Tensor({n, m}, out);
  };
  return model;
}

GeneratorConfig small_gen() {
  GeneratorConfig c;
  c.output_resolution = 16;
  c.channels = {{8, 8}, {16, 6}};
  c.mapping_depth = 2;
  c.structure = NoiseStructure(8, 8, PartitionKind::pixel, 2, {{1, 1, 1}, {2, 2, 1}}, 8);
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// FID

TEST(Fid, IdenticalStatsGiveExactZero) {
  const auto f = gaussian(200 * 6, 1);
  const auto s = GaussianStats::from_samples(f, 200, 6);
  EXPECT_EQ(fid(s, s), 0.0);
  const auto m = GaussianStats::from_moments({1, 2}, {2, 0.5, 0.5, 1});
  EXPECT_EQ(fid(m, m), 0.0);
}

TEST(Fid, OneDimensionalClosedForms) {
  EXPECT_NEAR(fid(GaussianStats::from_moments({0}, {1}), GaussianStats::from_moments({1}, {1})), 1.0, 1e-6);
  EXPECT_NEAR(fid(GaussianStats::from_moments({0}, {1}), GaussianStats::from_moments({0}, {4})), 1.0, 1e-6);
}

TEST(Fid, CommutingCovariancesMatchClosedForm) {
  // shared eigenbasis: sum (mu1 - mu2)^2 + sum (sqrt(a_k) - sqrt(b_k))^2
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const int d = 7;
    const auto q = orthogonal(d, seed);
    const auto ua = gaussian(d, seed + 10), ub = gaussian(d, seed + 20);
    std::vector<double> va, vb, ma, mb;
    double want = 0;
    for (int k = 0; k < d; ++k) {
      va.push_back(0.1 + ua[k] * ua[k]);
      vb.push_back(0.1 + ub[k] * ub[k]);
      ma.push_back(ua[k]);
      mb.push_back(-ub[k]);
      want += (ma[k] - mb[k]) * (ma[k] - mb[k]) + std::pow(std::sqrt(va[k]) - std::sqrt(vb[k]), 2);
    }
    const auto a = GaussianStats::from_moments(ma, rotate_diag(q, va));
    const auto b = GaussianStats::from_moments(mb, rotate_diag(q, vb));
    EXPECT_NEAR(fid(a, b), want, 1e-8 * (1 + want));
  }
}

TEST(Fid, Symmetric) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = GaussianStats::from_samples(gaussian(100 * 5, seed), 100, 5);
    const auto b = GaussianStats::from_samples(gaussian(80 * 5, seed + 50, 2.0f), 80, 5);
    EXPECT_NEAR(fid(a, b), fid(b, a), 1e-8);
    EXPECT_GT(fid(a, b), 0.0);
  }
}

TEST(Fid, NegativeEigenvaluesClippedAndReported) {
  const auto bad = GaussianStats::from_moments({0, 0}, {1, 0, 0, -0.5});
  const auto good = GaussianStats::from_moments({0, 0}, {1, 0, 0, 1});
  const auto r = fid_detailed(bad, good);
  EXPECT_EQ(r.clipped_eigenvalues, 1);
  EXPECT_DOUBLE_EQ(r.most_negative_eigenvalue, -0.5);
  EXPECT_TRUE(std::isfinite(r.value));
}

TEST(Fid, StatsFromSamplesAreUnbiased) {
  const std::vector<float> f{1, 2, 3, 6, 5, 4};  // rows (1,2) (3,6) (5,4)
  const auto s = GaussianStats::from_samples(f, 3, 2);
  EXPECT_DOUBLE_EQ(s.mean[0], 3.0);
  EXPECT_DOUBLE_EQ(s.mean[1], 4.0);
  EXPECT_NEAR(s.cov[0], 4.0, 1e-12);
  EXPECT_NEAR(s.cov[1], 2.0, 1e-12);
  EXPECT_NEAR(s.cov[3], 4.0, 1e-12);
  EXPECT_THROW(GaussianStats::from_samples(std::vector<float>(2), 1, 2), ArgumentError);
  EXPECT_THROW(GaussianStats::from_samples(std::vector<float>(5), 2, 2), ShapeError);
  EXPECT_THROW(fid(s, GaussianStats::from_moments({0}, {1})), ShapeError);
  EXPECT_THROW(GaussianStats::from_moments({0, 0}, {1, 2, 3, 1}), ArgumentError);
}

// ---------------------------------------------------------------------------
// Path length

TEST(PathLength, SlerpMatchesFormula) {
  const auto a = gaussian(6, 1), b = gaussian(6, 2);
  double dot = 0, na = 0, nb = 0;
  for (int k = 0; k < 6; ++k) {
    dot += double(a[k]) * b[k];
    na += double(a[k]) * a[k];
    nb += double(b[k]) * b[k];
  }
  const double w = std::acos(dot / std::sqrt(na * nb));
  for (double t : {0.0, 0.3, 1.0}) {
    const auto s = slerp(a, b, t);
    for (int k = 0; k < 6; ++k)
      EXPECT_NEAR(s[k], (std::sin((1 - t) * w) * a[k] + std::sin(t * w) * b[k]) / std::sin(w), 1e-6);
  }
  const auto same = slerp(a, a, 0.4);
  for (int k = 0; k < 6; ++k) EXPECT_NEAR(same[k], a[k], 1e-6);
}

TEST(PathLength, LinearGeneratorMatchesMonteCarlo) {
  const int m = 12, d = 24;
  const auto g = gaussian(static_cast<std::size_t>(m * d), 3, 0.3f);
  const std::vector<double> a(g.begin(), g.end());
  PathLengthOptions o;
  o.n_samples = 10000;
  o.seed = 4;
  o.batch_pairs = 256;
  const double got = path_length(linear_model(a, m, d), SquaredL2Distance{}, o).value;
  const double want = oracle::linear_path_length(a, m, d, 200000, 77);
  EXPECT_NEAR(got, want, 0.02 * want);
}

TEST(PathLength, EndModeMatchesEndpointOracle) {
  const int m = 6, d = 16;
  const auto g = gaussian(static_cast<std::size_t>(m * d), 5, 0.5f);
  const std::vector<double> a(g.begin(), g.end());
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd;
  double want = 0;
  const int n = 100000;
  for (int s = 0; s < n; ++s) {
    std::vector<double> x(d), y(d);
    for (auto& v : x) v = nd(rng);
    for (auto& v : y) v = nd(rng);
    const auto dz = oracle::slerp_tangent(x, y, (s % 2) ? 1.0 : 0.0);
    for (int r = 0; r < m; ++r) {
      double dot = 0;
      for (int k = 0; k < d; ++k) dot += a[r * d + k] * dz[k];
      want += dot * dot;
    }
  }
  want /= n;
  PathLengthOptions o;
  o.mode = PathMode::end;
  o.n_samples = 10000;
  o.batch_pairs = 256;
  EXPECT_NEAR(path_length(linear_model(a, m, d), SquaredL2Distance{}, o).value, want, 0.03 * want);
}

TEST(PathLength, LinearWSpaceHasClosedForm) {
  // w = M s, image = A w + B x with x held fixed: E|A M (s_b - s_a)|^2 = 2 |A M|_F^2
  const int sd = 5, wd = 4, xd = 3, m = 6;
  const auto mm = gaussian(static_cast<std::size_t>(wd * sd), 7), am = gaussian(static_cast<std::size_t>(m * wd), 8),
             bm = gaussian(static_cast<std::size_t>(m * xd), 9);
  PathLengthModel model;
  model.latent_length = sd + xd;
  model.style_length = sd;
  model.render_z = [](const Tensor&, std::span<const std::uint64_t>) -> Tensor { throw std::logic_error("unused"); };
  model.map_w = [&](const Tensor& s) {
    const int n = s.dim(0);
    Tensor w({n, wd});
    for (int i = 0; i < n; ++i)
      for (int r = 0; r < wd; ++r)
        for (int k = 0; k < sd; ++k) w.values()[i * wd + r] += mm[r * sd + k] * s.values()[i * sd + k];
    return w;
  };
  model.render_w = [&](const Tensor& w, const Tensor& x, std::span<const std::uint64_t>) {
    const int n = w.dim(0);
    Tensor out({n, m});
    for (int i = 0; i < n; ++i)
      for (int r = 0; r < m; ++r) {
        double s = 0;
        for (int k = 0; k < wd; ++k) s += double(am[r * wd + k]) * w.values()[i * wd + k];
        for (int k = 0; k < xd; ++k) s += double(bm[r * xd + k]) * x.values()[i * xd + k];
        out.values()[i * m + r] = static_cast<float>(s);
      }
    return out;
  };
  double frob = 0;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < sd; ++c) {
      double s = 0;
      for (int k = 0; k < wd; ++k) s += double(am[r * wd + k]) * mm[k * sd + c];
      frob += s * s;
    }
  PathLengthOptions o;
  o.space = LatentSpace::w;
  o.n_samples = 20000;
  o.batch_pairs = 512;
  o.epsilon = 1e-2;
  EXPECT_NEAR(path_length(model, SquaredL2Distance{}, o).value, 2 * frob, 0.03 * 2 * frob);
}

TEST(PathLength, ConstantGeneratorIsZero) {
  PathLengthModel model;
  model.latent_length = 4;
  model.style_length = 2;
  model.render_z = [](const Tensor& z, std::span<const std::uint64_t>) { return Tensor({z.dim(0), 3}, 0.5f); };
  model.map_w = [](const Tensor& s) { return s; };
  model.render_w = [](const Tensor& w, const Tensor&, std::span<const std::uint64_t>) { return Tensor({w.dim(0), 3}, 0.5f); };
  for (auto space : {LatentSpace::z, LatentSpace::w})
    for (auto mode : {PathMode::full, PathMode::end}) {
      PathLengthOptions o;
      o.space = space;
      o.mode = mode;
      o.n_samples = 20;
      EXPECT_EQ(path_length(model, SquaredL2Distance{}, o).value, 0.0);
    }
}

TEST(PathLength, RejectsBadOptions) {
  const auto model = linear_model({1, 0, 0, 1}, 2, 2);
  PathLengthOptions o;
  o.n_samples = 9;
  EXPECT_THROW(path_length(model, SquaredL2Distance{}, o), ArgumentError);
  o.n_samples = 10;
  o.epsilon = 0;
  EXPECT_THROW(path_length(model, SquaredL2Distance{}, o), ArgumentError);
  o.epsilon = 1e-4;
  o.space = LatentSpace::w;
  EXPECT_THROW(path_length(model, SquaredL2Distance{}, o), ArgumentError);
}

TEST(PathLength, DistanceScalingIsLinearAndRunsRepeat) {
  const auto g = GeneratorState::init(small_gen(), 1);
  const auto extractor = std::make_shared<RandomProjectionEmbedding>(16);
  PathLengthOptions o;
  o.n_samples = 12;
  o.seed = 3;
  for (auto space : {LatentSpace::z, LatentSpace::w}) {
    o.space = space;
    const auto one = evaluate_path_length(g, EmbeddingDistance(extractor, 1.0), o);
    const auto three = evaluate_path_length(g, EmbeddingDistance(extractor, 3.0), o);
    EXPECT_NEAR(three.value, 3 * one.value, 1e-9 * (1 + three.value));
    EXPECT_EQ(evaluate_path_length(g, EmbeddingDistance(extractor, 1.0), o).value, one.value);
    EXPECT_EQ(one.metric, space == LatentSpace::z ? "ppl_z" : "ppl_w");
    EXPECT_GT(one.value, 0.0);
  }
}

// ---------------------------------------------------------------------------
// Separability

TEST(Separability, ConditionalEntropyTables) {
  EXPECT_DOUBLE_EQ(conditional_entropy_bits(std::vector<int>{0, 1, 0, 1}, std::vector<int>{0, 1, 0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(conditional_entropy_bits(std::vector<int>{0, 1, 0, 1}, std::vector<int>{0, 0, 1, 1}), 1.0);
  // prediction 0: labels {0,0,0,1}; prediction 1: labels {1,1}
  const double h = -(0.75 * std::log2(0.75) + 0.25 * std::log2(0.25)) * 4.0 / 6.0;
  EXPECT_NEAR(conditional_entropy_bits(std::vector<int>{0, 0, 0, 1, 1, 1}, std::vector<int>{0, 0, 0, 0, 1, 1}), h, 1e-12);
}

TEST(Separability, SvmSeparatesSeparableData) {
  const std::size_t n = 400;
  const int d = 3;
  const auto x = gaussian(n * d, 11);
  std::vector<int> y;
  for (std::size_t i = 0; i < n; ++i) y.push_back(x[i * d] + 0.5f * x[i * d + 2] > 0.1f ? 1 : 0);
  const auto svm = LinearSvm::fit(x, n, d, y, {.c = 100.0, .max_iterations = 5000});
  int wrong = 0;
  for (std::size_t i = 0; i < n; ++i) wrong += svm.predict(std::span<const float>(x).subspan(i * d, d)) != y[i];
  EXPECT_LE(wrong, 2);
}

TEST(Separability, LinearlySeparableConstructionScoresOne) {
  const std::size_t n = 2000;
  const int d = 8;
  const auto codes = gaussian(n * d, 12);
  std::vector<float> prob;
  for (std::size_t i = 0; i < n; ++i) prob.push_back(1.0f / (1.0f + std::exp(-4.0f * codes[i * d])));
  const auto r = separability(codes, n, d, prob, 1);
  EXPECT_NEAR(r.score, 1.0, 0.05);
  EXPECT_TRUE(r.skipped_attributes.empty());
}

TEST(Separability, IndependentLabelsScoreTwo) {
  const std::size_t n = 4000;
  const int d = 8;
  const auto codes = gaussian(n * d, 13);
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<float> prob;
  for (std::size_t i = 0; i < n; ++i) prob.push_back(u(rng));
  const auto r = separability(codes, n, d, prob, 1);
  EXPECT_NEAR(r.score, 2.0, 0.1);
}

TEST(Separability, BoundsAndSkippedAttributes) {
  const std::size_t n = 600;
  const int d = 4, attrs = 3;
  const auto codes = gaussian(n * d, 15);
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<float> prob;
  for (std::size_t i = 0; i < n; ++i) {
    prob.push_back(codes[i * d + 1] > 0 ? 0.95f : 0.05f);
    prob.push_back(u(rng));
    prob.push_back(0.9f);  // one class only
  }
  const auto r = separability(codes, n, d, prob, attrs);
  EXPECT_EQ(r.skipped_attributes, std::vector<int>{2});
  EXPECT_TRUE(std::isnan(r.entropies[2]));
  EXPECT_GE(r.score, 1.0);
  EXPECT_LE(r.score, std::exp2(attrs));
  EXPECT_NEAR(r.score, std::exp2(r.entropies[0] + r.entropies[1]), 1e-12);
  EXPECT_THROW(separability(codes, n, d, std::vector<float>(5), 1), ShapeError);
}

// ---------------------------------------------------------------------------
// Bundled components and generator-level reports

TEST(Components, PoolImagesAveragesBlocks) {
  std::vector<float> v(1 * 3 * 4 * 4);
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<float>(k);
  const Tensor p = pool_images(Tensor({1, 3, 4, 4}, v), 2);
  ASSERT_EQ(p.shape(), (Shape{1, 3, 2, 2}));
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double s = 0;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) s += v[(c * 4 + 2 * i + a) * 4 + 2 * j + b];
        EXPECT_NEAR(p.values()[(c * 2 + i) * 2 + j], s / 4, 1e-5);
      }
  EXPECT_EQ(pool_images(Tensor({1, 3, 2, 2}, 1.0f), 4).shape(), (Shape{1, 3, 2, 2}));
}

TEST(Components, ExtractorIsDeterministicAndSeeded) {
  const Tensor imgs({2, 3, 16, 16}, gaussian(2 * 3 * 16 * 16, 17));
  const RandomProjectionEmbedding a(32, 1), b(32, 1), c(32, 2);
  EXPECT_EQ(a.embed(imgs), b.embed(imgs));
  EXPECT_NE(a.embed(imgs), c.embed(imgs));
  EXPECT_EQ(a.embed(imgs).size(), 64u);
  EXPECT_NE(a.id(), c.id());
  for (float v : a.embed(imgs)) EXPECT_GE(v, 0.0f);
  const RandomProjectionClassifier cls(3);
  const auto p = cls.predict(imgs);
  EXPECT_EQ(p.size(), 6u);
  for (float v : p) EXPECT_TRUE(v >= 0 && v <= 1);
}

TEST(Reports, FidReportIsReproducible) {
  const auto g = GeneratorState::init(small_gen(), 2);
  const RandomProjectionEmbedding e(16);
  const auto real = GaussianStats::from_samples(gaussian(50 * 16, 18), 50, 16);
  const auto a = evaluate_fid(g, real, e, 20, 5), b = evaluate_fid(g, real, e, 20, 5);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.metric, "fid");
  EXPECT_EQ(a.samples, 20u);
  EXPECT_EQ(a.seed, 5u);
  EXPECT_EQ(a.extractor, e.id());
  const auto back = MetricReport::from_json(a.to_json());
  EXPECT_EQ(back.value, a.value);
  EXPECT_EQ(back.settings, a.settings);
  const auto s1 = generated_stats(g, e, 10, 3), s2 = generated_stats(g, e, 10, 3, 4);
  for (std::size_t k = 0; k < s1.mean.size(); ++k) EXPECT_NEAR(s1.mean[k], s2.mean[k], 1e-6);
}

TEST(Reports, SeparabilityReportInBothSpaces) {
  const auto g = GeneratorState::init(small_gen(), 2);
  const RandomProjectionClassifier cls(2);
  for (auto space : {LatentSpace::z, LatentSpace::w}) {
    const auto r = evaluate_separability(g, cls, 40, 6, space);
    EXPECT_GE(r.value, 1.0);
    EXPECT_LE(r.value, 4.0);
    EXPECT_EQ(evaluate_separability(g, cls, 40, 6, space).value, r.value);
  }
}
