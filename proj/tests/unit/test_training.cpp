#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "sni/checkpoint.hpp"
#include "sni/error.hpp"
#include "sni/training.hpp"

using namespace sni;
namespace fs = std::filesystem;

namespace {

GeneratorConfig tiny_gen() {
  GeneratorConfig c;
  c.output_resolution = 16;
  c.style_start = 16;
  c.channels = {{8, 8}, {16, 6}};
  c.mapping_depth = 2;
  c.structure = NoiseStructure(8, 8, PartitionKind::pixel, 4, {{1, 1, 1}, {2, 2, 1}}, 8);
  return c;
}

TrainHyper tiny_hyper() {
  TrainHyper h;
  h.batch_size = 4;
  h.r1_gamma = 1.0;
  return h;
}

// Bright discs at random centres on a dark ground, HWC in [-1, 1].
ImageCache blobs(int n, int r, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.25f, 0.75f);
  std::vector<float> rec;
  for (int k = 0; k < n; ++k) {
    const float cy = u(rng) * r, cx = u(rng) * r, hue = u(rng);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < r; ++j) {
        const float d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
        const float v = std::exp(-d2 / (0.05f * r * r));
        rec.push_back(2 * v - 1);
        rec.push_back(2 * v * hue - 1);
        rec.push_back(-0.8f);
      }
  }
  return ImageCache::from_records(r, std::move(rec));
}

std::vector<std::vector<float>> snapshot(const std::vector<NamedTensor>& ps) {
  std::vector<std::vector<float>> out;
  for (const auto& p : ps) out.push_back(p.tensor.to_vector());
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("sni_train_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Adam, MatchesReferenceUpdate) {
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.999;
  Tensor p({3}, std::vector<float>{1, -2, 0.5f});
  Adam opt(cfg, {{"p", p}});
  std::vector<double> w{1, -2, 0.5}, m(3), v(3);
  for (int t = 1; t <= 5; ++t) {
    const std::vector<float> g{0.3f * t, -1.0f, 2.0f / t};
    opt.step({Tensor({3}, g)});
    for (int k = 0; k < 3; ++k) {
      m[k] = 0.9 * m[k] + 0.1 * g[k];
      v[k] = 0.999 * v[k] + 0.001 * double(g[k]) * g[k];
      const double mh = m[k] / (1 - std::pow(0.9, t)), vh = v[k] / (1 - std::pow(0.999, t));
      w[k] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p.values()[k], w[k], 1e-5);
  EXPECT_EQ(opt.steps(), 5);
}

TEST(TrainHyper, ValidateRejects) {
  auto h = tiny_hyper();
  h.batch_size = 0;
  EXPECT_THROW(h.validate(), ConfigError);
  h = tiny_hyper();
  h.r1_interval = 0;
  EXPECT_THROW(h.validate(), ConfigError);
  h = tiny_hyper();
  h.r1_gamma = -1;
  EXPECT_THROW(h.validate(), ConfigError);
  h = tiny_hyper();
  h.ema_beta = 1.0;
  EXPECT_THROW(h.validate(), ConfigError);
  EXPECT_EQ(TrainHyper::from_json(tiny_hyper().to_json()), tiny_hyper());
}

TEST(TrainStep, FrozenGeneratorDiscriminatorLearns) {
  auto s = TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), tiny_hyper(), 1);
  const auto data = blobs(32, 16, 2);
  BatchStream stream(data, 4, 3);
  const auto g_before = snapshot(s.generator.parameters());
  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) {
    const auto l = train_step(s.generator, s.discriminator, s.g_opt, s.d_opt, stream.next(), 100 + step, step,
                              s.run.hyper, {.update_generator = false});
    losses.push_back(l.d_adversarial);
  }
  double first = 0, last = 0;
  for (int k = 0; k < 10; ++k) {
    first += losses[k];
    last += losses[40 + k];
  }
  EXPECT_LT(last, first);
  EXPECT_EQ(snapshot(s.generator.parameters()), g_before);
}

TEST(TrainStep, ZeroLearningRateKeepsWeights) {
  auto h = tiny_hyper();
  h.g_adam.lr = 0;
  h.d_adam.lr = 0;
  auto s = TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), h, 1);
  const auto g0 = snapshot(s.generator.parameters()), d0 = snapshot(s.discriminator.parameters());
  const auto data = blobs(8, 16, 2);
  train_step(s.generator, s.discriminator, s.g_opt, s.d_opt, data.batch(0, 4), 5, 0, h);
  EXPECT_EQ(snapshot(s.generator.parameters()), g0);
  EXPECT_EQ(snapshot(s.discriminator.parameters()), d0);
}

TEST(TrainStep, EveryParameterMoves) {
  auto s = TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), tiny_hyper(), 1);
  const auto g0 = snapshot(s.generator.parameters()), d0 = snapshot(s.discriminator.parameters());
  const auto data = blobs(8, 16, 2);
  train_step(s.generator, s.discriminator, s.g_opt, s.d_opt, data.batch(0, 4), 5, 0, s.run.hyper);
  const auto g1 = snapshot(s.generator.parameters()), d1 = snapshot(s.discriminator.parameters());
  const auto gn = s.generator.parameters(), dn = s.discriminator.parameters();
  for (std::size_t k = 0; k < g0.size(); ++k) EXPECT_NE(g0[k], g1[k]) << gn[k].name;
  for (std::size_t k = 0; k < d0.size(); ++k) EXPECT_NE(d0[k], d1[k]) << dn[k].name;
}

TEST(TrainStep, R1MatchesDirectComputation) {
  const auto h = tiny_hyper();
  auto s = TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), h, 1);
  const auto data = blobs(8, 16, 2);
  const Tensor real = data.batch(0, 4);
  const auto l = train_step(s.generator, s.discriminator, s.g_opt, s.d_opt, real, 5, 0, h,
                            {.update_generator = false, .update_discriminator = false});
  // gamma / 2 * mean over items of |grad_x D(x)|^2, one item at a time
  double acc = 0;
  for (int n = 0; n < 4; ++n) {
    Tensor x = data.batch(n, 1);
    x.set_requires_grad(true);
    const auto gx = gradients(s.discriminator.forward(x), {x})[0];
    for (float v : gx.values()) acc += double(v) * v;
  }
  EXPECT_NEAR(l.r1_penalty, 0.5 * h.r1_gamma * acc / 4, 1e-4 * (1 + l.r1_penalty));
  EXPECT_NEAR(l.d_total, l.d_adversarial + l.r1_penalty, 1e-5 * (1 + std::abs(l.d_total)));
  EXPECT_GE(l.r1_penalty, 0.0);
}

TEST(TrainStep, R1IntervalScalesAndSkips) {
  auto h = tiny_hyper();
  const auto data = blobs(8, 16, 2);
  auto eval = [&](int interval, std::int64_t step) {
    h.r1_interval = interval;
    auto s = TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), h, 1);
    return train_step(s.generator, s.discriminator, s.g_opt, s.d_opt, data.batch(0, 4), 5, step, h,
                      {.update_generator = false, .update_discriminator = false});
  };
  const auto every = eval(1, 0), fourth = eval(4, 0), off = eval(4, 1);
  EXPECT_NEAR(fourth.r1_penalty, 4 * every.r1_penalty, 1e-5 * (1 + every.r1_penalty));
  EXPECT_EQ(off.r1_penalty, 0.0);
  EXPECT_EQ(off.d_total, off.d_adversarial);
  h.r1_gamma = 0;
  h.r1_interval = 1;
  auto s = TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), h, 1);
  EXPECT_EQ(train_step(s.generator, s.discriminator, s.g_opt, s.d_opt, data.batch(0, 4), 5, 0, h).r1_penalty, 0.0);
}

TEST(TrainStep, RejectsWrongBatchShape) {
  auto s = TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), tiny_hyper(), 1);
  EXPECT_THROW(train_step(s.generator, s.discriminator, s.g_opt, s.d_opt, Tensor({4, 3, 8, 8}), 5, 0, s.run.hyper),
               ShapeError);
}

TEST(TrainStep, NonFiniteWeightsFail) {
  auto s = TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), tiny_hyper(), 1);
  s.discriminator.out.bias.values()[0] = std::nanf("");
  const auto data = blobs(8, 16, 2);
  EXPECT_THROW(train_step(s.generator, s.discriminator, s.g_opt, s.d_opt, data.batch(0, 4), 5, 0, s.run.hyper),
               ModelFailure);
}

TEST(TrainStep, HundredStepsDeterministic) {
  const auto data = blobs(16, 16, 4);
  auto go = [&] {
    auto s = TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), tiny_hyper(), 9);
    BatchStream stream(data, 4, 3);
    std::vector<StepLosses> ls;
    for (int step = 0; step < 100; ++step)
      ls.push_back(train_step(s.generator, s.discriminator, s.g_opt, s.d_opt, stream.next(), 7 + step, step,
                              s.run.hyper));
    return std::make_pair(ls, snapshot(s.generator.parameters()));
  };
  const auto a = go(), b = go();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  for (const auto& l : a.first) {
    EXPECT_TRUE(std::isfinite(l.d_total) && std::isfinite(l.g_loss));
    EXPECT_GE(l.r1_penalty, 0.0);
  }
}

TEST(Trainer, WritesLogsAndCheckpoints) {
  TempDir dir("logs");
  const auto data = blobs(24, 16, 5);
  TrainerOptions o;
  o.images_target = 32;
  o.checkpoint_every = 16;
  o.metrics_every = 16;
  o.metrics.fid_samples = 16;
  o.metrics.real_samples = 24;
  o.out_dir = dir.path;
  Trainer t(TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), tiny_hyper(), 1), data, o);
  int seen = 0;
  t.run([&](const StepRecord&) { ++seen; });
  EXPECT_EQ(seen, 8);
  EXPECT_EQ(t.state().run.images_seen, 32);
  EXPECT_TRUE(fs::exists(dir.path / "checkpoints" / "16" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir.path / "checkpoints" / "32" / "manifest.json"));
  EXPECT_EQ(slurp(dir.path / "checkpoints" / "latest"), "32\n");
  const auto losses = slurp(dir.path / "losses.csv");
  EXPECT_EQ(std::count(losses.begin(), losses.end(), '\n'), 9);
  EXPECT_EQ(losses.rfind("step,images_seen,d_adversarial,r1_penalty,d_total,g_loss\n", 0), 0u);
  const auto& log = t.state().run.metric_log;
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[0].images_seen, 0);
  EXPECT_EQ(log[1].images_seen, 16);
  EXPECT_EQ(log[2].images_seen, 32);
  for (const auto& e : log) EXPECT_TRUE(e.fid && *e.fid >= 0);
}

TEST(Trainer, ResumeRepeatsUninterruptedRun) {
  TempDir full("full"), part("part");
  const auto data = blobs(20, 16, 6);
  auto options = [&](const fs::path& out) {
    TrainerOptions o;
    o.images_target = 48;
    o.checkpoint_every = 24;
    o.metrics_every = 0;
    o.metrics.fid_samples = 8;
    o.metrics.real_samples = 8;
    o.out_dir = out;
    return o;
  };
  auto h = tiny_hyper();
  h.ema_beta = 0.9;
  Trainer a(TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), h, 3), data, options(full.path));
  a.run();

  // a copy of the finished run's logs gets cut back to the checkpoint, then regrown
  fs::create_directories(part.path);
  fs::copy_file(full.path / "losses.csv", part.path / "losses.csv");
  Trainer c(load_checkpoint(full.path / "checkpoints" / "24"), data, options(part.path));
  c.run();

  EXPECT_EQ(snapshot(c.state().generator.parameters()), snapshot(a.state().generator.parameters()));
  EXPECT_EQ(snapshot(c.state().discriminator.parameters()), snapshot(a.state().discriminator.parameters()));
  EXPECT_EQ(snapshot(c.state().ema->parameters()), snapshot(a.state().ema->parameters()));
  EXPECT_EQ(c.state().run.data_position, a.state().run.data_position);
  EXPECT_EQ(slurp(part.path / "losses.csv"), slurp(full.path / "losses.csv"));
  EXPECT_EQ(c.state().run.metric_log, a.state().run.metric_log);
}

TEST(Trainer, RejectsResolutionMismatch) {
  TempDir dir("mismatch");
  TrainerOptions o;
  o.out_dir = dir.path;
  EXPECT_THROW(Trainer(TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), tiny_hyper(), 1),
                       blobs(4, 8, 1), o),
               ConfigError);
}

TEST(Trainer, EmaFollowsDecay) {
  TempDir dir("ema");
  auto h = tiny_hyper();
  h.ema_beta = 0.5;
  auto s = TrainState::init(tiny_gen(), DiscriminatorConfig::mirror(tiny_gen()), h, 2);
  ASSERT_TRUE(s.ema.has_value());
  const auto e0 = snapshot(s.ema->parameters());
  TrainerOptions o;
  o.images_target = 4;
  o.metrics.fid_samples = 4;
  o.metrics.real_samples = 4;
  o.out_dir = dir.path;
  const auto data = blobs(8, 16, 2);
  Trainer t(std::move(s), data, o);
  t.run();
  const auto g1 = snapshot(t.state().generator.parameters()), e1 = snapshot(t.state().ema->parameters());
  for (std::size_t k = 0; k < e0.size(); ++k)
    for (std::size_t i = 0; i < e0[k].size(); ++i) EXPECT_FLOAT_EQ(e1[k][i], 0.5f * e0[k][i] + 0.5f * g1[k][i]);
}

TEST(MetricsCsv, RowFormat) {
  MetricLogEntry e;
  e.images_seen = 5000;
  e.fid = 12.5;
  e.separability = 1.25;
  EXPECT_EQ(metrics_csv_header(), "images_seen,fid,ppl_z,ppl_w,separability");
  EXPECT_EQ(metrics_csv_row(e), "5000,12.5,,,1.25");
}
