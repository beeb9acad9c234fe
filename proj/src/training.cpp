#include "sni/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "sni/checkpoint.hpp"
#include "sni/error.hpp"
#include "sni/rng.hpp"

namespace sni {

namespace fs = std::filesystem;

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError(std::string("unknown ") + what + " key '" + key + "'");
}

template <typename F>
auto config_guard(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed ") + what + ": " + e.what());
  }
}

bool all_finite(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    for (float v : t.values())
      if (!std::isfinite(v)) return false;
  return true;
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string{}; }

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam

nlohmann::json AdamConfig::to_json() const {
  return {{"lr", lr}, {"beta1", beta1}, {"beta2", beta2}, {"eps", eps}};
}

AdamConfig AdamConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"lr", "beta1", "beta2", "eps"}, "optimizer");
  return config_guard("optimizer", [&] {
    AdamConfig c;
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    return c;
  });
}

Adam::Adam(AdamConfig config, std::vector<NamedTensor> params) : config_(config), params_(std::move(params)) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.shape(), 0.0f);
    v_.emplace_back(p.tensor.shape(), 0.0f);
  }
}

void Adam::step(const std::vector<Tensor>& grads) {
  if (grads.size() != params_.size()) throw ShapeError("gradient count does not match parameter count");
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  const float b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
  const float step_size = static_cast<float>(config_.lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(config_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i].tensor;
    const float* g = grads[i].data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    float* w = p.data();
    for (std::size_t k = 0; k < p.numel(); ++k) {
      m[k] = b1 * m[k] + (1.0f - b1) * g[k];
      v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
      w[k] -= step_size * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Hyperparameters and run record

void TrainHyper::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (r1_gamma < 0.0) throw ConfigError("r1_gamma must be non-negative");
  if (r1_interval < 1) throw ConfigError("r1_interval must be at least 1");
  if (ema_beta < 0.0 || ema_beta >= 1.0) throw ConfigError("ema_beta must be in [0, 1)");
  for (const auto* a : {&g_adam, &d_adam}) {
    if (a->lr < 0.0 || a->beta1 < 0.0 || a->beta1 >= 1.0 || a->beta2 < 0.0 || a->beta2 >= 1.0 || a->eps <= 0.0) {
      throw ConfigError("optimizer settings out of range");
    }
  }
}

nlohmann::json TrainHyper::to_json() const {
  return {{"g_adam", g_adam.to_json()}, {"d_adam", d_adam.to_json()}, {"r1_gamma", r1_gamma},
          {"r1_interval", r1_interval}, {"batch_size", batch_size},     {"ema_beta", ema_beta}};
}

TrainHyper TrainHyper::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"g_adam", "d_adam", "r1_gamma", "r1_interval", "batch_size", "ema_beta"}, "training");
  return config_guard("training", [&] {
    TrainHyper h;
    if (j.contains("g_adam")) h.g_adam = AdamConfig::from_json(j.at("g_adam"));
    if (j.contains("d_adam")) h.d_adam = AdamConfig::from_json(j.at("d_adam"));
    h.r1_gamma = j.value("r1_gamma", h.r1_gamma);
    h.r1_interval = j.value("r1_interval", h.r1_interval);
    h.batch_size = j.value("batch_size", h.batch_size);
    h.ema_beta = j.value("ema_beta", h.ema_beta);
    return h;
  });
}

nlohmann::json TrainRun::to_json() const {
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : metric_log)
    log.push_back({{"images_seen", e.images_seen}, {"fid", opt_json(e.fid)}, {"ppl_z", opt_json(e.ppl_z)},
                   {"ppl_w", opt_json(e.ppl_w)}, {"separability", opt_json(e.separability)}});
  return {{"hyper", hyper.to_json()},
          {"seed", seed},
          {"images_seen", images_seen},
          {"step", step},
          {"data_position", {{"epoch", data_position.epoch}, {"offset", data_position.offset}}},
          {"dataset_hash", dataset_hash},
          {"metric_log", log}};
}

TrainRun TrainRun::from_json(const nlohmann::json& j) {
  return config_guard("train run", [&] {
    TrainRun r;
    r.hyper = TrainHyper::from_json(j.at("hyper"));
    r.seed = j.at("seed").get<std::uint64_t>();
    r.images_seen = j.at("images_seen").get<std::int64_t>();
    r.step = j.at("step").get<std::int64_t>();
    r.data_position.epoch = j.at("data_position").at("epoch").get<std::uint64_t>();
    r.data_position.offset = j.at("data_position").at("offset").get<std::uint64_t>();
    r.dataset_hash = j.value("dataset_hash", std::string{});
    for (const auto& e : j.at("metric_log")) {
      MetricLogEntry m;
      m.images_seen = e.at("images_seen").get<std::int64_t>();
      m.fid = opt_from(e, "fid");
      m.ppl_z = opt_from(e, "ppl_z");
      m.ppl_w = opt_from(e, "ppl_w");
      m.separability = opt_from(e, "separability");
      r.metric_log.push_back(m);
    }
    return r;
  });
}

nlohmann::json MetricSchedule::to_json() const {
  return {{"fid_samples", fid_samples},
          {"real_samples", real_samples},
          {"ppl_samples", ppl_samples},
          {"separability_samples", separability_samples},
          {"extractor_dim", extractor_dim},
          {"extractor_seed", extractor_seed},
          {"eval_seed", eval_seed}};
}

MetricSchedule MetricSchedule::from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"fid_samples", "real_samples", "ppl_samples", "separability_samples", "extractor_dim",
                  "extractor_seed", "eval_seed"},
                 "metrics");
  return config_guard("metrics", [&] {
    MetricSchedule m;
    m.fid_samples = j.value("fid_samples", m.fid_samples);
    m.real_samples = j.value("real_samples", m.real_samples);
    m.ppl_samples = j.value("ppl_samples", m.ppl_samples);
    m.separability_samples = j.value("separability_samples", m.separability_samples);
    m.extractor_dim = j.value("extractor_dim", m.extractor_dim);
    m.extractor_seed = j.value("extractor_seed", m.extractor_seed);
    m.eval_seed = j.value("eval_seed", m.eval_seed);
    if (m.fid_samples < 2 || m.real_samples < 2) throw ConfigError("FID needs at least 2 samples per side");
    if (m.ppl_samples != 0 && m.ppl_samples < 10) throw ConfigError("ppl_samples must be 0 or at least 10");
    return m;
  });
}

TrainState TrainState::init(const GeneratorConfig& g, const DiscriminatorConfig& d, const TrainHyper& hyper,
                            std::uint64_t seed) {
  hyper.validate();
  if (d.resolution != g.output_resolution) {
    throw ConfigError("discriminator resolution must equal the generator output resolution");
  }
  TrainState s{GeneratorState::init(g, derive_seed(seed, {1})),
               DiscriminatorState::init(d, derive_seed(seed, {2})),
               {},
               {},
               std::nullopt,
               {}};
  s.g_opt = Adam(hyper.g_adam, s.generator.parameters());
  s.d_opt = Adam(hyper.d_adam, s.discriminator.parameters());
  if (hyper.ema_beta > 0.0) s.ema = s.generator.clone();
  s.run.hyper = hyper;
  s.run.seed = seed;
  return s;
}

// ---------------------------------------------------------------------------
// One step

std::pair<Tensor, Tensor> sample_latent_batch(const NoiseStructure& s, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Tensor style({n, s.style_dim()});
  Tensor spatial({n, static_cast<int>(s.spatial_length())});
  for (auto& v : style.values()) v = normal(rng);
  for (auto& v : spatial.values()) v = normal(rng);
  return {style, spatial};
}

StepLosses train_step(GeneratorState& g, DiscriminatorState& d, Adam& g_opt, Adam& d_opt, const Tensor& real,
                      std::uint64_t seed, std::int64_t step, const TrainHyper& hyper,
                      const StepOptions& options) {
  const auto& gc = g.config();
  if (real.rank() != 4 || real.dim(1) != 3 || real.dim(2) != gc.output_resolution ||
      real.dim(3) != gc.output_resolution) {
    throw ShapeError("real batch " + shape_str(real.shape()) + " does not match the generator output");
  }
  const int n = real.dim(0);
  const auto d_params = tensors_of(d.parameters());
  const auto g_params = tensors_of(g.parameters());
  StepLosses losses;

  // Discriminator.
  {
    auto [style, spatial] = sample_latent_batch(g.structure(), n, derive_seed(seed, {1}));
    Tensor fake;
    {
      NoGradGuard no_grad;
      fake = g.forward(style, spatial, g.make_noise(n, derive_seed(seed, {1, 1})));
    }
    const bool r1 = hyper.r1_gamma > 0.0 && step % hyper.r1_interval == 0;
    Tensor real_in = real.detach();
    real_in.set_requires_grad(r1);
    const Tensor logits_real = d.forward(real_in);
    const Tensor logits_fake = d.forward(fake);
    const Tensor adversarial = add(mean(softplus(scale(logits_real, -1.0f))), mean(softplus(logits_fake)));
    Tensor total = adversarial;
    losses.d_adversarial = adversarial.item();
    if (r1) {
      const Tensor grad_real = gradients(sum(logits_real), {real_in}, {}, true)[0];
      const float weight = static_cast<float>(0.5 * hyper.r1_gamma * hyper.r1_interval / n);
      const Tensor penalty = scale(sum(mul(grad_real, grad_real)), weight);
      losses.r1_penalty = penalty.item();
      total = add(adversarial, penalty);
    }
    losses.d_total = total.item();
    if (!std::isfinite(losses.d_total)) {
      throw ModelFailure("non-finite discriminator loss at step " + std::to_string(step));
    }
    if (options.update_discriminator) {
      const auto grads = gradients(total, d_params);
      if (!all_finite(grads)) throw ModelFailure("non-finite discriminator gradient at step " + std::to_string(step));
      d_opt.step(grads);
    }
  }

  // Generator.
  {
    auto [style, spatial] = sample_latent_batch(g.structure(), n, derive_seed(seed, {2}));
    const Tensor fake = g.forward(style, spatial, g.make_noise(n, derive_seed(seed, {2, 1})));
    const Tensor loss = mean(softplus(scale(d.forward(fake), -1.0f)));
    losses.g_loss = loss.item();
    if (!std::isfinite(losses.g_loss)) throw ModelFailure("non-finite generator loss at step " + std::to_string(step));
    if (options.update_generator) {
      const auto grads = gradients(loss, g_params);
      if (!all_finite(grads)) throw ModelFailure("non-finite generator gradient at step " + std::to_string(step));
      g_opt.step(grads);
    }
  }
  return losses;
}

// ---------------------------------------------------------------------------
// Trainer

std::string metrics_csv_header() { return "images_seen,fid,ppl_z,ppl_w,separability"; }

std::string metrics_csv_row(const MetricLogEntry& e) {
  return std::to_string(e.images_seen) + "," + fmt(e.fid) + "," + fmt(e.ppl_z) + "," + fmt(e.ppl_w) + "," +
         fmt(e.separability);
}

Trainer::Trainer(TrainState state, const ImageCache& data, TrainerOptions options)
    : state_(std::move(state)),
      data_(&data),
      options_(std::move(options)),
      stream_(data, state_.run.hyper.batch_size, derive_seed(state_.run.seed, {3}), options_.flip) {
  if (data.resolution() != state_.generator.config().output_resolution) {
    throw ConfigError("dataset resolution " + std::to_string(data.resolution()) +
                      " does not match the generator output " +
                      std::to_string(state_.generator.config().output_resolution));
  }
  if (!state_.run.dataset_hash.empty() && !data.manifest().entries.empty() &&
      state_.run.dataset_hash != data.manifest().content_hash()) {
    throw ConfigError("dataset differs from the one this run was trained on");
  }
  if (state_.run.dataset_hash.empty() && !data.manifest().entries.empty()) {
    state_.run.dataset_hash = data.manifest().content_hash();
  }
  if (state_.run.data_position.offset != 0 || state_.run.data_position.epoch != 0) {
    stream_.seek(state_.run.data_position);
  }
  fs::create_directories(options_.out_dir);
  truncate_logs();
}

void Trainer::truncate_logs() {
  // Drop rows written after the state being resumed from.
  auto filter = [](const fs::path& path, const std::string& header, auto keep) {
    std::vector<std::string> rows;
    if (std::ifstream in{path}) {
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty() && keep(std::stoll(line.substr(0, line.find(','))))) rows.push_back(line);
    }
    std::ofstream out(path, std::ios::trunc);
    out << header << '\n';
    for (const auto& r : rows) out << r << '\n';
  };
  const auto step = state_.run.step;
  filter(options_.out_dir / "losses.csv", "step,images_seen,d_adversarial,r1_penalty,d_total,g_loss",
         [step](long long s) { return s < step; });
  const auto& log = state_.run.metric_log;
  std::ofstream out(options_.out_dir / "metrics.csv", std::ios::trunc);
  out << metrics_csv_header() << '\n';
  for (const auto& e : log) out << metrics_csv_row(e) << '\n';
}

void Trainer::append_loss(const StepRecord& r) {
  std::ofstream out(options_.out_dir / "losses.csv", std::ios::app);
  out << r.step << ',' << r.images_seen << ',' << fmt(r.losses.d_adversarial) << ',' << fmt(r.losses.r1_penalty)
      << ',' << fmt(r.losses.d_total) << ',' << fmt(r.losses.g_loss) << '\n';
}

void Trainer::append_metrics(const MetricLogEntry& e) {
  std::ofstream out(options_.out_dir / "metrics.csv", std::ios::app);
  out << metrics_csv_row(e) << '\n';
}

GaussianStats real_image_stats(const ImageCache& data, std::size_t n, std::uint64_t seed,
                               const FeatureExtractor& extractor) {
  n = std::min(n, data.size());
  const BatchStream order(data, 1, seed);
  const auto perm = order.permutation(0);
  return image_stats(
      [&](std::size_t first, std::size_t count) {
        const int r = data.resolution();
        Tensor t({static_cast<int>(count), 3, r, r});
        for (std::size_t k = 0; k < count; ++k) {
          const Tensor one = data.batch(perm[first + k], 1);
          std::copy(one.values().begin(), one.values().end(), t.data() + k * one.numel());
        }
        return t;
      },
      n, extractor);
}

MetricLogEntry Trainer::evaluate_now() {
  const auto& ms = options_.metrics;
  const RandomProjectionEmbedding extractor(ms.extractor_dim, ms.extractor_seed);
  if (!real_stats_) real_stats_ = real_image_stats(*data_, static_cast<std::size_t>(ms.real_samples), ms.eval_seed, extractor);
  const GeneratorState& g = state_.inference_generator();
  MetricLogEntry e;
  e.images_seen = state_.run.images_seen;
  e.fid = evaluate_fid(g, *real_stats_, extractor, ms.fid_samples, ms.eval_seed).value;
  if (ms.ppl_samples > 0) {
    const EmbeddingDistance distance(std::make_shared<RandomProjectionEmbedding>(extractor));
    PathLengthOptions po;
    po.n_samples = ms.ppl_samples;
    po.seed = ms.eval_seed;
    e.ppl_z = evaluate_path_length(g, distance, po).value;
    po.space = LatentSpace::w;
    e.ppl_w = evaluate_path_length(g, distance, po).value;
  }
  if (ms.separability_samples > 0) {
    const RandomProjectionClassifier classifier;
    e.separability = evaluate_separability(g, classifier, ms.separability_samples, ms.eval_seed, LatentSpace::z).value;
  }
  state_.run.metric_log.push_back(e);
  append_metrics(e);
  return e;
}

fs::path Trainer::save_checkpoint_now() {
  const fs::path dir = options_.out_dir / "checkpoints" / std::to_string(state_.run.images_seen);
  save_checkpoint(dir, state_, {{"config_hash", options_.config_hash}});
  std::ofstream latest(options_.out_dir / "checkpoints" / "latest", std::ios::trunc);
  latest << std::to_string(state_.run.images_seen) << '\n';
  return dir;
}

void Trainer::run(const std::function<void(const StepRecord&)>& on_step) {
  auto& run = state_.run;
  if (run.metric_log.empty()) evaluate_now();
  auto crossed = [](std::int64_t before, std::int64_t after, std::int64_t every) {
    return every > 0 && before / every != after / every;
  };
  while (run.images_seen < options_.images_target) {
    const Tensor batch = stream_.next();
    StepRecord rec;
    rec.step = run.step;
    try {
      rec.losses = train_step(state_.generator, state_.discriminator, state_.g_opt, state_.d_opt, batch,
                              derive_seed(run.seed, {4, static_cast<std::uint64_t>(run.step)}), run.step,
                              run.hyper);
    } catch (const ModelFailure& e) {
      nlohmann::json dump = {{"error", e.what()}, {"step", run.step}, {"images_seen", run.images_seen}};
      nlohmann::json norms = nlohmann::json::object();
      for (const auto& p : state_.generator.parameters()) {
        double acc = 0.0;
        for (float v : p.tensor.values()) acc += static_cast<double>(v) * v;
        norms["generator." + p.name] = std::sqrt(acc);
      }
      dump["parameter_norms"] = norms;
      std::ofstream(options_.out_dir / "failure.json") << dump.dump(2) << '\n';
      throw;
    }
    if (state_.ema) {
      const float b = static_cast<float>(run.hyper.ema_beta);
      const auto src = state_.generator.parameters();
      auto dst = state_.ema->parameters();
      for (std::size_t i = 0; i < src.size(); ++i) {
        float* e = dst[i].tensor.data();
        const float* p = src[i].tensor.data();
        for (std::size_t k = 0; k < src[i].tensor.numel(); ++k) e[k] = b * e[k] + (1.0f - b) * p[k];
      }
    }
    const std::int64_t before = run.images_seen;
    run.images_seen += batch.dim(0);
    ++run.step;
    run.data_position = stream_.position();
    rec.images_seen = run.images_seen;
    append_loss(rec);
    if (on_step) on_step(rec);
    const bool done = run.images_seen >= options_.images_target;
    if (crossed(before, run.images_seen, options_.metrics_every) || done) evaluate_now();
    if (crossed(before, run.images_seen, options_.checkpoint_every) || done) save_checkpoint_now();
  }
}

}  // namespace sni
