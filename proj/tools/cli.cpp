#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sni/checkpoint.hpp"
#include "sni/config.hpp"
#include "sni/data.hpp"
#include "sni/edit_spec.hpp"
#include "sni/error.hpp"
#include "sni/hash.hpp"
#include "sni/image.hpp"
#include "sni/mapping.hpp"
#include "sni/metrics.hpp"
#include "sni/plot.hpp"
#include "sni/rng.hpp"
#include "sni/service.hpp"
#include "sni/synthesis.hpp"
#include "sni/training.hpp"

namespace sni {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Flags that overlay the run config. Applied on top of --config, so flags win.
class ConfigFlags {
 public:
  explicit ConfigFlags(CLI::App* app) : app_(app) {
    app->add_option("--config", config_path, "JSON run config");
    add<std::uint64_t>("--seed", "/seed", "Run seed");
  }

  template <typename T>
  CLI::Option* add(const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    auto* opt = app_->add_option(flag, *value, help);
    entries_.push_back({opt, [value, pointer](json& j) { j[json::json_pointer(pointer)] = *value; }});
    return opt;
  }

  template <typename T>
  CLI::Option* add_custom(const std::string& flag, const std::string& help, std::function<void(json&, const T&)> fn) {
    auto value = std::make_shared<T>();
    auto* opt = app_->add_option(flag, *value, help);
    entries_.push_back({opt, [value, fn](json& j) { fn(j, *value); }});
    return opt;
  }

  CLI::Option* add_flag(const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<bool>(false);
    auto* opt = app_->add_flag(flag, *value, help);
    entries_.push_back({opt, [value, pointer](json& j) { j[json::json_pointer(pointer)] = *value; }});
    return opt;
  }

  bool given(const std::string& flag) const { return app_->get_option(flag)->count() > 0; }
  bool any_config() const { return !config_path.empty(); }

  json raw() const {
    json base = config_path.empty() ? json::object() : read_config_file(config_path);
    json patch = json::object();
    for (const auto& e : entries_)
      if (e.opt->count()) e.apply(patch);
    return merge_json(base, patch);
  }

  RunConfig build() const {
    RunConfig c = RunConfig::from_json(raw());
    c.validate();
    return c;
  }

  std::string config_path;

 private:
  struct Entry {
    CLI::Option* opt;
    std::function<void(json&)> apply;
  };
  CLI::App* app_;
  std::vector<Entry> entries_;
};

void add_model_flags(ConfigFlags& f) {
  f.add<int>("--resolution", "/generator/output_resolution", "Output resolution");
  f.add_custom<std::string>("--style-start", "Resolution where styling starts: 16, 64, 128, ... or all",
                            [](json& j, const std::string& v) {
                              if (v == "all") {
                                j["generator"]["style_start"] = "all";
                                return;
                              }
                              try {
                                std::size_t used = 0;
                                const int r = std::stoi(v, &used);
                                if (used != v.size()) throw std::invalid_argument(v);
                                j["generator"]["style_start"] = r;
                              } catch (const std::exception&) {
                                throw ArgumentError("--style-start must be a resolution or 'all', got '" + v + "'");
                              }
                            });
  f.add_custom<std::string>("--channels", "Generator channels, e.g. 8:64,16:64,32:32",
                            [](json& j, const std::string& v) {
                              json ch = json::object();
                              std::stringstream ss(v);
                              std::string item;
                              while (std::getline(ss, item, ',')) {
                                const auto colon = item.find(':');
                                if (colon == std::string::npos) throw ArgumentError("bad --channels entry '" + item + "'");
                                try {
                                  ch[std::to_string(std::stoi(item.substr(0, colon)))] = std::stoi(item.substr(colon + 1));
                                } catch (const std::exception&) {
                                  throw ArgumentError("bad --channels entry '" + item + "'");
                                }
                              }
                              j["generator"]["channels"] = ch;
                            });
  f.add_custom<int>("--grid", "Structure grid size (also the start resolution)", [](json& j, const int& g) {
    j["generator"]["start_resolution"] = g;
    j["generator"]["structure"]["grid_h"] = g;
    j["generator"]["structure"]["grid_w"] = g;
  });
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw ArgumentError("cannot write " + path.string());
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ArgumentError("cannot create output directory " + dir.string());
}

std::string file_sha(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  return sha256_hex(bytes);
}

void write_artifacts(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                     const std::vector<fs::path>& files, const json& extra = json::object()) {
  json list = json::array();
  for (const auto& f : files) {
    json e = {{"path", fs::relative(f, dir).generic_string()}};
    if (fs::is_regular_file(f)) e["sha256"] = file_sha(f);
    list.push_back(e);
  }
  json m = {{"command", command}, {"config_hash", cfg.hash()}, {"artifacts", list}};
  if (!extra.empty()) m["details"] = extra;
  write_text(dir / "artifacts.json", m.dump(2) + "\n");
}

/// Checkpoint structure check only applies when the user pinned a structure.
GeneratorSnapshot open_generator(const std::string& path, const ConfigFlags& flags, const RunConfig& cfg) {
  const fs::path dir = resolve_checkpoint_dir(path);
  const bool pinned = flags.any_config() || flags.given("--grid");
  return load_generator(dir, pinned ? &cfg.generator.structure : nullptr);
}

/// The effective config of a command that runs a stored generator.
RunConfig with_generator(RunConfig cfg, const GeneratorState& g) {
  cfg.generator = g.config();
  cfg.discriminator_channels.clear();
  return cfg;
}

StructuredLatent read_latent(const fs::path& path, std::optional<std::uint64_t>* noise_seed = nullptr) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot read latent " + path.string());
  try {
    return latent_from_json(json::parse(in), noise_seed);
  } catch (const json::exception& e) {
    throw ArgumentError("bad latent file " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string cache;
  bool resume = false;
  int log_every = 50;
};

int cmd_train(const TrainArgs& a, const ConfigFlags& flags, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = flags.build();
  const fs::path out_dir = a.out;
  prepare_dir(out_dir);
  write_text(out_dir / "effective_config.json", cfg.to_json().dump(2) + "\n");

  const fs::path cache_dir = a.cache.empty() ? out_dir / "data_cache" : fs::path(a.cache);
  IngestOptions io;
  io.workers = cfg.schedule.workers;
  const DatasetManifest manifest = ingest(a.data, cfg.generator.output_resolution, cache_dir, io);
  for (const auto& s : manifest.skipped) err << "skipped " << s.path << ": " << s.reason << "\n";
  const ImageCache data = ImageCache::load(cache_dir);
  out << "dataset: " << data.size() << " images at " << data.resolution() << "x" << data.resolution()
      << " (hash " << manifest.content_hash().substr(0, 16) << ")\n";

  TrainState state;
  const fs::path latest = out_dir / "checkpoints" / "latest";
  if (a.resume) {
    const fs::path dir = resolve_checkpoint_dir(out_dir);
    if (!fs::exists(dir / "manifest.json")) throw ArgumentError("nothing to resume in " + out_dir.string());
    state = load_checkpoint(dir, &cfg.generator.structure);
    if (!(state.generator.config() == cfg.generator)) {
      throw ConfigError("checkpoint generator config differs from the effective config");
    }
    if (!(state.run.hyper == cfg.training) || state.run.seed != cfg.seed) {
      throw ConfigError("checkpoint training settings or seed differ from the effective config");
    }
    out << "resuming from " << dir.string() << " at " << state.run.images_seen << " images\n";
  } else {
    if (fs::exists(latest)) {
      throw ArgumentError(out_dir.string() + " already holds a run; pass --resume or choose another --out");
    }
    state = TrainState::init(cfg.generator, cfg.discriminator(), cfg.training, cfg.seed);
  }

  TrainerOptions to;
  to.images_target = cfg.schedule.images_seen;
  to.checkpoint_every = cfg.schedule.checkpoint_every;
  to.metrics_every = cfg.schedule.metrics_every;
  to.metrics = cfg.metrics;
  to.flip = cfg.schedule.flip;
  to.out_dir = out_dir;
  to.config_hash = cfg.hash();
  Trainer trainer(std::move(state), data, to);
  std::size_t metrics_seen = trainer.state().run.metric_log.size();
  auto report_metrics = [&] {
    const auto& log = trainer.state().run.metric_log;
    for (; metrics_seen < log.size(); ++metrics_seen) out << "metrics " << metrics_csv_row(log[metrics_seen]) << "\n";
  };
  try {
    trainer.run([&](const StepRecord& r) {
      if (a.log_every > 0 && r.step % a.log_every == 0) {
        char line[160];
        std::snprintf(line, sizeof line, "step %lld images %lld d %.4f r1 %.4f g %.4f\n",
                      static_cast<long long>(r.step), static_cast<long long>(r.images_seen), r.losses.d_total,
                      r.losses.r1_penalty, r.losses.g_loss);
        out << line << std::flush;
      }
      report_metrics();
    });
  } catch (const ModelFailure& e) {
    err << "training failed: " << e.what() << " (details in " << (out_dir / "failure.json").string() << ")\n";
    return kExitInternal;
  }
  report_metrics();

  std::vector<fs::path> files{out_dir / "effective_config.json", out_dir / "losses.csv", out_dir / "metrics.csv"};
  for (const auto& e : fs::directory_iterator(out_dir / "checkpoints"))
    if (e.is_directory()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  write_artifacts(out_dir, "train", cfg, files,
                  {{"images_seen", trainer.state().run.images_seen}, {"dataset_hash", manifest.content_hash()}});
  out << "done: " << trainer.state().run.images_seen << " images, latest checkpoint "
      << resolve_checkpoint_dir(out_dir).string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string checkpoint;
  std::string out;
  int count = 1;
};

int cmd_generate(const GenerateArgs& a, const ConfigFlags& flags, std::ostream& out) {
  if (a.count < 0) throw ArgumentError("--count must be non-negative");
  const RunConfig base = flags.build();
  const GeneratorSnapshot snap = open_generator(a.checkpoint, flags, base);
  if (a.count == 0) {
    out << "nothing to generate\n";
    return kExitOk;
  }
  const RunConfig cfg = with_generator(base, snap.generator);
  const fs::path dir = a.out;
  prepare_dir(dir);
  write_text(dir / "effective_config.json", cfg.to_json().dump(2) + "\n");
  std::vector<fs::path> files{dir / "effective_config.json"};
  const NoiseStructure& s = snap.generator.config().structure;
  for (int i = 0; i < a.count; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    const StructuredLatent latent = sample_latent(s, derive_seed(cfg.seed, {idx}));
    const std::uint64_t noise_seed = derive_seed(cfg.seed, {idx, 1});
    char stem[32];
    std::snprintf(stem, sizeof stem, "img_%06d", i);
    const fs::path png = dir / (std::string(stem) + ".png");
    const fs::path side = dir / (std::string(stem) + ".json");
    write_png(png, to_rgb8(synthesize(snap.generator, latent, noise_seed)));
    json j = latent_to_json(latent, noise_seed);
    j["checkpoint_id"] = snap.id;
    write_text(side, j.dump() + "\n");
    files.push_back(png);
    files.push_back(side);
  }
  write_artifacts(dir, "generate", cfg, files, {{"checkpoint_id", snap.id}, {"count", a.count}});
  out << "wrote " << a.count << " images to " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EditArgs {
  std::string checkpoint;
  std::string latent;
  std::string spec;
  std::string out;
};

int cmd_edit(const EditArgs& a, const ConfigFlags& flags, std::ostream& out) {
  const RunConfig base = flags.build();
  const GeneratorSnapshot snap = open_generator(a.checkpoint, flags, base);
  std::optional<std::uint64_t> noise_seed;
  const StructuredLatent latent = read_latent(a.latent, &noise_seed);
  if (!(latent.structure == snap.generator.config().structure)) {
    throw StructureError("latent structure " + latent.structure.to_json().dump() + " does not match the checkpoint");
  }
  const EditSpec spec = parse_edit_spec(a.spec, latent.structure, base.seed);
  const fs::path spec_dir = fs::path(a.latent).parent_path();
  const StructuredLatent edited = apply_edit(latent, spec, [&](const std::string& p) {
    const fs::path path = fs::path(p).is_absolute() || fs::exists(p) ? fs::path(p) : spec_dir / p;
    return read_latent(path);
  });
  const std::uint64_t ns = noise_seed.value_or(derive_seed(base.seed, {1}));
  fs::path png = a.out;
  if (png.extension() != ".png") png += ".png";
  if (png.has_parent_path()) prepare_dir(png.parent_path());
  write_png(png, to_rgb8(synthesize(snap.generator, edited, ns)));
  fs::path side = png;
  side.replace_extension(".json");
  json j = latent_to_json(edited, ns);
  j["checkpoint_id"] = snap.id;
  j["edit"] = a.spec;
  write_text(side, j.dump() + "\n");
  fs::path cfg_path = png;
  cfg_path.replace_extension(".config.json");
  write_text(cfg_path, with_generator(base, snap.generator).to_json().dump(2) + "\n");
  out << "wrote " << png.string() << " (latent " << latent_digest(edited).substr(0, 16) << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string checkpoint;
  std::string metrics = "fid";
  std::string data;
  std::string cache;
  std::string out;
  std::string log;
  std::string space = "z";
  std::string mode = "full";
  int samples = 0;
  double epsilon = 1e-4;
};

int cmd_evaluate(const EvaluateArgs& a, const ConfigFlags& flags, std::ostream& out, std::ostream& err) {
  const RunConfig base = flags.build();
  const fs::path ck = resolve_checkpoint_dir(a.checkpoint);
  const GeneratorSnapshot snap = open_generator(a.checkpoint, flags, base);
  const RunConfig cfg = with_generator(base, snap.generator);
  const std::string hash = cfg.hash();
  const auto& ms = cfg.metrics;
  const RandomProjectionEmbedding extractor(ms.extractor_dim, ms.extractor_seed);
  const std::uint64_t seed = flags.given("--seed") ? cfg.seed : ms.eval_seed;

  std::vector<std::string> names;
  {
    std::stringstream ss(a.metrics == "all" ? std::string("fid,ppl,separability") : a.metrics);
    std::string m;
    while (std::getline(ss, m, ',')) {
      if (m != "fid" && m != "ppl" && m != "separability") throw ArgumentError("unknown metric '" + m + "'");
      names.push_back(m);
    }
  }
  std::vector<LatentSpace> spaces;
  if (a.space == "both") spaces = {LatentSpace::z, LatentSpace::w};
  else spaces = {latent_space_from_string(a.space)};

  MetricLogEntry row;
  row.images_seen = snap.manifest.contains("run") ? snap.manifest["run"].value("images_seen", std::int64_t{0}) : 0;
  json reports = json::array();
  auto emit = [&](MetricReport r) {
    r.config_hash = hash;
    r.settings["checkpoint_id"] = snap.id;
    reports.push_back(r.to_json());
  };
  for (const auto& m : names) {
    if (m == "fid") {
      if (a.data.empty()) throw ArgumentError("fid needs --data");
      const fs::path cache = a.cache.empty() ? fs::path(a.out.empty() ? "." : a.out) / "data_cache" : fs::path(a.cache);
      ingest(a.data, snap.generator.config().output_resolution, cache);
      const ImageCache data = ImageCache::load(cache);
      const int n = a.samples > 0 ? a.samples : ms.fid_samples;
      const GaussianStats real = real_image_stats(data, static_cast<std::size_t>(ms.real_samples), seed, extractor);
      MetricReport r = evaluate_fid(snap.generator, real, extractor, n, seed);
      r.settings["real_samples"] = std::min<std::size_t>(static_cast<std::size_t>(ms.real_samples), data.size());
      row.fid = r.value;
      emit(r);
    } else if (m == "ppl") {
      const EmbeddingDistance distance(std::make_shared<RandomProjectionEmbedding>(extractor));
      for (const auto sp : spaces) {
        PathLengthOptions po;
        po.space = sp;
        po.mode = path_mode_from_string(a.mode);
        po.n_samples = a.samples > 0 ? a.samples : 1000;
        po.epsilon = a.epsilon;
        po.seed = seed;
        MetricReport r = evaluate_path_length(snap.generator, distance, po);
        (sp == LatentSpace::z ? row.ppl_z : row.ppl_w) = r.value;
        emit(r);
      }
    } else {
      const RandomProjectionClassifier classifier;
      for (const auto sp : spaces) {
        const int n = a.samples > 0 ? a.samples : 1000;
        MetricReport r = evaluate_separability(snap.generator, classifier, n, seed, sp);
        if (sp == LatentSpace::z || !row.separability) row.separability = r.value;
        emit(r);
      }
    }
  }
  out << reports.dump(2) << "\n";
  if (!a.out.empty()) {
    prepare_dir(a.out);
    write_text(fs::path(a.out) / "effective_config.json", cfg.to_json().dump(2) + "\n");
    write_text(fs::path(a.out) / "reports.json", reports.dump(2) + "\n");
    write_artifacts(a.out, "evaluate", cfg,
                    {fs::path(a.out) / "effective_config.json", fs::path(a.out) / "reports.json"},
                    {{"checkpoint_id", snap.id}});
  }
  fs::path log = a.log;
  if (log.empty()) {
    // A run directory keeps its metric log two levels above the checkpoint.
    const fs::path run_dir = ck.parent_path().parent_path();
    if (fs::exists(run_dir / "metrics.csv")) log = run_dir / "metrics.csv";
  }
  if (!log.empty()) {
    const bool fresh = !fs::exists(log) || fs::file_size(log) == 0;
    std::ofstream csv(log, std::ios::app);
    if (fresh) csv << metrics_csv_header() << "\n";
    csv << metrics_csv_row(row) << "\n";
    if (!csv) throw ArgumentError("cannot append to " + log.string());
    err << "appended to " << log.string() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct InfluenceArgs {
  std::string checkpoint;
  std::string out;
  bool measure = false;
};

int cmd_influence(const InfluenceArgs& a, const ConfigFlags& flags, std::ostream& out, std::ostream& err) {
  RunConfig cfg = flags.build();
  NoiseStructure structure = cfg.generator.structure;
  MappingParameters params;
  if (!a.checkpoint.empty()) {
    GeneratorSnapshot snap = open_generator(a.checkpoint, flags, cfg);
    cfg = with_generator(cfg, snap.generator);
    structure = snap.generator.config().structure;
    params = snap.generator.mapping;
  } else {
    params = MappingParameters::init(structure, cfg.generator.channels_at(cfg.generator.start_resolution), cfg.seed);
  }
  const auto declared = influence_mask(structure, params);
  std::string text = format_influence(structure, declared);
  int status = kExitOk;
  if (a.measure) {
    const auto measured = measured_influence(structure, params, derive_seed(cfg.seed, {7}));
    std::size_t agree = 0;
    for (std::size_t i = 0; i < declared.size(); ++i) {
      if (declared[i] == measured[i]) {
        ++agree;
      } else {
        err << "slot " << declared[i].slot.name() << ": declared and measured masks differ\n";
      }
    }
    text += "# measured agrees on " + std::to_string(agree) + "/" + std::to_string(declared.size()) + " slots\n";
    if (agree != declared.size()) status = kExitInternal;
  }
  if (a.out.empty()) {
    out << text;
  } else {
    const fs::path dir = a.out;
    prepare_dir(dir);
    write_text(dir / "influence.txt", text);
    write_text(dir / "effective_config.json", cfg.to_json().dump(2) + "\n");
    write_artifacts(dir, "analyze-influence", cfg, {dir / "effective_config.json", dir / "influence.txt"});
    out << "wrote " << (dir / "influence.txt").string() << "\n";
  }
  return status;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string checkpoint;
};

int cmd_serve(const ServeArgs& a, ConfigFlags& flags, std::ostream& err) {
  const RunConfig cfg = flags.build();
  std::shared_ptr<const GeneratorSnapshot> snap;
  if (!a.checkpoint.empty()) {
    snap = std::make_shared<const GeneratorSnapshot>(open_generator(a.checkpoint, flags, cfg));
    err << "loaded checkpoint " << snap->id << "\n";
  } else {
    err << "no checkpoint given; endpoints answer 503\n";
  }
  ServiceOptions so;
  so.history_limit = static_cast<std::size_t>(cfg.service.history_limit);
  so.noise_seed = cfg.seed;
  EditService service(snap, so);
  HttpOptions ho;
  ho.host = cfg.service.host;
  ho.port = cfg.service.port;
  ho.cors = cfg.service.cors;
  if (!serve_http(service, ho)) {
    err << "cannot listen on " << ho.host << ":" << ho.port << "\n";
    return kExitUser;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PlotArgs {
  std::string csv;
  std::string out;
  std::vector<std::string> columns;
};

int cmd_plot(const PlotArgs& a, std::ostream& out, std::ostream& err) {
  std::ifstream in(a.csv);
  if (!in) throw ArgumentError("cannot read " + a.csv);
  std::stringstream ss;
  ss << in.rdbuf();
  const MetricTable table = parse_metrics_csv(ss.str());
  const PlotResult r = plot_metrics(table, a.columns);
  for (const auto& w : r.warnings) err << "warning: " << w << "\n";
  const fs::path path = a.out.empty() ? fs::path(a.csv).replace_extension(".svg") : fs::path(a.out);
  if (path.has_parent_path()) prepare_dir(path.parent_path());
  write_text(path, r.svg);
  out << "wrote " << path.string() << " (" << r.plotted.size() << " panels)\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structured-noise image generator"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Train a generator on an image directory");
  ConfigFlags train_flags(train);
  add_model_flags(train_flags);
  TrainArgs ta;
  train->add_option("--data", ta.data, "Image directory")->required();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--cache", ta.cache, "Decoded image cache directory (default <out>/data_cache)");
  train->add_flag("--resume", ta.resume, "Continue from the latest checkpoint in --out");
  train->add_option("--log-every", ta.log_every, "Print losses every n steps (0 = never)");
  train_flags.add<std::int64_t>("--images-seen", "/schedule/images_seen", "Training length in images");
  train_flags.add<std::int64_t>("--checkpoint-every", "/schedule/checkpoint_every", "Checkpoint cadence in images");
  train_flags.add<std::int64_t>("--metrics-every", "/schedule/metrics_every", "Metric cadence in images");
  train_flags.add<int>("--batch-size", "/training/batch_size", "Batch size");
  train_flags.add<double>("--r1-gamma", "/training/r1_gamma", "R1 weight");
  train_flags.add<int>("--workers", "/schedule/workers", "Decode workers");
  train_flags.add<int>("--fid-samples", "/metrics/fid_samples", "Generated samples per FID");
  train_flags.add<int>("--real-samples", "/metrics/real_samples", "Real samples for FID stats");
  train_flags.add_flag("--flip", "/schedule/flip", "Random horizontal flips");

  auto* gen = app.add_subcommand("generate", "Render images and latent sidecars");
  ConfigFlags gen_flags(gen);
  add_model_flags(gen_flags);
  GenerateArgs ga;
  gen->add_option("--checkpoint", ga.checkpoint, "Checkpoint or run directory")->required();
  gen->add_option("--out", ga.out, "Output directory")->required();
  gen->add_option("--count", ga.count, "Number of images");

  auto* edit = app.add_subcommand("edit", "Edit a latent sidecar and re-render");
  ConfigFlags edit_flags(edit);
  add_model_flags(edit_flags);
  EditArgs ea;
  edit->add_option("--checkpoint", ea.checkpoint, "Checkpoint or run directory")->required();
  edit->add_option("--latent", ea.latent, "Latent JSON sidecar")->required();
  edit->add_option("--spec,--replace", ea.spec, "Edit spec, e.g. cells=(2,3)|(2,4);op=resample;arg=7")->required();
  edit->add_option("--out", ea.out, "Output PNG")->required();

  auto* eval = app.add_subcommand("evaluate", "Compute metrics for a checkpoint");
  ConfigFlags eval_flags(eval);
  add_model_flags(eval_flags);
  EvaluateArgs va;
  eval->add_option("--checkpoint", va.checkpoint, "Checkpoint or run directory")->required();
  eval->add_option("--metric", va.metrics, "fid, ppl, separability (comma list) or all");
  eval->add_option("--data", va.data, "Image directory (FID)");
  eval->add_option("--cache", va.cache, "Decoded image cache directory");
  eval->add_option("--out", va.out, "Directory for reports.json");
  eval->add_option("--log", va.log, "Metric CSV to append to");
  eval->add_option("--space", va.space, "z, w or both")->check(CLI::IsMember({"z", "w", "both"}));
  eval->add_option("--mode", va.mode, "Path length mode: full or end")->check(CLI::IsMember({"full", "end"}));
  eval->add_option("--samples", va.samples, "Samples per metric");
  eval->add_option("--epsilon", va.epsilon, "Path length step");
  eval_flags.add<int>("--real-samples", "/metrics/real_samples", "Real samples for FID stats");

  auto* infl = app.add_subcommand("analyze-influence", "Print the cells each code slot reaches");
  ConfigFlags infl_flags(infl);
  add_model_flags(infl_flags);
  InfluenceArgs ia;
  infl->add_option("--checkpoint", ia.checkpoint, "Checkpoint (default: fresh weights from the config)");
  infl->add_option("--out", ia.out, "Output directory");
  infl->add_flag("--measure", ia.measure, "Also measure masks by perturbation and compare");
  infl_flags.add_custom<std::string>("--partition", "pixel, row, column", [](json& j, const std::string& v) {
    j["generator"]["structure"]["partition"] = {{"kind", v}};
  });

  auto* serve = app.add_subcommand("serve", "HTTP editing service");
  ConfigFlags serve_flags(serve);
  ServeArgs sa;
  serve->add_option("--checkpoint", sa.checkpoint, "Checkpoint or run directory");
  serve_flags.add<int>("--port", "/service/port", "Port");
  serve_flags.add<std::string>("--host", "/service/host", "Bind address");
  serve_flags.add_flag("--cors", "/service/cors", "Allow any origin");
  serve_flags.add<int>("--history-limit", "/service/history_limit", "Undo depth per session");

  auto* plot = app.add_subcommand("plot-metrics", "Plot a metric CSV as SVG");
  ConfigFlags plot_flags(plot);
  PlotArgs pa;
  plot->add_option("--csv", pa.csv, "Metric CSV")->required();
  plot->add_option("--out", pa.out, "Output SVG (default: next to the CSV)");
  plot->add_option("--columns", pa.columns, "Columns to plot")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUser;
  }

  try {
    if (*train) return cmd_train(ta, train_flags, out, err);
    if (*gen) return cmd_generate(ga, gen_flags, out);
    if (*edit) return cmd_edit(ea, edit_flags, out);
    if (*eval) return cmd_evaluate(va, eval_flags, out, err);
    if (*infl) return cmd_influence(ia, infl_flags, out, err);
    if (*serve) return cmd_serve(sa, serve_flags, err);
    if (*plot) {
      plot_flags.build();
      return cmd_plot(pa, out, err);
    }
  } catch (const ModelFailure& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUser;
}

}  // namespace sni
