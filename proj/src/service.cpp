#include "sni/service.hpp"

#include <random>
#include <regex>

#include "sni/edit_spec.hpp"
#include "sni/error.hpp"
#include "sni/hash.hpp"
#include "sni/image.hpp"
#include "sni/synthesis.hpp"

namespace sni {

namespace {

using nlohmann::json;

ServiceResponse error(int status, const std::string& message) { return {status, {{"error", message}}}; }

std::uint64_t random_seed() {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(m);
  return rng() >> 11;
}

std::string image_b64(const Image& img) { return base64_encode(encode_png(to_rgb8(img))); }

json digests_json(const StructuredLatent& l) {
  const auto d = latent_digests(l);
  return {{"full", d.full}, {"style", d.style}, {"spatial", d.spatial}, {"scales", d.scales}, {"local", d.local}};
}

std::uint64_t get_seed(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ArgumentError(std::string(key) + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

/// Target from {target, cells?, scale?}. `allow_all` admits the full mask.
std::optional<SlotTarget> parse_target(const json& body, const NoiseStructure& s, bool allow_all) {
  if (!body.contains("target") || !body["target"].is_string()) throw ArgumentError("target is required");
  const std::string t = body["target"].get<std::string>();
  if (t == "style") return StyleSlot{};
  if (t == "all" && allow_all) return std::nullopt;
  if (t == "global") {
    const auto k = global_scale_index(s);
    if (!k) throw StructureError("structure has no 1x1 global scale");
    return ScaleSlot{*k};
  }
  if (t == "scale" || t.rfind("scale:", 0) == 0) {
    std::int64_t k = -1;
    if (t == "scale") {
      if (!body.contains("scale") || !body["scale"].is_number_integer()) throw ArgumentError("scale index is required");
      k = body["scale"].get<std::int64_t>();
    } else {
      static const std::regex re(R"(^scale:(\d+)$)");
      std::smatch m;
      if (!std::regex_match(t, m, re)) throw ArgumentError("unknown target '" + t + "'");
      k = std::stoll(m[1]);
    }
    if (k < 0 || static_cast<std::size_t>(k) >= s.shared_scales().size()) {
      throw StructureError("scale " + std::to_string(k) + " does not exist (structure has " +
                           std::to_string(s.shared_scales().size()) + ")");
    }
    return ScaleSlot{static_cast<std::size_t>(k)};
  }
  if (t == "cells") {
    if (!body.contains("cells") || !body["cells"].is_array() || body["cells"].empty()) {
      throw ArgumentError("cells target needs a non-empty cells array");
    }
    std::vector<Cell> cells;
    for (const auto& c : body["cells"]) {
      Cell cell;
      if (c.is_array() && c.size() == 2 && c[0].is_number_integer() && c[1].is_number_integer()) {
        cell = {c[0].get<int>(), c[1].get<int>()};
      } else if (c.is_object() && c.contains("row") && c.contains("col")) {
        cell = {c["row"].get<int>(), c["col"].get<int>()};
      } else {
        throw ArgumentError("cell must be [row, col] or {row, col}: " + c.dump());
      }
      if (!s.contains(cell)) {
        throw StructureError("cell [" + std::to_string(cell.row) + ", " + std::to_string(cell.col) +
                             "] is outside the grid");
      }
      cells.push_back(cell);
    }
    try {
      return CellSelection(std::move(cells));
    } catch (const Error& e) {
      throw ArgumentError(e.what());
    }
  }
  throw ArgumentError("unknown target '" + t + "'");
}

StructuredLatent other_latent(const json& other, const NoiseStructure& s) {
  if (!other.is_object()) throw ArgumentError("other must be {seed} or {latent}");
  if (other.contains("latent")) {
    StructuredLatent l;
    try {
      l = latent_from_json(other["latent"]);
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError(std::string("bad latent: ") + e.what());
    }
    if (!(l.structure == s)) throw StructureError("other latent has a different structure");
    return l;
  }
  if (other.contains("seed")) return sample_latent(s, get_seed(other, "seed"));
  throw ArgumentError("other must be {seed} or {latent}");
}

}  // namespace

json structure_description(const NoiseStructure& s) {
  json scales = json::array();
  for (const auto& sc : s.shared_scales()) scales.push_back(json::array({sc.rows, sc.cols, sc.dim}));
  const auto g = global_scale_index(s);
  return {{"grid", {s.grid_h(), s.grid_w()}},
          {"scales", scales},
          {"local_dim", s.local_dim()},
          {"style_dim", s.style_dim()},
          {"partition", to_string(s.partition_kind())},
          {"groups", s.n_groups()},
          {"global_scale", g ? json(*g) : json(nullptr)},
          {"cell_groups", s.cell_groups()}};
}

EditService::EditService(std::shared_ptr<const GeneratorSnapshot> snapshot, ServiceOptions options)
    : snapshot_(std::move(snapshot)), options_(options) {}

std::size_t EditService::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

json EditService::render(const StructuredLatent& latent) const {
  const Image img = synthesize(snapshot_->generator, latent, options_.noise_seed);
  return {{"image", image_b64(img)}, {"latent_digest", latent_digest(latent)}, {"digests", digests_json(latent)}};
}

std::shared_ptr<EditService::Session> EditService::find(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

ServiceResponse EditService::dispatch(const std::string& method, const std::string& path, const std::string& body) {
  static const std::regex session_re(R"(^/session/([A-Za-z0-9_-]+)(/edit|/interpolate-stream|/undo)?/?$)");
  try {
    json j = json::object();
    if (!body.empty() && body.find_first_not_of(" \t\r\n") != std::string::npos) {
      try {
        j = json::parse(body);
      } catch (const json::parse_error& e) {
        return error(400, std::string("body is not JSON: ") + e.what());
      }
      if (!j.is_object()) return error(400, "body must be a JSON object");
    }
    std::smatch m;
    const bool known = path == "/session" || path == "/session/" || path == "/checkpoint/info" ||
                       std::regex_match(path, m, session_re);
    if (!known) return error(404, "no route " + path);
    if (!snapshot_) return error(503, "no checkpoint loaded");

    if (path == "/checkpoint/info") {
      if (method != "GET") return error(405, "use GET");
      return info();
    }
    if (path == "/session" || path == "/session/") {
      if (method != "POST") return error(405, "use POST");
      return create_session(j);
    }
    const std::string id = m[1];
    const std::string action = m[2];
    auto session = find(id);
    if (!session) return error(404, "no session " + id);
    std::lock_guard lock(session->mutex);
    if (action.empty()) {
      if (method != "GET") return error(405, "use GET");
      return get_session(*session, id);
    }
    if (action == "/undo") {
      if (method != "GET" && method != "POST") return error(405, "use GET");
      return undo(*session);
    }
    if (method != "POST") return error(405, "use POST");
    if (action == "/edit") return edit(*session, j);
    return interpolate_stream(*session, j);
  } catch (const ArgumentError& e) {
    return error(400, e.what());
  } catch (const StructureError& e) {
    return error(422, e.what());
  } catch (const ShapeError& e) {
    return error(422, e.what());
  } catch (const json::exception& e) {
    return error(400, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

ServiceResponse EditService::create_session(const json& body) {
  const bool given = body.contains("seed") && !body["seed"].is_null();
  const std::uint64_t seed = given ? get_seed(body, "seed") : random_seed();
  const NoiseStructure& s = snapshot_->generator.config().structure;
  auto session = std::make_shared<Session>();
  session->latent = sample_latent(s, seed);
  std::string id;
  {
    std::lock_guard lock(sessions_mutex_);
    id = "s" + std::to_string(next_session_++);
    sessions_[id] = session;
  }
  json r = render(session->latent);
  r["session_id"] = id;
  r["seed"] = seed;
  r["structure"] = structure_description(s);
  r["checkpoint_id"] = snapshot_->id;
  r["resolution"] = snapshot_->generator.config().output_resolution;
  r["history_depth"] = 0;
  return {200, r};
}

ServiceResponse EditService::get_session(Session& s, const std::string& id) {
  json r = render(s.latent);
  r["session_id"] = id;
  r["structure"] = structure_description(s.latent.structure);
  r["history_depth"] = s.history.size();
  r["latent"] = latent_to_json(s.latent);
  return {200, r};
}

ServiceResponse EditService::edit(Session& s, const json& body) {
  const NoiseStructure& st = s.latent.structure;
  const auto target = parse_target(body, st, false);
  const std::string op = body.value("op", std::string("resample"));
  const json args = body.contains("args") && body["args"].is_object() ? body["args"] : json::object();
  StructuredLatent next;
  json applied = {{"op", op}};
  if (op == "resample") {
    const std::uint64_t seed = args.contains("seed") ? get_seed(args, "seed") : random_seed();
    next = replace(s.latent, *target, sample_slot(st, *target, seed));
    applied["seed"] = seed;
  } else if (op == "set") {
    if (!args.contains("values") || !args["values"].is_array()) throw ArgumentError("set needs args.values");
    const auto values = args["values"].get<std::vector<float>>();
    next = replace(s.latent, *target, values);
  } else if (op == "interp") {
    if (!args.contains("other")) throw ArgumentError("interp needs args.other");
    if (!args.contains("t") || !args["t"].is_number()) throw ArgumentError("interp needs args.t");
    const double t = args["t"].get<double>();
    next = interpolate(s.latent, other_latent(args["other"], st), t, SlotMask::of(st, *target));
    applied["t"] = t;
  } else {
    throw ArgumentError("unknown op '" + op + "'");
  }
  json r = render(next);
  s.history.push_back(std::move(s.latent));
  if (s.history.size() > options_.history_limit) s.history.erase(s.history.begin());
  s.latent = std::move(next);
  r["history_depth"] = s.history.size();
  r["applied"] = applied;
  return {200, r};
}

ServiceResponse EditService::interpolate_stream(Session& s, const json& body) {
  const NoiseStructure& st = s.latent.structure;
  const auto target = parse_target(body, st, true);
  if (!body.contains("steps") || !body["steps"].is_number_integer()) throw ArgumentError("steps is required");
  const auto n = body["steps"].get<std::int64_t>();
  if (n < 2) throw ArgumentError("steps must be at least 2");
  if (n > options_.max_stream_steps) {
    throw ArgumentError("steps must be at most " + std::to_string(options_.max_stream_steps));
  }
  if (!body.contains("other")) throw ArgumentError("other is required");
  const StructuredLatent other = other_latent(body["other"], st);
  const SlotMask mask = target ? SlotMask::of(st, *target) : SlotMask::all(st);
  json frames = json::array();
  for (std::int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    const double rest = static_cast<double>(n - 1 - i) / static_cast<double>(n - 1);
    json f = render(blend(s.latent, other, rest, t, mask));
    f["index"] = i;
    f["t"] = t;
    frames.push_back(std::move(f));
  }
  return {200, {{"steps", n}, {"frames", frames}}};
}

ServiceResponse EditService::undo(Session& s) {
  if (s.history.empty()) return error(409, "nothing to undo");
  s.latent = std::move(s.history.back());
  s.history.pop_back();
  json r = render(s.latent);
  r["history_depth"] = s.history.size();
  return {200, r};
}

ServiceResponse EditService::info() const {
  const json& m = snapshot_->manifest;
  const json& g = m.at("generator");
  json counters = json::object();
  if (m.contains("run")) {
    const json& run = m["run"];
    counters = {{"images_seen", run.value("images_seen", 0)}, {"step", run.value("step", 0)}};
    if (m.contains("optimizer")) counters["optimizer"] = m["optimizer"];
    if (run.contains("metric_log") && !run["metric_log"].empty()) counters["last_metrics"] = run["metric_log"].back();
  }
  return {200,
          {{"checkpoint_id", snapshot_->id},
           {"style_start", g.value("style_start", json(nullptr))},
           {"resolution", g.value("output_resolution", 0)},
           {"structure", structure_description(snapshot_->generator.config().structure)},
           {"generator", g},
           {"discriminator", m.value("discriminator", json(nullptr))},
           {"hyper", m.contains("run") ? m["run"].value("hyper", json(nullptr)) : json(nullptr)},
           {"counters", counters},
           {"has_ema", m.value("has_ema", false)}}};
}

}  // namespace sni
