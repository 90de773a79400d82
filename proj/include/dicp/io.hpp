#pragma once
// JSON documents (poses, configs, results, scenes) and mask files.

#include "dicp/error.hpp"
#include "dicp/grad.hpp"
#include "dicp/harness.hpp"
#include "dicp/icp.hpp"
#include "dicp/mask.hpp"
#include "dicp/se_geometry.hpp"
#include "dicp/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace dicp {

using json = nlohmann::json;

namespace detail {

template <typename E, std::size_t N>
E parse_enum(const json& j, const char* field, const std::array<std::pair<E, const char*>, N>& names) {
  if (!j.is_string()) throw ConfigError(std::string(field) + " must be a string");
  const auto s = j.get<std::string>();
  for (const auto& [e, n] : names) {
    if (s == n) return e;
  }
  throw ConfigError(std::string("unknown ") + field + " '" + s + "'");
}

template <typename E, std::size_t N>
const char* enum_name(E e, const std::array<std::pair<E, const char*>, N>& names) {
  for (const auto& [v, n] : names) {
    if (v == e) return n;
  }
  return "?";
}

inline const std::array<std::pair<ErrorModel, const char*>, 2> kErrorModels{
    {{ErrorModel::point_to_point, "point_to_point"}, {ErrorModel::point_to_plane, "point_to_plane"}}};
inline const std::array<std::pair<RobustLoss, const char*>, 3> kRobustLosses{
    {{RobustLoss::none, "none"}, {RobustLoss::cauchy, "cauchy"}, {RobustLoss::pseudo_huber, "pseudo_huber"}}};
inline const std::array<std::pair<NnMode, const char*>, 2> kNnModes{
    {{NnMode::hard_argmin, "hard_argmin"}, {NnMode::soft_min, "soft_min"}}};
inline const std::array<std::pair<UpdateRule, const char*>, 3> kUpdateRules{
    {{UpdateRule::automatic, "automatic"}, {UpdateRule::gradient_descent, "gradient_descent"},
     {UpdateRule::gauss_newton, "gauss_newton"}}};
inline const std::array<std::pair<Optimizer, const char*>, 2> kOptimizers{
    {{Optimizer::sgd, "sgd"}, {Optimizer::adaptive_moments, "adaptive_moments"}}};
inline const std::array<std::pair<NnGradMode, const char*>, 2> kNnGradModes{
    {{NnGradMode::locally_constant, "locally_constant"}, {NnGradMode::soft, "soft"}}};

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bad value for '") + key + "'");
  }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || item.key() == k;
    if (!known) throw ConfigError(std::string("unknown ") + what + " key '" + item.key() + "'");
  }
}

inline Point point_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() < 2 || j.size() > 3) throw ConfigError(std::string(what) + " must be [x, y] or [x, y, z]");
  Point p = Point::Zero();
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw ConfigError(std::string(what) + " must contain numbers");
    p[static_cast<int>(k)] = j[k].get<double>();
  }
  return p;
}

inline json point_to_json(const Point& p) { return json::array({p[0], p[1]}); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Pose: {"dim": 2|3, "rotation": row-major D x D, "translation": D}.

inline json pose_to_json(const Pose& T) {
  const int D = to_int(T.dim);
  json rot = json::array(), tr = json::array();
  for (int r = 0; r < D; ++r) {
    for (int c = 0; c < D; ++c) rot.push_back(T.rotation(r, c));
    tr.push_back(T.translation[r]);
  }
  return {{"dim", D}, {"rotation", rot}, {"translation", tr}};
}

inline Pose pose_from_json(const json& j) {
  if (!j.is_object() || !j.contains("dim") || !j.contains("rotation") || !j.contains("translation")) {
    throw DataError("pose JSON needs dim, rotation and translation");
  }
  if (!j["dim"].is_number_integer()) throw DataError("pose dim must be 2 or 3");
  const int D = j["dim"].get<int>();
  if (D != 2 && D != 3) throw DataError("pose dim must be 2 or 3");
  const json& rot = j["rotation"];
  const json& tr = j["translation"];
  if (!rot.is_array() || rot.size() != static_cast<std::size_t>(D * D) || !tr.is_array() ||
      tr.size() != static_cast<std::size_t>(D)) {
    throw DataError("pose rotation/translation have the wrong size");
  }
  Pose T = Pose::identity(dim_from_int(D));
  for (int r = 0; r < D; ++r) {
    for (int c = 0; c < D; ++c) {
      const json& v = rot[static_cast<std::size_t>(r * D + c)];
      if (!v.is_number()) throw DataError("pose entries must be numbers");
      T.rotation(r, c) = v.get<double>();
    }
    if (!tr[static_cast<std::size_t>(r)].is_number()) throw DataError("pose entries must be numbers");
    T.translation[r] = tr[static_cast<std::size_t>(r)].get<double>();
  }
  validate(T, 1e-6);
  return T;
}

// ---------------------------------------------------------------------------
// IcpConfig.

inline json icp_config_to_json(const IcpConfig& c) {
  using namespace detail;
  json j{{"error_model", enum_name(c.error_model, kErrorModels)},
         {"robust_loss", enum_name(c.robust_loss, kRobustLosses)},
         {"robust_param", c.robust_param},
         {"trim_distance", c.trim_distance ? json(*c.trim_distance) : json(nullptr)},
         {"trim_steepness", c.trim_steepness},
         {"nn_mode", enum_name(c.nn_mode, kNnModes)},
         {"temperature", c.temperature},
         {"update_rule", enum_name(c.update_rule, kUpdateRules)},
         {"step_size", c.step_size},
         {"max_iterations", c.max_iterations},
         {"convergence_step_norm", c.convergence_step_norm},
         {"dimension_mode", to_int(c.dimension_mode)},
         {"differentiable", c.differentiable}};
  return j;
}

/// Fields absent from `j` keep their value in `base`.
inline IcpConfig icp_config_from_json(const json& j, IcpConfig c = {}) {
  using namespace detail;
  reject_unknown(j,
                 {"error_model", "robust_loss", "robust_param", "trim_distance", "trim_steepness", "nn_mode", "temperature",
                  "update_rule", "step_size", "max_iterations", "convergence_step_norm", "dimension_mode",
                  "differentiable"},
                 "icp config");
  if (j.contains("error_model")) c.error_model = parse_enum(j["error_model"], "error_model", kErrorModels);
  if (j.contains("robust_loss")) c.robust_loss = parse_enum(j["robust_loss"], "robust_loss", kRobustLosses);
  if (j.contains("nn_mode")) c.nn_mode = parse_enum(j["nn_mode"], "nn_mode", kNnModes);
  if (j.contains("update_rule")) c.update_rule = parse_enum(j["update_rule"], "update_rule", kUpdateRules);
  read_field(j, "robust_param", c.robust_param);
  if (j.contains("trim_distance")) {
    if (j["trim_distance"].is_null()) {
      c.trim_distance.reset();
    } else {
      double t = 0.0;
      read_field(j, "trim_distance", t);
      c.trim_distance = t;
    }
  }
  read_field(j, "trim_steepness", c.trim_steepness);
  read_field(j, "temperature", c.temperature);
  read_field(j, "step_size", c.step_size);
  read_field(j, "max_iterations", c.max_iterations);
  read_field(j, "convergence_step_norm", c.convergence_step_norm);
  if (j.contains("dimension_mode")) {
    int d = 2;
    read_field(j, "dimension_mode", d);
    try {
      c.dimension_mode = dim_from_int(d);
    } catch (const Error&) {
      throw ConfigError("dimension_mode must be 2 or 3");
    }
  }
  read_field(j, "differentiable", c.differentiable);
  c.validate();
  return c;
}

inline json icp_result_to_json(const IcpResult& r) {
  return {{"pose", pose_to_json(r.pose)},
          {"objective", r.objective},
          {"iterations_run", r.iterations_run},
          {"step_norms", r.step_norms},
          {"objective_trace", r.objective_trace},
          {"converged", r.converged},
          {"regularized", r.regularized},
          {"status", r.status == IcpStatus::ok ? "ok" : "no_correspondences"},
          {"correspondence_weights", r.correspondence_weights}};
}

inline json gradient_report_to_json(const GradientReport& g) {
  json entries = json::array();
  for (const auto& e : g.entries) {
    entries.push_back({{"index", e.index}, {"g_ad", e.g_ad}, {"g_fd", e.g_fd}, {"rel_error", e.rel_error}});
  }
  return {{"entries", entries},
          {"max_rel_error", g.max_rel_error},
          {"mean_rel_error", g.mean_rel_error},
          {"loss", g.loss_value}};
}

// ---------------------------------------------------------------------------
// Train config.

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  using namespace detail;
  reject_unknown(j,
                 {"learning_rate", "epochs", "unroll_iterations", "good_step_threshold", "good_error_threshold",
                  "augment_rotation", "alpha", "beta", "gamma", "optimizer", "beta1", "beta2", "adam_epsilon",
                  "nn_grad_mode", "icp", "mask_width", "pixel_size", "max_range"},
                 "train config");
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "epochs", c.epochs);
  read_field(j, "unroll_iterations", c.unroll_iterations);
  read_field(j, "good_step_threshold", c.good_step_threshold);
  read_field(j, "good_error_threshold", c.good_error_threshold);
  read_field(j, "augment_rotation", c.augment_rotation);
  read_field(j, "alpha", c.loss_weights.alpha);
  read_field(j, "beta", c.loss_weights.beta);
  read_field(j, "gamma", c.loss_weights.gamma);
  if (j.contains("optimizer")) c.optimizer = parse_enum(j["optimizer"], "optimizer", kOptimizers);
  read_field(j, "beta1", c.beta1);
  read_field(j, "beta2", c.beta2);
  read_field(j, "adam_epsilon", c.adam_epsilon);
  if (j.contains("nn_grad_mode")) c.nn_grad_mode = parse_enum(j["nn_grad_mode"], "nn_grad_mode", kNnGradModes);
  if (j.contains("icp")) c.icp = icp_config_from_json(j["icp"], c.icp);
  read_field(j, "mask_width", c.mask_width);
  read_field(j, "pixel_size", c.pixel_size);
  read_field(j, "max_range", c.max_range);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Scenes.

inline json scene_to_json(const SceneSpec& s) {
  json walls = json::array(), posts = json::array(), vehicles = json::array();
  for (const auto& w : s.walls) {
    walls.push_back({{"start", detail::point_to_json(w.start)}, {"end", detail::point_to_json(w.end)}, {"spacing", w.spacing}});
  }
  for (const auto& p : s.posts) {
    posts.push_back({{"center", detail::point_to_json(p.center)}, {"count", p.count}, {"radius", p.radius}});
  }
  for (const auto& v : s.vehicles) {
    vehicles.push_back(
        {{"center", detail::point_to_json(v.center)}, {"extent", detail::point_to_json(v.extent)}, {"count", v.count}});
  }
  return {{"walls", walls},
          {"posts", posts},
          {"noise", {{"count", s.noise.count}, {"bound", s.noise.bound}}},
          {"vehicles", vehicles},
          {"seed", s.seed},
          {"sensor_noise_sigma", s.sensor_noise_sigma},
          {"sensor_pose", pose_to_json(s.sensor_pose)},
          {"radar",
           {{"azimuths", s.radar.azimuths},
            {"range_resolution", s.radar.range_resolution},
            {"max_range", s.radar.max_range}}}};
}

inline SceneSpec scene_from_json(const json& j) {
  using namespace detail;
  reject_unknown(j, {"walls", "posts", "noise", "vehicles", "seed", "sensor_noise_sigma", "sensor_pose", "radar"}, "scene");
  SceneSpec s;
  const auto list = [&](const char* key) -> json {
    if (!j.contains(key)) return json::array();
    if (!j[key].is_array()) throw ConfigError(std::string("scene ") + key + " must be a list");
    return j[key];
  };
  for (const auto& w : list("walls")) {
    reject_unknown(w, {"start", "end", "spacing"}, "wall");
    WallSpec ws;
    ws.start = point_from_json(w.value("start", json()), "wall start");
    ws.end = point_from_json(w.value("end", json()), "wall end");
    read_field(w, "spacing", ws.spacing);
    s.walls.push_back(ws);
  }
  for (const auto& p : list("posts")) {
    reject_unknown(p, {"center", "count", "radius"}, "post");
    PostSpec ps;
    ps.center = point_from_json(p.value("center", json()), "post center");
    read_field(p, "count", ps.count);
    read_field(p, "radius", ps.radius);
    s.posts.push_back(ps);
  }
  if (j.contains("noise")) {
    reject_unknown(j["noise"], {"count", "bound"}, "noise");
    read_field(j["noise"], "count", s.noise.count);
    read_field(j["noise"], "bound", s.noise.bound);
  }
  for (const auto& v : list("vehicles")) {
    reject_unknown(v, {"center", "extent", "count"}, "vehicle");
    VehicleSpec vs;
    vs.center = point_from_json(v.value("center", json()), "vehicle center");
    if (v.contains("extent")) vs.extent = point_from_json(v["extent"], "vehicle extent");
    read_field(v, "count", vs.count);
    s.vehicles.push_back(vs);
  }
  read_field(j, "seed", s.seed);
  read_field(j, "sensor_noise_sigma", s.sensor_noise_sigma);
  if (j.contains("sensor_pose")) {
    try {
      s.sensor_pose = pose_from_json(j["sensor_pose"]);
    } catch (const Error& e) {
      throw ConfigError(std::string("sensor_pose: ") + e.what());
    }
  }
  if (j.contains("radar")) {
    reject_unknown(j["radar"], {"azimuths", "range_resolution", "max_range"}, "radar");
    read_field(j["radar"], "azimuths", s.radar.azimuths);
    read_field(j["radar"], "range_resolution", s.radar.range_resolution);
    read_field(j["radar"], "max_range", s.radar.max_range);
  }
  s.validate();
  return s;
}

/// A scenes document is either a list of scenes or {"standard_suite": {"count", "seed"}}.
inline std::vector<SceneSpec> scenes_from_json(const json& j) {
  if (j.is_object() && j.contains("standard_suite")) {
    const json& s = j["standard_suite"];
    int count = 10;
    std::uint64_t seed = 0;
    detail::reject_unknown(s, {"count", "seed"}, "standard_suite");
    detail::read_field(s, "count", count);
    detail::read_field(s, "seed", seed);
    return standard_scene_suite(count, seed);
  }
  if (!j.is_array()) throw ConfigError("scenes document must be a list or a standard_suite object");
  std::vector<SceneSpec> out;
  for (const auto& s : j) out.push_back(scene_from_json(s));
  return out;
}

// ---------------------------------------------------------------------------
// Files.

inline json read_json_file(const std::filesystem::path& p, bool config = true) {
  std::ifstream f(p);
  if (!f) {
    if (config) throw ConfigError("cannot open " + p.string());
    throw DataError("cannot open " + p.string());
  }
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    if (config) throw ConfigError("invalid JSON in " + p.string() + ": " + e.what());
    throw DataError("invalid JSON in " + p.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& p, const json& j) {
  std::ofstream f(p);
  if (!f) throw DataError("cannot write " + p.string());
  f << j.dump(2) << '\n';
}

inline std::filesystem::path mask_sidecar_path(std::filesystem::path pgm) { return pgm.replace_extension(".json"); }

/// 16-bit binary PGM (big-endian samples, value = round(m * 65535)) plus a
/// JSON sidecar with the pixel size. Row 0 is written first.
inline void write_mask(const std::filesystem::path& pgm, const WeightMask& m) {
  m.validate();
  std::ofstream f(pgm, std::ios::binary);
  if (!f) throw DataError("cannot write " + pgm.string());
  f << "P5\n" << m.width << ' ' << m.width << "\n65535\n";
  for (double v : m.values) {
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    const char bytes[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
    f.write(bytes, 2);
  }
  if (!f) throw DataError("failed writing " + pgm.string());
  write_json_file(mask_sidecar_path(pgm), {{"pixel_size", m.pixel_size}, {"width", m.width}});
}

inline WeightMask read_mask(const std::filesystem::path& pgm) {
  const json side = read_json_file(mask_sidecar_path(pgm), false);
  if (!side.contains("pixel_size") || !side["pixel_size"].is_number()) throw DataError("mask sidecar needs pixel_size");
  std::ifstream f(pgm, std::ios::binary);
  if (!f) throw DataError("cannot open " + pgm.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P5" || w != h || w < 2 || maxval != 65535) throw DataError("mask must be a square 16-bit P5 PGM");
  if (side.contains("width") && side["width"] != w) throw DataError("mask sidecar width does not match the image");
  f.get();  // single whitespace after the header
  WeightMask m = WeightMask::filled(w, side["pixel_size"].get<double>(), 0.0);
  for (auto& v : m.values) {
    unsigned char b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    if (!f) throw DataError("mask file " + pgm.string() + " is truncated");
    v = ((static_cast<unsigned>(b[0]) << 8) | b[1]) / 65535.0;
  }
  return m;
}

}  // namespace dicp
