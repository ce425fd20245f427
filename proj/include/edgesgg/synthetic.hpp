#pragma once

// Synthetic scenes standing in for an object detector and annotated data.
// A world fixes class prototypes and a rulebook mapping (subject class, object
// class, box geometry) to a predicate. Scenes plant triplets whose predicates
// follow a Zipf law, then place every box so that no unlabeled pair satisfies
// any rule. Ground truth is therefore exactly the planted set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "edgesgg/error.hpp"
#include "edgesgg/graph_core.hpp"
#include "edgesgg/hash.hpp"

namespace edgesgg {

/************ geometry predicates *************************/

enum class Geometry { overlap, above, contains, near };

inline std::string to_string(Geometry g) {
  switch (g) {
    case Geometry::overlap: return "overlap";
    case Geometry::above: return "above";
    case Geometry::contains: return "contains";
    case Geometry::near: return "near";
  }
  return "?";
}

inline Geometry geometry_from_string(const std::string& s) {
  if (s == "overlap") return Geometry::overlap;
  if (s == "above") return Geometry::above;
  if (s == "contains") return Geometry::contains;
  if (s == "near") return Geometry::near;
  fail(ErrorKind::data, "unknown geometry '" + s + "'");
}

inline constexpr double kNearDistance = 0.35;

namespace detail {

inline bool x_overlap(const Box& a, const Box& b) { return std::min(a.x2, b.x2) - std::max(a.x1, b.x1) > 0.0; }

inline bool box_contains(const Box& outer, const Box& inner) {
  return outer.x1 <= inner.x1 && outer.y1 <= inner.y1 && outer.x2 >= inner.x2 && outer.y2 >= inner.y2;
}

inline bool stacked_above(const Box& s, const Box& o) { return s.y2 <= o.y1 && x_overlap(s, o); }

}  // namespace detail

// Overlap and near hold for (s, o) exactly when they hold for (o, s).
inline bool is_symmetric(Geometry g) { return g == Geometry::overlap || g == Geometry::near; }

// The four relations are mutually exclusive for a given ordered pair.
inline bool geometry_holds(Geometry g, const Box& s, const Box& o) {
  const bool touching = intersection_area(s, o) > 0.0;
  switch (g) {
    case Geometry::contains: return detail::box_contains(s, o);
    case Geometry::overlap: return touching && !detail::box_contains(s, o) && !detail::box_contains(o, s);
    case Geometry::above: return !touching && detail::stacked_above(s, o);
    case Geometry::near: {
      if (touching || detail::stacked_above(s, o) || detail::stacked_above(o, s)) return false;
      return std::hypot(o.cx() - s.cx(), o.cy() - s.cy()) < kNearDistance;
    }
  }
  return false;
}

/************ world ***************************************/

struct Rule {
  int subject_class{0};
  int object_class{0};
  int predicate{1};
  Geometry geometry{Geometry::overlap};

  bool operator==(const Rule&) const = default;
};

struct WorldSpec {
  int n_obj_classes{8};
  int n_rel_classes{10};  // including background class 0
  double zipf_exponent{1.0};
  int rules_per_predicate{2};
  std::vector<Rule> rulebook;  // generated from the seed when empty
  int d_o{32};
  double feature_noise{0.1};
  int min_objects{3};
  int max_objects{8};
  std::uint64_t seed{0};

  bool operator==(const WorldSpec&) const = default;
};

inline void to_json(json& j, const Rule& r) {
  j = {{"subject", r.subject_class}, {"object", r.object_class}, {"predicate", r.predicate},
       {"geometry", to_string(r.geometry)}};
}

inline void from_json(const json& j, Rule& r) {
  r.subject_class = j.at("subject").get<int>();
  r.object_class = j.at("object").get<int>();
  r.predicate = j.at("predicate").get<int>();
  r.geometry = geometry_from_string(j.at("geometry").get<std::string>());
}

inline void to_json(json& j, const WorldSpec& s) {
  j = {{"n_obj_classes", s.n_obj_classes},
       {"n_rel_classes", s.n_rel_classes},
       {"zipf_exponent", s.zipf_exponent},
       {"rules_per_predicate", s.rules_per_predicate},
       {"rulebook", s.rulebook},
       {"d_o", s.d_o},
       {"feature_noise", s.feature_noise},
       {"min_objects", s.min_objects},
       {"max_objects", s.max_objects},
       {"seed", s.seed}};
}

inline void from_json(const json& j, WorldSpec& s) {
  WorldSpec d;
  s.n_obj_classes = j.value("n_obj_classes", d.n_obj_classes);
  s.n_rel_classes = j.value("n_rel_classes", d.n_rel_classes);
  s.zipf_exponent = j.value("zipf_exponent", d.zipf_exponent);
  s.rules_per_predicate = j.value("rules_per_predicate", d.rules_per_predicate);
  s.rulebook = j.value("rulebook", std::vector<Rule>{});
  s.d_o = j.value("d_o", d.d_o);
  s.feature_noise = j.value("feature_noise", d.feature_noise);
  s.min_objects = j.value("min_objects", d.min_objects);
  s.max_objects = j.value("max_objects", d.max_objects);
  s.seed = j.value("seed", d.seed);
}

struct World {
  WorldSpec spec;
  std::vector<std::vector<double>> prototypes;  // unit norm, one per object class
  std::vector<Rule> rulebook;
  std::vector<double> predicate_probs;  // index 0 (background) is 0

  int n_predicates() const noexcept { return spec.n_rel_classes - 1; }

  // Predicate of the first rule satisfied by (subject, object), or 0.
  int fires(int subject_class, const Box& sb, int object_class, const Box& ob) const {
    for (const Rule& r : rulebook)
      if (r.subject_class == subject_class && r.object_class == object_class && geometry_holds(r.geometry, sb, ob))
        return r.predicate;
    return 0;
  }
};

namespace detail {

inline std::vector<double> zipf_probs(int n_rel_classes, double s) {
  std::vector<double> p(static_cast<std::size_t>(n_rel_classes), 0.0);
  double total = 0.0;
  for (int k = 1; k < n_rel_classes; ++k) total += std::pow(static_cast<double>(k), -s);
  for (int k = 1; k < n_rel_classes; ++k) p[static_cast<std::size_t>(k)] = std::pow(static_cast<double>(k), -s) / total;
  return p;
}

inline void validate_rulebook(const WorldSpec& spec, const std::vector<Rule>& rules) {
  std::set<std::tuple<int, int, int>> slots;
  for (const Rule& r : rules) {
    require(r.predicate >= 1 && r.predicate < spec.n_rel_classes, ErrorKind::data,
            "rule predicate out of range: " + std::to_string(r.predicate));
    require(r.subject_class >= 0 && r.subject_class < spec.n_obj_classes && r.object_class >= 0 &&
                r.object_class < spec.n_obj_classes,
            ErrorKind::data, "rule class out of range");
    require(slots.emplace(r.subject_class, r.object_class, static_cast<int>(r.geometry)).second, ErrorKind::data,
            "two rules share (subject, object, geometry)");
  }
  // A symmetric rule whose mirror also fires could never be planted as a one-way triplet.
  for (const Rule& r : rules)
    require(!is_symmetric(r.geometry) || (r.subject_class != r.object_class &&
                                          !slots.contains({r.object_class, r.subject_class, static_cast<int>(r.geometry)})),
            ErrorKind::data, "symmetric rule fires in both directions");
  for (int p = 1; p < spec.n_rel_classes; ++p)
    require(std::any_of(rules.begin(), rules.end(), [p](const Rule& r) { return r.predicate == p; }),
            ErrorKind::data, "predicate " + std::to_string(p) + " has no rule");
}

}  // namespace detail

inline constexpr double kMaxPrototypeCosine = 0.9;

inline World generate_world(const WorldSpec& spec) {
  require(spec.n_obj_classes >= 2 && spec.n_rel_classes >= 2, ErrorKind::usage, "need >= 2 object and relation classes");
  require(spec.d_o >= 1 && spec.zipf_exponent >= 0.0 && spec.feature_noise >= 0.0, ErrorKind::usage, "bad world spec");
  require(spec.min_objects >= 2 && spec.max_objects >= spec.min_objects, ErrorKind::usage, "bad object count range");

  World w;
  w.spec = spec;
  std::mt19937_64 rng(mix_seed(spec.seed, 0x776f726c64ULL));
  std::normal_distribution<double> normal(0.0, 1.0);

  constexpr int kMaxTries = 1000;
  for (int c = 0; c < spec.n_obj_classes; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
      std::vector<double> v(static_cast<std::size_t>(spec.d_o));
      double norm = 0.0;
      for (double& x : v) {
        x = normal(rng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) continue;
      for (double& x : v) x /= norm;
      placed = std::all_of(w.prototypes.begin(), w.prototypes.end(), [&](const std::vector<double>& p) {
        double dot = 0.0;
        for (std::size_t k = 0; k < v.size(); ++k) dot += p[k] * v[k];
        return dot < kMaxPrototypeCosine;
      });
      if (placed) w.prototypes.push_back(std::move(v));
    }
    require(placed, ErrorKind::usage, "cannot separate class prototypes; raise d_o or lower n_obj_classes");
  }

  if (!spec.rulebook.empty()) {
    w.rulebook = spec.rulebook;
  } else {
    const long long n = spec.n_obj_classes;
    const long long slots = 2 * n * n + n * (n - 1);  // one-way slots: all for contains/above, a half for the rest
    require(spec.rules_per_predicate >= 1 &&
                static_cast<long long>(spec.rules_per_predicate) * (spec.n_rel_classes - 1) <= slots,
            ErrorKind::usage, "rulebook does not fit the class vocabulary");
    std::set<std::tuple<int, int, int>> used;
    std::uniform_int_distribution<int> cls(0, spec.n_obj_classes - 1);
    std::uniform_int_distribution<int> geo(0, 3);
    for (int p = 1; p < spec.n_rel_classes; ++p) {
      for (int k = 0; k < spec.rules_per_predicate; ++k) {
        Rule r;
        auto blocked = [&](const Rule& c) {
          const int g = static_cast<int>(c.geometry);
          if (used.contains({c.subject_class, c.object_class, g})) return true;
          return is_symmetric(c.geometry) &&
                 (c.subject_class == c.object_class || used.contains({c.object_class, c.subject_class, g}));
        };
        do {
          r = {cls(rng), cls(rng), p, static_cast<Geometry>(geo(rng))};
        } while (blocked(r));
        used.emplace(r.subject_class, r.object_class, static_cast<int>(r.geometry));
        w.rulebook.push_back(r);
      }
    }
  }
  detail::validate_rulebook(spec, w.rulebook);
  w.predicate_probs = detail::zipf_probs(spec.n_rel_classes, spec.zipf_exponent);
  return w;
}

/************ scenes **************************************/

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  fail(ErrorKind::data, "unknown split '" + s + "'");
}

struct Triplet {
  int subject{0};  // detection id
  int object{0};
  int predicate{1};

  bool operator==(const Triplet&) const = default;
  auto operator<=>(const Triplet&) const = default;
};

struct SceneSample {
  std::vector<Detection> detections;
  std::vector<Triplet> triplets;
  Split split{Split::train};

  bool operator==(const SceneSample&) const = default;

  const Detection& detection(int id) const {
    for (const auto& d : detections)
      if (d.id == id) return d;
    fail(ErrorKind::data, "triplet references unknown detection " + std::to_string(id));
  }
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Box random_box(std::mt19937_64& rng, double min_size, double max_size) {
  double w = uniform(rng, min_size, max_size);
  double h = uniform(rng, min_size, max_size);
  double x = uniform(rng, 0.0, 1.0 - w);
  double y = uniform(rng, 0.0, 1.0 - h);
  return {x, y, x + w, y + h};
}

// Proposes an object box satisfying `g` relative to `s`; nullopt if the proposal misses.
inline std::optional<Box> propose_object(std::mt19937_64& rng, Geometry g, const Box& s) {
  Box o;
  switch (g) {
    case Geometry::contains: {
      double w = s.width() * uniform(rng, 0.3, 0.8);
      double h = s.height() * uniform(rng, 0.3, 0.8);
      double x = uniform(rng, s.x1, s.x2 - w);
      double y = uniform(rng, s.y1, s.y2 - h);
      o = {x, y, x + w, y + h};
      break;
    }
    case Geometry::overlap: {
      double w = uniform(rng, 0.1, 0.3);
      double h = uniform(rng, 0.1, 0.3);
      double cx = s.cx() + uniform(rng, -0.5, 0.5) * (s.width() + w);
      double cy = s.cy() + uniform(rng, -0.5, 0.5) * (s.height() + h);
      o = {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
      break;
    }
    case Geometry::above: {
      double w = uniform(rng, 0.1, 0.3);
      double h = uniform(rng, 0.1, 0.3);
      double gap = uniform(rng, 0.01, 0.15);
      double x = uniform(rng, s.x1 - w + 0.02, s.x2 - 0.02);
      o = {x, s.y2 + gap, x + w, s.y2 + gap + h};
      break;
    }
    case Geometry::near: {
      double w = uniform(rng, 0.1, 0.25);
      double h = uniform(rng, 0.1, 0.25);
      double gap = uniform(rng, 0.01, 0.1);
      double y = s.cy() + uniform(rng, -0.15, 0.15) - h / 2;
      double x = std::uniform_int_distribution<int>(0, 1)(rng) == 0 ? s.x2 + gap : s.x1 - gap - w;
      o = {x, y, x + w, y + h};
      break;
    }
  }
  if (!is_valid(o) || !geometry_holds(g, s, o)) return std::nullopt;
  return o;
}

inline Box subject_box_for(std::mt19937_64& rng, Geometry g) {
  return g == Geometry::contains ? random_box(rng, 0.3, 0.6) : random_box(rng, 0.1, 0.35);
}

}  // namespace detail

inline std::vector<double> object_feature(const World& w, int cls, std::mt19937_64& rng) {
  std::vector<double> f = w.prototypes.at(static_cast<std::size_t>(cls));
  if (w.spec.feature_noise > 0.0) {
    std::normal_distribution<double> noise(0.0, w.spec.feature_noise);
    for (double& x : f) x += noise(rng);
  }
  return f;
}

inline std::vector<Triplet> find_rule_matches(const World& w, const std::vector<Detection>& dets) {
  std::vector<Triplet> out;
  for (const auto& a : dets)
    for (const auto& b : dets)
      if (a.id != b.id)
        if (int p = w.fires(a.label, a.box, b.label, b.box); p != 0) out.push_back({a.id, b.id, p});
  return out;
}

// Plants floor(n/2) Zipf-distributed triplets; a leftover object is a distractor.
inline SceneSample sample_scene(const World& w, int n_objects, std::uint64_t seed, Split split = Split::train) {
  require(n_objects >= 2, ErrorKind::usage, "a scene needs at least 2 objects");
  std::mt19937_64 rng(mix_seed(w.spec.seed, seed));
  std::discrete_distribution<int> predicate_dist(w.predicate_probs.begin(), w.predicate_probs.end());
  std::uniform_int_distribution<int> any_class(0, w.spec.n_obj_classes - 1);

  const int planted = n_objects / 2;
  std::vector<const Rule*> rules;
  for (int t = 0; t < planted; ++t) {
    int p = predicate_dist(rng);
    std::vector<const Rule*> candidates;
    for (const Rule& r : w.rulebook)
      if (r.predicate == p) candidates.push_back(&r);
    rules.push_back(candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)]);
  }
  std::vector<int> filler_classes;
  for (int k = 2 * planted; k < n_objects; ++k) filler_classes.push_back(any_class(rng));

  // Placement: each new object must not create a rule match other than its planted one.
  auto clean = [&](const std::vector<Detection>& placed, const Detection& cand, int exempt_id) {
    for (const auto& d : placed) {
      if (d.id == exempt_id) continue;
      if (w.fires(d.label, d.box, cand.label, cand.box) != 0 || w.fires(cand.label, cand.box, d.label, d.box) != 0)
        return false;
    }
    return true;
  };

  constexpr int kObjectTries = 200;
  constexpr int kSceneTries = 200;
  for (int scene_try = 0; scene_try < kSceneTries; ++scene_try) {
    std::vector<Detection> placed;
    std::vector<Triplet> triplets;
    bool ok = true;
    for (int t = 0; t < planted && ok; ++t) {
      const Rule& r = *rules[static_cast<std::size_t>(t)];
      ok = false;
      for (int attempt = 0; attempt < kObjectTries && !ok; ++attempt) {
        Detection s{2 * t, {}, detail::subject_box_for(rng, r.geometry), {}, r.subject_class};
        auto obox = detail::propose_object(rng, r.geometry, s.box);
        if (!obox) continue;
        Detection o{2 * t + 1, {}, *obox, {}, r.object_class};
        if (!clean(placed, s, -1) || !clean(placed, o, -1)) continue;
        // The planted pair must fire exactly its rule, and its reverse nothing.
        if (w.fires(s.label, s.box, o.label, o.box) != r.predicate || w.fires(o.label, o.box, s.label, s.box) != 0)
          continue;
        placed.push_back(s);
        placed.push_back(o);
        triplets.push_back({s.id, o.id, r.predicate});
        ok = true;
      }
    }
    for (std::size_t f = 0; f < filler_classes.size() && ok; ++f) {
      ok = false;
      for (int attempt = 0; attempt < kObjectTries && !ok; ++attempt) {
        Detection d{2 * planted + static_cast<int>(f), {}, detail::random_box(rng, 0.1, 0.35), {}, filler_classes[f]};
        if (!clean(placed, d, -1)) continue;
        placed.push_back(d);
        ok = true;
      }
    }
    if (!ok) continue;
    for (auto& d : placed) d.feature = object_feature(w, d.label, rng);
    return {std::move(placed), std::move(triplets), split};
  }
  fail(ErrorKind::numerical, "could not place a scene consistent with the rulebook");
}

struct DatasetSizes {
  int train{500};
  int val{0};
  int test{100};
};

// Scene i draws its object count and content from (world seed, seed, i) only.
inline std::vector<SceneSample> generate_dataset(const World& w, DatasetSizes sizes, std::uint64_t seed) {
  std::vector<SceneSample> out;
  auto emit = [&](int count, Split split, std::uint64_t stream) {
    for (int i = 0; i < count; ++i) {
      std::uint64_t s = mix_seed(mix_seed(seed, stream), static_cast<std::uint64_t>(i));
      std::mt19937_64 rng(s);
      int n = std::uniform_int_distribution<int>(w.spec.min_objects, w.spec.max_objects)(rng);
      out.push_back(sample_scene(w, n, s, split));
    }
  };
  emit(sizes.train, Split::train, 1);
  emit(sizes.val, Split::val, 2);
  emit(sizes.test, Split::test, 3);
  return out;
}

/************ detector simulation *************************/

struct DetectorNoise {
  double box_jitter{0.0};
  double label_flip{0.0};
  double miss_rate{0.0};

  bool operator==(const DetectorNoise&) const = default;
};

inline void to_json(json& j, const DetectorNoise& n) {
  j = {{"box_jitter", n.box_jitter}, {"label_flip", n.label_flip}, {"miss_rate", n.miss_rate}};
}

inline void from_json(const json& j, DetectorNoise& n) {
  n.box_jitter = j.value("box_jitter", 0.0);
  n.label_flip = j.value("label_flip", 0.0);
  n.miss_rate = j.value("miss_rate", 0.0);
}

namespace detail {

inline Box repair_box(Box b) {
  constexpr double kMinSide = 1e-3;
  auto fix = [](double& lo, double& hi) {
    lo = std::clamp(lo, 0.0, 1.0);
    hi = std::clamp(hi, 0.0, 1.0);
    if (lo > hi) std::swap(lo, hi);
    if (hi - lo < kMinSide) {
      if (hi + kMinSide <= 1.0)
        hi = lo + kMinSide;
      else
        lo = hi - kMinSide;
    }
  };
  fix(b.x1, b.x2);
  fix(b.y1, b.y2);
  return b;
}

}  // namespace detail

// Gaussian box jitter (clamped and repaired), uniform label flips with a
// re-drawn feature for the perceived class, and independent misses.
inline std::vector<Detection> simulate_detector(const World& w, const SceneSample& scene, const DetectorNoise& noise,
                                                std::uint64_t seed) {
  auto prob = [](double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; };
  require(prob(noise.label_flip) && prob(noise.miss_rate) && std::isfinite(noise.box_jitter) && noise.box_jitter >= 0.0,
          ErrorKind::usage, "detector noise out of range");
  std::mt19937_64 rng(mix_seed(seed, 0x646574ULL));
  std::normal_distribution<double> jitter(0.0, noise.box_jitter > 0.0 ? noise.box_jitter : 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Detection> out;
  for (const Detection& gt : scene.detections) {
    if (noise.miss_rate > 0.0 && unit(rng) < noise.miss_rate) continue;
    Detection d = gt;
    if (noise.box_jitter > 0.0) {
      d.box = detail::repair_box({gt.box.x1 + jitter(rng), gt.box.y1 + jitter(rng), gt.box.x2 + jitter(rng),
                                  gt.box.y2 + jitter(rng)});
    }
    if (noise.label_flip > 0.0 && unit(rng) < noise.label_flip) {
      int other = std::uniform_int_distribution<int>(0, w.spec.n_obj_classes - 2)(rng);
      d.label = other >= gt.label ? other + 1 : other;
      d.feature = object_feature(w, d.label, rng);
    }
    out.push_back(std::move(d));
  }
  return out;
}

/************ dataset files *******************************/

inline constexpr int kDatasetVersion = 1;

inline json to_json_line(const SceneSample& s) {
  json dets = json::array();
  for (const auto& d : s.detections) {
    json jd = {{"id", d.id}, {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}, {"label", d.label}, {"feature", d.feature}};
    if (!d.label_scores.empty()) jd["label_scores"] = d.label_scores;
    dets.push_back(std::move(jd));
  }
  json trips = json::array();
  for (const auto& t : s.triplets) trips.push_back({t.subject, t.object, t.predicate});
  return {{"split", to_string(s.split)}, {"detections", dets}, {"triplets", trips}};
}

inline SceneSample scene_from_json_line(const json& j) {
  SceneSample s;
  s.split = split_from_string(j.at("split").get<std::string>());
  for (const auto& jd : j.at("detections")) {
    Detection d;
    d.id = jd.at("id").get<int>();
    auto b = jd.at("box").get<std::vector<double>>();
    require(b.size() == 4, ErrorKind::data, "box needs 4 coordinates");
    d.box = {b[0], b[1], b[2], b[3]};
    d.label = jd.at("label").get<int>();
    d.feature = jd.at("feature").get<std::vector<double>>();
    if (jd.contains("label_scores")) d.label_scores = jd["label_scores"].get<std::vector<double>>();
    validate(d);
    s.detections.push_back(std::move(d));
  }
  std::set<Triplet> seen;
  for (const auto& jt : j.at("triplets")) {
    auto v = jt.get<std::vector<int>>();
    require(v.size() == 3, ErrorKind::data, "triplet needs 3 entries");
    Triplet t{v[0], v[1], v[2]};
    s.detection(t.subject);
    s.detection(t.object);
    require(seen.insert(t).second, ErrorKind::data, "duplicate triplet");
    s.triplets.push_back(t);
  }
  return s;
}

struct Dataset {
  WorldSpec spec;
  std::vector<SceneSample> samples;
};

inline void write_dataset(const std::string& path, const WorldSpec& spec, const std::vector<SceneSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::data, "cannot open " + path + " for writing");
  out << json{{"version", kDatasetVersion}, {"spec", spec}}.dump() << '\n';
  for (const auto& s : samples) out << to_json_line(s).dump() << '\n';
  require(out.good(), ErrorKind::data, "write failed for " + path);
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::data, "cannot open " + path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::data, "dataset file is empty: " + path);
  Dataset ds;
  try {
    json header = json::parse(line);
    require(header.value("version", -1) == kDatasetVersion, ErrorKind::data,
            "unsupported dataset version in " + path);
    ds.spec = header.at("spec").get<WorldSpec>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ds.samples.push_back(scene_from_json_line(json::parse(line)));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::data, "malformed dataset " + path + ": " + e.what());
  }
  return ds;
}

inline std::vector<SceneSample> select_split(const std::vector<SceneSample>& all, Split split) {
  std::vector<SceneSample> out;
  for (const auto& s : all)
    if (s.split == split) out.push_back(s);
  return out;
}

}  // namespace edgesgg
