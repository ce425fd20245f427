#pragma once

// Experiment driver: configuration, the SGD training loop, full runs with
// evaluation and long-tail reports, and the branch/aggregation ablations.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgesgg/checkpoint.hpp"
#include "edgesgg/dual_mpnn.hpp"
#include "edgesgg/error.hpp"
#include "edgesgg/evaluate.hpp"
#include "edgesgg/hash.hpp"
#include "edgesgg/metrics.hpp"
#include "edgesgg/parallel.hpp"
#include "edgesgg/synthetic.hpp"

namespace edgesgg {

/************ configuration *******************************/

struct OptimizerConfig {
  double lr{0.01};
  int epochs{200};
  int batch_size{8};

  bool operator==(const OptimizerConfig&) const = default;
};

struct ExperimentConfig {
  WorldSpec world{.d_o = 64};
  DatasetSizes sizes;
  DualMPNNConfig model;  // vocabulary sizes and d_o always follow `world`
  OptimizerConfig optimizer;
  Subtask subtask{Subtask::sggen};
  DetectorNoise detector{0.02, 0.05, 0.05};
  std::vector<int> ks{20, 50, 100};
  std::vector<int> snapshot_epochs;  // epochs after which a long-tail report is taken
  std::vector<std::uint64_t> seeds{0};
  std::optional<std::string> dataset;  // JSONL file used instead of generating data
  std::string out_dir{"out"};

  // The model configuration with the world's vocabulary and feature width applied.
  DualMPNNConfig model_config() const {
    DualMPNNConfig c = model;
    c.d_o = world.d_o;
    c.n_obj_classes = world.n_obj_classes;
    c.n_rel_classes = world.n_rel_classes;
    return c;
  }

  void validate() const {
    require(!seeds.empty(), ErrorKind::usage, "config needs at least one seed");
    require(std::isfinite(optimizer.lr) && optimizer.lr >= 0.0, ErrorKind::usage, "lr must be >= 0");
    require(optimizer.epochs >= 1, ErrorKind::usage, "epochs must be >= 1");
    require(optimizer.batch_size >= 1, ErrorKind::usage, "batch_size must be >= 1");
    require(sizes.train >= 1 && sizes.val >= 0 && sizes.test >= 0, ErrorKind::usage, "bad dataset sizes");
    require(world.min_objects >= 2 && world.max_objects >= world.min_objects, ErrorKind::usage,
            "scenes need at least two objects");
    if (dataset)
      require(std::filesystem::exists(*dataset), ErrorKind::usage, "dataset file not found: " + *dataset);
    model_config().validate();
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"world", c.world},
       {"sizes", {{"train", c.sizes.train}, {"val", c.sizes.val}, {"test", c.sizes.test}}},
       {"model",
        {{"d_r", c.model.d_r},
         {"layers", c.model.layers},
         {"aggregation", to_string(c.model.aggregation)},
         {"object_branch", c.model.object_branch},
         {"relation_branch", c.model.relation_branch}}},
       {"optimizer", {{"lr", c.optimizer.lr}, {"epochs", c.optimizer.epochs}, {"batch_size", c.optimizer.batch_size}}},
       {"subtask", to_string(c.subtask)},
       {"detector", c.detector},
       {"ks", c.ks},
       {"snapshot_epochs", c.snapshot_epochs},
       {"seeds", c.seeds},
       {"out_dir", c.out_dir}};
  if (c.dataset) j["dataset"] = *c.dataset;
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  ExperimentConfig d;
  c = d;
  if (j.contains("world")) c.world = j.at("world").get<WorldSpec>();
  if (j.contains("world") && !j.at("world").contains("d_o")) c.world.d_o = d.world.d_o;
  if (j.contains("sizes")) {
    const auto& s = j.at("sizes");
    c.sizes = {s.value("train", d.sizes.train), s.value("val", d.sizes.val), s.value("test", d.sizes.test)};
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    for (const char* key : {"d_o", "n_obj_classes", "n_rel_classes"})
      require(!m.contains(key), ErrorKind::usage, std::string("model.") + key + " is taken from the world spec");
    c.model = m.get<DualMPNNConfig>();
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer = {o.value("lr", d.optimizer.lr), o.value("epochs", d.optimizer.epochs),
                   o.value("batch_size", d.optimizer.batch_size)};
  }
  if (j.contains("subtask")) c.subtask = subtask_from_string(j.at("subtask").get<std::string>());
  if (j.contains("detector")) c.detector = j.at("detector").get<DetectorNoise>();
  c.ks = j.value("ks", d.ks);
  c.snapshot_epochs = j.value("snapshot_epochs", d.snapshot_epochs);
  c.seeds = j.value("seeds", d.seeds);
  if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
  c.out_dir = j.value("out_dir", d.out_dir);
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  try {
    return j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::usage, std::string("malformed config: ") + e.what());
  }
}

// FNV-1a of the canonical (sorted-key, compact) serialization.
inline std::string config_hash(const ExperimentConfig& c) {
  std::ostringstream os;
  os << std::hex << fnv1a(nlohmann::json(c).dump());
  return os.str();
}

/************ training ************************************/

struct EpochLoss {
  double object{0.0};
  double relation{0.0};
  double total{0.0};
};

struct TrainingScene {
  PreparedScene scene;
  SceneTargets targets;
};

inline std::vector<TrainingScene> prepare_training(const std::vector<SceneSample>& samples) {
  std::vector<TrainingScene> out;
  for (const auto& s : samples) {
    if (s.detections.size() < 2) continue;  // no candidate relations to learn from
    PreparedScene ps = prepare_scene(s.detections);
    SceneTargets t = scene_targets(ps, s.triplets);
    out.push_back({std::move(ps), std::move(t)});
  }
  return out;
}

// Losses of one scene; when `grad_scale` is set, also backpropagates the scaled total.
inline EpochLoss scene_loss(ParamStore& params, const DualMPNNConfig& c, const TrainingScene& s,
                            std::optional<double> grad_scale) {
  Tape tape;
  ForwardState st = forward(tape, params, c, s.scene.layout);
  JointLoss l = joint_loss(st.predictions.objects, st.predictions.relations, s.targets.objects, s.targets.relations);
  EpochLoss out{tape.scalar(l.object), tape.scalar(l.relation), tape.scalar(l.total)};
  require(std::isfinite(out.total), ErrorKind::numerical, "loss is not finite (training diverged)");
  if (grad_scale) tape.backward(ad::scale(l.total, *grad_scale));
  return out;
}

inline EpochLoss mean_loss(ParamStore& params, const DualMPNNConfig& c, const std::vector<TrainingScene>& scenes) {
  EpochLoss sum;
  for (const auto& s : scenes) {
    EpochLoss l = scene_loss(params, c, s, std::nullopt);
    sum.object += l.object;
    sum.relation += l.relation;
    sum.total += l.total;
  }
  const double n = static_cast<double>(scenes.size());
  return {sum.object / n, sum.relation / n, sum.total / n};
}

struct RelationAccuracy {
  double all{0.0};         // over every directional candidate, background included
  double foreground{0.0};  // over annotated relations only
};

inline RelationAccuracy relation_accuracy(ParamStore& params, const DualMPNNConfig& c,
                                          const std::vector<TrainingScene>& scenes) {
  std::size_t rows = 0, correct = 0, fg = 0, fg_correct = 0;
  for (const auto& s : scenes) {
    SceneOutputs y = run_model(params, c, s.scene);
    for (Index r = 0; r < y.relation_probs.rows(); ++r) {
      Index best = 0;
      y.relation_probs.row(r).maxCoeff(&best);
      const int target = s.targets.relations[static_cast<std::size_t>(r)];
      const bool ok = best == target;
      ++rows;
      correct += ok ? 1 : 0;
      if (target != 0) {
        ++fg;
        fg_correct += ok ? 1 : 0;
      }
    }
  }
  return {rows ? static_cast<double>(correct) / static_cast<double>(rows) : 0.0,
          fg ? static_cast<double>(fg_correct) / static_cast<double>(fg) : 0.0};
}

struct TrainResult {
  ParamStore params;
  std::vector<EpochLoss> losses;  // mean training loss per epoch
  int best_epoch{0};              // 1-based; the last epoch when there is no validation split
};

// Called after every epoch with the epoch number (1-based), its loss and the current parameters.
using EpochCallback = std::function<void(int, const EpochLoss&, ParamStore&)>;

// Mini-batch SGD on the mean joint loss of each batch. Scene order is reshuffled
// every epoch from `seed`; with a validation split the parameters of the epoch
// with the lowest validation loss are returned.
inline TrainResult train_model(const DualMPNNConfig& c, const std::vector<SceneSample>& train,
                               const std::vector<SceneSample>& val, const OptimizerConfig& opt, std::uint64_t seed,
                               const EpochCallback& on_epoch = {}) {
  c.validate();
  auto scenes = prepare_training(train);
  require(!scenes.empty(), ErrorKind::data, "no training scene has a candidate relation");
  auto val_scenes = prepare_training(val);

  TrainResult out{make_params(c, seed), {}, 0};
  std::optional<ParamStore> best;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x5eed));
  std::vector<EpochLoss> per_scene(scenes.size());
  const auto batch = static_cast<std::size_t>(opt.batch_size);

  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (std::size_t k = start; k < stop; ++k) per_scene[order[k]] = scene_loss(out.params, c, scenes[order[k]], inv);
      sgd_step(out.params, opt.lr);
    }
    // summed in scene order so the epoch loss does not depend on the shuffle
    EpochLoss mean;
    for (const auto& l : per_scene) {
      mean.object += l.object;
      mean.relation += l.relation;
      mean.total += l.total;
    }
    const double n = static_cast<double>(scenes.size());
    out.losses.push_back({mean.object / n, mean.relation / n, mean.total / n});

    if (!val_scenes.empty()) {
      const double v = mean_loss(out.params, c, val_scenes).total;
      if (v < best_val) {
        best_val = v;
        best = out.params;
        out.best_epoch = epoch;
      }
    }
    if (on_epoch) on_epoch(epoch, out.losses.back(), out.params);
  }
  if (best) {
    out.params = std::move(*best);
  } else {
    out.best_epoch = opt.epochs;
  }
  return out;
}

/************ full runs ***********************************/

inline std::vector<std::size_t> predicate_counts(const std::vector<SceneSample>& train, int n_rel_classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_rel_classes), 0);
  for (const auto& s : train)
    for (const auto& t : s.triplets) {
      require(t.predicate >= 1 && t.predicate < n_rel_classes, ErrorKind::data, "predicate out of vocabulary");
      ++counts[static_cast<std::size_t>(t.predicate)];
    }
  return counts;
}

struct RunData {
  World world;
  std::vector<SceneSample> train, val, test;
};

// A run seed s fixes the world (world.seed + s), the scenes and the initial weights.
inline RunData make_run_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::vector<SceneSample> all;
  WorldSpec spec = cfg.world;
  if (cfg.dataset) {
    Dataset ds = read_dataset(*cfg.dataset);
    spec = ds.spec;
    all = std::move(ds.samples);
  } else {
    spec.seed = cfg.world.seed + seed;
  }
  RunData d{generate_world(spec), {}, {}, {}};
  if (!cfg.dataset) all = generate_dataset(d.world, cfg.sizes, seed);
  d.train = select_split(all, Split::train);
  d.val = select_split(all, Split::val);
  d.test = select_split(all, Split::test);
  return d;
}

struct RunRecord {
  std::string config_hash;
  nlohmann::json config;  // verbatim
  std::uint64_t seed{0};
  std::vector<EpochLoss> losses;
  int best_epoch{0};
  RelationAccuracy train_accuracy;
  std::map<std::string, MetricsReport> reports;  // per subtask, on the test split
  LongtailReport longtail;                       // configured subtask, final model
  std::map<int, LongtailReport> snapshots;       // configured subtask, by epoch
  double wall_seconds{0.0};
  std::string checkpoint_path;
};

inline nlohmann::json to_json(const EpochLoss& l) {
  return {{"object", l.object}, {"relation", l.relation}, {"total", l.total}};
}

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json losses = nlohmann::json::array();
  for (std::size_t e = 0; e < r.losses.size(); ++e) {
    auto l = to_json(r.losses[e]);
    l["epoch"] = e + 1;
    losses.push_back(l);
  }
  nlohmann::json reports = nlohmann::json::object();
  for (const auto& [k, v] : r.reports) reports[k] = to_json(v);
  nlohmann::json snaps = nlohmann::json::object();
  for (const auto& [e, lt] : r.snapshots) snaps[std::to_string(e)] = to_json(lt);
  return {{"config_hash", r.config_hash},
          {"config", r.config},
          {"seed", r.seed},
          {"losses", losses},
          {"best_epoch", r.best_epoch},
          {"train_relation_accuracy", {{"all", r.train_accuracy.all}, {"foreground", r.train_accuracy.foreground}}},
          {"reports", reports},
          {"longtail", to_json(r.longtail)},
          {"snapshots", snaps},
          {"wall_seconds", r.wall_seconds},
          {"checkpoint", r.checkpoint_path}};
}

struct RunResult {
  RunRecord record;
  Checkpoint checkpoint;
};

struct RunOptions {
  bool all_subtasks{true};  // otherwise only the configured subtask is evaluated
  int jobs{1};              // evaluation threads; results do not depend on it
  std::function<void(int, const EpochLoss&)> on_epoch;
};

inline EvalOptions eval_options(const ExperimentConfig& cfg, Subtask subtask, std::uint64_t seed, int jobs = 1) {
  EvalOptions o;
  o.jobs = jobs;
  o.subtask = subtask;
  o.noise = cfg.detector;
  o.detector_seed = mix_seed(seed, 0xde7ec7);
  o.ks = cfg.ks;
  return o;
}

inline RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed, const RunOptions& opt = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunData data = make_run_data(cfg, seed);
  require(!data.test.empty(), ErrorKind::data, "empty test split");
  DualMPNNConfig mc = cfg.model_config();
  mc.d_o = data.world.spec.d_o;
  mc.n_obj_classes = data.world.spec.n_obj_classes;
  mc.n_rel_classes = data.world.spec.n_rel_classes;
  auto counts = predicate_counts(data.train, mc.n_rel_classes);
  const EvalOptions main_eval = eval_options(cfg, cfg.subtask, seed, opt.jobs);

  RunResult res;
  std::map<int, LongtailReport> snapshots;
  auto on_epoch = [&](int epoch, const EpochLoss& l, ParamStore& params) {
    if (opt.on_epoch) opt.on_epoch(epoch, l);
    if (std::find(cfg.snapshot_epochs.begin(), cfg.snapshot_epochs.end(), epoch) != cfg.snapshot_epochs.end())
      snapshots[epoch] = longtail_report(evaluate_subtask(params, mc, &data.world, data.test, main_eval), counts);
  };
  TrainResult tr = train_model(mc, data.train, data.val, cfg.optimizer, seed, on_epoch);

  RunRecord& r = res.record;
  r.config = cfg;
  r.config_hash = config_hash(cfg);
  r.seed = seed;
  r.losses = tr.losses;
  r.best_epoch = tr.best_epoch;
  r.train_accuracy = relation_accuracy(tr.params, mc, prepare_training(data.train));
  for (Subtask s : {Subtask::predcls, Subtask::sgcls, Subtask::sggen}) {
    if (!opt.all_subtasks && s != cfg.subtask) continue;
    r.reports[to_string(s)] = evaluate_subtask(tr.params, mc, &data.world, data.test, eval_options(cfg, s, seed, opt.jobs));
  }
  r.longtail = longtail_report(r.reports.at(to_string(cfg.subtask)), counts);
  r.snapshots = std::move(snapshots);
  res.checkpoint = {seed, mc, data.world.spec, counts, std::move(tr.params)};
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/************ ablation ************************************/

enum class AblationAxis { branches, aggregation };

inline AblationAxis ablation_axis_from_string(const std::string& s) {
  if (s == "branches") return AblationAxis::branches;
  if (s == "aggregation") return AblationAxis::aggregation;
  fail(ErrorKind::usage, "unknown ablation axis '" + s + "' (expected branches or aggregation)");
}

struct AblationVariant {
  std::string name;
  DualMPNNConfig model;
};

inline std::vector<AblationVariant> ablation_variants(const DualMPNNConfig& base, AblationAxis axis) {
  std::vector<AblationVariant> out;
  if (axis == AblationAxis::branches) {
    DualMPNNConfig o = base, r = base, b = base;
    o.object_branch = true, o.relation_branch = false;
    r.object_branch = false, r.relation_branch = true;
    b.object_branch = true, b.relation_branch = true;
    out = {{"object-only", o}, {"relation-only", r}, {"both", b}};
  } else {
    DualMPNNConfig m = base, x = base, c = base;
    m.aggregation = Aggregation::mean;
    x.aggregation = Aggregation::multiply;
    c.aggregation = Aggregation::concat;
    m.object_branch = x.object_branch = c.object_branch = true;
    m.relation_branch = x.relation_branch = c.relation_branch = true;
    out = {{"mean", m}, {"multiply", x}, {"concat", c}};
  }
  return out;
}

struct AblationRow {
  std::string variant;
  std::map<int, double> median_mean_recall;  // K -> median over seeds
  std::vector<std::map<int, double>> per_seed;
};

inline double median(std::vector<double> v) {
  require(!v.empty(), ErrorKind::usage, "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Every variant is trained under the same seeds; rows follow ablation_variants order.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, AblationAxis axis, int jobs = 1,
                                             const std::function<void(const std::string&, std::uint64_t,
                                                                      const RunRecord&)>& on_run = {}) {
  cfg.validate();
  auto variants = ablation_variants(cfg.model, axis);
  const std::size_t n_seeds = cfg.seeds.size();
  std::vector<std::map<int, double>> results(variants.size() * n_seeds);
  std::mutex report_mutex;
  parallel_for(results.size(), jobs, [&](std::size_t task) {
    const std::size_t v = task / n_seeds, s = task % n_seeds;
    ExperimentConfig c = cfg;
    c.model = variants[v].model;
    RunResult run = run_experiment(c, cfg.seeds[s], {.all_subtasks = false});
    results[task] = run.record.reports.at(to_string(cfg.subtask)).mean_recall_at;
    if (on_run) {
      std::lock_guard lock(report_mutex);
      on_run(variants[v].name, cfg.seeds[s], run.record);
    }
  });
  std::vector<AblationRow> rows;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    AblationRow row{variants[v].name, {}, {}};
    for (std::size_t s = 0; s < n_seeds; ++s) row.per_seed.push_back(results[v * n_seeds + s]);
    for (int k : cfg.ks) {
      std::vector<double> vals;
      for (const auto& m : row.per_seed) vals.push_back(m.at(k));
      row.median_mean_recall[k] = median(vals);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json med = nlohmann::json::object();
    for (const auto& [k, v] : r.median_mean_recall) med[std::to_string(k)] = v;
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& m : r.per_seed) {
      nlohmann::json s = nlohmann::json::object();
      for (const auto& [k, v] : m) s[std::to_string(k)] = v;
      seeds.push_back(s);
    }
    out.push_back({{"variant", r.variant}, {"median_mean_recall_at", med}, {"per_seed", seeds}});
  }
  return out;
}

}  // namespace edgesgg
