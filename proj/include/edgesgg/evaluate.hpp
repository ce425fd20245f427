#pragma once

// Runs a trained model over scenes and scores its ranked triplets under the
// three standard settings: ground-truth boxes and labels (PredCls), ground-truth
// boxes only (SGCls), and simulated detections (SGGen).

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "edgesgg/dual_mpnn.hpp"
#include "edgesgg/graph_core.hpp"
#include "edgesgg/hash.hpp"
#include "edgesgg/metrics.hpp"
#include "edgesgg/parallel.hpp"
#include "edgesgg/synthetic.hpp"

namespace edgesgg {

enum class Subtask { predcls, sgcls, sggen };

inline std::string to_string(Subtask s) {
  switch (s) {
    case Subtask::predcls: return "predcls";
    case Subtask::sgcls: return "sgcls";
    case Subtask::sggen: return "sggen";
  }
  return "?";
}

inline Subtask subtask_from_string(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "predcls") return Subtask::predcls;
  if (s == "sgcls") return Subtask::sgcls;
  if (s == "sggen" || s == "sgdet") return Subtask::sggen;
  fail(ErrorKind::usage, "unknown subtask '" + s + "'");
}

/************ scene tensors *******************************/

// Graph, dual and layout for a complete candidate graph over `detections`.
struct PreparedScene {
  PrimitiveGraph graph;
  std::optional<EdgeDualGraph> dual;
  SceneLayout layout;

  bool has_relations() const noexcept { return graph.num_edges() > 0; }
};

inline PreparedScene prepare_scene(std::vector<Detection> detections) {
  PreparedScene s;
  s.graph = build_primitive_graph(std::move(detections));
  if (s.graph.num_edges() > 0) s.dual = build_edge_dual_graph(s.graph);
  s.layout = SceneLayout::build(s.graph, s.dual ? &*s.dual : nullptr);
  return s;
}

// Relation target per directional row (0 = no relation) and object targets per node.
struct SceneTargets {
  std::vector<int> objects;
  std::vector<int> relations;
};

inline SceneTargets scene_targets(const PreparedScene& s, const std::vector<Triplet>& triplets) {
  SceneTargets t;
  for (const auto& d : s.graph.nodes) t.objects.push_back(d.label);
  t.relations.assign(2 * s.graph.num_edges(), 0);
  for (const auto& tr : triplets) {
    std::size_t a = s.graph.node_index(tr.subject);
    std::size_t b = s.graph.node_index(tr.object);
    for (std::size_t e = 0; e < s.graph.num_edges(); ++e) {
      const Edge& edge = s.graph.edges[e];
      if (edge.u == a && edge.v == b) t.relations[2 * e] = tr.predicate;
      if (edge.u == b && edge.v == a) t.relations[2 * e + 1] = tr.predicate;
    }
  }
  return t;
}

struct SceneOutputs {
  Matrix object_probs;    // n x |Y_obj|
  Matrix relation_probs;  // 2E x |Y_rel|, empty without relations
};

inline SceneOutputs run_model(ParamStore& params, const DualMPNNConfig& c, const PreparedScene& s) {
  SceneOutputs out;
  Tape tape;
  if (!s.has_relations()) {
    Var objects = tape.constant(s.layout.object_features);
    out.object_probs = tape.value(ad::softmax_rows(ad::matmul(objects, tape.param(params, param::cls_obj))));
    return out;
  }
  ForwardState st = forward(tape, params, c, s.layout);
  out.object_probs = tape.value(st.predictions.objects);
  out.relation_probs = tape.value(st.predictions.relations);
  return out;
}

/************ ranking *************************************/

enum class TripletScore {
  product,   // subject * object * predicate confidence
  predicate  // predicate confidence alone
};

struct RankOptions {
  bool labels_given{false};     // PredCls: use the detection labels with confidence 1
  bool graph_constraint{true};  // one predicate (the best non-background) per ordered pair
  TripletScore score{TripletScore::product};
};

// Ranked by triplet score, descending; ties keep row order.
inline std::vector<TripletPrediction> rank_triplets(const PrimitiveGraph& g, const Matrix& object_probs,
                                                    const Matrix& relation_probs, RankOptions opt = {}) {
  std::vector<TripletPrediction> preds;
  if (g.num_edges() == 0) return preds;
  require(relation_probs.rows() == static_cast<Index>(2 * g.num_edges()), ErrorKind::usage,
          "relation rows do not match the graph");
  require(object_probs.rows() == static_cast<Index>(g.num_nodes()), ErrorKind::usage,
          "object rows do not match the graph");
  std::vector<int> label(g.num_nodes());
  std::vector<double> conf(g.num_nodes());
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    if (opt.labels_given) {
      require(g.nodes[i].label >= 0 && g.nodes[i].label < object_probs.cols(), ErrorKind::data,
              "ground-truth label missing or out of range");
      label[i] = g.nodes[i].label;
      conf[i] = 1.0;
    } else {
      Index best = 0;
      conf[i] = object_probs.row(static_cast<Index>(i)).maxCoeff(&best);
      label[i] = static_cast<int>(best);
    }
  }
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    for (int dir = 0; dir < 2; ++dir) {
      const Index row = static_cast<Index>(2 * e + static_cast<std::size_t>(dir));
      const std::size_t s = dir == 0 ? g.edges[e].u : g.edges[e].v;
      const std::size_t o = dir == 0 ? g.edges[e].v : g.edges[e].u;
      auto emit = [&](int p) {
        const double pc = relation_probs(row, p);
        preds.push_back({g.nodes[s].box, g.nodes[o].box, label[s], label[o], p,
                         opt.score == TripletScore::product ? conf[s] * conf[o] * pc : pc});
      };
      if (opt.graph_constraint) {
        Index best = 1;
        for (Index p = 2; p < relation_probs.cols(); ++p)
          if (relation_probs(row, p) > relation_probs(row, best)) best = p;
        emit(static_cast<int>(best));
      } else {
        for (Index p = 1; p < relation_probs.cols(); ++p) emit(static_cast<int>(p));
      }
    }
  }
  std::stable_sort(preds.begin(), preds.end(),
                   [](const TripletPrediction& a, const TripletPrediction& b) { return a.score > b.score; });
  return preds;
}

inline std::vector<GroundTruthTriplet> ground_truth(const SceneSample& scene) {
  std::vector<GroundTruthTriplet> out;
  for (const auto& t : scene.triplets) {
    const Detection& s = scene.detection(t.subject);
    const Detection& o = scene.detection(t.object);
    out.push_back({s.box, o.box, s.label, o.label, t.predicate});
  }
  return out;
}

/************ subtask evaluation **************************/

struct EvalOptions {
  Subtask subtask{Subtask::sggen};
  DetectorNoise noise{0.02, 0.05, 0.05};
  std::uint64_t detector_seed{0};
  std::vector<int> ks{20, 50, 100};
  int per_class_k{50};
  bool graph_constraint{true};
  TripletScore score{TripletScore::product};
  int jobs{1};
};

// Per-image matches under both box modes, ready for build_report.
struct SplitMatches {
  std::vector<ImageMatches> pair;
  std::vector<ImageMatches> union_box;
};

inline std::vector<Detection> subtask_inputs(const World* world, const SceneSample& scene, const EvalOptions& opt,
                                             std::size_t index) {
  if (opt.subtask != Subtask::sggen) return scene.detections;
  require(world != nullptr, ErrorKind::usage, "SGGen needs the world to simulate detections");
  return simulate_detector(*world, scene, opt.noise, mix_seed(opt.detector_seed, index));
}

inline SplitMatches match_split(ParamStore& params, const DualMPNNConfig& c, const World* world,
                                const std::vector<SceneSample>& scenes, const EvalOptions& opt) {
  SplitMatches out;
  out.pair.resize(scenes.size());
  out.union_box.resize(scenes.size());
  parallel_for(scenes.size(), opt.jobs, [&](std::size_t i) {
    const SceneSample& scene = scenes[i];
    require(!scene.detections.empty(), ErrorKind::data, "scene without ground-truth detections");
    auto gts = ground_truth(scene);
    std::vector<TripletPrediction> preds;
    auto inputs = subtask_inputs(world, scene, opt, i);
    if (inputs.size() >= 2) {
      PreparedScene ps = prepare_scene(std::move(inputs));
      SceneOutputs y = run_model(params, c, ps);
      preds = rank_triplets(ps.graph, y.object_probs, y.relation_probs,
                            {opt.subtask == Subtask::predcls, opt.graph_constraint, opt.score});
    }
    out.pair[i] = match_image(preds, gts, BoxMode::pair);
    out.union_box[i] = match_image(preds, gts, BoxMode::union_box);
  });
  return out;
}

inline MetricsReport evaluate_subtask(ParamStore& params, const DualMPNNConfig& c, const World* world,
                                      const std::vector<SceneSample>& scenes, const EvalOptions& opt) {
  require(!scenes.empty(), ErrorKind::data, "empty evaluation set");
  SplitMatches m = match_split(params, c, world, scenes, opt);
  return build_report(m.pair, m.union_box, opt.ks, opt.per_class_k);
}

}  // namespace edgesgg
