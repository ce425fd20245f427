#pragma once

// Dual message passing over a scene: an object-centric branch that refines the
// two directional features of every candidate relation from its endpoints, and
// a relation-centric branch that passes messages between relations sharing an
// object on the edge dual graph. Their outputs are fused per relation and fed
// to linear softmax classifiers.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgesgg/error.hpp"
#include "edgesgg/graph_core.hpp"
#include "edgesgg/tensor.hpp"

namespace edgesgg {

using ad::Index;
using ad::Matrix;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

/************ configuration *******************************/

enum class Aggregation { concat, mean, multiply };

inline std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::concat: return "concat";
    case Aggregation::mean: return "mean";
    case Aggregation::multiply: return "multiply";
  }
  return "?";
}

inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "concat") return Aggregation::concat;
  if (s == "mean") return Aggregation::mean;
  if (s == "multiply" || s == "multiple") return Aggregation::multiply;
  fail(ErrorKind::usage, "unknown aggregation mode '" + s + "'");
}

struct DualMPNNConfig {
  int d_o{64};
  int d_r{64};
  int layers{2};
  int n_obj_classes{2};
  int n_rel_classes{2};  // class 0 is "no relation"
  Aggregation aggregation{Aggregation::concat};
  bool object_branch{true};
  bool relation_branch{true};

  bool both_branches() const noexcept { return object_branch && relation_branch; }

  int fc_input_width() const noexcept {
    return (both_branches() && aggregation == Aggregation::concat) ? 2 * d_r : d_r;
  }

  void validate() const {
    require(d_o >= 1 && d_r >= 1 && layers >= 1, ErrorKind::usage, "d_o, d_r and layers must be >= 1");
    require(n_obj_classes >= 1 && n_rel_classes >= 2, ErrorKind::usage, "bad vocabulary sizes");
    require(object_branch || relation_branch, ErrorKind::usage, "at least one branch must be enabled");
  }

  bool operator==(const DualMPNNConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const DualMPNNConfig& c) {
  j = {{"d_o", c.d_o},
       {"d_r", c.d_r},
       {"layers", c.layers},
       {"n_obj_classes", c.n_obj_classes},
       {"n_rel_classes", c.n_rel_classes},
       {"aggregation", to_string(c.aggregation)},
       {"object_branch", c.object_branch},
       {"relation_branch", c.relation_branch}};
}

inline void from_json(const nlohmann::json& j, DualMPNNConfig& c) {
  DualMPNNConfig d;
  c.d_o = j.value("d_o", d.d_o);
  c.d_r = j.value("d_r", d.d_r);
  c.layers = j.value("layers", d.layers);
  c.n_obj_classes = j.value("n_obj_classes", d.n_obj_classes);
  c.n_rel_classes = j.value("n_rel_classes", d.n_rel_classes);
  c.aggregation = aggregation_from_string(j.value("aggregation", std::string("concat")));
  c.object_branch = j.value("object_branch", true);
  c.relation_branch = j.value("relation_branch", true);
}

/************ parameters **********************************/

namespace param {
inline const std::string geo_w = "geo.W";
inline const std::string geo_b = "geo.b";
inline const std::string obj_w_u = "obj.W_u";
inline const std::string obj_w_v = "obj.W_v";
inline const std::string obj_att = "obj.w_att";
inline const std::string rel_w_o2e = "rel.W_o2e";
inline const std::string rel_w_i = "rel.W_i";
inline const std::string rel_w_j = "rel.W_j";
inline const std::string rel_att = "rel.w_att";
inline const std::string agg_w = "agg.W";
inline const std::string agg_b = "agg.b";
inline const std::string cls_obj = "cls.W_obj";
inline const std::string cls_rel = "cls.W_rel";
}  // namespace param

// Only the enabled branches own parameters.
inline ParamStore make_params(const DualMPNNConfig& c, std::uint64_t seed) {
  c.validate();
  ParamStore p(seed);
  const Index d_o = c.d_o;
  const Index d_r = c.d_r;
  if (c.object_branch) {
    p.create(param::geo_w, static_cast<Index>(kGeometryDim), d_r, static_cast<Index>(kGeometryDim));
    p.create(param::geo_b, 1, d_r, static_cast<Index>(kGeometryDim));
    p.create(param::obj_w_u, d_r, d_r, d_r);
    p.create(param::obj_w_v, d_r, d_r, d_r);
    p.create(param::obj_att, d_o, 1, d_o);
  }
  if (c.relation_branch) {
    p.create(param::rel_w_o2e, d_o, d_r, d_o);
    p.create(param::rel_w_i, d_r, d_r, d_r);
    p.create(param::rel_w_j, d_r, d_r, d_r);
    p.create(param::rel_att, d_r, 1, d_r);
  }
  const Index fc_in = c.fc_input_width();
  p.create(param::agg_w, fc_in, d_r, fc_in);
  p.create(param::agg_b, 1, d_r, fc_in);
  p.create(param::cls_obj, d_o, c.n_obj_classes, d_o);
  p.create(param::cls_rel, d_r, c.n_rel_classes, d_r);
  return p;
}

/************ scene layout ********************************/

// Index arrays shared by all layers of one scene. Directional relations are
// laid out as row 2k = <u,v>, row 2k+1 = <v,u> for primitive edge k = (u,v).
struct SceneLayout {
  Matrix object_features;  // n x d_o
  Matrix geometry;         // 2E x 16
  Index num_nodes{0};
  Index num_edges{0};
  std::vector<Index> dir_subject;
  std::vector<Index> dir_object;
  std::vector<Index> dir_reverse;
  std::vector<Index> dir_edge;
  std::vector<Index> inc_from;     // per dual incidence
  std::vector<Index> inc_reverse;
  std::vector<Index> inc_shared;
  std::vector<double> inv_degree;  // 1 / (#incidences from edge), 0 if none

  Index num_directed() const noexcept { return 2 * num_edges; }
  Index num_incidences() const noexcept { return static_cast<Index>(inc_from.size()); }

  static SceneLayout build(const PrimitiveGraph& g, const EdgeDualGraph* dg) {
    SceneLayout s;
    s.num_nodes = static_cast<Index>(g.num_nodes());
    s.num_edges = static_cast<Index>(g.num_edges());
    const Index d_o = static_cast<Index>(g.feature_dim());
    s.object_features.resize(s.num_nodes, d_o);
    for (Index i = 0; i < s.num_nodes; ++i)
      for (Index k = 0; k < d_o; ++k) s.object_features(i, k) = g.nodes[static_cast<std::size_t>(i)].feature[static_cast<std::size_t>(k)];

    s.geometry.resize(2 * s.num_edges, static_cast<Index>(kGeometryDim));
    for (Index e = 0; e < s.num_edges; ++e) {
      const auto ue = static_cast<std::size_t>(e);
      const Edge& edge = g.edges[ue];
      for (std::size_t k = 0; k < kGeometryDim; ++k) {
        s.geometry(2 * e, static_cast<Index>(k)) = g.forward_features[ue][k];
        s.geometry(2 * e + 1, static_cast<Index>(k)) = g.backward_features[ue][k];
      }
      const auto u = static_cast<Index>(edge.u);
      const auto v = static_cast<Index>(edge.v);
      s.dir_subject.insert(s.dir_subject.end(), {u, v});
      s.dir_object.insert(s.dir_object.end(), {v, u});
      s.dir_reverse.insert(s.dir_reverse.end(), {2 * e + 1, 2 * e});
      s.dir_edge.insert(s.dir_edge.end(), {e, e});
    }

    s.inv_degree.assign(static_cast<std::size_t>(s.num_edges), 0.0);
    if (dg != nullptr) {
      require(dg->num_dual_nodes() == g.num_edges(), ErrorKind::data, "dual graph does not match scene");
      for (const auto& inc : dg->incidences) {
        require(inc.shared < g.num_nodes(), ErrorKind::data, "dangling shared-node id");
        s.inc_from.push_back(static_cast<Index>(inc.from));
        s.inc_reverse.push_back(static_cast<Index>(inc.reverse));
        s.inc_shared.push_back(static_cast<Index>(inc.shared));
      }
      for (std::size_t e = 0; e < g.num_edges(); ++e) {
        std::size_t deg = dg->offsets[e + 1] - dg->offsets[e];
        s.inv_degree[e] = deg > 0 ? 1.0 / static_cast<double>(deg) : 0.0;
      }
    }
    return s;
  }
};

/************ building blocks *****************************/

// exp(w.u) / (exp(w.u) + exp(w.v)), evaluated after subtracting the larger exponent.
inline double attention_score(std::span<const double> u, std::span<const double> v,
                              std::span<const double> w) {
  require(u.size() == w.size() && v.size() == w.size(), ErrorKind::usage, "attention length mismatch");
  double a = 0.0;
  double b = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    a += w[k] * u[k];
    b += w[k] * v[k];
  }
  const double m = std::max(a, b);
  const double ea = std::exp(a - m);
  const double eb = std::exp(b - m);
  return ea / (ea + eb);
}

// alpha(u,v) per directional relation, from object features.
inline Var object_attention(const SceneLayout& s, Var objects, Var w_att) {
  Var scores = ad::matmul(objects, w_att);
  return ad::pair_softmax(scores, s.dir_subject, s.dir_object);
}

// e' = e + relu(alpha * e W_u + (1 - alpha) * e_rev W_v), all rows read from e.
inline Var object_centric_update(const SceneLayout& s, Var e, Var alpha, Var w_u, Var w_v) {
  Var reversed = ad::gather_rows(e, s.dir_reverse);
  Var own = ad::row_scale(ad::matmul(e, w_u), alpha);
  Var other = ad::row_scale(ad::matmul(reversed, w_v), ad::one_minus(alpha));
  return ad::add(e, ad::relu(ad::add(own, other)));
}

// z0 of every incidence is its shared object's feature mapped to d_r.
inline Var relation_init(const SceneLayout& s, Var objects, Var w_o2e) {
  return ad::gather_rows(ad::matmul(objects, w_o2e), s.inc_shared);
}

// For incidence (e_i, e_j):
//   z' = z + relu( sum_{e_k in N(e_i)} a(e_i,e_k) z<e_i,e_k> W_i + a(e_k,e_i) z<e_k,e_i> W_j )
// with a(x,y) the two-way softmax of w_att . z over the incidence and its reverse.
// The message depends only on e_i, so it is computed once per relation.
inline Var relation_centric_update(const SceneLayout& s, Var z, Var w_att, Var w_i, Var w_j) {
  Var scores = ad::matmul(z, w_att);
  std::vector<Index> self(s.inc_from.size());
  for (std::size_t k = 0; k < self.size(); ++k) self[k] = static_cast<Index>(k);
  Var alpha = ad::pair_softmax(scores, self, s.inc_reverse);
  Var weighted = ad::row_scale(z, alpha);
  Var incoming = ad::gather_rows(weighted, s.inc_reverse);
  Var msg = ad::add(ad::matmul(weighted, w_i), ad::matmul(incoming, w_j));
  Var per_edge = ad::relu(ad::segment_sum(msg, s.inc_from, s.num_edges));
  return ad::add(z, ad::gather_rows(per_edge, s.inc_from));
}

// Mean of z over the incidences leaving each relation (zero when it has none),
// broadcast to both directions.
inline Var pool_dual_to_edge(const SceneLayout& s, Var z) {
  Tape& t = *z.tape;
  Var summed = ad::segment_sum(z, s.inc_from, s.num_edges);
  Matrix inv(s.num_edges, 1);
  for (Index e = 0; e < s.num_edges; ++e) inv(e, 0) = s.inv_degree[static_cast<std::size_t>(e)];
  Var mean = ad::row_scale(summed, t.constant(std::move(inv)));
  return ad::gather_rows(mean, s.dir_edge);
}

// p_r = relu(FC(combine(e, zbar))). A missing branch feeds the other through alone.
inline Var aggregate_features(std::optional<Var> e, std::optional<Var> zbar, Aggregation mode, Var fc_w, Var fc_b) {
  require(e.has_value() || zbar.has_value(), ErrorKind::usage, "nothing to aggregate");
  Var combined;
  if (e && zbar) {
    switch (mode) {
      case Aggregation::concat: combined = ad::concat_cols(*e, *zbar); break;
      case Aggregation::mean: combined = ad::scale(ad::add(*e, *zbar), 0.5); break;
      case Aggregation::multiply: combined = ad::hadamard(*e, *zbar); break;
    }
  } else {
    combined = e ? *e : *zbar;
  }
  return ad::relu(ad::add_bias(ad::matmul(combined, fc_w), fc_b));
}

struct Predictions {
  Var objects;    // n x |Y_obj|
  Var relations;  // 2E x |Y_rel|
};

inline Predictions predict(Var object_features, Var p_r, Var w_obj, Var w_rel) {
  return {ad::softmax_rows(ad::matmul(object_features, w_obj)), ad::softmax_rows(ad::matmul(p_r, w_rel))};
}

struct JointLoss {
  Var object;
  Var relation;
  Var total;
};

inline JointLoss joint_loss(Var obj_probs, Var rel_probs, std::vector<int> obj_targets, std::vector<int> rel_targets) {
  Var lo = ad::cross_entropy(obj_probs, std::move(obj_targets));
  Var lr = ad::cross_entropy(rel_probs, std::move(rel_targets));
  return {lo, lr, ad::add(lo, lr)};
}

/************ forward *************************************/

struct ForwardState {
  std::vector<Var> e;  // object-centric features per layer, 2E x d_r
  std::vector<Var> z;  // relation-centric features per layer, incidences x d_r
  std::optional<Var> z_bar;
  Var p_r;
  Predictions predictions;
};

inline ForwardState forward(Tape& tape, ParamStore& params, const DualMPNNConfig& c, const SceneLayout& s) {
  c.validate();
  require(s.object_features.cols() == c.d_o, ErrorKind::data, "object feature width does not match d_o");
  require(s.num_edges > 0, ErrorKind::data, "scene has no candidate relations");
  ForwardState st;
  Var objects = tape.constant(s.object_features);

  if (c.object_branch) {
    Var geo = tape.constant(s.geometry);
    st.e.push_back(ad::add_bias(ad::matmul(geo, tape.param(params, param::geo_w)), tape.param(params, param::geo_b)));
    Var alpha = object_attention(s, objects, tape.param(params, param::obj_att));
    Var w_u = tape.param(params, param::obj_w_u);
    Var w_v = tape.param(params, param::obj_w_v);
    for (int h = 0; h < c.layers; ++h) st.e.push_back(object_centric_update(s, st.e.back(), alpha, w_u, w_v));
  }
  if (c.relation_branch) {
    st.z.push_back(relation_init(s, objects, tape.param(params, param::rel_w_o2e)));
    Var w_att = tape.param(params, param::rel_att);
    Var w_i = tape.param(params, param::rel_w_i);
    Var w_j = tape.param(params, param::rel_w_j);
    for (int h = 0; h < c.layers; ++h) st.z.push_back(relation_centric_update(s, st.z.back(), w_att, w_i, w_j));
    st.z_bar = pool_dual_to_edge(s, st.z.back());
  }

  std::optional<Var> e_last;
  if (!st.e.empty()) e_last = st.e.back();
  st.p_r = aggregate_features(e_last, st.z_bar, c.aggregation, tape.param(params, param::agg_w),
                              tape.param(params, param::agg_b));
  st.predictions =
      predict(objects, st.p_r, tape.param(params, param::cls_obj), tape.param(params, param::cls_rel));
  return st;
}

}  // namespace edgesgg
