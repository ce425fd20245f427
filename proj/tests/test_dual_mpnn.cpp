#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "edgesgg/dual_mpnn.hpp"
#include "edgesgg/evaluate.hpp"
#include "edgesgg/hash.hpp"
#include "support/oracles.hpp"

using namespace edgesgg;

namespace {

std::vector<Detection> random_scene(int n, int d_o, std::uint64_t seed, int n_classes = 3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.0, 0.6), size(0.1, 0.35);
  std::normal_distribution<double> feat(0.0, 1.0);
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i) {
    Detection d;
    d.id = 10 * i + 3;
    double x = pos(rng), y = pos(rng);
    d.box = {x, y, x + size(rng), y + size(rng)};
    d.label = static_cast<int>(rng() % static_cast<std::uint64_t>(n_classes));
    for (int k = 0; k < d_o; ++k) d.feature.push_back(feat(rng));
    out.push_back(d);
  }
  return out;
}

DualMPNNConfig small_config(int d = 8, int layers = 2) {
  DualMPNNConfig c;
  c.d_o = d;
  c.d_r = d;
  c.layers = layers;
  c.n_obj_classes = 3;
  c.n_rel_classes = 4;
  return c;
}

std::vector<int> relation_targets(const PreparedScene& s, std::uint64_t seed, int n_rel) {
  std::mt19937_64 rng(seed);
  std::vector<int> t;
  for (Index r = 0; r < s.layout.num_directed(); ++r)
    t.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(n_rel)));
  return t;
}

std::vector<int> object_targets(const PreparedScene& s) {
  std::vector<int> t;
  for (const auto& d : s.graph.nodes) t.push_back(d.label);
  return t;
}

void zero_all(ParamStore& ps) {
  for (auto& [_, t] : ps) t.value().setZero();
}

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index r = 0;
  for (const auto& row : rows) {
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

}  // namespace

/************ attention ***********************************/

TEST(Attention, ReferenceValues) {
  std::vector<double> u{0.3, -1.2, 2.0}, v{1.1, 0.4, -0.5}, w{0.7, 0.2, -0.9}, zero(3, 0.0);
  EXPECT_DOUBLE_EQ(attention_score(u, u, w), 0.5);
  EXPECT_DOUBLE_EQ(attention_score(u, v, zero), 0.5);
  std::vector<double> a{std::log(3.0)}, b{0.0}, one{1.0};
  EXPECT_NEAR(attention_score(a, b, one), 0.75, 1e-15);
  std::vector<double> short_w{1.0, 2.0};
  EXPECT_THROW(attention_score(u, v, short_w), Error);
}

TEST(Attention, Complementarity) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> u(6), v(6), w(6);
    for (std::size_t k = 0; k < 6; ++k) u[k] = n(rng), v[k] = n(rng), w[k] = n(rng);
    EXPECT_NEAR(attention_score(u, v, w) + attention_score(v, u, w), 1.0, 1e-12);
  }
}

TEST(Attention, TapeVersionMatchesScalarVersion) {
  auto s = prepare_scene(random_scene(4, 5, 1));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix w(5, 1);
  for (Index k = 0; k < 5; ++k) w(k, 0) = n(rng);
  Tape t;
  Matrix alpha = t.value(object_attention(s.layout, t.constant(s.layout.object_features), t.constant(w)));
  for (Index r = 0; r < s.layout.num_directed(); ++r) {
    auto row = [&](Index i) {
      return std::vector<double>(s.layout.object_features.row(i).data(), s.layout.object_features.row(i).data() + 5);
    };
    auto su = row(s.layout.dir_subject[static_cast<std::size_t>(r)]);
    auto so = row(s.layout.dir_object[static_cast<std::size_t>(r)]);
    EXPECT_NEAR(alpha(r, 0), attention_score(su, so, std::vector<double>(w.data(), w.data() + 5)), 1e-15);
  }
}

/************ object-centric update ***********************/

TEST(ObjectUpdate, ZeroWeightsKeepFeatures) {
  auto s = prepare_scene(random_scene(3, 4, 3));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix e(s.layout.num_directed(), 5);
  for (Index i = 0; i < e.size(); ++i) e.data()[i] = n(rng);
  Tape t;
  Var alpha = t.constant(Matrix::Constant(s.layout.num_directed(), 1, 0.3));
  Var out = object_centric_update(s.layout, t.constant(e), alpha, t.constant(Matrix::Zero(5, 5)),
                                  t.constant(Matrix::Zero(5, 5)));
  EXPECT_EQ(t.value(out), e);
}

TEST(ObjectUpdate, HandExample) {
  auto s = prepare_scene(random_scene(2, 2, 5));
  Tape t;
  Var e = t.constant(mat({{1, 0}, {0, 1}}));
  Var alpha = t.constant(mat({{0.75}, {0.25}}));
  Var id = t.constant(Matrix::Identity(2, 2));
  Matrix out = t.value(object_centric_update(s.layout, e, alpha, id, id));
  EXPECT_DOUBLE_EQ(out(0, 0), 1.75);
  EXPECT_DOUBLE_EQ(out(0, 1), 0.25);
  // the reverse direction sees the mirrored weighting: [0,1] + relu(0.25*[0,1] + 0.75*[1,0])
  EXPECT_DOUBLE_EQ(out(1, 0), 0.75);
  EXPECT_DOUBLE_EQ(out(1, 1), 1.25);
}

TEST(ObjectUpdate, RowsReadOnlyTheLayerSnapshot) {
  auto s = prepare_scene(random_scene(5, 3, 6));
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  const Index d = 4, rows = s.layout.num_directed();
  Matrix e(rows, d), wu(d, d), wv(d, d), alpha(rows, 1);
  for (Index i = 0; i < e.size(); ++i) e.data()[i] = n(rng);
  for (Index i = 0; i < wu.size(); ++i) wu.data()[i] = n(rng), wv.data()[i] = n(rng);
  for (Index r = 0; r < rows; ++r) alpha(r, 0) = std::uniform_real_distribution<double>(0, 1)(rng);
  Tape t;
  Matrix got = t.value(object_centric_update(s.layout, t.constant(e), t.constant(alpha), t.constant(wu), t.constant(wv)));
  // visit rows in a shuffled order, each computed from the untouched input
  std::vector<Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (Index r : order) {
    const Index rev = s.layout.dir_reverse[static_cast<std::size_t>(r)];
    Eigen::RowVectorXd pre = alpha(r, 0) * e.row(r) * wu + (1 - alpha(r, 0)) * e.row(rev) * wv;
    Eigen::RowVectorXd want = e.row(r) + pre.cwiseMax(0.0);
    EXPECT_LT((got.row(r) - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

/************ relation-centric branch *********************/

TEST(RelationInit, ZeroIdentityAndSharedNode) {
  auto s = prepare_scene(random_scene(4, 3, 9));
  Tape t;
  Var objects = t.constant(s.layout.object_features);
  EXPECT_TRUE(t.value(relation_init(s.layout, objects, t.constant(Matrix::Zero(3, 5)))).isZero());
  Matrix z = t.value(relation_init(s.layout, objects, t.constant(Matrix::Identity(3, 3))));
  for (Index k = 0; k < s.layout.num_incidences(); ++k)
    EXPECT_EQ(z.row(k), s.layout.object_features.row(s.layout.inc_shared[static_cast<std::size_t>(k)]));

  // star: every incidence meets at the center, so all z0 rows coincide
  auto dets = random_scene(4, 3, 10);
  PrimitiveGraph g = build_primitive_graph(dets, {{3, 13}, {3, 23}, {3, 33}});
  EdgeDualGraph dg = build_edge_dual_graph(g);
  SceneLayout star = SceneLayout::build(g, &dg);
  Tape t2;
  Matrix zs = t2.value(relation_init(star, t2.constant(star.object_features), t2.constant(Matrix::Ones(3, 2))));
  ASSERT_EQ(zs.rows(), 6);
  for (Index k = 1; k < zs.rows(); ++k) EXPECT_EQ(zs.row(k), zs.row(0));
}

TEST(RelationInit, RejectsDanglingSharedNode) {
  auto dets = random_scene(3, 2, 11);
  PrimitiveGraph g = build_primitive_graph(dets);
  EdgeDualGraph dg = build_edge_dual_graph(g);
  dg.incidences[0].shared = 99;
  EXPECT_THROW(SceneLayout::build(g, &dg), Error);
}

TEST(RelationUpdate, EmptyNeighborhoodAndZeroWeights) {
  // two disjoint relations: no dual edges at all
  auto dets = random_scene(4, 2, 12);
  PrimitiveGraph g = build_primitive_graph(dets, {{3, 13}, {23, 33}});
  EdgeDualGraph dg = build_edge_dual_graph(g);
  SceneLayout s = SceneLayout::build(g, &dg);
  EXPECT_EQ(s.num_incidences(), 0);
  Tape t;
  Var z = t.constant(Matrix::Zero(0, 3));
  Var z1 = relation_centric_update(s, z, t.constant(Matrix::Ones(3, 1)), t.constant(Matrix::Identity(3, 3)),
                                   t.constant(Matrix::Identity(3, 3)));
  EXPECT_EQ(t.value(z1).rows(), 0);
  EXPECT_TRUE(t.value(pool_dual_to_edge(s, z1)).isZero());

  auto k4 = prepare_scene(random_scene(4, 2, 13));
  std::mt19937_64 rng(14);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix zv(k4.layout.num_incidences(), 3);
  for (Index i = 0; i < zv.size(); ++i) zv.data()[i] = n(rng);
  Tape t2;
  Var out = relation_centric_update(k4.layout, t2.constant(zv), t2.constant(Matrix::Ones(3, 1)),
                                    t2.constant(Matrix::Zero(3, 3)), t2.constant(Matrix::Zero(3, 3)));
  EXPECT_EQ(t2.value(out), zv);
}

TEST(RelationUpdate, MatchesScalarOracleOnStar) {
  auto dets = random_scene(4, 2, 15);
  PrimitiveGraph g = build_primitive_graph(dets, {{3, 13}, {3, 23}, {3, 33}});
  EdgeDualGraph dg = build_edge_dual_graph(g);
  SceneLayout s = SceneLayout::build(g, &dg);
  std::vector<std::pair<int, int>> inc;
  for (const auto& i : dg.incidences) inc.emplace_back(static_cast<int>(i.from), static_cast<int>(i.to));

  std::mt19937_64 rng(16);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    // the first trial uses identity weights, the rest random scalars
    const double wa = trial ? n(rng) : 1.0, wi = trial ? n(rng) : 1.0, wj = trial ? n(rng) : 1.0;
    std::vector<double> z(inc.size());
    for (double& x : z) x = n(rng);
    Tape t;
    Matrix zm = Eigen::Map<Matrix>(z.data(), static_cast<Index>(z.size()), 1);
    Matrix got = t.value(relation_centric_update(s, t.constant(zm), t.constant(Matrix::Constant(1, 1, wa)),
                                                 t.constant(Matrix::Constant(1, 1, wi)),
                                                 t.constant(Matrix::Constant(1, 1, wj))));
    auto want = oracle::relation_step_scalar(inc, z, wa, wi, wj);
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(got(static_cast<Index>(k), 0), want[k], 1e-12);
  }
}

TEST(Pooling, MeansIncidencesPerRelation) {
  // path 3-13-23: each relation has exactly one incidence
  auto dets = random_scene(3, 2, 17);
  PrimitiveGraph g = build_primitive_graph(dets, {{3, 13}, {13, 23}});
  EdgeDualGraph dg = build_edge_dual_graph(g);
  SceneLayout s = SceneLayout::build(g, &dg);
  Tape t;
  Matrix z = mat({{1, 2}, {3, 4}});
  Matrix pooled = t.value(pool_dual_to_edge(s, t.constant(z)));
  EXPECT_EQ(pooled.row(0), z.row(0));
  EXPECT_EQ(pooled.row(1), z.row(0));
  EXPECT_EQ(pooled.row(2), z.row(1));
  EXPECT_EQ(pooled.row(3), z.row(1));
  EXPECT_TRUE(t.value(pool_dual_to_edge(s, t.constant(Matrix::Zero(2, 2)))).isZero());

  auto k4 = prepare_scene(random_scene(4, 2, 18));
  std::mt19937_64 rng(19);
  Matrix zk(k4.layout.num_incidences(), 3);
  for (Index i = 0; i < zk.size(); ++i) zk.data()[i] = std::normal_distribution<double>(0, 1)(rng);
  Tape t2;
  Matrix pk = t2.value(pool_dual_to_edge(k4.layout, t2.constant(zk)));
  for (std::size_t e = 0; e < k4.graph.num_edges(); ++e) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(3);
    int count = 0;
    for (Index k = 0; k < zk.rows(); ++k)
      if (k4.layout.inc_from[static_cast<std::size_t>(k)] == static_cast<Index>(e)) mean += zk.row(k), ++count;
    ASSERT_EQ(count, 4);
    mean /= 4.0;
    EXPECT_LT((pk.row(static_cast<Index>(2 * e)) - mean).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(pk.row(static_cast<Index>(2 * e)), pk.row(static_cast<Index>(2 * e + 1)));
  }
}

/************ aggregation, heads, loss ********************/

TEST(Aggregate, ModesAndWidths) {
  Tape t;
  Var zero = t.constant(Matrix::Zero(4, 3));
  EXPECT_TRUE(t.value(aggregate_features(zero, zero, Aggregation::concat, t.constant(Matrix::Zero(6, 3)),
                                         t.constant(Matrix::Zero(1, 3))))
                  .isZero());
  EXPECT_THROW(aggregate_features(zero, zero, Aggregation::concat, t.constant(Matrix::Zero(3, 3)),
                                  t.constant(Matrix::Zero(1, 3))),
               Error);
  std::mt19937_64 rng(20);
  Matrix e(4, 3), w(3, 3), b(1, 3);
  for (Index i = 0; i < e.size(); ++i) e.data()[i] = std::normal_distribution<double>(0, 1)(rng);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = std::normal_distribution<double>(0, 1)(rng);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = std::normal_distribution<double>(0, 1)(rng);
  Var ev = t.constant(e);
  Matrix mean = t.value(aggregate_features(ev, ev, Aggregation::mean, t.constant(w), t.constant(b)));
  Matrix alone = t.value(aggregate_features(ev, std::nullopt, Aggregation::mean, t.constant(w), t.constant(b)));
  EXPECT_LT((mean - alone).cwiseAbs().maxCoeff(), 1e-15);

  DualMPNNConfig c = small_config(5);
  EXPECT_EQ(c.fc_input_width(), 10);
  c.aggregation = Aggregation::mean;
  EXPECT_EQ(c.fc_input_width(), 5);
  c.aggregation = Aggregation::concat;
  c.relation_branch = false;
  EXPECT_EQ(c.fc_input_width(), 5);
  EXPECT_THROW(aggregation_from_string("max"), Error);
  EXPECT_EQ(aggregation_from_string("multiple"), Aggregation::multiply);
}

TEST(Predict, UniformAndReferenceRow) {
  Tape t;
  auto p = predict(t.constant(Matrix::Ones(2, 3)), t.constant(Matrix::Ones(4, 2)), t.constant(Matrix::Zero(3, 5)),
                   t.constant(Matrix::Zero(2, 4)));
  EXPECT_LT((t.value(p.objects).array() - 0.2).abs().maxCoeff(), 1e-15);
  EXPECT_LT((t.value(p.relations).array() - 0.25).abs().maxCoeff(), 1e-15);
  auto q = predict(t.constant(mat({{std::log(3.0), 0}})), t.constant(mat({{std::log(3.0), 0}})),
                   t.constant(Matrix::Identity(2, 2)), t.constant(Matrix::Identity(2, 2)));
  EXPECT_NEAR(t.value(q.relations)(0, 0), 0.75, 1e-15);
  EXPECT_NEAR(t.value(q.objects).row(0).sum(), 1.0, 1e-15);
  EXPECT_THROW(predict(t.constant(Matrix::Ones(2, 3)), t.constant(Matrix::Ones(4, 2)),
                       t.constant(Matrix::Zero(2, 5)), t.constant(Matrix::Zero(2, 4))),
               Error);
}

TEST(JointLoss, ReferenceValues) {
  Tape t;
  auto perfect = joint_loss(t.constant(mat({{1, 0}, {0, 1}})), t.constant(mat({{0, 1, 0}})), {0, 1}, {1});
  EXPECT_LE(t.scalar(perfect.total), 1e-10);
  auto uniform = joint_loss(t.constant(Matrix::Constant(3, 4, 0.25)), t.constant(Matrix::Constant(2, 6, 1.0 / 6)),
                            {0, 1, 3}, {0, 5});
  EXPECT_NEAR(t.scalar(uniform.total), std::log(4.0) + std::log(6.0), 1e-12);
  auto hand = joint_loss(t.constant(mat({{0.75, 0.25}})), t.constant(mat({{0.5, 0.5}})), {0}, {1});
  EXPECT_NEAR(t.scalar(hand.object), -std::log(0.75), 1e-15);
  EXPECT_NEAR(t.scalar(hand.relation), std::log(2.0), 1e-15);
  EXPECT_NEAR(t.scalar(hand.total), 0.98082925301172350, 1e-12);
  EXPECT_THROW(joint_loss(t.constant(mat({{1, 0}})), t.constant(mat({{1, 0}})), {2}, {0}), Error);
}

/************ forward *************************************/

TEST(Forward, ZeroWeightsGiveUniformPredictions) {
  auto c = small_config(6, 1);
  auto s = prepare_scene(random_scene(3, 6, 21));
  ParamStore ps = make_params(c, 1);
  zero_all(ps);
  Tape t;
  auto st = forward(t, ps, c, s.layout);
  auto l = joint_loss(st.predictions.objects, st.predictions.relations, object_targets(s), relation_targets(s, 1, 4));
  EXPECT_NEAR(t.scalar(l.total), std::log(3.0) + std::log(4.0), 1e-12);
}

TEST(Forward, ResidualIdentityWithZeroBranchWeights) {
  auto c = small_config(5, 3);
  auto s = prepare_scene(random_scene(4, 5, 22));
  ParamStore ps = make_params(c, 2);
  for (const auto& name : {param::obj_w_u, param::obj_w_v, param::rel_w_i, param::rel_w_j}) ps.at(name).value().setZero();
  Tape t;
  auto st = forward(t, ps, c, s.layout);
  ASSERT_EQ(st.e.size(), 4u);
  ASSERT_EQ(st.z.size(), 4u);
  EXPECT_EQ(t.value(st.e.back()), t.value(st.e.front()));
  EXPECT_EQ(t.value(st.z.back()), t.value(st.z.front()));
}

TEST(Forward, ShapesAndDistributions) {
  for (int d : {4, 8}) {
    auto c = small_config(d);
    c.d_o = 6;
    auto s = prepare_scene(random_scene(5, 6, 23));
    ParamStore ps = make_params(c, 3);
    Tape t;
    auto st = forward(t, ps, c, s.layout);
    EXPECT_EQ(t.value(st.p_r).rows(), 20);
    EXPECT_EQ(t.value(st.p_r).cols(), d);
    EXPECT_EQ(t.value(st.z.back()).rows(), 60);
    const Matrix& rel = t.value(st.predictions.relations);
    const Matrix& obj = t.value(st.predictions.objects);
    for (Index r = 0; r < rel.rows(); ++r) EXPECT_NEAR(rel.row(r).sum(), 1.0, 1e-9);
    for (Index r = 0; r < obj.rows(); ++r) EXPECT_NEAR(obj.row(r).sum(), 1.0, 1e-9);
  }
}

TEST(Forward, ConfigErrors) {
  auto c = small_config();
  c.object_branch = c.relation_branch = false;
  EXPECT_THROW(c.validate(), Error);
  auto ok = small_config();
  auto s = prepare_scene(random_scene(3, 5, 24));
  ParamStore ps = make_params(ok, 0);
  Tape t;
  EXPECT_THROW(forward(t, ps, ok, s.layout), Error);  // d_o mismatch
}

TEST(Forward, PermutationEquivariance) {
  auto c = small_config(6);
  auto dets = random_scene(5, 6, 25);
  // relabel ids so the sorted node order is reversed
  auto relabeled = dets;
  for (auto& d : relabeled) d.id = 1000 - d.id;
  auto a = prepare_scene(dets), b = prepare_scene(relabeled);
  ParamStore ps = make_params(c, 4);
  auto ya = run_model(ps, c, a), yb = run_model(ps, c, b);
  auto map_node = [&](std::size_t i) { return b.graph.node_index(1000 - a.graph.nodes[i].id); };
  for (std::size_t i = 0; i < a.graph.num_nodes(); ++i)
    EXPECT_LT((ya.object_probs.row(static_cast<Index>(i)) - yb.object_probs.row(static_cast<Index>(map_node(i))))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-9);
  for (std::size_t e = 0; e < a.graph.num_edges(); ++e) {
    for (int dir = 0; dir < 2; ++dir) {
      std::size_t su = map_node(dir ? a.graph.edges[e].v : a.graph.edges[e].u);
      std::size_t so = map_node(dir ? a.graph.edges[e].u : a.graph.edges[e].v);
      Index row = -1;
      for (std::size_t f = 0; f < b.graph.num_edges(); ++f) {
        if (b.graph.edges[f].u == su && b.graph.edges[f].v == so) row = static_cast<Index>(2 * f);
        if (b.graph.edges[f].v == su && b.graph.edges[f].u == so) row = static_cast<Index>(2 * f + 1);
      }
      ASSERT_GE(row, 0);
      EXPECT_LT((ya.relation_probs.row(static_cast<Index>(2 * e + static_cast<std::size_t>(dir))) -
                 yb.relation_probs.row(row))
                    .cwiseAbs()
                    .maxCoeff(),
                1e-9);
    }
  }
}

TEST(Forward, BranchWiringTouchesOnlyItsWeights) {
  const std::set<std::string> object_weights{param::geo_w, param::geo_b, param::obj_w_u, param::obj_w_v, param::obj_att};
  const std::set<std::string> relation_weights{param::rel_w_o2e, param::rel_w_i, param::rel_w_j, param::rel_att};
  const std::set<std::string> shared{param::agg_w, param::agg_b, param::cls_obj, param::cls_rel};
  auto s = prepare_scene(random_scene(4, 8, 26));
  for (auto [obj, rel] : {std::pair{true, false}, std::pair{false, true}, std::pair{true, true}}) {
    auto c = small_config();
    c.object_branch = obj;
    c.relation_branch = rel;
    ParamStore ps = make_params(c, 5);
    Tape t;
    forward(t, ps, c, s.layout);
    std::set<std::string> want = shared;
    if (obj) want.insert(object_weights.begin(), object_weights.end());
    if (rel) want.insert(relation_weights.begin(), relation_weights.end());
    EXPECT_EQ(t.used_params(), want);
    std::set<std::string> owned;
    for (const auto& [name, _] : ps) owned.insert(name);
    EXPECT_EQ(owned, want);
  }
}

TEST(Forward, GradientCheckAllParameters) {
  for (auto mode : {Aggregation::concat, Aggregation::mean, Aggregation::multiply}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      auto c = small_config(8, 2);
      c.aggregation = mode;
      auto s = prepare_scene(random_scene(3, 8, 100 + seed));
      auto obj = object_targets(s);
      auto rel = relation_targets(s, seed, c.n_rel_classes);
      ParamStore ps = make_params(c, seed);
      auto loss = [&](bool backprop) {
        Tape t;
        auto st = forward(t, ps, c, s.layout);
        auto l = joint_loss(st.predictions.objects, st.predictions.relations, obj, rel);
        if (backprop) t.backward(l.total);
        return t.scalar(l.total);
      };
      loss(true);
      auto check = oracle::check_gradients(ps, [&] { return loss(false); });
      EXPECT_LE(check.worst_rel_error, 1e-4) << to_string(mode) << " seed " << seed << " at " << check.worst_param;
    }
  }
}

TEST(Forward, GoldenOutputHash) {
  auto c = small_config(8, 2);
  auto s = prepare_scene(random_scene(3, 8, 42));
  ParamStore ps = make_params(c, 42);
  auto y = run_model(ps, c, s);
  std::string text;
  char buf[32];
  for (const Matrix* m : {&y.object_probs, &y.relation_probs})
    for (Index i = 0; i < m->size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.12e;", m->data()[i]);
      text += buf;
    }
  EXPECT_EQ(fnv1a(text), 0xC11DDCEFB7D77DD0ULL) << std::hex << fnv1a(text);
}
