#pragma once

// Scene-graph data model: detections, the candidate (primitive) relation graph
// and its edge dual, where every relation becomes a node and two relations are
// linked when they share an object.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "edgesgg/error.hpp"

namespace edgesgg {

using json = nlohmann::json;

/************ boxes ***************************************/

struct Box {
  double x1{0.0};
  double y1{0.0};
  double x2{1.0};
  double y2{1.0};

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return width() * height(); }
  double cx() const noexcept { return 0.5 * (x1 + x2); }
  double cy() const noexcept { return 0.5 * (y1 + y2); }

  bool operator==(const Box&) const = default;
};

inline bool is_valid(const Box& b) noexcept {
  auto in_unit = [](double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; };
  return in_unit(b.x1) && in_unit(b.y1) && in_unit(b.x2) && in_unit(b.y2) && b.x1 < b.x2 &&
         b.y1 < b.y2;
}

inline Box union_box(const Box& a, const Box& b) noexcept {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
          std::max(a.y2, b.y2)};
}

inline double intersection_area(const Box& a, const Box& b) noexcept {
  double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

/************ detections **********************************/

struct Detection {
  int id{0};
  std::vector<double> feature;
  Box box;
  std::vector<double> label_scores;  // empty when the label is given outright
  int label{0};

  bool operator==(const Detection&) const = default;
};

inline void validate(const Detection& d) {
  require(is_valid(d.box), ErrorKind::data, "invalid box for detection " + std::to_string(d.id));
  if (!d.label_scores.empty()) {
    auto best = std::max_element(d.label_scores.begin(), d.label_scores.end());
    require(d.label == static_cast<int>(best - d.label_scores.begin()), ErrorKind::data,
            "label does not match argmax of label scores for detection " + std::to_string(d.id));
  }
  require(d.label >= 0, ErrorKind::data, "negative label");
}

/************ primitive graph *****************************/

// subject box (4), object box (4), union box (4), center offset (2), log size ratios (2)
inline constexpr std::size_t kGeometryDim = 16;
using GeometryDescriptor = std::array<double, kGeometryDim>;

inline GeometryDescriptor geometric_descriptor(const Box& subject, const Box& object) {
  Box un = union_box(subject, object);
  return {subject.x1,
          subject.y1,
          subject.x2,
          subject.y2,
          object.x1,
          object.y1,
          object.x2,
          object.y2,
          un.x1,
          un.y1,
          un.x2,
          un.y2,
          object.cx() - subject.cx(),
          object.cy() - subject.cy(),
          std::log(subject.width() / object.width()),
          std::log(subject.height() / object.height())};
}

// Unordered candidate relation between node indices u < v.
struct Edge {
  std::size_t u{0};
  std::size_t v{0};

  bool operator==(const Edge&) const = default;
  auto operator<=>(const Edge&) const = default;
};

struct PrimitiveGraph {
  std::vector<Detection> nodes;  // sorted by id; node index = position
  std::vector<Edge> edges;       // lexicographic by (u, v)
  // Directional geometry per edge: forward is <u,v>, backward is <v,u>.
  std::vector<GeometryDescriptor> forward_features;
  std::vector<GeometryDescriptor> backward_features;

  std::size_t num_nodes() const noexcept { return nodes.size(); }
  std::size_t num_edges() const noexcept { return edges.size(); }
  std::size_t feature_dim() const noexcept { return nodes.empty() ? 0 : nodes.front().feature.size(); }

  std::size_t node_index(int id) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), id,
                               [](const Detection& d, int key) { return d.id < key; });
    require(it != nodes.end() && it->id == id, ErrorKind::data,
            "unknown node id " + std::to_string(id));
    return static_cast<std::size_t>(it - nodes.begin());
  }
};

namespace detail {

inline std::vector<Detection> sorted_detections(std::vector<Detection> detections) {
  require(!detections.empty(), ErrorKind::data, "empty scene");
  const std::size_t dim = detections.front().feature.size();
  for (const auto& d : detections) {
    require(d.feature.size() == dim, ErrorKind::data, "dimension mismatch");
    validate(d);
  }
  std::sort(detections.begin(), detections.end(),
            [](const Detection& a, const Detection& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < detections.size(); ++i)
    require(detections[i - 1].id != detections[i].id, ErrorKind::data,
            "duplicate detection id " + std::to_string(detections[i].id));
  return detections;
}

inline void attach_geometry(PrimitiveGraph& g) {
  g.forward_features.clear();
  g.backward_features.clear();
  g.forward_features.reserve(g.edges.size());
  g.backward_features.reserve(g.edges.size());
  for (const Edge& e : g.edges) {
    g.forward_features.push_back(geometric_descriptor(g.nodes[e.u].box, g.nodes[e.v].box));
    g.backward_features.push_back(geometric_descriptor(g.nodes[e.v].box, g.nodes[e.u].box));
  }
}

}  // namespace detail

// Complete candidate graph: all n(n-1)/2 unordered pairs.
inline PrimitiveGraph build_primitive_graph(std::vector<Detection> detections) {
  PrimitiveGraph g;
  g.nodes = detail::sorted_detections(std::move(detections));
  const std::size_t n = g.nodes.size();
  g.edges.reserve(n * (n - 1) / 2);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v) g.edges.push_back({u, v});
  detail::attach_geometry(g);
  return g;
}

// Candidate graph restricted to the given (id, id) pairs.
inline PrimitiveGraph build_primitive_graph(std::vector<Detection> detections,
                                            const std::vector<std::pair<int, int>>& pairs) {
  PrimitiveGraph g;
  g.nodes = detail::sorted_detections(std::move(detections));
  std::set<Edge> seen;
  for (auto [a, b] : pairs) {
    require(a != b, ErrorKind::data, "self-loop on node " + std::to_string(a));
    std::size_t ia = g.node_index(a);
    std::size_t ib = g.node_index(b);
    Edge e{std::min(ia, ib), std::max(ia, ib)};
    require(seen.insert(e).second, ErrorKind::data,
            "duplicate pair (" + std::to_string(a) + ", " + std::to_string(b) + ")");
  }
  g.edges.assign(seen.begin(), seen.end());
  detail::attach_geometry(g);
  return g;
}

/************ edge dual graph *****************************/

// Unordered dual edge between primitive edges i < j meeting at `shared` (node index).
struct DualEdge {
  std::size_t i{0};
  std::size_t j{0};
  std::size_t shared{0};

  bool operator==(const DualEdge&) const = default;
};

// Directional view of a dual edge: relation `from` looking at adjacent relation `to`.
struct Incidence {
  std::size_t from{0};
  std::size_t to{0};
  std::size_t shared{0};
  std::size_t reverse{0};  // index of the (to, from) incidence
};

struct DualNeighbor {
  std::size_t edge{0};
  std::size_t shared{0};

  bool operator==(const DualNeighbor&) const = default;
};

struct EdgeDualGraph {
  std::vector<std::size_t> dual_nodes;  // primitive edge ids
  std::vector<DualEdge> dual_edges;     // each unordered pair once
  // Both directions of every dual edge, grouped by `from` and sorted by `to`.
  std::vector<Incidence> incidences;
  std::vector<std::size_t> offsets;  // incidences of edge e: [offsets[e], offsets[e+1])

  std::size_t num_dual_nodes() const noexcept { return dual_nodes.size(); }
  std::size_t num_dual_edges() const noexcept { return dual_edges.size(); }
  std::size_t num_incidences() const noexcept { return incidences.size(); }
};

inline EdgeDualGraph build_edge_dual_graph(const PrimitiveGraph& g) {
  require(g.num_edges() > 0, ErrorKind::data, "no relations to dualize");
  EdgeDualGraph dg;
  const std::size_t m = g.num_edges();
  dg.dual_nodes.resize(m);
  for (std::size_t e = 0; e < m; ++e) dg.dual_nodes[e] = e;

  std::vector<std::vector<std::size_t>> incident(g.num_nodes());
  for (std::size_t e = 0; e < m; ++e) {
    incident[g.edges[e].u].push_back(e);
    incident[g.edges[e].v].push_back(e);
  }
  for (std::size_t node = 0; node < incident.size(); ++node) {
    const auto& list = incident[node];
    for (std::size_t a = 0; a < list.size(); ++a)
      for (std::size_t b = a + 1; b < list.size(); ++b)
        dg.dual_edges.push_back({list[a], list[b], node});
  }
  std::sort(dg.dual_edges.begin(), dg.dual_edges.end(), [](const DualEdge& a, const DualEdge& b) {
    return std::tie(a.i, a.j) < std::tie(b.i, b.j);
  });
  for (std::size_t k = 1; k < dg.dual_edges.size(); ++k) {
    const auto& p = dg.dual_edges[k - 1];
    const auto& q = dg.dual_edges[k];
    require(!(p.i == q.i && p.j == q.j), ErrorKind::data,
            "relations share more than one object (multigraph)");
  }

  std::vector<std::vector<DualNeighbor>> adjacency(m);
  for (const auto& de : dg.dual_edges) {
    adjacency[de.i].push_back({de.j, de.shared});
    adjacency[de.j].push_back({de.i, de.shared});
  }
  dg.offsets.assign(m + 1, 0);
  for (std::size_t e = 0; e < m; ++e) {
    std::sort(adjacency[e].begin(), adjacency[e].end(),
              [](const DualNeighbor& a, const DualNeighbor& b) { return a.edge < b.edge; });
    dg.offsets[e + 1] = dg.offsets[e] + adjacency[e].size();
  }
  dg.incidences.reserve(dg.offsets[m]);
  for (std::size_t e = 0; e < m; ++e)
    for (const auto& nb : adjacency[e]) dg.incidences.push_back({e, nb.edge, nb.shared, 0});

  // Neighbor lists are sorted, so the reverse incidence is found by binary search.
  for (auto& inc : dg.incidences) {
    auto first = dg.incidences.begin() + static_cast<std::ptrdiff_t>(dg.offsets[inc.to]);
    auto last = dg.incidences.begin() + static_cast<std::ptrdiff_t>(dg.offsets[inc.to + 1]);
    auto it = std::lower_bound(first, last, inc.from,
                               [](const Incidence& x, std::size_t key) { return x.to < key; });
    inc.reverse = static_cast<std::size_t>(it - dg.incidences.begin());
  }
  return dg;
}

inline std::vector<DualNeighbor> dual_neighborhood(const EdgeDualGraph& dg, std::size_t edge_id) {
  require(edge_id < dg.num_dual_nodes(), ErrorKind::data,
          "unknown edge id " + std::to_string(edge_id));
  std::vector<DualNeighbor> out;
  for (std::size_t k = dg.offsets[edge_id]; k < dg.offsets[edge_id + 1]; ++k)
    out.push_back({dg.incidences[k].to, dg.incidences[k].shared});
  return out;
}

// (dual node count, dual edge count) of the complete graph on n nodes.
inline std::pair<std::size_t, std::size_t> validate_dual_counts(long long n_nodes) {
  require(n_nodes >= 2, ErrorKind::usage, "need at least 2 nodes");
  const auto n = static_cast<std::size_t>(n_nodes);
  const std::size_t edges = n * (n - 1) / 2;
  return {edges, edges * (n - 2)};
}

/************ JSON ****************************************/

struct SceneGraphFile {
  std::vector<Detection> detections;
  std::optional<std::vector<std::pair<int, int>>> pairs;  // absent means complete graph
};

inline SceneGraphFile scene_from_json(const json& j) {
  require(j.is_object() && j.contains("nodes") && j["nodes"].is_array(), ErrorKind::data,
          "scene JSON needs a \"nodes\" array");
  SceneGraphFile out;
  for (const auto& n : j["nodes"]) {
    Detection d;
    d.id = n.at("id").get<int>();
    auto b = n.at("box").get<std::vector<double>>();
    require(b.size() == 4, ErrorKind::data, "box needs 4 coordinates");
    d.box = {b[0], b[1], b[2], b[3]};
    d.label = n.value("label", 0);
    if (n.contains("feature")) d.feature = n["feature"].get<std::vector<double>>();
    out.detections.push_back(std::move(d));
  }
  if (j.contains("edges")) {
    std::vector<std::pair<int, int>> pairs;
    for (const auto& e : j["edges"]) pairs.emplace_back(e.at("u").get<int>(), e.at("v").get<int>());
    out.pairs = std::move(pairs);
  }
  return out;
}

inline json scene_to_json(const PrimitiveGraph& g) {
  json nodes = json::array();
  for (const auto& d : g.nodes)
    nodes.push_back({{"id", d.id}, {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}, {"label", d.label}});
  json edges = json::array();
  for (const auto& e : g.edges) edges.push_back({{"u", g.nodes[e.u].id}, {"v", g.nodes[e.v].id}});
  return {{"nodes", nodes}, {"edges", edges}};
}

inline json dual_to_json(const PrimitiveGraph& g, const EdgeDualGraph& dg) {
  json edges = json::array();
  for (const auto& de : dg.dual_edges)
    edges.push_back({{"i", de.i}, {"j", de.j}, {"shared", g.nodes[de.shared].id}});
  return {{"dual_nodes", dg.dual_nodes}, {"dual_edges", edges}};
}

}  // namespace edgesgg
