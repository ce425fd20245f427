#pragma once

// Scene-graph metrics: greedy triplet matching, Recall@K, mean Recall@K,
// support-weighted mAP over predicates, the weighted score, and per-predicate
// long-tail reporting.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgesgg/error.hpp"
#include "edgesgg/graph_core.hpp"

namespace edgesgg {

struct TripletPrediction {
  Box subject_box;
  Box object_box;
  int subject_label{0};
  int object_label{0};
  int predicate{1};
  double score{0.0};  // subject * object * predicate confidence
};

struct GroundTruthTriplet {
  Box subject_box;
  Box object_box;
  int subject_label{0};
  int object_label{0};
  int predicate{1};
};

enum class BoxMode {
  pair,       // subject and object boxes each need IoU >= threshold
  union_box  // the subject-object union box needs IoU >= threshold
};

inline double iou(const Box& a, const Box& b) {
  require(a.x1 < a.x2 && a.y1 < a.y2 && b.x1 < b.x2 && b.y1 < b.y2, ErrorKind::data, "degenerate box");
  const double inter = intersection_area(a, b);
  return inter / (a.area() + b.area() - inter);
}

inline constexpr double kDefaultIouThreshold = 0.5;

namespace detail {

// Overlap quality of pred against gt, or a negative value when they cannot match.
inline double match_quality(const TripletPrediction& p, const GroundTruthTriplet& g, double thresh, BoxMode mode) {
  if (p.predicate != g.predicate || p.subject_label != g.subject_label || p.object_label != g.object_label)
    return -1.0;
  if (mode == BoxMode::pair) {
    double q = std::min(iou(p.subject_box, g.subject_box), iou(p.object_box, g.object_box));
    return q >= thresh ? q : -1.0;
  }
  double q = iou(union_box(p.subject_box, p.object_box), union_box(g.subject_box, g.object_box));
  return q >= thresh ? q : -1.0;
}

}  // namespace detail

// Greedy top-down matching. Each prediction, in rank order, takes the unmatched
// eligible ground truth with the highest overlap (lowest index on ties).
// Returns the matched ground-truth index per prediction, or -1.
inline std::vector<int> match_triplets(std::span<const TripletPrediction> preds,
                                       std::span<const GroundTruthTriplet> gts,
                                       double iou_thresh = kDefaultIouThreshold, BoxMode mode = BoxMode::pair) {
  for (std::size_t k = 1; k < preds.size(); ++k)
    require(preds[k - 1].score >= preds[k].score, ErrorKind::usage, "predictions are not sorted by score");
  std::vector<int> out(preds.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t k = 0; k < preds.size(); ++k) {
    double best = -1.0;
    int best_idx = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      double q = detail::match_quality(preds[k], gts[g], iou_thresh, mode);
      if (q > best) {
        best = q;
        best_idx = static_cast<int>(g);
      }
    }
    if (best_idx >= 0) {
      taken[static_cast<std::size_t>(best_idx)] = true;
      out[k] = best_idx;
    }
  }
  return out;
}

// Matching outcome of one image, in rank order.
struct ImageMatches {
  std::vector<double> scores;
  std::vector<int> predicates;
  std::vector<int> matched_gt;  // -1 when unmatched
  std::vector<int> gt_predicates;
};

inline ImageMatches match_image(std::span<const TripletPrediction> preds, std::span<const GroundTruthTriplet> gts,
                                BoxMode mode, double iou_thresh = kDefaultIouThreshold) {
  ImageMatches m;
  m.matched_gt = match_triplets(preds, gts, iou_thresh, mode);
  for (const auto& p : preds) {
    m.scores.push_back(p.score);
    m.predicates.push_back(p.predicate);
  }
  for (const auto& g : gts) m.gt_predicates.push_back(g.predicate);
  return m;
}

namespace detail {

inline std::size_t total_gt(std::span<const ImageMatches> images) {
  std::size_t n = 0;
  for (const auto& im : images) n += im.gt_predicates.size();
  return n;
}

}  // namespace detail

// Fraction of ground truth matched within the top K, averaged over images that have ground truth.
inline double recall_at_k(std::span<const ImageMatches> images, int k) {
  require(k > 0, ErrorKind::usage, "K must be positive");
  require(detail::total_gt(images) > 0, ErrorKind::data, "empty ground truth");
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& im : images) {
    if (im.gt_predicates.empty()) continue;
    const std::size_t top = std::min(im.matched_gt.size(), static_cast<std::size_t>(k));
    std::size_t hits = 0;
    for (std::size_t r = 0; r < top; ++r) hits += im.matched_gt[r] >= 0 ? 1 : 0;
    total += static_cast<double>(hits) / static_cast<double>(im.gt_predicates.size());
    ++counted;
  }
  return total / static_cast<double>(counted);
}

struct ClassRecall {
  std::size_t support{0};
  std::size_t hits{0};
  double recall() const noexcept { return support ? static_cast<double>(hits) / static_cast<double>(support) : 0.0; }
};

// Split-level recall per predicate class (background excluded).
inline std::map<int, ClassRecall> per_predicate_recall(std::span<const ImageMatches> images, int k) {
  require(k > 0, ErrorKind::usage, "K must be positive");
  std::map<int, ClassRecall> out;
  for (const auto& im : images) {
    for (int p : im.gt_predicates)
      if (p != 0) ++out[p].support;
    const std::size_t top = std::min(im.matched_gt.size(), static_cast<std::size_t>(k));
    for (std::size_t r = 0; r < top; ++r) {
      int g = im.matched_gt[r];
      if (g >= 0) {
        int p = im.gt_predicates[static_cast<std::size_t>(g)];
        if (p != 0) ++out[p].hits;
      }
    }
  }
  return out;
}

// Unweighted mean of per-predicate recall over classes with ground truth.
inline double mean_recall_at_k(std::span<const ImageMatches> images, int k) {
  auto per = per_predicate_recall(images, k);
  require(!per.empty(), ErrorKind::data, "empty ground truth");
  double sum = 0.0;
  for (const auto& [_, c] : per) sum += c.recall();
  return sum / static_cast<double>(per.size());
}

// All-point interpolated AP per predicate, pooled over the split, weighted by support.
inline double wmap(std::span<const ImageMatches> images) {
  struct Ranked {
    double score;
    std::size_t image;
    std::size_t rank;
  };
  std::vector<Ranked> order;
  std::map<int, std::size_t> support;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t r = 0; r < images[i].scores.size(); ++r) order.push_back({images[i].scores[r], i, r});
    for (int p : images[i].gt_predicates) ++support[p];
  }
  require(!support.empty(), ErrorKind::data, "empty ground truth");
  std::stable_sort(order.begin(), order.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::size_t total = 0;
  double weighted = 0.0;
  for (const auto& [cls, n] : support) {
    std::vector<bool> tp;
    for (const auto& o : order) {
      const auto& im = images[o.image];
      if (im.predicates[o.rank] != cls) continue;
      tp.push_back(im.matched_gt[o.rank] >= 0);
    }
    // precision at every rank, then its running max from the tail
    std::vector<double> prec(tp.size());
    std::size_t hits = 0;
    for (std::size_t k = 0; k < tp.size(); ++k) {
      hits += tp[k] ? 1 : 0;
      prec[k] = static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    for (std::size_t k = tp.size(); k-- > 1;) prec[k - 1] = std::max(prec[k - 1], prec[k]);
    double area = 0.0;
    for (std::size_t k = 0; k < tp.size(); ++k)
      if (tp[k]) area += prec[k];
    const double ap = area / static_cast<double>(n);
    weighted += static_cast<double>(n) * ap;
    total += n;
  }
  return weighted / static_cast<double>(total);
}

inline double score_wtd(double r50, double wmap_rel, double wmap_phr) {
  return 0.2 * r50 + 0.4 * wmap_rel + 0.4 * wmap_phr;
}

/************ report **************************************/

enum class Stratum { head, body, tail };

inline std::string to_string(Stratum s) {
  switch (s) {
    case Stratum::head: return "head";
    case Stratum::body: return "body";
    case Stratum::tail: return "tail";
  }
  return "?";
}

struct MetricsReport {
  std::map<int, double> recall_at;
  std::map<int, double> mean_recall_at;
  double wmap_rel{0.0};
  double wmap_phr{0.0};
  double score_wtd{0.0};
  int per_class_k{50};
  std::map<int, ClassRecall> per_predicate;
};

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json rec = nlohmann::json::object();
  nlohmann::json mrec = nlohmann::json::object();
  for (const auto& [k, v] : r.recall_at) rec[std::to_string(k)] = v;
  for (const auto& [k, v] : r.mean_recall_at) mrec[std::to_string(k)] = v;
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [p, c] : r.per_predicate) per[std::to_string(p)] = {{"support", c.support}, {"recall", c.recall()}};
  return {{"recall_at", rec},           {"mean_recall_at", mrec},   {"wmap_rel", r.wmap_rel},
          {"wmap_phr", r.wmap_phr},     {"score_wtd", r.score_wtd}, {"per_class_k", r.per_class_k},
          {"per_predicate_recall", per}};
}

// `pair_matches` and `union_matches` describe the same ranked predictions.
inline MetricsReport build_report(std::span<const ImageMatches> pair_matches,
                                  std::span<const ImageMatches> union_matches, const std::vector<int>& ks,
                                  int per_class_k = 50) {
  require(std::find(ks.begin(), ks.end(), 50) != ks.end(), ErrorKind::usage, "K list must contain 50");
  MetricsReport r;
  for (int k : ks) {
    r.recall_at[k] = recall_at_k(pair_matches, k);
    r.mean_recall_at[k] = mean_recall_at_k(pair_matches, k);
  }
  r.wmap_rel = wmap(pair_matches);
  r.wmap_phr = wmap(union_matches);
  r.score_wtd = score_wtd(r.recall_at[50], r.wmap_rel, r.wmap_phr);
  r.per_class_k = per_class_k;
  r.per_predicate = per_predicate_recall(pair_matches, per_class_k);
  return r;
}

/************ long tail ***********************************/

// Predicates 1..n-1 ranked by training frequency (ties by class id), cut 30/40/30.
inline std::map<int, Stratum> assign_strata(const std::vector<std::size_t>& train_counts) {
  require(train_counts.size() >= 2, ErrorKind::usage, "need at least one predicate");
  std::vector<int> order;
  for (int p = 1; p < static_cast<int>(train_counts.size()); ++p) order.push_back(p);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return train_counts[static_cast<std::size_t>(a)] > train_counts[static_cast<std::size_t>(b)];
  });
  const auto m = static_cast<long>(order.size());
  const long head = std::lround(0.3 * static_cast<double>(m));
  const long tail = std::lround(0.3 * static_cast<double>(m));
  std::map<int, Stratum> out;
  for (long r = 0; r < m; ++r) {
    Stratum s = r < head ? Stratum::head : (r >= m - tail ? Stratum::tail : Stratum::body);
    out[order[static_cast<std::size_t>(r)]] = s;
  }
  return out;
}

struct LongtailRow {
  int rank{0};
  int predicate{0};
  std::size_t support{0};
  double recall{0.0};
  Stratum stratum{Stratum::head};
};

struct LongtailReport {
  std::vector<LongtailRow> rows;
  std::map<Stratum, double> stratum_recall;  // mean over predicates with support
};

inline LongtailReport longtail_report(const MetricsReport& report, const std::vector<std::size_t>& train_counts) {
  auto strata = assign_strata(train_counts);
  std::vector<int> order;
  for (const auto& [p, _] : strata) order.push_back(p);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return train_counts[static_cast<std::size_t>(a)] > train_counts[static_cast<std::size_t>(b)];
  });
  LongtailReport out;
  std::map<Stratum, std::pair<double, int>> acc;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const int p = order[r];
    LongtailRow row{static_cast<int>(r) + 1, p, 0, 0.0, strata[p]};
    if (auto it = report.per_predicate.find(p); it != report.per_predicate.end()) {
      row.support = it->second.support;
      row.recall = it->second.recall();
    }
    if (row.support > 0) {
      acc[row.stratum].first += row.recall;
      acc[row.stratum].second += 1;
    }
    out.rows.push_back(row);
  }
  for (const auto& [s, v] : acc) out.stratum_recall[s] = v.first / v.second;
  return out;
}

inline std::string longtail_csv(const LongtailReport& lt) {
  std::ostringstream os;
  os.precision(17);
  os << "rank,predicate,support,recall,stratum\n";
  for (const auto& r : lt.rows)
    os << r.rank << ',' << r.predicate << ',' << r.support << ',' << r.recall << ',' << to_string(r.stratum) << '\n';
  return os.str();
}

inline nlohmann::json to_json(const LongtailReport& lt) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : lt.rows)
    rows.push_back({{"rank", r.rank},
                    {"predicate", r.predicate},
                    {"support", r.support},
                    {"recall", r.recall},
                    {"stratum", to_string(r.stratum)}});
  nlohmann::json strata = nlohmann::json::object();
  for (const auto& [s, v] : lt.stratum_recall) strata[to_string(s)] = v;
  return {{"rows", rows}, {"stratum_recall", strata}};
}

}  // namespace edgesgg
