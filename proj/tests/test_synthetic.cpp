#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "edgesgg/hash.hpp"
#include "edgesgg/metrics.hpp"
#include "edgesgg/synthetic.hpp"

using namespace edgesgg;
namespace fs = std::filesystem;

namespace {

WorldSpec spec_with(double zipf, std::uint64_t seed = 1) {
  WorldSpec s;
  s.zipf_exponent = zipf;
  s.seed = seed;
  return s;
}

// Draws scenes until at least `target` triplets exist; returns per-predicate counts.
std::vector<std::size_t> predicate_histogram(const World& w, std::size_t target) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(w.spec.n_rel_classes), 0);
  std::size_t total = 0;
  for (std::uint64_t i = 0; total < target; ++i) {
    auto scene = sample_scene(w, 8, i);
    for (const auto& t : scene.triplets) ++counts[static_cast<std::size_t>(t.predicate)], ++total;
  }
  return counts;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("edgesgg_test_" + name); }

// Geometry re-derived from the box coordinates without the library predicates.
bool holds(Geometry g, const Box& s, const Box& o) {
  const double iw = std::min(s.x2, o.x2) - std::max(s.x1, o.x1);
  const double ih = std::min(s.y2, o.y2) - std::max(s.y1, o.y1);
  const bool touch = iw > 0 && ih > 0;
  auto inside = [](const Box& a, const Box& b) { return a.x1 <= b.x1 && a.y1 <= b.y1 && a.x2 >= b.x2 && a.y2 >= b.y2; };
  auto above = [](const Box& a, const Box& b) {
    return a.y2 <= b.y1 && std::min(a.x2, b.x2) > std::max(a.x1, b.x1);
  };
  switch (g) {
    case Geometry::contains: return inside(s, o);
    case Geometry::overlap: return touch && !inside(s, o) && !inside(o, s);
    case Geometry::above: return !touch && above(s, o);
    case Geometry::near: {
      const double dx = (o.x1 + o.x2 - s.x1 - s.x2) / 2, dy = (o.y1 + o.y2 - s.y1 - s.y2) / 2;
      return !touch && !above(s, o) && !above(o, s) && std::sqrt(dx * dx + dy * dy) < 0.35;
    }
  }
  return false;
}

}  // namespace

/************ world ***************************************/

TEST(World, SameSeedSamePrototypes) {
  auto a = generate_world(spec_with(1.0, 5));
  auto b = generate_world(spec_with(1.0, 5));
  EXPECT_EQ(a.prototypes, b.prototypes);
  EXPECT_EQ(a.rulebook.size(), b.rulebook.size());
  auto c = generate_world(spec_with(1.0, 6));
  EXPECT_NE(a.prototypes, c.prototypes);
}

TEST(World, TwoClassesSmallDimension) {
  WorldSpec s;
  s.n_obj_classes = 2;
  s.d_o = 8;
  s.n_rel_classes = 3;
  s.rules_per_predicate = 1;
  auto w = generate_world(s);
  ASSERT_EQ(w.prototypes.size(), 2u);
  for (const auto& p : w.prototypes) {
    double n = 0.0;
    for (double x : p) n += x * x;
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(World, PrototypeCosineBoundOverSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto w = generate_world(spec_with(1.0, seed));
    for (std::size_t i = 0; i < w.prototypes.size(); ++i)
      for (std::size_t j = i + 1; j < w.prototypes.size(); ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < w.prototypes[i].size(); ++k) dot += w.prototypes[i][k] * w.prototypes[j][k];
        EXPECT_LT(dot, 0.9) << "seed " << seed;
      }
  }
}

TEST(World, Errors) {
  WorldSpec s;
  s.n_obj_classes = 1;
  EXPECT_THROW(generate_world(s), Error);
  // 40 unit vectors in one dimension cannot be separated
  WorldSpec crowded;
  crowded.d_o = 1;
  crowded.n_obj_classes = 40;
  EXPECT_THROW(generate_world(crowded), Error);
  WorldSpec bad_rule;
  bad_rule.n_rel_classes = 2;
  bad_rule.rulebook = {{0, 1, 5, Geometry::above}};
  EXPECT_THROW(generate_world(bad_rule), Error);
  WorldSpec mirrored;
  mirrored.n_rel_classes = 2;
  mirrored.rulebook = {{0, 1, 1, Geometry::near}, {1, 0, 1, Geometry::near}};
  EXPECT_THROW(generate_world(mirrored), Error);
}

TEST(World, ZipfProbabilities) {
  auto w = generate_world(spec_with(1.0));
  EXPECT_EQ(w.predicate_probs[0], 0.0);
  double h = 0.0;
  for (int k = 1; k <= 9; ++k) h += 1.0 / k;
  for (int k = 1; k <= 9; ++k) EXPECT_NEAR(w.predicate_probs[static_cast<std::size_t>(k)], 1.0 / k / h, 1e-15);
}

/************ scenes **************************************/

TEST(Scenes, SeedDeterminism) {
  auto w = generate_world(spec_with(1.0));
  EXPECT_EQ(sample_scene(w, 6, 11), sample_scene(w, 6, 11));
  EXPECT_NE(sample_scene(w, 6, 11), sample_scene(w, 6, 12));
  EXPECT_EQ(generate_dataset(w, {20, 5, 5}, 3), generate_dataset(w, {20, 5, 5}, 3));
  EXPECT_THROW(sample_scene(w, 1, 0), Error);
}

TEST(Scenes, BoxesAndTripletsAreValid) {
  auto w = generate_world(spec_with(1.0));
  for (std::uint64_t i = 0; i < 300; ++i) {
    auto s = sample_scene(w, 2 + static_cast<int>(i % 7), i);
    EXPECT_EQ(s.detections.size(), 2 + i % 7);
    EXPECT_EQ(s.triplets.size(), (2 + i % 7) / 2);
    for (const auto& d : s.detections) {
      EXPECT_TRUE(d.box.x1 >= 0 && d.box.x1 < d.box.x2 && d.box.x2 <= 1);
      EXPECT_TRUE(d.box.y1 >= 0 && d.box.y1 < d.box.y2 && d.box.y2 <= 1);
      EXPECT_EQ(d.feature.size(), 32u);
    }
    std::set<Triplet> unique(s.triplets.begin(), s.triplets.end());
    EXPECT_EQ(unique.size(), s.triplets.size());
  }
}

TEST(Scenes, RulebookSoundness) {
  auto w = generate_world(spec_with(1.0, 9));
  for (std::uint64_t i = 0; i < 500; ++i) {
    auto s = sample_scene(w, 8, i);
    for (const auto& t : s.triplets) {
      const auto& a = s.detection(t.subject);
      const auto& b = s.detection(t.object);
      bool some_rule = false;
      for (const auto& r : w.rulebook)
        if (r.predicate == t.predicate && r.subject_class == a.label && r.object_class == b.label &&
            holds(r.geometry, a.box, b.box))
          some_rule = true;
      EXPECT_TRUE(some_rule) << "scene " << i;
    }
    // and no unlabeled ordered pair satisfies any rule
    for (const auto& a : s.detections)
      for (const auto& b : s.detections) {
        if (a.id == b.id) continue;
        bool labeled = std::any_of(s.triplets.begin(), s.triplets.end(),
                                   [&](const Triplet& t) { return t.subject == a.id && t.object == b.id; });
        if (labeled) continue;
        for (const auto& r : w.rulebook)
          EXPECT_FALSE(r.subject_class == a.label && r.object_class == b.label && holds(r.geometry, a.box, b.box));
      }
  }
}

TEST(Scenes, UniformPredicatesWithinThreeSigma) {
  auto w = generate_world(spec_with(0.0, 2));
  auto counts = predicate_histogram(w, 10000);
  std::size_t n = 0;
  for (auto c : counts) n += c;
  const double p = 1.0 / w.n_predicates();
  const double sigma = std::sqrt(static_cast<double>(n) * p * (1 - p));
  EXPECT_EQ(counts[0], 0u);
  for (int k = 1; k <= w.n_predicates(); ++k)
    EXPECT_LE(std::abs(static_cast<double>(counts[static_cast<std::size_t>(k)]) - static_cast<double>(n) * p), 3 * sigma)
        << "predicate " << k;
}

TEST(Scenes, ZipfHeadBeatsTail) {
  auto w = generate_world(spec_with(1.0, 2));
  auto counts = predicate_histogram(w, 10000);
  EXPECT_GT(counts[1], counts.back());
  // the top 20% of predicates (rounded up) carry more than half the triplets
  std::vector<std::size_t> sorted(counts.begin() + 1, counts.end());
  std::sort(sorted.rbegin(), sorted.rend());
  const std::size_t top = (sorted.size() + 4) / 5;
  std::size_t head = 0, all = 0;
  for (std::size_t k = 0; k < sorted.size(); ++k) (k < top ? head : all) += sorted[k];
  all += head;
  EXPECT_GT(static_cast<double>(head) / static_cast<double>(all), 0.5);
}

/************ detector ************************************/

TEST(Detector, ZeroNoiseIsVerbatim) {
  auto w = generate_world(spec_with(1.0));
  auto s = sample_scene(w, 7, 4);
  EXPECT_EQ(simulate_detector(w, s, {}, 1), s.detections);
}

TEST(Detector, CertainMissDropsEverything) {
  auto w = generate_world(spec_with(1.0));
  auto s = sample_scene(w, 7, 4);
  EXPECT_TRUE(simulate_detector(w, s, {0.0, 0.0, 1.0}, 1).empty());
  EXPECT_THROW(simulate_detector(w, s, {0.0, 1.5, 0.0}, 1), Error);
  EXPECT_THROW(simulate_detector(w, s, {-0.1, 0.0, 0.0}, 1), Error);
}

TEST(Detector, JitterKeepsMeanIouHigh) {
  auto w = generate_world(spec_with(1.0));
  double sum = 0.0;
  std::size_t n = 0;
  for (std::uint64_t i = 0; n < 1000; ++i) {
    auto s = sample_scene(w, 8, i);
    auto d = simulate_detector(w, s, {0.02, 0.0, 0.0}, i);
    ASSERT_EQ(d.size(), s.detections.size());
    for (std::size_t k = 0; k < d.size() && n < 1000; ++k, ++n) {
      EXPECT_TRUE(d[k].box.x1 >= 0 && d[k].box.x1 < d[k].box.x2 && d[k].box.x2 <= 1);
      sum += iou(s.detections[k].box, d[k].box);
    }
  }
  const double mean = sum / 1000.0;
  EXPECT_GE(mean, 0.7);
  EXPECT_LE(mean, 1.0);
}

TEST(Detector, LabelFlipChangesClassAndFeature) {
  auto w = generate_world(spec_with(1.0));
  auto s = sample_scene(w, 8, 3);
  auto d = simulate_detector(w, s, {0.0, 1.0, 0.0}, 2);
  ASSERT_EQ(d.size(), s.detections.size());
  for (std::size_t k = 0; k < d.size(); ++k) {
    EXPECT_NE(d[k].label, s.detections[k].label);
    EXPECT_NE(d[k].feature, s.detections[k].feature);
    EXPECT_EQ(d[k].box, s.detections[k].box);
  }
}

/************ dataset files *******************************/

TEST(DatasetIo, RoundTrip) {
  auto spec = spec_with(1.0, 4);
  auto w = generate_world(spec);
  auto samples = generate_dataset(w, {10, 2, 3}, 1);
  auto path = temp_path("roundtrip.jsonl");
  write_dataset(path.string(), spec, samples);
  auto ds = read_dataset(path.string());
  EXPECT_EQ(ds.spec, spec);
  EXPECT_EQ(ds.samples, samples);
  EXPECT_EQ(select_split(ds.samples, Split::test).size(), 3u);
  fs::remove(path);
}

TEST(DatasetIo, EmptyDatasetRoundTrips) {
  auto path = temp_path("empty.jsonl");
  write_dataset(path.string(), WorldSpec{}, {});
  auto ds = read_dataset(path.string());
  EXPECT_TRUE(ds.samples.empty());
  EXPECT_EQ(ds.spec, WorldSpec{});
  fs::remove(path);
}

TEST(DatasetIo, RejectsBadFiles) {
  auto expect_data_error = [](const std::string& text) {
    auto path = temp_path("bad.jsonl");
    std::ofstream(path) << text;
    try {
      read_dataset(path.string());
      ADD_FAILURE() << "accepted: " << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::data) << e.what();
    }
    fs::remove(path);
  };
  expect_data_error("");
  expect_data_error("{\"version\":2,\"spec\":{}}\n");
  expect_data_error("{\"version\":1,\"spec\":{}}\n{not json\n");
  expect_data_error("{\"version\":1,\"spec\":{}}\n{\"split\":\"train\",\"detections\":[],\"triplets\":[[0,1,1]]}\n");
  EXPECT_THROW(read_dataset(temp_path("missing.jsonl").string()), Error);
}

TEST(DatasetIo, ThousandScenesRereadHashStable) {
  auto spec = spec_with(1.0, 8);
  auto w = generate_world(spec);
  auto a = temp_path("big_a.jsonl"), b = temp_path("big_b.jsonl");
  write_dataset(a.string(), spec, generate_dataset(w, {1000, 0, 0}, 2));
  auto reread = read_dataset(a.string());
  write_dataset(b.string(), reread.spec, reread.samples);
  EXPECT_EQ(fnv1a(slurp(a)), fnv1a(slurp(b)));
  write_dataset(b.string(), spec, generate_dataset(generate_world(spec), {1000, 0, 0}, 2));
  EXPECT_EQ(fnv1a(slurp(a)), fnv1a(slurp(b)));
  fs::remove(a);
  fs::remove(b);
}
