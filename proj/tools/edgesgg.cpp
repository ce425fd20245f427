// edgesgg: generate synthetic scenes, dualize scene graphs, train, evaluate and
// run the branch/aggregation ablations.
//
//   edgesgg gen --spec world.json --n 600 --test-fraction 0.2 --seed 1 --out data.jsonl
//   edgesgg transform --in scene.json --out dual.json
//   edgesgg train --config run.json --seed 0 --out runs/s0
//   edgesgg eval --ckpt runs/s0/checkpoint.json --data data.jsonl --subtask sggen --out runs/s0/eval
//   edgesgg ablate --config run.json --axis branches --jobs 4 --out runs/ablate
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "edgesgg/checkpoint.hpp"
#include "edgesgg/evaluate.hpp"
#include "edgesgg/graph_core.hpp"
#include "edgesgg/harness.hpp"
#include "edgesgg/synthetic.hpp"

namespace fs = std::filesystem;
using namespace edgesgg;

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("edgesgg");
  logger->set_pattern("[%H:%M:%S] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("EDGESGG_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    if (level != "info") spdlog::warn("EDGESGG_LOG='{}' is not one of error|info|debug; using info", level);
    spdlog::set_level(spdlog::level::info);
  }
}

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::data, "cannot create output directory " + dir + ": " + ec.message());
  return fs::path(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::data, "cannot open " + path.string() + " for writing");
  out << text;
  require(out.good(), ErrorKind::data, "write failed for " + path.string());
}

ExperimentConfig load_config(const std::string& path) {
  return config_from_json(read_json_file(path));
}

/************ gen *****************************************/

struct GenArgs {
  std::string spec;
  int n{100};
  double test_fraction{0.2};
  double val_fraction{0.0};
  std::uint64_t seed{0};
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  WorldSpec spec;
  if (!a.spec.empty()) spec = read_json_file(a.spec).get<WorldSpec>();
  require(a.n >= 1, ErrorKind::usage, "--n must be >= 1");
  require(a.test_fraction >= 0 && a.val_fraction >= 0 && a.test_fraction + a.val_fraction <= 1.0, ErrorKind::usage,
          "split fractions must be in [0, 1] and sum to at most 1");
  const auto test = static_cast<int>(std::lround(a.test_fraction * a.n));
  const auto val = static_cast<int>(std::lround(a.val_fraction * a.n));
  World world = generate_world(spec);
  auto samples = generate_dataset(world, {a.n - test - val, val, test}, a.seed);
  write_dataset(a.out, world.spec, samples);
  spdlog::info("wrote {} scenes ({} train, {} val, {} test) to {}", samples.size(), a.n - test - val, val, test, a.out);
  return 0;
}

/************ transform ***********************************/

int cmd_transform(const std::string& in, const std::string& out, const std::string& report) {
  nlohmann::json input;
  try {
    input = read_json_file(in);
  } catch (const Error& e) {
    fail(ErrorKind::data, e.what());
  }
  SceneGraphFile scene = scene_from_json(input);
  PrimitiveGraph g =
      scene.pairs ? build_primitive_graph(scene.detections, *scene.pairs) : build_primitive_graph(scene.detections);
  EdgeDualGraph dg = build_edge_dual_graph(g);
  nlohmann::json counts = {{"dual_nodes", dg.num_dual_nodes()}, {"dual_edges", dg.num_dual_edges()}};
  write_json_file(out, dual_to_json(g, dg));
  if (!report.empty()) write_json_file(report, counts);
  std::cout << counts.dump() << '\n';
  return 0;
}

/************ train ***************************************/

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, int jobs,
              std::optional<std::string> out_dir) {
  ExperimentConfig cfg = load_config(config_path);
  if (out_dir) cfg.out_dir = *out_dir;
  if (seed) cfg.seeds = {*seed};
  cfg.validate();
  const std::uint64_t run_seed = cfg.seeds.front();
  if (cfg.seeds.size() > 1) spdlog::info("config lists {} seeds; training seed {} only", cfg.seeds.size(), run_seed);
  const fs::path dir = ensure_dir(cfg.out_dir);
  write_json_file((dir / "config.json").string(), cfg);

  RunOptions opt;
  opt.jobs = jobs;
  opt.on_epoch = [](int epoch, const EpochLoss& l) {
    spdlog::debug("epoch {:4d}  L_obj {:.6f}  L_rel {:.6f}  L {:.6f}", epoch, l.object, l.relation, l.total);
    if (epoch % 10 == 0) spdlog::info("epoch {:4d}  L {:.6f}", epoch, l.total);
  };
  RunResult run = run_experiment(cfg, run_seed, opt);
  run.record.checkpoint_path = (dir / "checkpoint.json").string();
  write_json_file(run.record.checkpoint_path, to_json(run.checkpoint));
  write_json_file((dir / "runrecord.json").string(), to_json(run.record));
  write_json_file((dir / "report.json").string(), to_json(run.record.reports.at(to_string(cfg.subtask))));
  write_text(dir / "longtail.csv", longtail_csv(run.record.longtail));

  const auto& rep = run.record.reports.at(to_string(cfg.subtask));
  spdlog::info("{}: R@50 {:.4f}  mR@50 {:.4f}  wmAP_rel {:.4f}  wmAP_phr {:.4f}  ({:.1f}s)", to_string(cfg.subtask),
               rep.recall_at.at(50), rep.mean_recall_at.at(50), rep.wmap_rel, rep.wmap_phr, run.record.wall_seconds);
  return 0;
}

/************ eval ****************************************/

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& subtask_name,
             const std::string& split_name, std::uint64_t seed, int jobs, const std::string& out_dir,
             const std::string& report_path) {
  const Subtask subtask = subtask_from_string(subtask_name);
  Checkpoint ckpt = checkpoint_from_json(read_json_file(ckpt_path));
  Dataset ds = read_dataset(data_path);
  require(ds.spec.n_obj_classes == ckpt.config.n_obj_classes && ds.spec.n_rel_classes == ckpt.config.n_rel_classes &&
              ds.spec.d_o == ckpt.config.d_o,
          ErrorKind::data, "vocabulary mismatch between checkpoint and dataset");
  auto scenes = split_name == "all" ? ds.samples : select_split(ds.samples, split_from_string(split_name));
  require(!scenes.empty(), ErrorKind::data, "no scenes in split '" + split_name + "'");
  World world = generate_world(ds.spec);

  EvalOptions opt;
  opt.subtask = subtask;
  opt.detector_seed = mix_seed(seed, 0xde7ec7);
  opt.jobs = jobs;
  MetricsReport report = evaluate_subtask(ckpt.params, ckpt.config, &world, scenes, opt);
  LongtailReport lt = longtail_report(report, ckpt.predicate_counts.empty()
                                                  ? predicate_counts(select_split(ds.samples, Split::train),
                                                                     ckpt.config.n_rel_classes)
                                                  : ckpt.predicate_counts);

  const fs::path dir = ensure_dir(out_dir);
  const std::string rp = report_path.empty() ? (dir / "report.json").string() : report_path;
  write_json_file(rp, to_json(report));
  write_text(dir / "longtail.csv", longtail_csv(lt));
  spdlog::info("{} on {} scenes: R@50 {:.4f}  mR@50 {:.4f}  score_wtd {:.4f}", to_string(subtask), scenes.size(),
               report.recall_at.at(50), report.mean_recall_at.at(50), report.score_wtd);
  return 0;
}

/************ ablate **************************************/

int cmd_ablate(const std::string& config_path, const std::string& axis_name, int jobs,
               std::optional<std::string> out_dir) {
  ExperimentConfig cfg = load_config(config_path);
  if (out_dir) cfg.out_dir = *out_dir;
  const AblationAxis axis = ablation_axis_from_string(axis_name);
  if (cfg.seeds.size() < 3) spdlog::warn("ablation with {} seed(s); medians need at least 3", cfg.seeds.size());
  const fs::path dir = ensure_dir(cfg.out_dir);
  write_json_file((dir / "config.json").string(), cfg);

  auto rows = run_ablation(cfg, axis, jobs, [](const std::string& variant, std::uint64_t seed, const RunRecord& r) {
    spdlog::info("{} seed {}: mR@50 {:.4f} ({:.1f}s)", variant, seed,
                 r.reports.begin()->second.mean_recall_at.at(50), r.wall_seconds);
  });
  write_json_file((dir / "ablation.json").string(), {{"axis", axis_name}, {"rows", to_json(rows)}});

  std::printf("%-14s", "variant");
  for (int k : cfg.ks) std::printf("  mR@%-4d", k);
  std::printf("\n");
  for (const auto& r : rows) {
    std::printf("%-14s", r.variant.c_str());
    for (int k : cfg.ks) std::printf("  %7.4f", r.median_mean_recall.at(k));
    std::printf("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Edge dual scene graph generation toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic scene dataset (JSONL)");
  gen_cmd->add_option("--spec", gen.spec, "World spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
  gen_cmd->add_option("--n", gen.n, "Number of scenes")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--test-fraction", gen.test_fraction, "Fraction of scenes in the test split");
  gen_cmd->add_option("--val-fraction", gen.val_fraction, "Fraction of scenes in the validation split");
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed");
  gen_cmd->add_option("--out", gen.out, "Output JSONL file")->required();

  std::string t_in, t_out, t_report;
  auto* tr_cmd = app.add_subcommand("transform", "Build the edge dual graph of a scene graph file");
  tr_cmd->add_option("--in", t_in, "Scene JSON")->required();
  tr_cmd->add_option("--out", t_out, "Dual graph JSON")->required();
  tr_cmd->add_option("--report", t_report, "Also write the {dual_nodes, dual_edges} counts here");

  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  int jobs = 1;
  auto* train_cmd = app.add_subcommand("train", "Train one model and write all run artifacts");
  train_cmd->add_option("--config", config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", seed, "Run seed (overrides the config's seed list)");
  train_cmd->add_option("--jobs", jobs, "Evaluation threads; results do not depend on it")->check(CLI::PositiveNumber);
  train_cmd->add_option("--out", out_dir, "Output directory (overrides the config)");

  std::string ckpt, data, subtask = "sggen", split = "test", report;
  std::string eval_out = ".";
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--subtask", subtask, "predcls | sgcls | sggen");
  eval_cmd->add_option("--split", split, "train | val | test | all");
  eval_cmd->add_option("--seed", eval_seed, "Detector simulation seed (SGGen)");
  eval_cmd->add_option("--jobs", jobs, "Evaluation threads")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--out", eval_out, "Output directory for report.json and longtail.csv");
  eval_cmd->add_option("--report", report, "Report path (defaults to <out>/report.json)");

  std::string axis;
  auto* ablate_cmd = app.add_subcommand("ablate", "Compare model variants along one axis");
  ablate_cmd->add_option("--config", config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--axis", axis, "branches | aggregation")->required();
  ablate_cmd->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--out", out_dir, "Output directory (overrides the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*tr_cmd) return cmd_transform(t_in, t_out, t_report);
    if (*train_cmd) return cmd_train(config, seed, jobs, out_dir);
    if (*eval_cmd) return cmd_eval(ckpt, data, subtask, split, eval_seed, jobs, eval_out, report);
    if (*ablate_cmd) return cmd_ablate(config, axis, jobs, out_dir);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(ErrorKind::data);
  }
  return static_cast<int>(ErrorKind::usage);
}
