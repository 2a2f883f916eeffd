#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hfmrg/hfm_core.hpp"
#include "hfmrg/kernels.hpp"
#include "hfmrg/pipeline.hpp"
#include "hfmrg/rep_analysis.hpp"
#include "hfmrg/rg_transform.hpp"

namespace fs = std::filesystem;
using namespace hfmrg;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kRuntime = 2, kNoConvergence = 3 };

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NotConverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_g(double g) {
  if (!(g > 0.0)) throw UsageError("--g must be positive");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string csv(const std::string& header, const std::vector<std::string>& rows) {
  std::string s = header + "\n";
  for (const auto& r : rows) s += r + "\n";
  return s;
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

struct HfmArgs {
  std::size_t n = 4;
  double g = 1.0;
  std::uint64_t count = 1000;
  std::uint64_t seed = 1;
  std::string out;
};

void cmd_hfm_probe(const HfmArgs& a) {
  require_g(a.g);
  const HfmParams params(a.n, a.g);
  nlohmann::json j = {{"n", a.n},
                      {"g", a.g},
                      {"xi", params.xi()},
                      {"partition", params.partition()},
                      {"entropy_bits", hfm_entropy(params)},
                      {"mean_level", hfm_mean_level(params)}};
  nlohmann::json levels = nlohmann::json::array();
  for (std::size_t m = 0; m <= a.n; ++m) levels.push_back(hfm_level_state_prob(params, m));
  j["level_state_prob"] = levels;
  if (a.n <= 12) {
    const auto p = hfm_dense(params);
    j["relevance_bits"] = relevance(p);
    nlohmann::json probs = nlohmann::json::array();
    for (std::uint64_t i = 0; i < p.size(); ++i)
      probs.push_back({{"state", FeatureState::from_index(a.n, i).to_string()}, {"p", p[i]}});
    j["probabilities"] = probs;
  }
  write_text(a.out, j.dump(1) + "\n");
}

void cmd_hfm_sample(const HfmArgs& a) {
  require_g(a.g);
  if (a.out.empty()) throw UsageError("hfm sample needs --out");
  const auto sample = hfm_sample(HfmParams(a.n, a.g), a.count, a.seed);
  const std::vector<std::string> header = {"hfm n=" + std::to_string(a.n) + " g=" + fmt(a.g) +
                                           " seed=" + std::to_string(a.seed)};
  write_sample_file(a.out, sample, header);
}

void cmd_hfm_spectrum(const HfmArgs& a) {
  require_g(a.g);
  const auto spec = degeneracy_spectrum(HfmParams(a.n, a.g));
  std::vector<std::string> rows;
  for (const auto& l : spec.levels) rows.push_back(std::to_string(l.m) + "," + fmt(l.coding_cost_bits) + "," + fmt(l.states));
  write_text(a.out, csv("m,coding_cost_bits,states", rows));
  if (spec.slope) std::clog << "nu = " << fmt(*spec.slope) << '\n';
}

struct RgArgs {
  std::size_t n = 6;
  double g = 1.0;
  std::optional<double> entropy;
  std::string direction = "coarse";
  std::string metric = "tv";
  std::string start = "random";
  double tol = 1e-10;
  std::size_t max_iter = 500;
  std::uint64_t seed = 1;
  std::string out;
  std::vector<std::size_t> ns;
  std::vector<double> gs;
  std::size_t starts = 3;
  std::optional<double> alpha;
  std::optional<double> fixed;
};

void cmd_rg_iterate(const RgArgs& a) {
  require_g(a.g);
  const RgDirection dir = a.direction == "fine" ? RgDirection::fine : RgDirection::coarse;
  if (dir == RgDirection::coarse && !(a.g > kCriticalCoupling))
    throw UsageError("coarse iteration needs --g above ln 2 (the fixed point is uniform at or below it)");
  const DenseDistribution fixed = dir == RgDirection::coarse ? analytic_fixed_point(a.n, a.g) : hfm_dense(HfmParams(a.n, a.g));
  RgConfig cfg;
  cfg.target_entropy = a.entropy.value_or(entropy_bits(fixed));
  cfg.metric = a.metric == "kl" ? ConvergenceMetric::kl : ConvergenceMetric::total_variation;
  cfg.convergence_tolerance = a.tol;
  cfg.max_iterations = a.max_iter;
  cfg.fixed_parameter = a.fixed;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const DenseDistribution p0 = a.start == "fixed_point" ? fixed : random_distribution(a.n, a.seed);
  const auto res = iterate_to_fixed_point(p0, cfg, dir);
  auto report = rg_report(res, cfg, dir);
  if (!a.entropy) report["tv_to_reference"] = total_variation(res.fixed_point, fixed);
  write_text(a.out, report.dump(1) + "\n");
  if (!res.diagnostics.converged) throw NotConverged("rg iterate did not converge");
}

void cmd_rg_sweep(const RgArgs& a) {
  RgSweepConfig sweep{a.ns, a.gs, a.starts};
  for (double g : a.gs)
    if (!(g > kCriticalCoupling)) throw UsageError("sweep g values must exceed ln 2");
  for (std::size_t n : a.ns)
    if (n < 2 || n > kMaxDenseWidth) throw UsageError("sweep n values must be in [2, 20]");
  const auto rows = rg_sweep_rows(sweep, a.seed);
  write_text(a.out, csv("n,g,start,iterations,final_distance,tv_to_fixed_point,converged", rows));
  for (const auto& r : rows)
    if (!r.ends_with("true")) throw NotConverged("some sweep runs did not converge");
}

void cmd_rg_matrix(const RgArgs& a) {
  if (a.out.empty()) throw UsageError("rg matrix needs --out DIR");
  if (a.n > 12) throw UsageError("rg matrix supports n <= 12");
  double alpha = 0.0;
  if (a.alpha) {
    alpha = *a.alpha;
  } else {
    require_g(a.g);
    alpha = fixed_point_alpha(a.g);
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("--alpha must be in [0, 1]");
  const TransitionMatrix t(a.n, alpha);
  std::vector<std::string> rows;
  for (std::uint64_t s = 0; s < t.size(); ++s)
    for (const auto& e : t.row(s)) rows.push_back(std::to_string(s) + "," + std::to_string(e.col) + "," + fmt(e.value));
  write_text((fs::path(a.out) / "transition.csv").string(), csv("from,to,value", rows));
  const auto pi = stationary_distribution(t, DenseDistribution::uniform(a.n));
  rows.clear();
  for (std::uint64_t s = 0; s < pi.size(); ++s)
    rows.push_back(std::to_string(s) + "," + FeatureState::from_index(a.n, s).to_string() + "," + fmt(pi[s]));
  write_text((fs::path(a.out) / "stationary.csv").string(), csv("index,state,prob", rows));
}

struct AnalyzeArgs {
  std::string sample;
  std::optional<std::size_t> threshold;
  std::size_t layer = 0;
  std::string out;
};

void cmd_analyze(const AnalyzeArgs& a) {
  if (a.out.empty()) throw UsageError("analyze needs --out DIR");
  const auto sample = read_sample_file(a.sample);
  if (sample.total() == 0) throw UsageError("sample is empty");
  const auto analysis = analyze_layer(sample, a.threshold.value_or(default_peak_threshold(sample.width())));
  write_text((fs::path(a.out) / "report.json").string(), layer_report(analysis, a.layer).dump(1) + "\n");
  write_text((fs::path(a.out) / "kl_curves.csv").string(),
             csv("layer,prefix_n,peak_id,kl_bits", layer_csv_rows(analysis, a.layer)));
}

struct PipelineArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 0;
};

int cmd_pipeline(const PipelineArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.out.empty()) cfg.output_dir = a.out;
  const auto res = run_pipeline(cfg, a.jobs);
  for (const auto& s : res.stages)
    if (s.status != StageStatus::ok)
      std::cerr << s.name << ": " << (s.status == StageStatus::failed ? "failed: " : "skipped: ") << s.message << '\n';
  std::cout << res.manifest_path << '\n';
  return res.all_ok() ? kOk : kRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical feature model, renormalization and deep belief network analysis"};
  app.require_subcommand(1);
  int jobs = 0;
  app.add_option("--jobs", jobs, "OpenMP threads (0 keeps the default)")->check(CLI::NonNegativeNumber);

  HfmArgs ha;
  auto* hfm = app.add_subcommand("hfm", "Hierarchical feature model utilities");
  hfm->require_subcommand(1);
  auto add_hfm = [&](CLI::App* c) {
    c->add_option("--n", ha.n, "number of features")->check(CLI::Range(1, 62));
    c->add_option("--g", ha.g, "coupling in nats");
    c->add_option("--out", ha.out, "output file (stdout when absent)");
  };
  auto* probe = hfm->add_subcommand("probe", "probabilities, entropy and relevance as JSON");
  add_hfm(probe);
  auto* sample = hfm->add_subcommand("sample", "write a sample file");
  add_hfm(sample);
  sample->add_option("--count", ha.count, "number of draws");
  sample->add_option("--seed", ha.seed);
  auto* spectrum = hfm->add_subcommand("spectrum", "degeneracy CSV");
  add_hfm(spectrum);

  RgArgs ra;
  auto* rg = app.add_subcommand("rg", "renormalization group transformations");
  rg->require_subcommand(1);
  auto* iterate = rg->add_subcommand("iterate", "iterate to the fixed point and write diagnostics JSON");
  iterate->add_option("--n", ra.n)->check(CLI::Range(2, 20));
  iterate->add_option("--g", ra.g, "coupling setting the target entropy and reference fixed point");
  iterate->add_option("--entropy", ra.entropy, "target entropy in bits (overrides --g)");
  iterate->add_option("--direction", ra.direction)->check(CLI::IsMember({"coarse", "fine"}));
  iterate->add_option("--metric", ra.metric)->check(CLI::IsMember({"tv", "kl"}));
  iterate->add_option("--start", ra.start)->check(CLI::IsMember({"random", "fixed_point"}));
  iterate->add_option("--tol", ra.tol);
  iterate->add_option("--max-iter", ra.max_iter);
  iterate->add_option("--fixed", ra.fixed, "hold alpha or q at this value instead of matching entropy");
  iterate->add_option("--seed", ra.seed);
  iterate->add_option("--out", ra.out);
  auto* sweep = rg->add_subcommand("sweep", "convergence over a grid of (n, g)");
  sweep->add_option("--n", ra.ns)->delimiter(',');
  sweep->add_option("--g", ra.gs)->delimiter(',');
  sweep->add_option("--starts", ra.starts);
  sweep->add_option("--seed", ra.seed);
  sweep->add_option("--out", ra.out);
  auto* matrix = rg->add_subcommand("matrix", "transition matrix and stationary vector CSVs");
  matrix->add_option("--n", ra.n)->check(CLI::Range(1, 12));
  matrix->add_option("--g", ra.g, "sets alpha = 1 - xi");
  matrix->add_option("--alpha", ra.alpha);
  matrix->add_option("--out", ra.out, "output directory");

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "fit, peaks and Kendall diagnostic of one sample file");
  analyze->add_option("--sample", aa.sample)->required()->check(CLI::ExistingFile);
  analyze->add_option("--threshold", aa.threshold);
  analyze->add_option("--layer", aa.layer);
  analyze->add_option("--out", aa.out, "output directory");

  PipelineArgs pa;
  auto* pipeline = app.add_subcommand("pipeline", "full experiment from a config file");
  pipeline->add_option("--config", pa.config)->required();
  pipeline->add_option("--seed", pa.seed, "overrides the config seed");
  pipeline->add_option("--out", pa.out, "overrides the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  if (jobs > 0) kernels::set_threads(jobs);
  pa.jobs = jobs;

  try {
    if (probe->parsed()) cmd_hfm_probe(ha);
    if (sample->parsed()) cmd_hfm_sample(ha);
    if (spectrum->parsed()) cmd_hfm_spectrum(ha);
    if (iterate->parsed()) cmd_rg_iterate(ra);
    if (sweep->parsed()) cmd_rg_sweep(ra);
    if (matrix->parsed()) cmd_rg_matrix(ra);
    if (analyze->parsed()) cmd_analyze(aa);
    if (pipeline->parsed()) return cmd_pipeline(pa);
  } catch (const NotConverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNoConvergence;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
