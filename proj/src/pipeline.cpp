#include "hfmrg/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "hfmrg/exact.hpp"
#include "hfmrg/hash.hpp"
#include "hfmrg/kernels.hpp"
#include "hfmrg/rep_analysis.hpp"

namespace fs = std::filesystem;

namespace hfmrg {

namespace {

/// Reads keys from one JSON object and rejects any it did not ask for.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: bad value for '" + path_ + key + "': " + e.what());
    }
  }

  template <typename T>
  void read(const char* key, std::optional<T>& dst) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    read(key, v);
    dst = v;
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return std::nullopt;
    return Section(j_.at(key), path_ + key + ".");
  }

  const nlohmann::json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + path_ + k + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string resolve(const std::string& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? p : (fs::path(base) / path).lexically_normal().string();
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

void write_lines(const fs::path& path, const std::string& header, const std::vector<std::string>& rows) {
  std::string s = header + "\n";
  for (const auto& r : rows) s += r + "\n";
  write_file(path, s);
}

std::string status_name(StageStatus s) {
  switch (s) {
    case StageStatus::ok:
      return "ok";
    case StageStatus::failed:
      return "failed";
    case StageStatus::skipped:
      return "skipped";
  }
  return "unknown";
}

EquilibriumMode mode_from_string(const std::string& s) {
  if (s == "top_down") return EquilibriumMode::top_down;
  if (s == "per_layer") return EquilibriumMode::per_layer;
  throw ConfigError("config: equilibrium.mode must be 'top_down' or 'per_layer'");
}

std::string mode_name(EquilibriumMode m) { return m == EquilibriumMode::top_down ? "top_down" : "per_layer"; }

class StageLog {
 public:
  /// Runs fn as stage `name` unless a prerequisite failed.
  template <typename Fn>
  bool run(const std::string& name, bool prerequisites_ok, Fn&& fn) {
    StageRecord rec{name, StageStatus::ok, ""};
    if (!prerequisites_ok) {
      rec.status = StageStatus::skipped;
      rec.message = "prerequisite failed";
    } else {
      std::clog << "[hfmrg] " << name << '\n';
      try {
        fn();
      } catch (const std::exception& e) {
        rec.status = StageStatus::failed;
        rec.message = e.what();
        std::clog << "[hfmrg] " << name << " failed: " << e.what() << '\n';
      }
    }
    records.push_back(rec);
    return rec.status == StageStatus::ok;
  }

  std::vector<StageRecord> records;
};

nlohmann::json layer_summary(const LayerAnalysis& a) {
  return {{"width", a.width},
          {"samples", a.samples},
          {"distinct", a.tree.members.distinct()},
          {"g_fit", a.whole.g_fit},
          {"kl_full", a.whole.kl_full},
          {"kendall_d", a.whole.kendall_d ? nlohmann::json(*a.whole.kendall_d) : nlohmann::json()},
          {"entropy_bits", a.whole.entropy_bits},
          {"n_leaves", a.peaks.leaves.size()},
          {"weighted_kl", a.peaks.weighted_kl},
          {"weighted_leaf_entropy", a.peaks.weighted_entropy}};
}

BinaryMatrix first_rows(const BinaryMatrix& m, std::size_t count) {
  BinaryMatrix out(std::min(count, m.rows), m.cols);
  std::copy_n(m.data.begin(), out.rows * m.cols, out.data.begin());
  return out;
}

}  // namespace

bool PipelineResult::all_ok() const {
  return std::all_of(stages.begin(), stages.end(), [](const StageRecord& s) { return s.status == StageStatus::ok; });
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (hidden_sizes.empty()) fail("dbn.hidden_sizes must list at least one layer");
  for (auto s : hidden_sizes)
    if (s == 0) fail("dbn.hidden_sizes entries must be positive");
  if (datasets.empty()) fail("datasets must not be empty");
  std::set<std::string> seen;
  for (const auto& d : datasets) {
    if (d != "narrow" && d != "medium" && d != "broad") fail("unknown dataset '" + d + "'");
    if (!seen.insert(d).second) fail("dataset '" + d + "' listed twice");
  }
  try {
    train.validate();
    equilibrium.validate();
    tap.options.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (ladder.target_size == 0) fail("ladder.target_size must be positive");
  if (ladder.downsample == 0) fail("ladder.downsample must be positive");
  if (!(ladder.threshold > 0.0 && ladder.threshold < 1.0)) fail("ladder.threshold must be in (0, 1)");
  if (ladder.augment.max_shift < 0 || ladder.augment.max_angle_deg < 0.0) fail("ladder augmentation ranges must be >= 0");
  if (clamped_passes == 0) fail("sampling.clamped_passes must be positive");
  if (analysis.g_strategy != "ml_mean_level") fail("analysis.g_strategy must be 'ml_mean_level'");
  for (const auto& k : analysis.kinds)
    if (k != "clamped" && k != "equilibrium") fail("analysis.kinds entries must be 'clamped' or 'equilibrium'");
  if (!(tap.dedup_tol > 0.0)) fail("tap.dedup_tol must be positive");
  if (observables.hist_bins == 0) fail("observables.hist_bins must be positive");
  if (enumeration.enabled && !(enumeration.tv_tolerance > 0.0)) fail("enumeration.tv_tolerance must be positive");
  for (auto n : rg_sweep.n)
    if (n == 0 || n > kMaxDenseWidth) fail("rg_sweep.n entries must be in [1, 20]");
  for (auto g : rg_sweep.g)
    if (!(g > kCriticalCoupling)) fail("rg_sweep.g entries must exceed ln 2");
  if (data.letters_images.has_value() != data.letters_labels.has_value())
    fail("data.letters_images and data.letters_labels go together");
  std::vector<std::string> files = {data.digits_images, data.digits_labels};
  if (data.letters_images) files.insert(files.end(), {*data.letters_images, *data.letters_labels});
  for (const auto& f : files) {
    if (f.empty()) fail("data paths must be set");
    if (!fs::exists(resolve(base_dir, f))) fail("dataset file not found: " + resolve(base_dir, f));
  }
}

ExperimentConfig config_from_json(const nlohmann::json& j, const std::string& base_dir) {
  ExperimentConfig c;
  c.base_dir = base_dir;
  Section top(j, "");
  top.read("seed", c.seed);
  top.read("output_dir", c.output_dir);
  top.read("datasets", c.datasets);
  if (auto s = top.child("data")) {
    s->read("digits_images", c.data.digits_images);
    s->read("digits_labels", c.data.digits_labels);
    s->read("letters_images", c.data.letters_images);
    s->read("letters_labels", c.data.letters_labels);
    s->finish();
  }
  if (auto s = top.child("ladder")) {
    s->read("target_size", c.ladder.target_size);
    s->read("narrow_class", c.ladder.narrow_class);
    s->read("downsample", c.ladder.downsample);
    s->read("threshold", c.ladder.threshold);
    s->read("max_angle_deg", c.ladder.augment.max_angle_deg);
    s->read("max_shift", c.ladder.augment.max_shift);
    s->finish();
  }
  if (auto s = top.child("dbn")) {
    s->read("hidden_sizes", c.hidden_sizes);
    if (s->has("train")) {
      try {
        c.train = train_config_from_json(s->raw("train"));
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config: dbn.") + e.what());
      }
    }
    s->finish();
  }
  if (auto s = top.child("sampling")) {
    s->read("clamped_passes", c.clamped_passes);
    if (auto e = s->child("equilibrium")) {
      e->read("n_samples", c.equilibrium.n_samples);
      e->read("burn_in", c.equilibrium.burn_in);
      e->read("thin", c.equilibrium.thin);
      e->read("n_chains", c.equilibrium.n_chains);
      std::string mode = mode_name(c.equilibrium.mode);
      e->read("mode", mode);
      c.equilibrium.mode = mode_from_string(mode);
      e->finish();
    }
    s->finish();
  }
  if (auto s = top.child("analysis")) {
    s->read("peak_threshold", c.analysis.peak_threshold);
    s->read("g_strategy", c.analysis.g_strategy);
    s->read("kinds", c.analysis.kinds);
    s->finish();
  }
  if (auto s = top.child("tap")) {
    s->read("inits", c.tap.inits);
    s->read("damping", c.tap.options.damping);
    s->read("tol", c.tap.options.tol);
    s->read("max_iter", c.tap.options.max_iter);
    s->read("dedup_tol", c.tap.dedup_tol);
    s->finish();
  }
  if (auto s = top.child("observables")) {
    s->read("states", c.observables.states);
    s->read("rollouts", c.observables.rollouts);
    s->read("hist_bins", c.observables.hist_bins);
    s->finish();
  }
  if (auto s = top.child("enumeration_checks")) {
    s->read("enabled", c.enumeration.enabled);
    s->read("samples", c.enumeration.samples);
    s->read("tv_tolerance", c.enumeration.tv_tolerance);
    s->finish();
  }
  if (auto s = top.child("rg_sweep")) {
    s->read("n", c.rg_sweep.n);
    s->read("g", c.rg_sweep.g);
    s->read("starts", c.rg_sweep.starts);
    s->finish();
  }
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  const fs::path dir = fs::path(path).parent_path();
  return config_from_json(j, dir.empty() ? "." : dir.string());
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json data = {{"digits_images", c.data.digits_images}, {"digits_labels", c.data.digits_labels}};
  if (c.data.letters_images) {
    data["letters_images"] = *c.data.letters_images;
    data["letters_labels"] = *c.data.letters_labels;
  }
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"datasets", c.datasets},
          {"data", data},
          {"ladder",
           {{"target_size", c.ladder.target_size},
            {"narrow_class", c.ladder.narrow_class},
            {"downsample", c.ladder.downsample},
            {"threshold", c.ladder.threshold},
            {"max_angle_deg", c.ladder.augment.max_angle_deg},
            {"max_shift", c.ladder.augment.max_shift}}},
          {"dbn", {{"hidden_sizes", c.hidden_sizes}, {"train", to_json(c.train)}}},
          {"sampling",
           {{"clamped_passes", c.clamped_passes},
            {"equilibrium",
             {{"n_samples", c.equilibrium.n_samples},
              {"burn_in", c.equilibrium.burn_in},
              {"thin", c.equilibrium.thin},
              {"n_chains", c.equilibrium.n_chains},
              {"mode", mode_name(c.equilibrium.mode)}}}}},
          {"analysis",
           {{"peak_threshold", c.analysis.peak_threshold ? nlohmann::json(*c.analysis.peak_threshold) : nlohmann::json()},
            {"g_strategy", c.analysis.g_strategy},
            {"kinds", c.analysis.kinds}}},
          {"tap",
           {{"inits", c.tap.inits},
            {"damping", c.tap.options.damping},
            {"tol", c.tap.options.tol},
            {"max_iter", c.tap.options.max_iter},
            {"dedup_tol", c.tap.dedup_tol}}},
          {"observables",
           {{"states", c.observables.states},
            {"rollouts", c.observables.rollouts},
            {"hist_bins", c.observables.hist_bins}}},
          {"enumeration_checks",
           {{"enabled", c.enumeration.enabled},
            {"samples", c.enumeration.samples},
            {"tv_tolerance", c.enumeration.tv_tolerance}}},
          {"rg_sweep", {{"n", c.rg_sweep.n}, {"g", c.rg_sweep.g}, {"starts", c.rg_sweep.starts}}}};
}

std::vector<std::string> rg_sweep_rows(const RgSweepConfig& sweep, std::uint64_t seed) {
  std::vector<std::string> rows;
  for (std::size_t n : sweep.n) {
    for (double g : sweep.g) {
      const DenseDistribution target = analytic_fixed_point(n, g);
      RgConfig cfg;
      cfg.target_entropy = entropy_bits(target);
      for (std::size_t k = 0; k < sweep.starts; ++k) {
        const auto p0 = random_distribution(n, mix_seed(seed, n * 1000 + k));
        std::string row = std::to_string(n) + "," + num(g) + "," + std::to_string(k) + ",";
        if (!(cfg.target_entropy > 1.0)) {
          rows.push_back(row + "0,nan,nan,false");
          continue;
        }
        const auto res = iterate_to_fixed_point(p0, cfg, RgDirection::coarse);
        const auto& d = res.diagnostics;
        rows.push_back(row + std::to_string(d.iterations) + "," +
                       num(d.distance_trace.empty() ? 0.0 : d.distance_trace.back()) + "," +
                       num(total_variation(res.fixed_point, target)) + "," + (d.converged ? "true" : "false"));
      }
    }
  }
  return rows;
}

PipelineResult run_pipeline(const ExperimentConfig& config, int jobs) {
  config.validate();
  if (jobs > 0) kernels::set_threads(jobs);
  const fs::path out(config.output_dir);
  for (const char* sub : {"datasets", "models", "samples", "reports"}) fs::create_directories(out / sub);
  StageLog log;
  nlohmann::json summary = nlohmann::json::object();
  summary["seed"] = config.seed;

  std::optional<BreadthLadder> ladder;
  const bool ladder_ok = log.run("ladder", true, [&] {
    const RawImages digits = load_idx(resolve(config.base_dir, config.data.digits_images),
                                      resolve(config.base_dir, config.data.digits_labels));
    std::optional<RawImages> letters;
    if (config.data.letters_images)
      letters = load_idx(resolve(config.base_dir, *config.data.letters_images),
                         resolve(config.base_dir, *config.data.letters_labels));
    ladder = breadth_ladder(digits, letters, config.ladder, config.seed);
    for (const Dataset* d : {&ladder->narrow, &ladder->medium, &ladder->broad}) {
      if (std::find(config.datasets.begin(), config.datasets.end(), d->name) == config.datasets.end()) continue;
      write_dataset((out / "datasets" / d->name).string(), *d);
    }
  });

  if (!config.rg_sweep.n.empty() && !config.rg_sweep.g.empty()) {
    log.run("rg_sweep", true, [&] {
      write_lines(out / "reports" / "rg_sweep.csv", "n,g,start,iterations,final_distance,tv_to_fixed_point,converged",
                  rg_sweep_rows(config.rg_sweep, mix_seed(config.seed, 99)));
    });
  }

  std::vector<std::string> kl_rows, tap_rows, mart_rows, diag_rows;
  for (std::size_t k = 0; k < config.datasets.size(); ++k) {
    const std::string& name = config.datasets[k];
    const Dataset* ds = nullptr;
    if (ladder) ds = name == "narrow" ? &ladder->narrow : name == "medium" ? &ladder->medium : &ladder->broad;
    nlohmann::json ds_summary = {{"name", name}};

    DbnModel dbn;
    const bool trained = log.run("train:" + name, ladder_ok, [&] {
      std::vector<std::size_t> sizes = {ds->images.cols};
      sizes.insert(sizes.end(), config.hidden_sizes.begin(), config.hidden_sizes.end());
      TrainConfig tc = config.train;
      tc.seed = mix_seed(config.seed, 10 + k);
      auto res = train_dbn(ds->images, sizes, tc);
      dbn = std::move(res.model);
      save_dbn((out / "models" / (name + ".json")).string(), dbn, tc);
      std::vector<std::string> rows;
      for (const auto& r : res.log)
        rows.push_back(std::to_string(r.layer) + "," + std::to_string(r.epoch) + "," + num(r.pseudo_likelihood) + "," +
                       num(r.grad_norm));
      write_lines(out / "models" / (name + "_train_log.csv"), "layer,epoch,pseudo_likelihood,grad_norm", rows);
      if (!res.log.empty()) ds_summary["final_pseudo_likelihood_layer1"] = res.log[config.train.epochs - 1].pseudo_likelihood;
    });

    const std::size_t depth = config.hidden_sizes.size();
    std::vector<BinaryMatrix> clamped;
    std::vector<BinaryMatrix> equilibrium(depth);
    const bool want_eq = std::find(config.analysis.kinds.begin(), config.analysis.kinds.end(), "equilibrium") !=
                         config.analysis.kinds.end();
    const bool sampled = log.run("sample:" + name, trained, [&] {
      clamped = clamped_layers(dbn, ds->images, config.clamped_passes, mix_seed(config.seed, 20 + k));
      for (std::size_t l = 1; l <= depth; ++l)
        write_sample_file((out / "samples" / (name + "_clamped_L" + std::to_string(l) + ".txt")).string(),
                          to_sample(clamped[l - 1]), std::vector<std::string>{"clamped " + name + " layer " + std::to_string(l)});
      if (!want_eq) return;
      for (std::size_t l = 1; l <= depth; ++l) {
        auto eq = equilibrium_states(dbn, l, config.equilibrium, mix_seed(config.seed, 30 + k));
        diag_rows.push_back(name + "," + std::to_string(l) + "," + num(eq.max_z) + "," +
                            (eq.converged ? "true" : "false"));
        equilibrium[l - 1] = std::move(eq.states);
        write_sample_file((out / "samples" / (name + "_equilibrium_L" + std::to_string(l) + ".txt")).string(),
                          to_sample(equilibrium[l - 1]),
                          std::vector<std::string>{"equilibrium " + name + " layer " + std::to_string(l)});
      }
    });

    log.run("analyze:" + name, sampled, [&] {
      struct Job {
        std::string kind;
        std::size_t layer;
      };
      std::vector<Job> todo;
      for (const auto& kind : config.analysis.kinds)
        for (std::size_t l = 1; l <= depth; ++l) todo.push_back({kind, l});
      std::vector<std::optional<LayerAnalysis>> results(todo.size());
      std::vector<std::string> errors(todo.size());
      const auto nj = static_cast<std::ptrdiff_t>(todo.size());
#pragma omp parallel for schedule(dynamic, 1)
      for (std::ptrdiff_t i = 0; i < nj; ++i) {
        const auto& job = todo[static_cast<std::size_t>(i)];
        try {
          const BinaryMatrix& rows = job.kind == "clamped" ? clamped[job.layer - 1] : equilibrium[job.layer - 1];
          const EmpiricalSample sample = to_sample(rows);
          const std::size_t thr = config.analysis.peak_threshold.value_or(default_peak_threshold(sample.width()));
          results[static_cast<std::size_t>(i)] = analyze_layer(sample, thr);
        } catch (const std::exception& e) {
          errors[static_cast<std::size_t>(i)] = e.what();
        }
      }
      nlohmann::json layers = nlohmann::json::object();
      for (std::size_t i = 0; i < todo.size(); ++i) {
        const auto& job = todo[i];
        if (!results[i]) throw std::runtime_error(job.kind + " layer " + std::to_string(job.layer) + ": " + errors[i]);
        const auto& a = *results[i];
        write_file(out / "reports" / (name + "_" + job.kind + "_L" + std::to_string(job.layer) + ".json"),
                   layer_report(a, job.layer).dump(1) + "\n");
        for (const auto& r : layer_csv_rows(a, job.layer)) kl_rows.push_back(name + "," + job.kind + "," + r);
        layers[job.kind][std::to_string(job.layer)] = layer_summary(a);
      }
      ds_summary["layers"] = layers;
    });

    log.run("tap:" + name, trained, [&] {
      const BinaryMatrix subset = first_rows(ds->images, config.tap.inits);
      const auto act = clamped_activations(dbn, subset);
      nlohmann::json counts = nlohmann::json::object();
      for (std::size_t l = 1; l <= depth; ++l) {
        const auto tc = tap_count_solutions(dbn.layers[l - 1], act[l - 1], act[l], config.tap.dedup_tol,
                                            config.tap.options);
        tap_rows.push_back(name + "," + std::to_string(l) + "," + std::to_string(tc.distinct) + "," +
                           std::to_string(tc.converged) + "," + std::to_string(tc.unconverged));
        counts[std::to_string(l)] = {{"distinct", tc.distinct}, {"converged", tc.converged},
                                     {"unconverged", tc.unconverged}};
      }
      ds_summary["tap"] = counts;
    });

    log.run("observables:" + name, sampled, [&] {
      if (ds->side_rows != ds->side_cols || ds->side_rows < 2)
        throw std::runtime_error("observables need a square image of side >= 2");
      const ObservableSpec specs[2] = {left_minus_right(ds->side_rows), top_minus_bottom(ds->side_rows)};
      std::vector<std::string> obs_rows, hist_rows;
      nlohmann::json mart = nlohmann::json::array();
      const std::size_t bins = config.observables.hist_bins;
      for (std::size_t l = 1; l <= depth; ++l) {
        const BinaryMatrix states = first_rows(clamped[l - 1], config.observables.states);
        const std::uint64_t s = mix_seed(config.seed, 1000 + 100 * k + l);
        const auto phi = propagate_observable(dbn, specs[0], l, states, config.observables.rollouts, s);
        const auto psi = propagate_observable(dbn, specs[1], l, states, config.observables.rollouts, s + 1);
        std::vector<std::uint64_t> hist(bins * bins, 0);
        auto bin = [&](double v) {
          const double t = (v + 1.0) / 2.0 * static_cast<double>(bins);
          return std::min<std::size_t>(bins - 1, static_cast<std::size_t>(std::max(0.0, t)));
        };
        for (std::size_t r = 0; r < states.rows; ++r) {
          obs_rows.push_back(std::to_string(l) + "," + std::to_string(r) + "," + num(phi[r].value) + "," +
                             num(phi[r].standard_error) + "," + num(psi[r].value) + "," + num(psi[r].standard_error));
          ++hist[bin(psi[r].value) * bins + bin(phi[r].value)];
        }
        for (std::size_t a = 0; a < bins; ++a)
          for (std::size_t b = 0; b < bins; ++b)
            if (hist[a * bins + b] > 0)
              hist_rows.push_back(std::to_string(l) + "," + std::to_string(a) + "," + std::to_string(b) + "," +
                                  std::to_string(hist[a * bins + b]));
        if (l < 2) continue;
        for (const auto& spec : specs) {
          std::string row = name + "," + spec.name + "," + std::to_string(l) + ",";
          try {
            const auto m = martingale_check(dbn, spec, l, states, config.observables.rollouts, s + 2);
            row += std::to_string(m.pairs) + "," + num(m.slope) + "," + num(m.ci_low) + "," + num(m.ci_high) + "," +
                   num(m.slope_uncorrected) + "," + num(m.reverse_slope) + "," + num(m.phi_variance);
            mart.push_back({{"observable", spec.name},
                            {"layer", l},
                            {"slope", m.slope},
                            {"ci_low", m.ci_low},
                            {"ci_high", m.ci_high},
                            {"reverse_slope", m.reverse_slope},
                            {"phi_variance", m.phi_variance}});
          } catch (const std::domain_error&) {
            row += std::to_string(states.rows) + ",nan,nan,nan,nan,nan,0";
          }
          mart_rows.push_back(row);
        }
      }
      write_lines(out / "reports" / (name + "_observables.csv"), "layer,state,phi,phi_se,psi,psi_se", obs_rows);
      write_lines(out / "reports" / (name + "_observable_hist.csv"), "layer,psi_bin,phi_bin,count", hist_rows);
      ds_summary["martingale"] = mart;
    });

    if (config.enumeration.enabled) {
      log.run("enumeration:" + name, trained, [&] {
        nlohmann::json checks = nlohmann::json::array();
        const double tol = config.enumeration.tv_tolerance;
        bool all = true;
        auto record = [&](const std::string& what, std::size_t layer, double tv) {
          const bool pass = tv < tol;
          all = all && pass;
          checks.push_back({{"check", what}, {"layer", layer}, {"tv", tv}, {"pass", pass}});
        };
        const std::size_t passes = (config.enumeration.samples + ds->size() - 1) / ds->size();
        const auto cl = clamped_layers(dbn, ds->images, passes, mix_seed(config.seed, 40 + k));
        for (std::size_t l = 1; l <= depth; ++l)
          record("clamped", l, total_variation(exact::empirical_dense(cl[l - 1]), exact::dbn_clamped(dbn, ds->images, l)));
        EquilibriumConfig ec = config.equilibrium;
        ec.n_samples = config.enumeration.samples;
        for (std::size_t l = 0; l <= depth; ++l) {
          const auto eq = equilibrium_states(dbn, l, ec, mix_seed(config.seed, 50 + k));
          record(l == 0 ? "generate" : "equilibrium", l,
                 total_variation(exact::empirical_dense(eq.states), exact::dbn_equilibrium(dbn, l, ec.mode)));
        }
        write_file(out / "reports" / (name + "_enumeration_checks.json"),
                   nlohmann::json({{"tv_tolerance", tol}, {"samples", config.enumeration.samples}, {"checks", checks},
                                   {"all_pass", all}})
                           .dump(1) +
                       "\n");
        ds_summary["enumeration_all_pass"] = all;
        if (!all) throw std::runtime_error("enumeration cross-check exceeded the TV tolerance");
      });
    }
    summary["datasets"][name] = ds_summary;
  }

  log.run("reports", true, [&] {
    write_lines(out / "reports" / "kl_curves.csv", "dataset,kind,layer,prefix_n,peak_id,kl_bits", kl_rows);
    write_lines(out / "reports" / "tap_counts.csv", "dataset,layer,distinct,converged,unconverged", tap_rows);
    write_lines(out / "reports" / "martingale.csv",
                "dataset,observable,layer,pairs,slope,ci_low,ci_high,slope_uncorrected,reverse_slope,phi_variance",
                mart_rows);
    write_lines(out / "reports" / "equilibrium_diagnostics.csv", "dataset,layer,max_z,converged", diag_rows);
    write_file(out / "summary.json", summary.dump(1) + "\n");
  });

  PipelineResult result;
  result.stages = log.records;
  result.summary = summary;

  nlohmann::json cfg = to_json(config);
  cfg.erase("output_dir");
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : result.stages)
    stages.push_back({{"name", s.name}, {"status", status_name(s.status)}, {"message", s.message}});
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(out))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  nlohmann::json outputs = nlohmann::json::array();
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    outputs.push_back({{"path", fs::relative(f, out).generic_string()},
                       {"bytes", bytes.size()},
                       {"fnv1a64", hex64(fnv1a64(bytes))}});
  }
  const nlohmann::json manifest = {{"config", cfg},
                                   {"config_hash", hex64(fnv1a64(cfg.dump()))},
                                   {"seed", config.seed},
                                   {"stages", stages},
                                   {"outputs", outputs}};
  result.manifest_path = (out / "manifest.json").string();
  write_file(result.manifest_path, manifest.dump(1) + "\n");
  return result;
}

}  // namespace hfmrg
