#include "hfmrg/rg_transform.hpp"

#include <bit>
#include <cmath>
#include <limits>

#include "hfmrg/kernels.hpp"
#include "hfmrg/rng.hpp"

namespace hfmrg {

namespace {

constexpr int kMaxBisection = 200;

/// Pieces of H[coarse_step(p, alpha)] that do not depend on alpha.
struct CoarseEntropyModel {
  double h_tilde;  // entropy after marginalizing s_n and adding the uniform bit
  double p0;       // mass of the featureless state at that point

  explicit CoarseEntropyModel(const DenseDistribution& p) {
    const std::size_t half = p.size() / 2;
    std::vector<double> marg(half);
    for (std::size_t i = 0; i < half; ++i) marg[i] = p[i] + p[i + half];
    h_tilde = entropy_bits(marg) + 1.0;
    p0 = 0.5 * marg[0];
  }

  double entropy(double alpha) const {
    const double q = alpha + (1.0 - alpha) * p0;
    return binary_entropy(q) - (1.0 - alpha) * binary_entropy(p0) + (1.0 - alpha) * h_tilde;
  }
};

/// Pieces of H[fine_step(p, q)] that do not depend on q.
struct FineEntropyModel {
  double h_zoomed;   // entropy of the conditioned, shifted law over n-1 bits
  double max_width;  // n - 1 bits, entropy of the uniform slice

  explicit FineEntropyModel(const DenseDistribution& p) {
    const std::size_t half = p.size() / 2;
    double p1 = 0.0;
    for (std::size_t k = 0; k < half; ++k) p1 += p[2 * k + 1];
    if (!(p1 > 0.0)) throw std::domain_error("fine_step: p(s_1 = 1) = 0, zoom undefined");
    double h = 0.0;
    for (std::size_t k = 0; k < half; ++k) {
      const double v = p[2 * k + 1] / p1;
      if (v > 0.0) h -= v * std::log2(v);
    }
    h_zoomed = h;
    max_width = static_cast<double>(p.n() - 1);
  }

  double entropy(double q) const { return binary_entropy(q) + (1.0 - q) * h_zoomed + q * max_width; }

  /// dH/dq = log2((1-q)/q) - h_zoomed + (n-1) vanishes here.
  double argmax() const { return 1.0 / (1.0 + std::exp2(h_zoomed - max_width)); }
};

double distance(const DenseDistribution& prev, const DenseDistribution& next, ConvergenceMetric metric) {
  if (metric == ConvergenceMetric::kl) return kl_divergence_bits(next, prev);
  return total_variation(prev, next);
}

}  // namespace

void RgConfig::validate() const {
  if (!(target_entropy > 1.0))
    throw std::invalid_argument("RgConfig: target entropy must exceed 1 bit");
  if (!(alpha_tolerance > 0.0) || !(convergence_tolerance > 0.0))
    throw std::invalid_argument("RgConfig: tolerances must be positive");
  if (max_iterations == 0) throw std::invalid_argument("RgConfig: max_iterations must be positive");
  if (fixed_parameter && !(*fixed_parameter >= 0.0 && *fixed_parameter <= 1.0))
    throw std::invalid_argument("RgConfig: fixed parameter outside [0, 1]");
}

TransitionMatrix::TransitionMatrix(std::size_t n, double alpha) : n_(n), alpha_(alpha) {
  if (n == 0 || n > kMaxDenseWidth) throw std::invalid_argument("TransitionMatrix: n out of range");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("TransitionMatrix: alpha outside [0, 1]");
  const std::uint64_t size = std::uint64_t{1} << n;
  const std::uint64_t mask = size - 1;
  const double keep = 0.5 * (1.0 - alpha);
  rows_.resize(size);
  row_len_.resize(size);
  for (std::uint64_t s = 0; s < size; ++s) {
    const std::uint64_t j0 = (s << 1) & mask;
    auto& row = rows_[s];
    std::uint8_t len = 0;
    auto push = [&](std::uint64_t col, double v) {
      if (v <= 0.0) return;
      for (std::uint8_t e = 0; e < len; ++e) {
        if (row[e].col == col) {
          row[e].value += v;
          return;
        }
      }
      row[len++] = {col, v};
    };
    push(j0, keep);
    push(j0 | 1, keep);
    push(0, alpha);
    row_len_[s] = len;
  }
}

std::span<const TransitionMatrix::Entry> TransitionMatrix::row(std::uint64_t s) const {
  return {rows_.at(s).data(), row_len_[s]};
}

DenseDistribution TransitionMatrix::apply(const DenseDistribution& p) const {
  if (p.n() != n_) throw std::invalid_argument("TransitionMatrix::apply: width mismatch");
  std::vector<double> out(size(), 0.0);
  for (std::uint64_t s = 0; s < size(); ++s) {
    const double ps = p[s];
    if (ps == 0.0) continue;
    for (const auto& e : row(s)) out[e.col] += ps * e.value;
  }
  return DenseDistribution::normalized(n_, std::move(out));
}

std::vector<double> TransitionMatrix::dense() const {
  if (n_ > 12) throw std::invalid_argument("TransitionMatrix::dense: n > 12");
  const std::size_t sz = size();
  std::vector<double> m(sz * sz, 0.0);
  for (std::uint64_t s = 0; s < sz; ++s)
    for (const auto& e : row(s)) m[s * sz + e.col] += e.value;
  return m;
}

DenseDistribution marginalize_finest(const DenseDistribution& p) {
  if (p.n() < 2) throw std::invalid_argument("marginalize_finest: need n >= 2");
  const std::size_t half = p.size() / 2;
  std::vector<double> marg(half);
  for (std::size_t i = 0; i < half; ++i) marg[i] = p[i] + p[i + half];
  return DenseDistribution::normalized(p.n() - 1, std::move(marg));
}

DenseDistribution coarse_step(const DenseDistribution& p, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("coarse_step: alpha outside [0, 1]");
  std::vector<double> out(p.size());
  kernels::parallel::coarse_gather(p.probs(), alpha, out);
  return DenseDistribution::normalized(p.n(), std::move(out));
}

double coarse_entropy_gap(const DenseDistribution& p, double alpha, double target_entropy) {
  return CoarseEntropyModel(p).entropy(alpha) - target_entropy;
}

double solve_alpha(const DenseDistribution& p, double target_entropy, double tolerance) {
  const CoarseEntropyModel model(p);
  auto gap = [&](double a) { return model.entropy(a) - target_entropy; };
  const double at_one = gap(1.0);
  if (at_one >= 0.0)
    throw NoRootError("solve_alpha: entropy gap at alpha = 1 is non-negative (target entropy too small)");
  const double at_zero = gap(0.0);
  if (std::abs(at_zero) < tolerance) return 0.0;
  if (at_zero < 0.0)
    throw NoRootError("solve_alpha: target entropy exceeds the entropy reachable at alpha = 0");
  double lo = 0.0, hi = 1.0, mid = 0.5;
  for (int it = 0; it < kMaxBisection; ++it) {
    mid = 0.5 * (lo + hi);
    const double f = gap(mid);
    if (std::abs(f) < tolerance) return mid;
    if (f > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= std::numeric_limits<double>::epsilon() * 0.5) break;
  }
  return mid;
}

DenseDistribution fine_step(const DenseDistribution& p, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("fine_step: q outside [0, 1]");
  const std::size_t half = p.size() / 2;
  double p1 = 0.0;
  for (std::size_t k = 0; k < half; ++k) p1 += p[2 * k + 1];
  if (!(p1 > 0.0)) throw std::domain_error("fine_step: p(s_1 = 1) = 0, zoom undefined");
  std::vector<double> out(p.size());
  const double slice = q / static_cast<double>(half);
  for (std::size_t k = 0; k < half; ++k) {
    out[k] = (1.0 - q) * p[2 * k + 1] / p1;
    out[half + k] = slice;
  }
  return DenseDistribution::normalized(p.n(), std::move(out));
}

double fine_entropy(const DenseDistribution& p, double q) { return FineEntropyModel(p).entropy(q); }

QSolution solve_q(const DenseDistribution& p, double target_entropy, double tolerance) {
  const FineEntropyModel model(p);
  const double peak_q = model.argmax();
  const double peak_h = model.entropy(peak_q);
  const double low_h = model.entropy(0.0);
  if (target_entropy < low_h - tolerance || target_entropy > peak_h + tolerance)
    throw NoRootError("solve_q: target entropy outside the reachable range");
  // H(q) rises on [0, peak_q] and falls to H(1) = n - 1 after it
  const bool multiple = target_entropy > model.entropy(1.0) + tolerance && target_entropy < peak_h - tolerance;
  if (std::abs(target_entropy - low_h) < tolerance) return {0.0, multiple};
  if (std::abs(target_entropy - peak_h) < tolerance) return {peak_q, false};
  double lo = 0.0, hi = peak_q, mid = 0.5 * peak_q;
  for (int it = 0; it < kMaxBisection; ++it) {
    mid = 0.5 * (lo + hi);
    const double f = model.entropy(mid) - target_entropy;
    if (std::abs(f) < tolerance) break;
    if (f < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= std::numeric_limits<double>::epsilon() * 0.5 * hi) break;
  }
  return {mid, multiple};
}

TransitionMatrix build_transition_matrix(std::size_t n, double alpha) { return TransitionMatrix(n, alpha); }

DenseDistribution stationary_distribution(const TransitionMatrix& t, const DenseDistribution& start, double tol,
                                          std::size_t max_iter) {
  DenseDistribution p = start;
  for (std::size_t it = 0; it < max_iter; ++it) {
    DenseDistribution next = t.apply(p);
    const double d = total_variation(p, next);
    p = std::move(next);
    if (d < tol) break;
  }
  return p;
}

double fixed_point_alpha(double g) { return 1.0 - xi_of(g); }

DenseDistribution analytic_fixed_point(std::size_t n, double g) {
  if (!(g > kCriticalCoupling))
    throw std::domain_error("analytic_fixed_point: g must exceed g_c = ln 2; at or below the phase "
                            "boundary the coarse-graining fixed point is the uniform law");
  if (n == 0 || n > kMaxDenseWidth) throw std::invalid_argument("analytic_fixed_point: n out of range");
  const double em1 = std::expm1(g);
  const double hfm_coef = 1.0 - 1.0 / em1;
  const double flat = std::exp(-g * static_cast<double>(n)) / em1;
  std::vector<double> level(n + 1);
  level[0] = hfm_coef + flat;
  for (std::size_t m = 1; m <= n; ++m) level[m] = hfm_coef * std::exp(-g * static_cast<double>(m)) + flat;
  std::vector<double> p(std::size_t{1} << n);
  for (std::uint64_t idx = 0; idx < p.size(); ++idx) p[idx] = level[static_cast<std::size_t>(std::bit_width(idx))];
  return DenseDistribution::normalized(n, std::move(p));
}

RgResult iterate_to_fixed_point(const DenseDistribution& p0, const RgConfig& config, RgDirection direction) {
  config.validate();
  if (direction == RgDirection::fine && p0.n() < 2)
    throw std::invalid_argument("iterate_to_fixed_point: fine direction needs n >= 2");
  RgDiagnostics diag;
  DenseDistribution p = p0;
  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    double param = 0.0;
    DenseDistribution next = p;
    if (config.fixed_parameter) {
      param = *config.fixed_parameter;
      next = direction == RgDirection::coarse ? coarse_step(p, param) : fine_step(p, param);
    } else if (direction == RgDirection::coarse) {
      try {
        param = solve_alpha(p, config.target_entropy, config.alpha_tolerance);
      } catch (const NoRootError&) {
        // entropy falls with alpha, so the nearest end of [0, 1] is the best reachable step
        param = config.target_entropy > CoarseEntropyModel(p).entropy(0.0) ? 0.0 : 1.0;
        ++diag.clamped_steps;
      }
      next = coarse_step(p, param);
    } else {
      try {
        const auto sol = solve_q(p, config.target_entropy, config.alpha_tolerance);
        if (sol.multiple_roots) ++diag.multiple_root_steps;
        param = sol.q;
      } catch (const NoRootError&) {
        // unreachable target: q = 0 lowers the entropy, q* raises it as far as possible
        const FineEntropyModel model(p);
        param = config.target_entropy < model.entropy(0.0) ? 0.0 : model.argmax();
        ++diag.clamped_steps;
      }
      next = fine_step(p, param);
    }
    const double d = distance(p, next, config.metric);
    diag.alpha_trace.push_back(param);
    diag.distance_trace.push_back(d);
    diag.iterations = it + 1;
    p = std::move(next);
    if (d < config.convergence_tolerance) {
      diag.converged = true;
      break;
    }
  }
  return {std::move(p), std::move(diag)};
}

DenseDistribution random_distribution(std::size_t n, std::uint64_t seed) {
  if (n == 0 || n > kMaxDenseWidth) throw std::invalid_argument("random_distribution: n out of range");
  Rng rng(seed);
  std::vector<double> w(std::size_t{1} << n);
  for (auto& v : w) v = rng.exponential();
  return DenseDistribution::normalized(n, std::move(w));
}

nlohmann::json rg_report(const RgResult& result, const RgConfig& config, RgDirection direction) {
  const auto& d = result.diagnostics;
  nlohmann::json j;
  j["n"] = result.fixed_point.n();
  j["direction"] = direction == RgDirection::coarse ? "coarse" : "fine";
  j["target_entropy"] = config.target_entropy;
  j["fixed_parameter"] = config.fixed_parameter ? nlohmann::json(*config.fixed_parameter) : nlohmann::json();
  j["metric"] = config.metric == ConvergenceMetric::kl ? "kl" : "total_variation";
  j["alpha_final"] = d.alpha_trace.empty() ? 0.0 : d.alpha_trace.back();
  j["iterations"] = d.iterations;
  j["final_distance"] = d.distance_trace.empty() ? 0.0 : d.distance_trace.back();
  j["converged"] = d.converged;
  j["multiple_root_steps"] = d.multiple_root_steps;
  j["clamped_steps"] = d.clamped_steps;
  j["alpha_trace"] = d.alpha_trace;
  j["distance_trace"] = d.distance_trace;
  j["fixed_point"] = to_json(result.fixed_point);
  return j;
}

}  // namespace hfmrg
