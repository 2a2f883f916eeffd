#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "hfmrg/hfm_core.hpp"

namespace hfmrg {

enum class ConvergenceMetric { total_variation, kl };
enum class RgDirection { coarse, fine };

/// Raised when an entropy-matching equation has no root in its domain.
class NoRootError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct RgConfig {
  double target_entropy = 0.0;  // bits
  double alpha_tolerance = 1e-12;
  std::size_t max_iterations = 500;
  ConvergenceMetric metric = ConvergenceMetric::total_variation;
  double convergence_tolerance = 1e-10;
  /// When set, alpha (coarse) or q (fine) stays at this value instead of
  /// being solved from target_entropy each step.
  std::optional<double> fixed_parameter;

  /// Throws std::invalid_argument unless target > 1 bit and tolerances > 0.
  void validate() const;
};

struct RgDiagnostics {
  std::size_t iterations = 0;
  /// alpha (coarse) or q (fine) per iteration.
  std::vector<double> alpha_trace;
  /// Metric between successive iterates.
  std::vector<double> distance_trace;
  /// Fine direction only: iterations where the entropy equation had two roots.
  std::size_t multiple_root_steps = 0;
  /// Iterations where the target was out of reach and the parameter was set to
  /// the nearest end of the reachable range (alpha in {0, 1}; q = 0 or the
  /// entropy maximizer).
  std::size_t clamped_steps = 0;
  bool converged = false;
};

/// Sparse stochastic matrix of one coarse step at fixed alpha: a random walk
/// with resetting on the de Bruijn graph. Row s has the two shifts
/// (0, s_{1:n-1}) and (1, s_{1:n-1}) with (1-alpha)/2 each plus alpha on the
/// featureless state.
class TransitionMatrix {
 public:
  struct Entry {
    std::uint64_t col;
    double value;
  };

  TransitionMatrix(std::size_t n, double alpha);

  std::size_t n() const noexcept { return n_; }
  double alpha() const noexcept { return alpha_; }
  std::size_t size() const noexcept { return std::size_t{1} << n_; }

  /// Nonzero entries of row s (two or three).
  std::span<const Entry> row(std::uint64_t s) const;

  /// Row vector times matrix, p' = p T, by scattering rows.
  DenseDistribution apply(const DenseDistribution& p) const;

  /// Dense copy; n <= 12.
  std::vector<double> dense() const;

 private:
  std::size_t n_;
  double alpha_;
  std::vector<std::array<Entry, 3>> rows_;
  std::vector<std::uint8_t> row_len_;
};

/// Drops s_n: the distribution of s_{1:n-1}.
DenseDistribution marginalize_finest(const DenseDistribution& p);

/// Re_up at fixed alpha: marginalize s_n, prepend a uniform s_1, mix with
/// the featureless state.
DenseDistribution coarse_step(const DenseDistribution& p, double alpha);

/// H[coarse_step(p, alpha)] - target, evaluated in closed form.
double coarse_entropy_gap(const DenseDistribution& p, double alpha, double target_entropy);

/// Unique alpha in [0, 1] with H[coarse_step(p, alpha)] = target, by bisection.
/// Throws NoRootError when the gap does not change sign on [0, 1].
double solve_alpha(const DenseDistribution& p, double target_entropy, double tolerance = 1e-12);

/// Re_down at fixed q: keep s_1 = 1, shift down, append s_n with
/// p(s_n = 1) = q whose slice is uniform. Requires n >= 2.
DenseDistribution fine_step(const DenseDistribution& p, double q);

/// H[fine_step(p, q)] in closed form.
double fine_entropy(const DenseDistribution& p, double q);

struct QSolution {
  double q;
  /// The target is also reached past the entropy maximum; the smaller root is returned.
  bool multiple_roots;
};

/// q with H[fine_step(p, q)] = target. Throws NoRootError when unreachable.
QSolution solve_q(const DenseDistribution& p, double target_entropy, double tolerance = 1e-12);

TransitionMatrix build_transition_matrix(std::size_t n, double alpha);

/// Power iteration p <- p T from `start` until total variation between
/// iterates drops below tol.
DenseDistribution stationary_distribution(const TransitionMatrix& t, const DenseDistribution& start,
                                          double tol = 1e-15, std::size_t max_iter = 100000);

/// p*(s) = (1 - 1/(e^g - 1)) e^{-g m_s} + e^{-g n}/(e^g - 1); g must exceed ln 2.
DenseDistribution analytic_fixed_point(std::size_t n, double g);

/// alpha = 1 - xi at which the analytic fixed point is stationary.
double fixed_point_alpha(double g);

struct RgResult {
  DenseDistribution fixed_point;
  RgDiagnostics diagnostics;
};

/// Alternates root solve and step until successive iterates are within the
/// configured tolerance. Non-convergence is reported in the diagnostics.
RgResult iterate_to_fixed_point(const DenseDistribution& p0, const RgConfig& config, RgDirection direction);

/// Dirichlet(1, ..., 1) draw over 2^n states.
DenseDistribution random_distribution(std::size_t n, std::uint64_t seed);

/// {n, g or target_entropy, alpha_final, iterations, final_distance, fixed_point, ...}
nlohmann::json rg_report(const RgResult& result, const RgConfig& config, RgDirection direction);

}  // namespace hfmrg
