#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hfmrg/feature_state.hpp"
#include "hfmrg/hfm_core.hpp"

namespace hfmrg {

/// Relabeling G_{tau,pi}: s'_i = s_{pi(i)} when tau_{pi(i)} = 1 and its
/// complement otherwise. Indices are 0-based; tau is indexed by the original
/// feature.
struct GaugePerm {
  std::vector<std::uint8_t> tau;
  std::vector<std::size_t> pi;

  static GaugePerm identity(std::size_t n);
  std::size_t width() const noexcept { return pi.size(); }
  /// Throws std::invalid_argument unless pi is a bijection and tau is 0/1 of the same width.
  void validate() const;

  friend bool operator==(const GaugePerm&, const GaugePerm&) = default;
};

GaugePerm inverse(const GaugePerm& g);
/// g2 after g1.
GaugePerm compose(const GaugePerm& g2, const GaugePerm& g1);
FeatureState apply_gauge(const GaugePerm& g, const FeatureState& s);
EmpiricalSample apply_gauge(const GaugePerm& g, const EmpiricalSample& sample);

/// Maximum-likelihood frequencies, in state order.
struct EmpiricalDistribution {
  std::size_t width = 0;
  std::vector<FeatureState> states;
  std::vector<std::uint64_t> counts;
  std::vector<double> probs;
};

EmpiricalDistribution empirical_distribution(const EmpiricalSample& sample);

/// Plug-in entropy in bits.
double plugin_entropy(const EmpiricalSample& sample);
/// Plug-in entropy plus (K - 1) / (2 N ln 2) for K observed states.
double miller_madow_entropy(const EmpiricalSample& sample);

/// Most frequent state; ties go to the smallest state.
FeatureState sample_mode(const EmpiricalSample& sample);

struct GaugeFixed {
  GaugePerm gauge;
  EmpiricalSample sample;
};

/// tau_i = 1 - mode_i with identity pi, so the mode maps to the featureless state.
GaugeFixed gauge_fix(const EmpiricalSample& sample);

/// Minimizes KL(sample || h_n(g)) over pi with tau all ones. For g > 0 this
/// is the minimum of sum_s k_s m_s, so g only has to be positive.
/// Exhaustive for n <= 8, frequency order plus best-swap descent above.
GaugePerm optimize_permutation(const EmpiricalSample& sample, double g);

/// sum_s k_s m_s under the relabeling pi (tau ignored).
std::uint64_t level_cost(const EmpiricalSample& sample, std::span<const std::size_t> pi);

/// Plug-in KL in bits between the empirical law of s_{1:k} and the marginal
/// of h_{n}(g) on s_{1:k}, where n is the sample width.
double kl_prefix(const EmpiricalSample& sample, const HfmParams& params, std::size_t k);

/// (k, KL) for k = 2..n_max.
std::vector<std::pair<std::size_t, double>> kl_prefix_curve(const EmpiricalSample& sample, const HfmParams& params,
                                                            std::size_t n_max);

struct GFit {
  double g;
  /// The mean level sat outside the bracket and g was clamped to its edge.
  bool degenerate;
};

inline constexpr double kFitGMin = 1e-3;
inline constexpr double kFitGMax = 20.0;

/// Solves E_g[m] = sample mean of m_s on [kFitGMin, kFitGMax].
GFit fit_g(const EmpiricalSample& sample);

/// Kendall tau-b; empty when either variable is constant or fewer than 2 items.
std::optional<double> kendall_tau_b(std::span<const double> x, std::span<const double> y);

/// 1 + tau_b between counts k_s and levels m_s over observed states.
std::optional<double> kendall_distance(const EmpiricalSample& sample);

struct FitResult {
  double g_fit = 0.0;
  bool g_degenerate = false;
  GaugePerm gauge;
  std::vector<std::pair<std::size_t, double>> kl_curve;
  double kl_full = 0.0;
  std::optional<double> kendall_d;
  double entropy_bits = 0.0;
  double entropy_miller_madow = 0.0;
  bool low_statistics = false;
};

/// gauge_fix, optimize_permutation, fit_g, KL curve up to the full width and
/// Kendall distance on one sample.
FitResult fit_hfm(const EmpiricalSample& sample);

struct PeakNode {
  FeatureState apex;
  double weight = 0.0;
  EmpiricalSample members;
  std::vector<PeakNode> children;
  double entropy_bits = 0.0;
  double entropy_miller_madow = 0.0;
  /// Filled for leaves by per_peak_report.
  std::optional<FitResult> fit;

  bool is_leaf() const noexcept { return children.empty(); }
};

/// Default threshold floor(n / 3).
std::size_t default_peak_threshold(std::size_t n);

PeakNode peak_decompose(const EmpiricalSample& sample, std::size_t threshold);
inline PeakNode peak_decompose(const EmpiricalSample& sample) {
  return peak_decompose(sample, default_peak_threshold(sample.width()));
}

/// Leaves in depth-first order, first peak before second.
std::vector<const PeakNode*> leaves(const PeakNode& tree);

inline constexpr std::uint64_t kLowStatisticsStates = 100;

struct PeakReport {
  std::vector<FitResult> leaves;
  std::vector<double> weights;
  /// sum_a w_a KL_a at full width.
  double weighted_kl = 0.0;
  double weighted_entropy = 0.0;
};

/// Fits every leaf independently and stores the result on the leaf.
PeakReport per_peak_report(PeakNode& tree);

struct LayerAnalysis {
  std::size_t width = 0;
  std::uint64_t samples = 0;
  FitResult whole;
  PeakNode tree;
  PeakReport peaks;
};

LayerAnalysis analyze_layer(const EmpiricalSample& sample);
LayerAnalysis analyze_layer(const EmpiricalSample& sample, std::size_t threshold);

nlohmann::json to_json(const GaugePerm& g);
nlohmann::json to_json(const FitResult& f);
nlohmann::json to_json(const PeakNode& node);
/// {layer, n, g_fit, tau, pi, kl_curve, kendall_d, peak_tree, entropies, ...}
nlohmann::json layer_report(const LayerAnalysis& a, std::size_t layer);

/// CSV rows "layer,prefix_n,peak_id,kl_bits" with peak_id 0 for the whole sample
/// and 1.. for leaves in depth-first order. No header line.
std::vector<std::string> layer_csv_rows(const LayerAnalysis& a, std::size_t layer);

}  // namespace hfmrg
