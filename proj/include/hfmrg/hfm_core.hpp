#pragma once

#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "hfmrg/feature_state.hpp"

namespace hfmrg {

/// g_c = ln 2, the coupling at which xi = 2 e^{-g} crosses 1.
inline constexpr double kCriticalCoupling = std::numbers::ln2;

/// Dense distributions hold 2^n entries; this caps memory at 8 MiB.
inline constexpr std::size_t kMaxDenseWidth = 20;

/// Closed forms switch to their xi = 1 limit branch inside this band.
inline constexpr double kXiLimitBand = 1e-9;

/// xi = 2 e^{-g}.
double xi_of(double g);

/// sum_{j=0}^{k-1} xi^j for xi = 2 e^{-g}, accurate across xi = 1.
double geometric_sum(double g, std::size_t k);

/// (n, g) of the Hierarchical Feature Model h_n(s) = e^{-g m_s} / Z_n.
/// g is in nats and may be +infinity (point mass on the featureless state).
class HfmParams {
 public:
  HfmParams(std::size_t n, double g);

  std::size_t n() const noexcept { return n_; }
  double g() const noexcept { return g_; }
  double partition() const noexcept { return z_; }
  double xi() const noexcept { return xi_of(g_); }

 private:
  std::size_t n_;
  double g_;
  double z_;
};

/// Explicit probability vector over all 2^n states, indexed by
/// sum_i s_i 2^(i-1).
class DenseDistribution {
 public:
  /// Validates non-negativity, unit mass (1e-10) and n <= kMaxDenseWidth.
  DenseDistribution(std::size_t n, std::vector<double> probs);

  /// Rescales non-negative weights to unit mass.
  static DenseDistribution normalized(std::size_t n, std::vector<double> weights);
  static DenseDistribution uniform(std::size_t n);
  static DenseDistribution point_mass(std::size_t n, std::uint64_t index);

  std::size_t n() const noexcept { return n_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::uint64_t index) const { return probs_[index]; }
  double prob(const FeatureState& s) const;
  std::span<const double> probs() const noexcept { return probs_; }

 private:
  std::size_t n_;
  std::vector<double> probs_;
};

/// Shannon entropy in bits.
double entropy_bits(std::span<const double> probs);
inline double entropy_bits(const DenseDistribution& p) { return entropy_bits(p.probs()); }

double total_variation(const DenseDistribution& a, const DenseDistribution& b);

/// KL(a || b) in bits; +infinity when a has mass where b has none.
double kl_divergence_bits(const DenseDistribution& a, const DenseDistribution& b);

/// Binary entropy h(x) in bits.
double binary_entropy(double x);

nlohmann::json to_json(const DenseDistribution& p);
DenseDistribution dense_from_json(const nlohmann::json& j);

/// m_s = max{k : s_k = 1}, 0 for the featureless state.
std::size_t m_of(const FeatureState& s);

/// Z_n = 1 + sum_{k=1}^n 2^{k-1} e^{-g k}.
double hfm_partition(std::size_t n, double g);

/// Probability of a single state at level m.
double hfm_level_state_prob(const HfmParams& params, std::size_t m);
/// Natural log of the probability of a single state at level m.
double hfm_level_state_log_prob(const HfmParams& params, std::size_t m);

double hfm_prob(const HfmParams& params, const FeatureState& s);
double hfm_log_prob(const HfmParams& params, const FeatureState& s);

/// h_n as a dense vector (n <= kMaxDenseWidth).
DenseDistribution hfm_dense(const HfmParams& params);

/// Draws count states: level m from p(m), bits below m uniform, bit m set.
EmpiricalSample hfm_sample(const HfmParams& params, std::uint64_t count, std::uint64_t seed);

/// H[s] in bits, O(n) by grouping states per level.
double hfm_entropy(const HfmParams& params);

/// E[m_s] under h_n.
double hfm_mean_level(const HfmParams& params);

/// Weights of a two-component mixture: `model` multiplies the reduced HFM,
/// `other` the point mass (marginal_low) or the uniform law (marginal_high).
struct MixtureWeights {
  double model;
  double other;
};

MixtureWeights marginal_low_weights(const HfmParams& params, std::size_t k);
/// Distribution of s_{k+1:n} after summing out s_{1:k}; 1 <= k < n.
DenseDistribution marginal_low(const HfmParams& params, std::size_t k);

MixtureWeights marginal_high_weights(const HfmParams& params, std::size_t k);
/// Distribution of s_{1:k} after summing out s_{k+1:n}; 1 <= k < n.
DenseDistribution marginal_high(const HfmParams& params, std::size_t k);
/// Single-state evaluation of marginal_high for any k <= n (k = n gives h_n).
double marginal_high_prob(const HfmParams& params, const FeatureState& prefix);

/// H[E] in bits: entropy of the coding cost E = -log2 p, with states whose
/// costs differ by less than 1e-9 bits sharing a class.
double relevance(const DenseDistribution& p);

struct DegeneracyLevel {
  double coding_cost_bits;
  double states;  // W(E); exceeds 2^53 for wide models so kept in floating point
  std::size_t m;
};

struct DegeneracySpectrum {
  std::vector<DegeneracyLevel> levels;
  /// Least-squares slope of ln W against E in nats over levels m >= 1;
  /// empty when fewer than two such levels exist or costs are infinite.
  std::optional<double> slope;
};

DegeneracySpectrum degeneracy_spectrum(const HfmParams& params);

}  // namespace hfmrg
