#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfmrg/feature_state.hpp"
#include "hfmrg/matrix.hpp"
#include "hfmrg/rng.hpp"

namespace hfmrg {

/// Binary RBM p(x, s) ~ exp(x^T W s + c^T x + b^T s) with x visible (m) and s hidden (n).
struct RbmParams {
  Matrix w;               // m x n
  std::vector<double> c;  // visible bias
  std::vector<double> b;  // hidden bias

  static RbmParams zeros(std::size_t visible, std::size_t hidden);
  std::size_t visible() const noexcept { return w.rows; }
  std::size_t hidden() const noexcept { return w.cols; }
  /// Throws std::invalid_argument on inconsistent shapes or non-finite entries.
  void validate() const;

  friend bool operator==(const RbmParams&, const RbmParams&) = default;
};

/// Layer 0 is the visible data; RBM l joins layers l-1 and l.
struct DbnModel {
  std::vector<RbmParams> layers;

  std::size_t depth() const noexcept { return layers.size(); }
  /// (m, n_1, ..., n_L).
  std::vector<std::size_t> sizes() const;
  void validate() const;

  friend bool operator==(const DbnModel&, const DbnModel&) = default;
};

/// Free energy F(x) = -c^T x - sum_j softplus(b_j + (x^T W)_j); p(x) ~ exp(-F(x)).
double free_energy(const RbmParams& rbm, std::span<const std::uint8_t> x);

std::vector<double> rbm_conditional_hidden(const RbmParams& rbm, std::span<const std::uint8_t> x);
std::vector<double> rbm_conditional_visible(const RbmParams& rbm, std::span<const std::uint8_t> s);

/// Row-wise conditionals for a batch of binary states.
Matrix hidden_means(const RbmParams& rbm, const BinaryMatrix& x);
Matrix visible_means(const RbmParams& rbm, const BinaryMatrix& s);

/// Bernoulli draw per entry, one RNG per row seeded mix_seed(seed, first_row + r).
BinaryMatrix sample_rows(const Matrix& means, std::uint64_t seed, std::uint64_t first_row = 0);

struct TrainConfig {
  std::size_t k_steps = 10;
  double learning_rate = 0.01;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::size_t n_chains = 64;
  std::uint64_t seed = 1;

  /// All positive, except learning_rate which may be 0.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean |W_ij| above which training is aborted.
inline constexpr double kDivergenceGuard = 1e3;

struct TrainLogRow {
  std::size_t layer = 1;
  std::size_t epoch = 0;
  /// Mean over data of m log sigmoid(F(x) - F(x with one bit flipped)).
  double pseudo_likelihood = 0.0;
  /// Root mean square over batches of the gradient's Euclidean norm.
  double grad_norm = 0.0;
};

struct RbmGradient {
  Matrix w;
  std::vector<double> c;
  std::vector<double> b;
};

/// <x s^T>_data - <x s^T>_chains with hidden means on both sides.
RbmGradient pcd_gradient(const RbmParams& rbm, const BinaryMatrix& batch, const BinaryMatrix& chains);

/// Persistent chains of PCD-k. Each chain owns its RNG stream.
class PersistentChains {
 public:
  PersistentChains(const BinaryMatrix& init, std::uint64_t seed);
  /// k full Gibbs sweeps v -> s -> v on every chain.
  void advance(const RbmParams& rbm, std::size_t k);
  const BinaryMatrix& visible() const noexcept { return visible_; }

 private:
  BinaryMatrix visible_;
  std::vector<Rng> rngs_;
};

/// Mean over rows of m log sigmoid(F(x) - F(x')), x' flipping unit (row mod m).
double pseudo_likelihood(const RbmParams& rbm, const BinaryMatrix& data, std::size_t max_rows = 500);

struct RbmTrainResult {
  RbmParams params;
  std::vector<TrainLogRow> log;
};

/// Stochastic gradient ascent with PCD-k; deterministic given config.seed.
/// Throws DivergenceError when mean |W| exceeds kDivergenceGuard.
RbmTrainResult train_rbm(const BinaryMatrix& data, std::size_t hidden, const TrainConfig& config,
                         std::size_t layer = 1);
/// Continues from given parameters.
RbmTrainResult train_rbm(const BinaryMatrix& data, RbmParams init, const TrainConfig& config, std::size_t layer = 1);

/// Small random weights N(0, 0.01^2), hidden bias 0, visible bias log(p/(1-p)) of the data means.
RbmParams init_rbm(const BinaryMatrix& data, std::size_t hidden, std::uint64_t seed);

struct DbnTrainResult {
  DbnModel model;
  std::vector<TrainLogRow> log;
};

/// Greedy layerwise training; layer l trains on one stochastic forward pass of
/// the data through layers 1..l-1. sizes = (m, n_1, ..., n_L).
DbnTrainResult train_dbn(const BinaryMatrix& data, std::span<const std::size_t> sizes, const TrainConfig& config);

/// Layers 1..L of clamped states: for each datapoint and pass, s1 | x, s2 | s1, ...
/// Row (pass * N + i) belongs to datapoint i. Each (pass, i) has its own RNG stream.
std::vector<BinaryMatrix> clamped_layers(const DbnModel& dbn, const BinaryMatrix& data, std::size_t passes,
                                         std::uint64_t seed);

/// Clamped states of layer l in [1, L].
EmpiricalSample clamped_sample(const DbnModel& dbn, const BinaryMatrix& data, std::size_t layer, std::size_t passes,
                               std::uint64_t seed);

/// Deterministic mean-field pass m_l = sigmoid(b + W^T m_{l-1}) from the data; entry 0 is the data.
std::vector<Matrix> clamped_activations(const DbnModel& dbn, const BinaryMatrix& data);

enum class EquilibriumMode {
  /// Gibbs on the top RBM, then directed sampling down to the layer.
  top_down,
  /// Gibbs on RBM l itself, reading its hidden layer.
  per_layer,
};

struct EquilibriumConfig {
  std::size_t n_samples = 10000;
  std::size_t burn_in = 10000;
  std::size_t thin = 10;
  std::size_t n_chains = 2;
  EquilibriumMode mode = EquilibriumMode::top_down;

  void validate() const;
};

struct EquilibriumResult {
  BinaryMatrix states;
  /// |mean_1 - mean_2| / combined batch-means standard error of the average
  /// activation of the Gibbs layer, maximized over chain pairs.
  double max_z = 0.0;
  bool converged = true;
};

/// Equilibrium states of layer l in [0, L] (l = 0 is generation).
EquilibriumResult equilibrium_states(const DbnModel& dbn, std::size_t layer, const EquilibriumConfig& config,
                                     std::uint64_t seed);
EmpiricalSample equilibrium_sample(const DbnModel& dbn, std::size_t layer, const EquilibriumConfig& config,
                                   std::uint64_t seed);

/// Visible samples of the model, count rows.
BinaryMatrix generate(const DbnModel& dbn, std::size_t count, std::size_t burn_in, std::uint64_t seed);

/// Directed downward sampling from states of layer `from` to layer `to` < from.
BinaryMatrix sample_down(const DbnModel& dbn, const BinaryMatrix& states, std::size_t from, std::size_t to,
                         std::uint64_t seed);

/// phi_0(x) = offset + weights . x, a bounded linear observable of the visible layer.
struct ObservableSpec {
  std::string name;
  std::vector<double> weights;
  double offset = 0.0;

  double operator()(std::span<const std::uint8_t> x) const;
  double lower() const;
  double upper() const;
};

/// Normalized left-minus-right and top-minus-bottom pixel-mass differences on a side x side image.
ObservableSpec left_minus_right(std::size_t side);
ObservableSpec top_minus_bottom(std::size_t side);

struct PhiEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

/// phi_l(s) = E[phi_0(x) | s^(l) = s] per row of `states`. l = 0 evaluates phi_0,
/// l = 1 is exact, deeper layers average `rollouts` downward samples to layer 1
/// and finish with the exact layer-1 expectation.
std::vector<PhiEstimate> propagate_observable(const DbnModel& dbn, const ObservableSpec& spec, std::size_t layer,
                                              const BinaryMatrix& states, std::size_t rollouts, std::uint64_t seed);

struct MartingaleResult {
  std::size_t layer = 0;
  std::size_t pairs = 0;
  /// phi_{l-1}(s_{l-1}) on phi_l(s_l) over generative pairs, corrected for
  /// Monte Carlo noise in the regressor.
  double slope = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double slope_uncorrected = 0.0;
  /// phi_l on phi_{l-1}; shrinks below 1 as the martingale contracts.
  double reverse_slope = 0.0;
  double phi_variance = 0.0;
};

/// Regression over pairs (s_l from `states`, s_{l-1} ~ p(s_{l-1} | s_l)).
MartingaleResult martingale_check(const DbnModel& dbn, const ObservableSpec& spec, std::size_t layer,
                                  const BinaryMatrix& states, std::size_t rollouts, std::uint64_t seed);

struct TapState {
  std::vector<double> m_x;
  std::vector<double> m_s;
  bool converged = false;
  std::size_t iterations = 0;
};

struct TapOptions {
  double damping = 0.5;
  double tol = 1e-6;
  std::size_t max_iter = 1000;

  void validate() const;
};

/// Largest violation of the second-order TAP equations at (m_x, m_s).
double tap_residual(const RbmParams& rbm, std::span<const double> m_x, std::span<const double> m_s);

/// Damped iteration: m_s from m_x, then m_x from the new m_s, until the
/// residual drops below tol.
TapState tap_solve(const RbmParams& rbm, const TapState& init, const TapOptions& options = {});

struct TapCount {
  std::size_t distinct = 0;
  std::size_t converged = 0;
  std::size_t unconverged = 0;
  std::vector<TapState> solutions;
};

/// Solves from every init (rows of inits_x / inits_s) and merges converged
/// solutions within dedup_tol in max norm, in init order.
TapCount tap_count_solutions(const RbmParams& rbm, const Matrix& inits_x, const Matrix& inits_s, double dedup_tol,
                             const TapOptions& options = {});

nlohmann::json to_json(const RbmParams& rbm);
RbmParams rbm_from_json(const nlohmann::json& j);
/// {"format": "hfmrg-dbn", "version": 1, "sizes", "layers", "train_config"}
nlohmann::json to_json(const DbnModel& dbn, const TrainConfig& config);
DbnModel dbn_from_json(const nlohmann::json& j);
void save_dbn(const std::string& path, const DbnModel& dbn, const TrainConfig& config);
DbnModel load_dbn(const std::string& path);

/// Rows as states of width cols.
EmpiricalSample to_sample(const BinaryMatrix& rows);

}  // namespace hfmrg
