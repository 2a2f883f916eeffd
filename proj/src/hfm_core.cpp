#include "hfmrg/hfm_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "hfmrg/rng.hpp"

namespace hfmrg {

namespace {

void require_positive_g(double g) {
  if (!(g > 0.0)) throw std::invalid_argument("HFM coupling g must be positive");
}

/// ln xi = ln 2 - g, exact for g = +inf.
double log_xi(double g) { return std::numbers::ln2 - g; }

/// xi^k without forming xi first.
double xi_pow(double g, std::size_t k) {
  if (k == 0) return 1.0;
  return std::exp(static_cast<double>(k) * log_xi(g));
}

/// Level mass P(m) = W_m * p_m.
double level_mass(const HfmParams& params, std::size_t m) {
  if (m == 0) return 1.0 / params.partition();
  return std::exp(static_cast<double>(m - 1) * std::numbers::ln2 - params.g() * static_cast<double>(m) -
                  std::log(params.partition()));
}

}  // namespace

double xi_of(double g) { return 2.0 * std::exp(-g); }

double geometric_sum(double g, std::size_t k) {
  if (k == 0) return 0.0;
  const double lx = log_xi(g);
  const double xi = std::exp(lx);
  if (std::abs(xi - 1.0) < kXiLimitBand) {
    // limit branch: the ratio form cancels catastrophically here
    double sum = 0.0;
    double term = 1.0;
    for (std::size_t j = 0; j < k; ++j) {
      sum += term;
      term *= xi;
    }
    return sum;
  }
  return std::expm1(static_cast<double>(k) * lx) / std::expm1(lx);
}

HfmParams::HfmParams(std::size_t n, double g) : n_(n), g_(g), z_(0.0) {
  if (n == 0) throw std::invalid_argument("HfmParams: n must be positive");
  require_positive_g(g);
  z_ = hfm_partition(n, g);
}

DenseDistribution::DenseDistribution(std::size_t n, std::vector<double> probs)
    : n_(n), probs_(std::move(probs)) {
  if (n == 0) throw std::invalid_argument("DenseDistribution: n must be positive");
  if (n > kMaxDenseWidth)
    throw std::invalid_argument("DenseDistribution: n exceeds the dense width limit of 20");
  if (probs_.size() != (std::size_t{1} << n))
    throw std::invalid_argument("DenseDistribution: expected 2^n probabilities");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0)) throw std::invalid_argument("DenseDistribution: negative or NaN probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-10)
    throw std::invalid_argument("DenseDistribution: probabilities do not sum to 1");
}

DenseDistribution DenseDistribution::normalized(std::size_t n, std::vector<double> weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("DenseDistribution::normalized: negative weight");
    sum += w;
  }
  if (!(sum > 0.0)) throw std::invalid_argument("DenseDistribution::normalized: zero total weight");
  for (double& w : weights) w /= sum;
  return DenseDistribution(n, std::move(weights));
}

DenseDistribution DenseDistribution::uniform(std::size_t n) {
  if (n > kMaxDenseWidth) throw std::invalid_argument("DenseDistribution: n exceeds 20");
  const std::size_t size = std::size_t{1} << n;
  return DenseDistribution(n, std::vector<double>(size, 1.0 / static_cast<double>(size)));
}

DenseDistribution DenseDistribution::point_mass(std::size_t n, std::uint64_t index) {
  if (n > kMaxDenseWidth) throw std::invalid_argument("DenseDistribution: n exceeds 20");
  std::vector<double> p(std::size_t{1} << n, 0.0);
  p.at(index) = 1.0;
  return DenseDistribution(n, std::move(p));
}

double DenseDistribution::prob(const FeatureState& s) const {
  if (s.width() != n_) throw std::invalid_argument("DenseDistribution::prob: width mismatch");
  return probs_[s.index()];
}

double entropy_bits(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log2(p);
  return h;
}

double total_variation(const DenseDistribution& a, const DenseDistribution& b) {
  if (a.n() != b.n()) throw std::invalid_argument("total_variation: width mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

double kl_divergence_bits(const DenseDistribution& a, const DenseDistribution& b) {
  if (a.n() != b.n()) throw std::invalid_argument("kl_divergence_bits: width mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] <= 0.0) continue;
    if (b[i] <= 0.0) return std::numeric_limits<double>::infinity();
    s += a[i] * std::log2(a[i] / b[i]);
  }
  return s;
}

double binary_entropy(double x) {
  double h = 0.0;
  if (x > 0.0) h -= x * std::log2(x);
  if (x < 1.0) h -= (1.0 - x) * std::log2(1.0 - x);
  return h;
}

nlohmann::json to_json(const DenseDistribution& p) {
  return nlohmann::json{{"n", p.n()}, {"probs", std::vector<double>(p.probs().begin(), p.probs().end())}};
}

DenseDistribution dense_from_json(const nlohmann::json& j) {
  const auto n = j.at("n").get<std::size_t>();
  auto probs = j.at("probs").get<std::vector<double>>();
  return DenseDistribution(n, std::move(probs));
}

std::size_t m_of(const FeatureState& s) { return s.level(); }

double hfm_partition(std::size_t n, double g) {
  if (n == 0) throw std::invalid_argument("hfm_partition: n must be positive");
  require_positive_g(g);
  return 1.0 + 0.5 * xi_of(g) * geometric_sum(g, n);
}

double hfm_level_state_log_prob(const HfmParams& params, std::size_t m) {
  if (m > params.n()) throw std::out_of_range("hfm level exceeds n");
  if (m == 0) return -std::log(params.partition());
  return -params.g() * static_cast<double>(m) - std::log(params.partition());
}

double hfm_level_state_prob(const HfmParams& params, std::size_t m) {
  return std::exp(hfm_level_state_log_prob(params, m));
}

double hfm_prob(const HfmParams& params, const FeatureState& s) {
  if (s.width() != params.n()) throw std::invalid_argument("hfm_prob: width mismatch");
  return hfm_level_state_prob(params, s.level());
}

double hfm_log_prob(const HfmParams& params, const FeatureState& s) {
  if (s.width() != params.n()) throw std::invalid_argument("hfm_log_prob: width mismatch");
  return hfm_level_state_log_prob(params, s.level());
}

DenseDistribution hfm_dense(const HfmParams& params) {
  const std::size_t n = params.n();
  if (n > kMaxDenseWidth) throw std::invalid_argument("hfm_dense: n exceeds 20");
  std::vector<double> level_p(n + 1);
  for (std::size_t m = 0; m <= n; ++m) level_p[m] = hfm_level_state_prob(params, m);
  std::vector<double> p(std::size_t{1} << n);
  for (std::uint64_t idx = 0; idx < p.size(); ++idx)
    p[idx] = level_p[static_cast<std::size_t>(std::bit_width(idx))];
  return DenseDistribution::normalized(n, std::move(p));
}

EmpiricalSample hfm_sample(const HfmParams& params, std::uint64_t count, std::uint64_t seed) {
  const std::size_t n = params.n();
  std::vector<double> cdf(n + 1);
  double acc = 0.0;
  for (std::size_t m = 0; m <= n; ++m) {
    acc += level_mass(params, m);
    cdf[m] = acc;
  }
  Rng rng(seed);
  auto draw_level = [&]() {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(n)));
  };

  if (n <= 64) {
    std::unordered_map<std::uint64_t, std::uint64_t> tally;
    for (std::uint64_t t = 0; t < count; ++t) {
      const std::size_t m = draw_level();
      std::uint64_t idx = 0;
      if (m > 0) {
        const std::uint64_t low_mask = m == 1 ? 0 : (~std::uint64_t{0} >> (64 - (m - 1)));
        idx = (rng.next() & low_mask) | (std::uint64_t{1} << (m - 1));
      }
      ++tally[idx];
    }
    EmpiricalSample::Counts counts;
    for (const auto& [idx, c] : tally) counts.emplace(FeatureState::from_index(n, idx), c);
    return EmpiricalSample(n, std::move(counts));
  }

  EmpiricalSample sample(n);
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::size_t m = draw_level();
    FeatureState s(n);
    if (m > 0) {
      auto words = s.words();
      const std::size_t low_bits = m - 1;
      for (std::size_t w = 0; w * 64 < low_bits; ++w) {
        std::uint64_t r = rng.next();
        const std::size_t remaining = low_bits - w * 64;
        if (remaining < 64) r &= (std::uint64_t{1} << remaining) - 1;
        words[w] = r;
      }
      s.set(m, true);
    }
    sample.add(s);
  }
  return sample;
}

double hfm_entropy(const HfmParams& params) {
  double h = 0.0;
  for (std::size_t m = 0; m <= params.n(); ++m) {
    const double mass = level_mass(params, m);
    if (mass > 0.0) h -= mass * hfm_level_state_log_prob(params, m);
  }
  return h / std::numbers::ln2;
}

double hfm_mean_level(const HfmParams& params) {
  double e = 0.0;
  for (std::size_t m = 1; m <= params.n(); ++m) e += static_cast<double>(m) * level_mass(params, m);
  return e;
}

MixtureWeights marginal_low_weights(const HfmParams& params, std::size_t k) {
  const std::size_t n = params.n();
  if (k < 1 || k >= n) throw std::out_of_range("marginal_low: k must satisfy 1 <= k < n");
  const double g = params.g();
  const double z = params.partition();
  const double model = xi_pow(g, k) * hfm_partition(n - k, g) / z;
  const double other = (1.0 - 0.5 * xi_of(g)) * geometric_sum(g, k) / z;
  return {model, other};
}

DenseDistribution marginal_low(const HfmParams& params, std::size_t k) {
  const auto w = marginal_low_weights(params, k);
  const auto reduced = hfm_dense(HfmParams(params.n() - k, params.g()));
  std::vector<double> p(reduced.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = w.model * reduced[i];
  p[0] += w.other;
  return DenseDistribution::normalized(reduced.n(), std::move(p));
}

MixtureWeights marginal_high_weights(const HfmParams& params, std::size_t k) {
  const std::size_t n = params.n();
  if (k < 1 || k > n) throw std::out_of_range("marginal_high: k must satisfy 1 <= k <= n");
  const double g = params.g();
  const double z = params.partition();
  // Z_n - Z_k = (xi^{k+1}/2) sum_{j<n-k} xi^j, formed directly to avoid cancellation
  const double tail = 0.5 * xi_pow(g, k + 1) * geometric_sum(g, n - k);
  return {hfm_partition(k, g) / z, tail / z};
}

DenseDistribution marginal_high(const HfmParams& params, std::size_t k) {
  if (k >= params.n()) throw std::out_of_range("marginal_high: k must satisfy 1 <= k < n");
  const auto w = marginal_high_weights(params, k);
  const auto reduced = hfm_dense(HfmParams(k, params.g()));
  const double u = std::ldexp(1.0, -static_cast<int>(k));
  std::vector<double> p(reduced.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = w.model * reduced[i] + w.other * u;
  return DenseDistribution::normalized(k, std::move(p));
}

double marginal_high_prob(const HfmParams& params, const FeatureState& prefix) {
  const std::size_t k = prefix.width();
  if (k == params.n()) return hfm_prob(params, prefix);
  const auto w = marginal_high_weights(params, k);
  const HfmParams reduced(k, params.g());
  return w.model * hfm_prob(reduced, prefix) + w.other * std::ldexp(1.0, -static_cast<int>(k));
}

double relevance(const DenseDistribution& p) {
  std::vector<std::pair<double, double>> cost_mass;
  cost_mass.reserve(p.size());
  for (double q : p.probs())
    if (q > 0.0) cost_mass.emplace_back(-std::log2(q), q);
  std::sort(cost_mass.begin(), cost_mass.end());
  double h = 0.0;
  std::size_t i = 0;
  while (i < cost_mass.size()) {
    const double start = cost_mass[i].first;
    double mass = 0.0;
    while (i < cost_mass.size() && cost_mass[i].first - start < 1e-9) mass += cost_mass[i++].second;
    if (mass > 0.0) h -= mass * std::log2(mass);
  }
  return h;
}

DegeneracySpectrum degeneracy_spectrum(const HfmParams& params) {
  DegeneracySpectrum spec;
  const std::size_t n = params.n();
  for (std::size_t m = 0; m <= n; ++m) {
    const double cost = -hfm_level_state_log_prob(params, m) / std::numbers::ln2;
    const double w = m == 0 ? 1.0 : std::ldexp(1.0, static_cast<int>(m) - 1);
    spec.levels.push_back({cost, w, m});
  }
  if (n < 2 || !std::isfinite(params.g())) return spec;

  std::vector<double> xs, ys;
  for (const auto& lvl : spec.levels) {
    if (lvl.m == 0) continue;
    xs.push_back(lvl.coding_cost_bits * std::numbers::ln2);
    ys.push_back(std::log(lvl.states));
  }
  const double count = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= count;
  my /= count;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx > 0.0) spec.slope = sxy / sxx;
  return spec;
}

}  // namespace hfmrg
