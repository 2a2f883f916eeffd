#include "hfmrg/exact.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hfmrg/kernels.hpp"

namespace hfmrg::exact {

namespace {

using kernels::sigmoid;

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void require_dense(std::size_t width, const char* what) {
  if (width == 0 || width > kMaxDenseWidth) throw std::invalid_argument(std::string(what) + ": layer too wide");
}

std::vector<std::uint8_t> bits_of(std::uint64_t idx, std::size_t width) {
  std::vector<std::uint8_t> b(width);
  for (std::size_t i = 0; i < width; ++i) b[i] = (idx >> i) & 1U;
  return b;
}

std::uint64_t index_of(std::span<const std::uint8_t> bits) {
  std::uint64_t idx = 0;
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) idx |= std::uint64_t{1} << i;
  return idx;
}

/// Normalizes unnormalized log weights.
DenseDistribution from_log_weights(std::size_t n, std::vector<double> logw) {
  const double top = *std::max_element(logw.begin(), logw.end());
  for (auto& v : logw) v = std::exp(v - top);
  return DenseDistribution::normalized(n, std::move(logw));
}

/// Conditional law of the other side, one product-Bernoulli row per source state.
DenseDistribution mix_products(std::size_t out_width, const DenseDistribution& src,
                               const std::vector<std::vector<double>>& means) {
  std::vector<double> out(std::size_t{1} << out_width, 0.0);
  for (std::uint64_t s = 0; s < src.size(); ++s) {
    const double ps = src[s];
    if (ps == 0.0) continue;
    const auto& m = means[s];
    for (std::uint64_t t = 0; t < out.size(); ++t) {
      double p = ps;
      for (std::size_t i = 0; i < out_width; ++i) p *= ((t >> i) & 1U) ? m[i] : 1.0 - m[i];
      out[t] += p;
    }
  }
  return DenseDistribution::normalized(out_width, std::move(out));
}

}  // namespace

DenseDistribution rbm_visible(const RbmParams& rbm) {
  require_dense(rbm.visible(), "rbm_visible");
  std::vector<double> logw(std::size_t{1} << rbm.visible());
  for (std::uint64_t x = 0; x < logw.size(); ++x) logw[x] = -free_energy(rbm, bits_of(x, rbm.visible()));
  return from_log_weights(rbm.visible(), std::move(logw));
}

DenseDistribution rbm_hidden(const RbmParams& rbm) {
  require_dense(rbm.hidden(), "rbm_hidden");
  const std::size_t m = rbm.visible(), n = rbm.hidden();
  std::vector<double> logw(std::size_t{1} << n);
  for (std::uint64_t s = 0; s < logw.size(); ++s) {
    double v = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if ((s >> j) & 1U) v += rbm.b[j];
    for (std::size_t i = 0; i < m; ++i) {
      double a = rbm.c[i];
      for (std::size_t j = 0; j < n; ++j)
        if ((s >> j) & 1U) a += rbm.w(i, j);
      v += softplus(a);
    }
    logw[s] = v;
  }
  return from_log_weights(n, std::move(logw));
}

DenseDistribution propagate_down(const RbmParams& rbm, const DenseDistribution& upper) {
  require_dense(rbm.visible(), "propagate_down");
  if (upper.n() != rbm.hidden()) throw std::invalid_argument("propagate_down: width mismatch");
  std::vector<std::vector<double>> means(upper.size());
  for (std::uint64_t s = 0; s < upper.size(); ++s) means[s] = rbm_conditional_visible(rbm, bits_of(s, rbm.hidden()));
  return mix_products(rbm.visible(), upper, means);
}

DenseDistribution propagate_up(const RbmParams& rbm, const DenseDistribution& lower) {
  require_dense(rbm.hidden(), "propagate_up");
  if (lower.n() != rbm.visible()) throw std::invalid_argument("propagate_up: width mismatch");
  std::vector<std::vector<double>> means(lower.size());
  for (std::uint64_t x = 0; x < lower.size(); ++x) means[x] = rbm_conditional_hidden(rbm, bits_of(x, rbm.visible()));
  return mix_products(rbm.hidden(), lower, means);
}

DenseDistribution dbn_equilibrium(const DbnModel& dbn, std::size_t layer, EquilibriumMode mode) {
  dbn.validate();
  if (layer > dbn.depth()) throw std::invalid_argument("dbn_equilibrium: layer out of range");
  if (mode == EquilibriumMode::per_layer) {
    if (layer == 0) return rbm_visible(dbn.layers.front());
    return rbm_hidden(dbn.layers[layer - 1]);
  }
  const std::size_t top = dbn.depth();
  if (layer == top) return rbm_hidden(dbn.layers[top - 1]);
  DenseDistribution p = rbm_visible(dbn.layers[top - 1]);
  for (std::size_t l = top - 1; l > layer; --l) p = propagate_down(dbn.layers[l - 1], p);
  return p;
}

DenseDistribution dbn_clamped(const DbnModel& dbn, const BinaryMatrix& data, std::size_t layer) {
  dbn.validate();
  if (layer < 1 || layer > dbn.depth()) throw std::invalid_argument("dbn_clamped: layer out of range");
  DenseDistribution p = empirical_dense(data);
  for (std::size_t l = 1; l <= layer; ++l) p = propagate_up(dbn.layers[l - 1], p);
  return p;
}

DenseDistribution empirical_dense(const BinaryMatrix& rows) {
  require_dense(rows.cols, "empirical_dense");
  if (rows.rows == 0) throw std::invalid_argument("empirical_dense: no rows");
  std::vector<double> counts(std::size_t{1} << rows.cols, 0.0);
  for (std::size_t r = 0; r < rows.rows; ++r) counts[index_of(rows.row(r))] += 1.0;
  return DenseDistribution::normalized(rows.cols, std::move(counts));
}

DenseDistribution dense_from_sample(const EmpiricalSample& sample) {
  require_dense(sample.width(), "dense_from_sample");
  if (sample.empty()) throw std::invalid_argument("dense_from_sample: empty sample");
  std::vector<double> counts(std::size_t{1} << sample.width(), 0.0);
  for (const auto& [state, count] : sample) counts[state.index()] += static_cast<double>(count);
  return DenseDistribution::normalized(sample.width(), std::move(counts));
}

double log_likelihood(const RbmParams& rbm, const BinaryMatrix& data) {
  const DenseDistribution p = rbm_visible(rbm);
  double total = 0.0;
  for (std::size_t r = 0; r < data.rows; ++r) total += std::log(p[index_of(data.row(r))]);
  return total / static_cast<double>(data.rows);
}

RbmGradient log_likelihood_gradient(const RbmParams& rbm, const BinaryMatrix& data) {
  const std::size_t m = rbm.visible(), n = rbm.hidden();
  RbmGradient g{Matrix(m, n), std::vector<double>(m, 0.0), std::vector<double>(n, 0.0)};
  auto add = [&](std::span<const std::uint8_t> x, double weight) {
    const auto h = rbm_conditional_hidden(rbm, x);
    for (std::size_t i = 0; i < m; ++i) {
      if (!x[i]) continue;
      g.c[i] += weight;
      for (std::size_t j = 0; j < n; ++j) g.w(i, j) += weight * h[j];
    }
    for (std::size_t j = 0; j < n; ++j) g.b[j] += weight * h[j];
  };
  const double inv = 1.0 / static_cast<double>(data.rows);
  for (std::size_t r = 0; r < data.rows; ++r) add(data.row(r), inv);
  const DenseDistribution p = rbm_visible(rbm);
  for (std::uint64_t x = 0; x < p.size(); ++x) add(bits_of(x, m), -p[x]);
  return g;
}

}  // namespace hfmrg::exact
