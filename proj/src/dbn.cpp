#include "hfmrg/dbn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "hfmrg/kernels.hpp"

namespace hfmrg {

namespace {

using kernels::sigmoid;

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

/// s_j ~ Bernoulli(sigmoid(b_j + sum_i W_ij x_i)) for one binary row.
void sample_hidden_row(const RbmParams& rbm, std::span<const std::uint8_t> x, std::span<std::uint8_t> out,
                       std::vector<double>& acc, Rng& rng) {
  const std::size_t n = rbm.hidden();
  acc.assign(rbm.b.begin(), rbm.b.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x[i]) continue;
    const double* wr = rbm.w.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc[j] += wr[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] = rng.bernoulli(sigmoid(acc[j])) ? 1 : 0;
}

/// x_i ~ Bernoulli(sigmoid(c_i + sum_j W_ij s_j)) for one binary row.
void sample_visible_row(const RbmParams& rbm, std::span<const std::uint8_t> s, std::span<std::uint8_t> out,
                        Rng& rng) {
  const std::size_t n = rbm.hidden();
  for (std::size_t i = 0; i < rbm.visible(); ++i) {
    const double* wr = rbm.w.data.data() + i * n;
    double a = rbm.c[i];
    for (std::size_t j = 0; j < n; ++j)
      if (s[j]) a += wr[j];
    out[i] = rng.bernoulli(sigmoid(a)) ? 1 : 0;
  }
}

/// E[phi_0(x) | s^(1)] in closed form.
double phi_from_layer1(const RbmParams& rbm, const ObservableSpec& spec, std::span<const std::uint8_t> s) {
  const std::size_t n = rbm.hidden();
  double v = spec.offset;
  for (std::size_t i = 0; i < rbm.visible(); ++i) {
    if (spec.weights[i] == 0.0) continue;
    const double* wr = rbm.w.data.data() + i * n;
    double a = rbm.c[i];
    for (std::size_t j = 0; j < n; ++j)
      if (s[j]) a += wr[j];
    v += spec.weights[i] * sigmoid(a);
  }
  return v;
}

struct MeanSe {
  double mean;
  double se;
};

/// Batch-means estimate of the mean and its standard error.
MeanSe batch_means(const std::vector<double>& series, std::size_t batches) {
  const std::size_t n = series.size();
  batches = std::min(batches, n);
  const std::size_t len = n / batches;
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t t = b * len; t < (b + 1) * len; ++t) s += series[t];
    means[b] = s / static_cast<double>(len);
  }
  const double mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(batches);
  double var = 0.0;
  for (double m : means) var += (m - mean) * (m - mean);
  var = batches > 1 ? var / static_cast<double>(batches - 1) : 0.0;
  return {mean, std::sqrt(var / static_cast<double>(batches))};
}

class TapSolver {
 public:
  explicit TapSolver(const RbmParams& rbm) : rbm_(rbm), w2_(rbm.w) {
    for (auto& v : w2_.data) v *= v;
  }

  double update_s(std::size_t j, std::span<const double> mx, double msj) const {
    const std::size_t n = rbm_.hidden();
    double field = rbm_.b[j], onsager = 0.0;
    for (std::size_t i = 0; i < rbm_.visible(); ++i) {
      field += rbm_.w.data[i * n + j] * mx[i];
      onsager += w2_.data[i * n + j] * (mx[i] - mx[i] * mx[i]);
    }
    return sigmoid(field - (msj - 0.5) * onsager);
  }

  double update_x(std::size_t i, std::span<const double> ms, double mxi) const {
    const std::size_t n = rbm_.hidden();
    const double* wr = rbm_.w.data.data() + i * n;
    const double* w2r = w2_.data.data() + i * n;
    double field = rbm_.c[i], onsager = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      field += wr[j] * ms[j];
      onsager += w2r[j] * (ms[j] - ms[j] * ms[j]);
    }
    return sigmoid(field - (mxi - 0.5) * onsager);
  }

  double residual(std::span<const double> mx, std::span<const double> ms) const {
    double r = 0.0;
    for (std::size_t j = 0; j < rbm_.hidden(); ++j) r = std::max(r, std::abs(update_s(j, mx, ms[j]) - ms[j]));
    for (std::size_t i = 0; i < rbm_.visible(); ++i) r = std::max(r, std::abs(update_x(i, ms, mx[i]) - mx[i]));
    return r;
  }

  TapState solve(const TapState& init, const TapOptions& opt) const {
    TapState st = init;
    st.converged = false;
    st.iterations = 0;
    if (residual(st.m_x, st.m_s) < opt.tol) {
      st.converged = true;
      return st;
    }
    std::vector<double> next_s(rbm_.hidden()), next_x(rbm_.visible());
    for (std::size_t it = 1; it <= opt.max_iter; ++it) {
      for (std::size_t j = 0; j < next_s.size(); ++j)
        next_s[j] = (1.0 - opt.damping) * st.m_s[j] + opt.damping * update_s(j, st.m_x, st.m_s[j]);
      st.m_s = next_s;
      for (std::size_t i = 0; i < next_x.size(); ++i)
        next_x[i] = (1.0 - opt.damping) * st.m_x[i] + opt.damping * update_x(i, st.m_s, st.m_x[i]);
      st.m_x = next_x;
      st.iterations = it;
      if (residual(st.m_x, st.m_s) < opt.tol) {
        st.converged = true;
        break;
      }
    }
    return st;
  }

 private:
  const RbmParams& rbm_;
  Matrix w2_;
};

double max_norm_distance(const TapState& a, const TapState& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.m_x.size(); ++i) d = std::max(d, std::abs(a.m_x[i] - b.m_x[i]));
  for (std::size_t j = 0; j < a.m_s.size(); ++j) d = std::max(d, std::abs(a.m_s[j] - b.m_s[j]));
  return d;
}

void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

RbmParams RbmParams::zeros(std::size_t visible, std::size_t hidden) {
  return {Matrix(visible, hidden), std::vector<double>(visible, 0.0), std::vector<double>(hidden, 0.0)};
}

void RbmParams::validate() const {
  require(w.rows > 0 && w.cols > 0, "RbmParams: empty weight matrix");
  require(w.data.size() == w.rows * w.cols, "RbmParams: weight storage mismatch");
  require(c.size() == w.rows && b.size() == w.cols, "RbmParams: bias sizes do not match W");
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  require(finite(w.data) && finite(c) && finite(b), "RbmParams: non-finite parameter");
}

std::vector<std::size_t> DbnModel::sizes() const {
  std::vector<std::size_t> s;
  if (layers.empty()) return s;
  s.push_back(layers.front().visible());
  for (const auto& l : layers) s.push_back(l.hidden());
  return s;
}

void DbnModel::validate() const {
  require(!layers.empty(), "DbnModel: no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].validate();
    if (l > 0) require(layers[l].visible() == layers[l - 1].hidden(), "DbnModel: layer sizes do not chain");
  }
}

double free_energy(const RbmParams& rbm, std::span<const std::uint8_t> x) {
  require(x.size() == rbm.visible(), "free_energy: width mismatch");
  const std::size_t n = rbm.hidden();
  std::vector<double> acc(rbm.b);
  double f = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x[i]) continue;
    f -= rbm.c[i];
    const double* wr = rbm.w.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc[j] += wr[j];
  }
  for (double a : acc) f -= softplus(a);
  return f;
}

std::vector<double> rbm_conditional_hidden(const RbmParams& rbm, std::span<const std::uint8_t> x) {
  require(x.size() == rbm.visible(), "rbm_conditional_hidden: width mismatch");
  BinaryMatrix one(1, x.size());
  std::copy(x.begin(), x.end(), one.data.begin());
  const Matrix m = hidden_means(rbm, one);
  return m.data;
}

std::vector<double> rbm_conditional_visible(const RbmParams& rbm, std::span<const std::uint8_t> s) {
  require(s.size() == rbm.hidden(), "rbm_conditional_visible: width mismatch");
  BinaryMatrix one(1, s.size());
  std::copy(s.begin(), s.end(), one.data.begin());
  const Matrix m = visible_means(rbm, one);
  return m.data;
}

Matrix hidden_means(const RbmParams& rbm, const BinaryMatrix& x) {
  Matrix out;
  kernels::parallel::hidden_means(rbm.w, rbm.b, x, out);
  return out;
}

Matrix visible_means(const RbmParams& rbm, const BinaryMatrix& s) {
  Matrix out;
  kernels::parallel::visible_means(rbm.w, rbm.c, s, out);
  return out;
}

BinaryMatrix sample_rows(const Matrix& means, std::uint64_t seed, std::uint64_t first_row) {
  BinaryMatrix out(means.rows, means.cols);
  const auto rows = static_cast<std::ptrdiff_t>(means.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    Rng rng(mix_seed(seed, first_row + ru));
    const auto m = means.row(ru);
    auto o = out.row(ru);
    for (std::size_t j = 0; j < m.size(); ++j) o[j] = rng.bernoulli(m[j]) ? 1 : 0;
  }
  return out;
}

void TrainConfig::validate() const {
  require(k_steps > 0, "TrainConfig: k_steps must be positive");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "TrainConfig: learning_rate must be >= 0");
  require(batch_size > 0, "TrainConfig: batch_size must be positive");
  require(epochs > 0, "TrainConfig: epochs must be positive");
  require(n_chains > 0, "TrainConfig: n_chains must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"k_steps", c.k_steps},       {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"epochs", c.epochs},         {"n_chains", c.n_chains},           {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "k_steps") {
      c.k_steps = value.get<std::size_t>();
    } else if (key == "learning_rate") {
      c.learning_rate = value.get<double>();
    } else if (key == "batch_size") {
      c.batch_size = value.get<std::size_t>();
    } else if (key == "epochs") {
      c.epochs = value.get<std::size_t>();
    } else if (key == "n_chains") {
      c.n_chains = value.get<std::size_t>();
    } else if (key == "seed") {
      c.seed = value.get<std::uint64_t>();
    } else {
      throw std::invalid_argument("train config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

RbmGradient pcd_gradient(const RbmParams& rbm, const BinaryMatrix& batch, const BinaryMatrix& chains) {
  require(batch.rows > 0 && chains.rows > 0, "pcd_gradient: empty batch or chains");
  const std::size_t m = rbm.visible(), n = rbm.hidden();
  RbmGradient g{Matrix(m, n), std::vector<double>(m, 0.0), std::vector<double>(n, 0.0)};
  auto accumulate = [&](const BinaryMatrix& x, double sign) {
    const Matrix ph = hidden_means(rbm, x);
    const double scale = sign / static_cast<double>(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
      const auto xr = x.row(r);
      const auto hr = ph.row(r);
      for (std::size_t i = 0; i < m; ++i) {
        if (!xr[i]) continue;
        g.c[i] += scale;
        double* gw = g.w.data.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) gw[j] += scale * hr[j];
      }
      for (std::size_t j = 0; j < n; ++j) g.b[j] += scale * hr[j];
    }
  };
  accumulate(batch, 1.0);
  accumulate(chains, -1.0);
  return g;
}

PersistentChains::PersistentChains(const BinaryMatrix& init, std::uint64_t seed) : visible_(init) {
  rngs_.reserve(init.rows);
  for (std::size_t r = 0; r < init.rows; ++r) rngs_.emplace_back(mix_seed(seed, r));
}

void PersistentChains::advance(const RbmParams& rbm, std::size_t k) {
  const auto rows = static_cast<std::ptrdiff_t>(visible_.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    std::vector<std::uint8_t> h(rbm.hidden());
    std::vector<double> acc;
    auto v = visible_.row(ru);
    for (std::size_t step = 0; step < k; ++step) {
      sample_hidden_row(rbm, v, h, acc, rngs_[ru]);
      sample_visible_row(rbm, h, v, rngs_[ru]);
    }
  }
}

double pseudo_likelihood(const RbmParams& rbm, const BinaryMatrix& data, std::size_t max_rows) {
  const std::size_t rows = std::min(max_rows, data.rows);
  if (rows == 0) return 0.0;
  const std::size_t m = rbm.visible();
  double total = 0.0;
  std::vector<std::uint8_t> x(m);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = data.row(r);
    std::copy(row.begin(), row.end(), x.begin());
    const double f = free_energy(rbm, x);
    const std::size_t i = r % m;
    x[i] ^= 1;
    const double f_flip = free_energy(rbm, x);
    total += static_cast<double>(m) * -softplus(f - f_flip);
  }
  return total / static_cast<double>(rows);
}

RbmParams init_rbm(const BinaryMatrix& data, std::size_t hidden, std::uint64_t seed) {
  require(data.rows > 0 && data.cols > 0 && hidden > 0, "init_rbm: empty data or layer");
  RbmParams p = RbmParams::zeros(data.cols, hidden);
  Rng rng(seed);
  for (auto& v : p.w.data) v = rng.normal(0.0, 0.01);
  for (std::size_t i = 0; i < data.cols; ++i) {
    double on = 0.0;
    for (std::size_t r = 0; r < data.rows; ++r) on += data(r, i);
    const double q = std::clamp(on / static_cast<double>(data.rows), 1e-3, 1.0 - 1e-3);
    p.c[i] = std::log(q / (1.0 - q));
  }
  return p;
}

RbmTrainResult train_rbm(const BinaryMatrix& data, std::size_t hidden, const TrainConfig& config, std::size_t layer) {
  return train_rbm(data, init_rbm(data, hidden, mix_seed(config.seed, 3)), config, layer);
}

RbmTrainResult train_rbm(const BinaryMatrix& data, RbmParams params, const TrainConfig& config, std::size_t layer) {
  config.validate();
  params.validate();
  require(data.rows > 0, "train_rbm: empty data");
  require(data.cols == params.visible(), "train_rbm: data width does not match the visible layer");

  Rng order_rng(mix_seed(config.seed, 0));
  Rng init_rng(mix_seed(config.seed, 1));
  BinaryMatrix chain_init(config.n_chains, data.cols);
  for (std::size_t r = 0; r < config.n_chains; ++r) {
    const auto src = data.row(init_rng.below(data.rows));
    std::copy(src.begin(), src.end(), chain_init.row(r).begin());
  }
  PersistentChains chains(chain_init, mix_seed(config.seed, 2));

  std::vector<std::size_t> order(data.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RbmTrainResult result{std::move(params), {}};
  RbmParams& p = result.params;
  const double lr = config.learning_rate;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    fisher_yates(order, order_rng);
    double sq_norms = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < data.rows; start += config.batch_size) {
      const std::size_t end = std::min(start + config.batch_size, data.rows);
      BinaryMatrix batch(end - start, data.cols);
      for (std::size_t r = start; r < end; ++r) {
        const auto src = data.row(order[r]);
        std::copy(src.begin(), src.end(), batch.row(r - start).begin());
      }
      chains.advance(p, config.k_steps);
      const RbmGradient g = pcd_gradient(p, batch, chains.visible());
      double sq = 0.0;
      for (std::size_t k = 0; k < g.w.data.size(); ++k) {
        p.w.data[k] += lr * g.w.data[k];
        sq += g.w.data[k] * g.w.data[k];
      }
      for (std::size_t i = 0; i < g.c.size(); ++i) {
        p.c[i] += lr * g.c[i];
        sq += g.c[i] * g.c[i];
      }
      for (std::size_t j = 0; j < g.b.size(); ++j) {
        p.b[j] += lr * g.b[j];
        sq += g.b[j] * g.b[j];
      }
      sq_norms += sq;
      ++batches;
      double mean_abs = 0.0;
      for (double v : p.w.data) mean_abs += std::abs(v);
      mean_abs /= static_cast<double>(p.w.data.size());
      if (!(mean_abs <= kDivergenceGuard))
        throw DivergenceError("train_rbm: mean |W| exceeded " + std::to_string(kDivergenceGuard) + " at epoch " +
                              std::to_string(epoch + 1));
    }
    result.log.push_back(
        {layer, epoch + 1, pseudo_likelihood(p, data), std::sqrt(sq_norms / static_cast<double>(batches))});
  }
  return result;
}

DbnTrainResult train_dbn(const BinaryMatrix& data, std::span<const std::size_t> sizes, const TrainConfig& config) {
  require(sizes.size() >= 2, "train_dbn: need at least one hidden layer");
  require(sizes[0] == data.cols, "train_dbn: sizes[0] must equal the data width");
  for (std::size_t s : sizes) require(s > 0, "train_dbn: layer sizes must be positive");
  DbnTrainResult result;
  BinaryMatrix current = data;
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    TrainConfig cfg = config;
    if (l > 1) cfg.seed = mix_seed(config.seed, 100 + l);
    auto trained = train_rbm(current, sizes[l], cfg, l);
    result.log.insert(result.log.end(), trained.log.begin(), trained.log.end());
    if (l + 1 < sizes.size()) current = sample_rows(hidden_means(trained.params, current), mix_seed(cfg.seed, 4));
    result.model.layers.push_back(std::move(trained.params));
  }
  return result;
}

std::vector<BinaryMatrix> clamped_layers(const DbnModel& dbn, const BinaryMatrix& data, std::size_t passes,
                                         std::uint64_t seed) {
  dbn.validate();
  require(data.cols == dbn.layers.front().visible(), "clamped_layers: data width does not match the model");
  const std::size_t total = data.rows * passes;
  std::vector<BinaryMatrix> out;
  for (const auto& rbm : dbn.layers) out.emplace_back(total, rbm.hidden());
  const auto rows = static_cast<std::ptrdiff_t>(total);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t q = 0; q < rows; ++q) {
    const auto qu = static_cast<std::size_t>(q);
    Rng rng(mix_seed(seed, qu));
    std::vector<double> acc;
    std::span<const std::uint8_t> below = data.row(qu % data.rows);
    for (std::size_t l = 0; l < dbn.depth(); ++l) {
      auto dst = out[l].row(qu);
      sample_hidden_row(dbn.layers[l], below, dst, acc, rng);
      below = dst;
    }
  }
  return out;
}

EmpiricalSample clamped_sample(const DbnModel& dbn, const BinaryMatrix& data, std::size_t layer, std::size_t passes,
                               std::uint64_t seed) {
  require(layer >= 1 && layer <= dbn.depth(), "clamped_sample: layer out of range");
  auto all = clamped_layers(dbn, data, passes, seed);
  return to_sample(all[layer - 1]);
}

std::vector<Matrix> clamped_activations(const DbnModel& dbn, const BinaryMatrix& data) {
  dbn.validate();
  std::vector<Matrix> out;
  Matrix cur(data.rows, data.cols);
  for (std::size_t k = 0; k < data.data.size(); ++k) cur.data[k] = data.data[k];
  out.push_back(cur);
  for (const auto& rbm : dbn.layers) {
    const std::size_t n = rbm.hidden();
    Matrix next(cur.rows, n);
    for (std::size_t r = 0; r < cur.rows; ++r) {
      auto o = next.row(r);
      std::copy(rbm.b.begin(), rbm.b.end(), o.begin());
      const auto in = cur.row(r);
      for (std::size_t i = 0; i < rbm.visible(); ++i) {
        const double* wr = rbm.w.data.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) o[j] += wr[j] * in[i];
      }
      for (auto& v : o) v = sigmoid(v);
    }
    out.push_back(next);
    cur = std::move(next);
  }
  return out;
}

void EquilibriumConfig::validate() const {
  require(n_chains >= 1, "EquilibriumConfig: n_chains must be positive");
  require(thin >= 1, "EquilibriumConfig: thin must be positive");
}

BinaryMatrix sample_down(const DbnModel& dbn, const BinaryMatrix& states, std::size_t from, std::size_t to,
                         std::uint64_t seed) {
  require(from <= dbn.depth() && to <= from, "sample_down: layers out of range");
  const auto sizes = dbn.sizes();
  require(states.cols == sizes[from] || states.rows == 0, "sample_down: state width mismatch");
  if (from == to) return states;
  BinaryMatrix out(states.rows, sizes[to]);
  const auto rows = static_cast<std::ptrdiff_t>(states.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    Rng rng(mix_seed(seed, ru));
    std::vector<std::uint8_t> cur(states.row(ru).begin(), states.row(ru).end()), next;
    for (std::size_t l = from; l > to; --l) {
      next.assign(sizes[l - 1], 0);
      sample_visible_row(dbn.layers[l - 1], cur, next, rng);
      cur.swap(next);
    }
    std::copy(cur.begin(), cur.end(), out.row(ru).begin());
  }
  return out;
}

EquilibriumResult equilibrium_states(const DbnModel& dbn, std::size_t layer, const EquilibriumConfig& config,
                                     std::uint64_t seed) {
  dbn.validate();
  config.validate();
  const std::size_t depth = dbn.depth();
  require(layer <= depth, "equilibrium_states: layer out of range");
  const bool per_layer = config.mode == EquilibriumMode::per_layer;
  const std::size_t top = per_layer ? std::max<std::size_t>(layer, 1) : depth;
  const RbmParams& rbm = dbn.layers[top - 1];
  // The Gibbs pair is (top-1, top); read the requested layer off it or below it.
  const bool read_hidden = layer == top;
  const std::size_t width = read_hidden ? rbm.hidden() : rbm.visible();

  const std::size_t chains = config.n_chains;
  std::vector<BinaryMatrix> per_chain(chains);
  std::vector<std::vector<double>> activity(chains);
  const auto nc = static_cast<std::ptrdiff_t>(chains);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < nc; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    const std::size_t quota = config.n_samples / chains + (cu < config.n_samples % chains ? 1 : 0);
    Rng rng(mix_seed(seed, cu));
    std::vector<std::uint8_t> v(rbm.visible()), h(rbm.hidden());
    std::vector<double> acc;
    for (auto& b : v) b = rng.bernoulli(0.5) ? 1 : 0;
    BinaryMatrix rec(0, width);
    rec.data.reserve(quota * width);
    for (std::size_t step = 0; rec.rows < quota; ++step) {
      sample_hidden_row(rbm, v, h, acc, rng);
      if (step >= config.burn_in && (step - config.burn_in) % config.thin == 0) {
        rec.append_row(read_hidden ? std::span<const std::uint8_t>(h) : std::span<const std::uint8_t>(v));
        const double on = static_cast<double>(std::accumulate(h.begin(), h.end(), 0u));
        activity[cu].push_back(on / static_cast<double>(h.size()));
      }
      sample_visible_row(rbm, h, v, rng);
    }
    per_chain[cu] = std::move(rec);
  }

  EquilibriumResult res;
  BinaryMatrix gibbs(0, width);
  for (const auto& m : per_chain) {
    gibbs.data.insert(gibbs.data.end(), m.data.begin(), m.data.end());
    gibbs.rows += m.rows;
  }
  for (std::size_t a = 0; a < chains; ++a) {
    for (std::size_t b = a + 1; b < chains; ++b) {
      if (activity[a].size() < 2 || activity[b].size() < 2) continue;
      const auto ma = batch_means(activity[a], 10), mb = batch_means(activity[b], 10);
      const double se = std::sqrt(ma.se * ma.se + mb.se * mb.se);
      const double diff = std::abs(ma.mean - mb.mean);
      const double z = se > 0.0 ? diff / se : (diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
      res.max_z = std::max(res.max_z, z);
    }
  }
  res.converged = res.max_z < 3.0;
  const std::size_t read_at = read_hidden ? top : top - 1;
  res.states = sample_down(dbn, gibbs, read_at, layer, mix_seed(seed, 1u << 20));
  return res;
}

EmpiricalSample equilibrium_sample(const DbnModel& dbn, std::size_t layer, const EquilibriumConfig& config,
                                   std::uint64_t seed) {
  require(layer >= 1, "equilibrium_sample: layer must be in [1, L]");
  return to_sample(equilibrium_states(dbn, layer, config, seed).states);
}

BinaryMatrix generate(const DbnModel& dbn, std::size_t count, std::size_t burn_in, std::uint64_t seed) {
  EquilibriumConfig cfg;
  cfg.n_samples = count;
  cfg.burn_in = burn_in;
  return equilibrium_states(dbn, 0, cfg, seed).states;
}

double ObservableSpec::operator()(std::span<const std::uint8_t> x) const {
  require(x.size() == weights.size(), "ObservableSpec: width mismatch");
  double v = offset;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i]) v += weights[i];
  return v;
}

double ObservableSpec::lower() const {
  double v = offset;
  for (double w : weights) v += std::min(w, 0.0);
  return v;
}

double ObservableSpec::upper() const {
  double v = offset;
  for (double w : weights) v += std::max(w, 0.0);
  return v;
}

ObservableSpec left_minus_right(std::size_t side) {
  require(side >= 2, "left_minus_right: side must be at least 2");
  ObservableSpec s{"left_minus_right", std::vector<double>(side * side, 0.0), 0.0};
  const double scale = 1.0 / static_cast<double>(side * (side / 2));
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side / 2; ++c) {
      s.weights[r * side + c] = scale;
      s.weights[r * side + side - 1 - c] = -scale;
    }
  }
  return s;
}

ObservableSpec top_minus_bottom(std::size_t side) {
  require(side >= 2, "top_minus_bottom: side must be at least 2");
  ObservableSpec s{"top_minus_bottom", std::vector<double>(side * side, 0.0), 0.0};
  const double scale = 1.0 / static_cast<double>(side * (side / 2));
  for (std::size_t r = 0; r < side / 2; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      s.weights[r * side + c] = scale;
      s.weights[(side - 1 - r) * side + c] = -scale;
    }
  }
  return s;
}

std::vector<PhiEstimate> propagate_observable(const DbnModel& dbn, const ObservableSpec& spec, std::size_t layer,
                                              const BinaryMatrix& states, std::size_t rollouts, std::uint64_t seed) {
  dbn.validate();
  const auto sizes = dbn.sizes();
  require(layer <= dbn.depth(), "propagate_observable: layer out of range");
  require(spec.weights.size() == sizes[0], "propagate_observable: observable width mismatch");
  require(states.cols == sizes[layer] || states.rows == 0, "propagate_observable: state width mismatch");
  require(layer < 2 || rollouts > 0, "propagate_observable: rollouts must be positive");
  std::vector<PhiEstimate> out(states.rows);
  const auto rows = static_cast<std::ptrdiff_t>(states.rows);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    const auto s = states.row(ru);
    if (layer == 0) {
      out[ru] = {spec(s), 0.0};
      continue;
    }
    if (layer == 1) {
      out[ru] = {phi_from_layer1(dbn.layers[0], spec, s), 0.0};
      continue;
    }
    Rng rng(mix_seed(seed, ru));
    std::vector<std::uint8_t> cur, next;
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t k = 0; k < rollouts; ++k) {
      cur.assign(s.begin(), s.end());
      for (std::size_t l = layer; l > 1; --l) {
        next.assign(sizes[l - 1], 0);
        sample_visible_row(dbn.layers[l - 1], cur, next, rng);
        cur.swap(next);
      }
      const double v = phi_from_layer1(dbn.layers[0], spec, cur);
      sum += v;
      sum_sq += v * v;
    }
    const double n = static_cast<double>(rollouts);
    const double mean = sum / n;
    const double var = rollouts > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0)) : 0.0;
    out[ru] = {mean, std::sqrt(var / n)};
  }
  return out;
}

MartingaleResult martingale_check(const DbnModel& dbn, const ObservableSpec& spec, std::size_t layer,
                                  const BinaryMatrix& states, std::size_t rollouts, std::uint64_t seed) {
  require(layer >= 1 && layer <= dbn.depth(), "martingale_check: layer out of range");
  require(states.rows >= 3, "martingale_check: need at least 3 states");
  const auto x = propagate_observable(dbn, spec, layer, states, rollouts, mix_seed(seed, 1));
  const BinaryMatrix children = sample_down(dbn, states, layer, layer - 1, mix_seed(seed, 2));
  const auto y = propagate_observable(dbn, spec, layer - 1, children, rollouts, mix_seed(seed, 3));

  const std::size_t n = x.size();
  const double nd = static_cast<double>(n);
  double mx = 0.0, my = 0.0, noise_x = 0.0, noise_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i].value;
    my += y[i].value;
    noise_x += x[i].standard_error * x[i].standard_error;
    noise_y += y[i].standard_error * y[i].standard_error;
  }
  mx /= nd;
  my /= nd;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i].value - mx, dy = y[i].value - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  // Centering removes a 1/n share of the independent estimation noise.
  noise_x *= (nd - 1.0) / nd;
  noise_y *= (nd - 1.0) / nd;
  MartingaleResult res;
  res.layer = layer;
  res.pairs = n;
  res.phi_variance = sxx / nd;
  if (!(sxx > 0.0)) throw std::domain_error("martingale_check: phi_l is constant over the states");
  const double sxx_true = std::max(sxx - noise_x, 0.05 * sxx);
  const double syy_true = std::max(syy - noise_y, 0.05 * syy);
  res.slope_uncorrected = sxy / sxx;
  res.slope = sxy / sxx_true;
  res.reverse_slope = syy_true > 0.0 ? sxy / syy_true : 0.0;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = (y[i].value - my) - res.slope * (x[i].value - mx);
    rss += e * e;
  }
  const double se = std::sqrt(rss / (nd - 2.0) / sxx_true);
  res.ci_low = res.slope - 1.96 * se;
  res.ci_high = res.slope + 1.96 * se;
  return res;
}

void TapOptions::validate() const {
  require(damping > 0.0 && damping <= 1.0, "TapOptions: damping must be in (0, 1]");
  require(tol > 0.0, "TapOptions: tol must be positive");
  require(max_iter > 0, "TapOptions: max_iter must be positive");
}

double tap_residual(const RbmParams& rbm, std::span<const double> m_x, std::span<const double> m_s) {
  require(m_x.size() == rbm.visible() && m_s.size() == rbm.hidden(), "tap_residual: width mismatch");
  return TapSolver(rbm).residual(m_x, m_s);
}

TapState tap_solve(const RbmParams& rbm, const TapState& init, const TapOptions& options) {
  options.validate();
  rbm.validate();
  require(init.m_x.size() == rbm.visible() && init.m_s.size() == rbm.hidden(), "tap_solve: width mismatch");
  auto inside = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0 && x < 1.0; });
  };
  require(inside(init.m_x) && inside(init.m_s), "tap_solve: initial magnetizations must lie in (0, 1)");
  return TapSolver(rbm).solve(init, options);
}

TapCount tap_count_solutions(const RbmParams& rbm, const Matrix& inits_x, const Matrix& inits_s, double dedup_tol,
                             const TapOptions& options) {
  options.validate();
  rbm.validate();
  require(inits_x.rows == inits_s.rows, "tap_count_solutions: init row counts differ");
  require(inits_x.cols == rbm.visible() && inits_s.cols == rbm.hidden(), "tap_count_solutions: init width mismatch");
  const TapSolver solver(rbm);
  std::vector<TapState> solved(inits_x.rows);
  const auto rows = static_cast<std::ptrdiff_t>(inits_x.rows);
  constexpr double kEdge = 1e-6;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    TapState init;
    for (double v : inits_x.row(ru)) init.m_x.push_back(std::clamp(v, kEdge, 1.0 - kEdge));
    for (double v : inits_s.row(ru)) init.m_s.push_back(std::clamp(v, kEdge, 1.0 - kEdge));
    solved[ru] = solver.solve(init, options);
  }
  TapCount out;
  for (auto& st : solved) {
    if (!st.converged) {
      ++out.unconverged;
      continue;
    }
    ++out.converged;
    const bool seen = std::any_of(out.solutions.begin(), out.solutions.end(),
                                  [&](const TapState& rep) { return max_norm_distance(rep, st) < dedup_tol; });
    if (!seen) out.solutions.push_back(std::move(st));
  }
  out.distinct = out.solutions.size();
  return out;
}

nlohmann::json to_json(const RbmParams& rbm) {
  return {{"visible", rbm.visible()}, {"hidden", rbm.hidden()}, {"W", rbm.w.data}, {"c", rbm.c}, {"b", rbm.b}};
}

RbmParams rbm_from_json(const nlohmann::json& j) {
  const auto m = j.at("visible").get<std::size_t>();
  const auto n = j.at("hidden").get<std::size_t>();
  RbmParams p = RbmParams::zeros(m, n);
  p.w.data = j.at("W").get<std::vector<double>>();
  p.c = j.at("c").get<std::vector<double>>();
  p.b = j.at("b").get<std::vector<double>>();
  p.validate();
  return p;
}

nlohmann::json to_json(const DbnModel& dbn, const TrainConfig& config) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : dbn.layers) layers.push_back(to_json(l));
  return {{"format", "hfmrg-dbn"},
          {"version", 1},
          {"sizes", dbn.sizes()},
          {"layers", layers},
          {"train_config", to_json(config)},
          {"seed", config.seed}};
}

DbnModel dbn_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "hfmrg-dbn") throw std::invalid_argument("dbn_from_json: not a DBN file");
  if (j.value("version", 0) != 1) throw std::invalid_argument("dbn_from_json: unsupported version");
  DbnModel d;
  for (const auto& l : j.at("layers")) d.layers.push_back(rbm_from_json(l));
  d.validate();
  if (d.sizes() != j.at("sizes").get<std::vector<std::size_t>>())
    throw std::invalid_argument("dbn_from_json: sizes do not match the layers");
  return d;
}

void save_dbn(const std::string& path, const DbnModel& dbn, const TrainConfig& config) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dbn: cannot open " + path);
  out << to_json(dbn, config).dump() << '\n';
}

DbnModel load_dbn(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dbn: cannot open " + path);
  return dbn_from_json(nlohmann::json::parse(in));
}

EmpiricalSample to_sample(const BinaryMatrix& rows) {
  EmpiricalSample out(rows.cols);
  if (rows.cols <= 64) {
    std::unordered_map<std::uint64_t, std::uint64_t> agg;
    for (std::size_t r = 0; r < rows.rows; ++r) {
      std::uint64_t idx = 0;
      const auto row = rows.row(r);
      for (std::size_t i = 0; i < row.size(); ++i)
        if (row[i]) idx |= std::uint64_t{1} << i;
      ++agg[idx];
    }
    EmpiricalSample::Counts counts;
    for (const auto& [idx, c] : agg) counts.emplace(FeatureState::from_index(rows.cols, idx), c);
    return EmpiricalSample(rows.cols, std::move(counts));
  }
  for (std::size_t r = 0; r < rows.rows; ++r) out.add(FeatureState::from_bits(rows.row(r)));
  return out;
}

}  // namespace hfmrg
