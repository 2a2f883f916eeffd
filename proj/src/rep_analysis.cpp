#include "hfmrg/rep_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "hfmrg/kernels.hpp"

namespace hfmrg {

namespace {

constexpr std::size_t kExhaustiveWidth = 8;
constexpr int kMaxBisection = 200;

std::size_t words_for(std::size_t width) { return (width + 63) / 64; }

struct Packed {
  std::size_t words = 1;
  std::vector<std::uint64_t> data;
  std::vector<std::uint64_t> counts;

  kernels::PackedStates view() const { return {words, data}; }
};

Packed pack(const EmpiricalSample& sample) {
  Packed p;
  p.words = words_for(sample.width());
  p.data.reserve(sample.distinct() * p.words);
  p.counts.reserve(sample.distinct());
  for (const auto& [state, count] : sample) {
    const auto w = state.words();
    p.data.insert(p.data.end(), w.begin(), w.end());
    p.counts.push_back(count);
  }
  return p;
}

std::vector<std::uint16_t> positions_of(std::span<const std::size_t> pi) {
  std::vector<std::uint16_t> pos(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) pos[pi[i]] = static_cast<std::uint16_t>(i + 1);
  return pos;
}

double entropy_of_counts(const EmpiricalSample& sample) {
  const double total = static_cast<double>(sample.total());
  double h = 0.0;
  for (const auto& [state, count] : sample) {
    const double p = static_cast<double>(count) / total;
    h -= p * std::log2(p);
  }
  return h;
}

void require_nonempty(const EmpiricalSample& sample, const char* what) {
  if (sample.empty()) throw std::invalid_argument(std::string(what) + ": empty sample");
}

/// E[m] under the uniform law on n bits, the g -> 0 limit of the HFM mean level.
double uniform_mean_level(std::size_t n) {
  double acc = 0.0;
  for (std::size_t m = 1; m <= n; ++m)
    acc += static_cast<double>(m) * std::ldexp(1.0, static_cast<int>(m) - 1 - static_cast<int>(n));
  return acc;
}

double sample_mean_level(const EmpiricalSample& sample) {
  double acc = 0.0;
  for (const auto& [state, count] : sample) acc += static_cast<double>(count) * static_cast<double>(state.level());
  return acc / static_cast<double>(sample.total());
}

/// Best-swap descent on sum_s k_s max_{j in s} pos(j). Swap deltas for all
/// pairs come from each state's two highest positions.
std::vector<std::size_t> descend_swaps(const EmpiricalSample& sample, std::vector<std::size_t> pi) {
  const std::size_t n = pi.size();
  struct Row {
    std::vector<std::size_t> bits;
    std::uint64_t count;
  };
  std::vector<Row> rows;
  rows.reserve(sample.distinct());
  for (const auto& [state, count] : sample) {
    Row r{{}, count};
    for (std::size_t j = 0; j < n; ++j)
      if (state.get(j + 1)) r.bits.push_back(j);
    if (!r.bits.empty()) rows.push_back(std::move(r));
  }
  std::vector<std::int64_t> delta(n * n);
  std::vector<std::uint8_t> in_state(n, 0);
  for (;;) {
    const auto pos = positions_of(pi);
    std::fill(delta.begin(), delta.end(), 0);
    for (const auto& r : rows) {
      std::int64_t p1 = 0, p2 = 0;
      for (std::size_t j : r.bits) {
        const std::int64_t v = pos[j];
        if (v > p1) {
          p2 = p1;
          p1 = v;
        } else if (v > p2) {
          p2 = v;
        }
        in_state[j] = 1;
      }
      const auto c = static_cast<std::int64_t>(r.count);
      for (std::size_t a : r.bits) {
        const std::int64_t others = pos[a] == p1 ? p2 : p1;
        std::int64_t* row = delta.data() + a * n;
        for (std::size_t b = 0; b < n; ++b) {
          if (in_state[b]) continue;
          row[b] += c * (std::max<std::int64_t>(others, pos[b]) - p1);
        }
      }
      for (std::size_t j : r.bits) in_state[j] = 0;
    }
    std::int64_t best = 0;
    std::vector<std::size_t> best_pi;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = i + 1; k < n; ++k) {
        const std::size_t a = pi[i], b = pi[k];
        const std::int64_t d = delta[a * n + b] + delta[b * n + a];
        if (d > best) continue;
        if (d == 0 && best == 0) continue;
        auto cand = pi;
        std::swap(cand[i], cand[k]);
        if (d < best || cand < best_pi) {
          best = d;
          best_pi = std::move(cand);
        }
      }
    }
    if (best >= 0) return pi;
    pi = std::move(best_pi);
  }
}

void collect_leaves(const PeakNode& node, std::vector<const PeakNode*>& out) {
  if (node.is_leaf()) {
    out.push_back(&node);
    return;
  }
  for (const auto& c : node.children) collect_leaves(c, out);
}

void collect_leaves_mut(PeakNode& node, std::vector<PeakNode*>& out) {
  if (node.is_leaf()) {
    out.push_back(&node);
    return;
  }
  for (auto& c : node.children) collect_leaves_mut(c, out);
}

PeakNode make_node(EmpiricalSample members, const FeatureState& apex, double root_total) {
  PeakNode node;
  node.apex = apex;
  node.weight = static_cast<double>(members.total()) / root_total;
  node.entropy_bits = entropy_of_counts(members);
  node.entropy_miller_madow = miller_madow_entropy(members);
  node.members = std::move(members);
  return node;
}

void split(PeakNode& node, std::size_t threshold, double root_total) {
  const auto& sample = node.members;
  std::vector<std::pair<FeatureState, std::uint64_t>> order(sample.begin(), sample.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (order.size() < 2) return;

  const std::size_t words = words_for(sample.width());
  std::vector<std::uint64_t> packed[2];
  EmpiricalSample peak[2] = {EmpiricalSample(sample.width()), EmpiricalSample(sample.width())};
  std::size_t second_apex = 0;
  auto join = [&](int which, const FeatureState& s, std::uint64_t count) {
    const auto w = s.words();
    packed[which].insert(packed[which].end(), w.begin(), w.end());
    peak[which].add(s, count);
  };
  join(0, order[0].first, order[0].second);
  bool have_second = false;
  for (std::size_t idx = 1; idx < order.size(); ++idx) {
    const auto& [state, count] = order[idx];
    const auto q = state.words();
    if (!have_second) {
      const std::size_t d1 =
          kernels::parallel::min_hamming(q, {words, packed[0]}, threshold == 0 ? 0 : threshold - 1);
      if (d1 < threshold) {
        join(0, state, count);
      } else {
        have_second = true;
        second_apex = idx;
        join(1, state, count);
      }
      continue;
    }
    const std::size_t d1 = kernels::parallel::min_hamming(q, {words, packed[0]}, 0);
    const std::size_t d2 = kernels::parallel::min_hamming(q, {words, packed[1]}, d1 == 0 ? 0 : d1 - 1);
    join(d2 < d1 ? 1 : 0, state, count);
  }
  if (!have_second) return;

  node.children.push_back(make_node(std::move(peak[0]), order[0].first, root_total));
  node.children.push_back(make_node(std::move(peak[1]), order[second_apex].first, root_total));
  for (auto& child : node.children) split(child, threshold, root_total);
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

GaugePerm GaugePerm::identity(std::size_t n) {
  GaugePerm g;
  g.tau.assign(n, 1);
  g.pi.resize(n);
  std::iota(g.pi.begin(), g.pi.end(), std::size_t{0});
  return g;
}

void GaugePerm::validate() const {
  if (tau.size() != pi.size()) throw std::invalid_argument("GaugePerm: tau and pi widths differ");
  std::vector<std::uint8_t> seen(pi.size(), 0);
  for (std::size_t v : pi) {
    if (v >= pi.size() || seen[v]) throw std::invalid_argument("GaugePerm: pi is not a permutation");
    seen[v] = 1;
  }
  for (auto t : tau)
    if (t > 1) throw std::invalid_argument("GaugePerm: tau entries must be 0 or 1");
}

GaugePerm inverse(const GaugePerm& g) {
  g.validate();
  GaugePerm inv;
  const std::size_t n = g.width();
  inv.pi.resize(n);
  inv.tau.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    inv.pi[g.pi[i]] = i;
    inv.tau[i] = g.tau[g.pi[i]];
  }
  return inv;
}

GaugePerm compose(const GaugePerm& g2, const GaugePerm& g1) {
  g1.validate();
  g2.validate();
  if (g1.width() != g2.width()) throw std::invalid_argument("compose: width mismatch");
  const std::size_t n = g1.width();
  std::vector<std::size_t> inv1(n);
  for (std::size_t i = 0; i < n; ++i) inv1[g1.pi[i]] = i;
  GaugePerm out;
  out.pi.resize(n);
  out.tau.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.pi[i] = g1.pi[g2.pi[i]];
  for (std::size_t j = 0; j < n; ++j) {
    const int flip = (1 - g1.tau[j]) ^ (1 - g2.tau[inv1[j]]);
    out.tau[j] = static_cast<std::uint8_t>(1 - flip);
  }
  return out;
}

FeatureState apply_gauge(const GaugePerm& g, const FeatureState& s) {
  if (g.width() != s.width()) throw std::invalid_argument("apply_gauge: width mismatch");
  FeatureState out(s.width());
  for (std::size_t i = 0; i < g.width(); ++i) {
    const std::size_t src = g.pi[i];
    out.set(i + 1, s.get(src + 1) != (g.tau[src] == 0));
  }
  return out;
}

EmpiricalSample apply_gauge(const GaugePerm& g, const EmpiricalSample& sample) {
  g.validate();
  EmpiricalSample out(sample.width());
  for (const auto& [state, count] : sample) out.add(apply_gauge(g, state), count);
  return out;
}

EmpiricalDistribution empirical_distribution(const EmpiricalSample& sample) {
  require_nonempty(sample, "empirical_distribution");
  EmpiricalDistribution d;
  d.width = sample.width();
  const double total = static_cast<double>(sample.total());
  for (const auto& [state, count] : sample) {
    d.states.push_back(state);
    d.counts.push_back(count);
    d.probs.push_back(static_cast<double>(count) / total);
  }
  return d;
}

double plugin_entropy(const EmpiricalSample& sample) {
  require_nonempty(sample, "plugin_entropy");
  return entropy_of_counts(sample);
}

double miller_madow_entropy(const EmpiricalSample& sample) {
  require_nonempty(sample, "miller_madow_entropy");
  const double k = static_cast<double>(sample.distinct());
  const double n = static_cast<double>(sample.total());
  return entropy_of_counts(sample) + (k - 1.0) / (2.0 * n * std::numbers::ln2);
}

FeatureState sample_mode(const EmpiricalSample& sample) {
  require_nonempty(sample, "sample_mode");
  const FeatureState* best = nullptr;
  std::uint64_t best_count = 0;
  for (const auto& [state, count] : sample) {
    if (count > best_count) {
      best = &state;
      best_count = count;
    }
  }
  return *best;
}

GaugeFixed gauge_fix(const EmpiricalSample& sample) {
  const FeatureState mode = sample_mode(sample);
  GaugePerm g = GaugePerm::identity(sample.width());
  for (std::size_t i = 0; i < g.width(); ++i) g.tau[i] = mode.get(i + 1) ? 0 : 1;
  return {g, apply_gauge(g, sample)};
}

std::uint64_t level_cost(const EmpiricalSample& sample, std::span<const std::size_t> pi) {
  if (pi.size() != sample.width()) throw std::invalid_argument("level_cost: width mismatch");
  const Packed p = pack(sample);
  const auto pos = positions_of(pi);
  return kernels::parallel::permutation_cost(p.view(), p.counts, pos);
}

GaugePerm optimize_permutation(const EmpiricalSample& sample, double g) {
  if (!(g > 0.0)) throw std::invalid_argument("optimize_permutation: g must be positive");
  const std::size_t n = sample.width();
  if (n > std::numeric_limits<std::uint16_t>::max()) throw std::invalid_argument("optimize_permutation: width too large");
  GaugePerm result = GaugePerm::identity(n);
  if (sample.empty() || n < 2) return result;
  const Packed packed = pack(sample);
  auto cost = [&](const std::vector<std::size_t>& pi) {
    const auto pos = positions_of(pi);
    return kernels::parallel::permutation_cost(packed.view(), packed.counts, pos);
  };

  if (n <= kExhaustiveWidth) {
    std::vector<std::size_t> pi = result.pi;
    std::uint64_t best = cost(pi);
    std::vector<std::size_t> best_pi = pi;
    while (std::next_permutation(pi.begin(), pi.end())) {
      const std::uint64_t c = cost(pi);
      if (c < best) {
        best = c;
        best_pi = pi;
      }
    }
    result.pi = std::move(best_pi);
    return result;
  }

  std::vector<std::uint64_t> active(n, 0);
  for (const auto& [state, count] : sample)
    for (std::size_t j = 0; j < n; ++j)
      if (state.get(j + 1)) active[j] += count;
  std::vector<std::size_t> pi = result.pi;
  std::stable_sort(pi.begin(), pi.end(), [&](std::size_t a, std::size_t b) { return active[a] > active[b]; });
  pi = descend_swaps(sample, std::move(pi));
  if (cost(pi) < cost(result.pi)) result.pi = std::move(pi);
  return result;
}

double kl_prefix(const EmpiricalSample& sample, const HfmParams& params, std::size_t k) {
  require_nonempty(sample, "kl_prefix");
  if (params.n() != sample.width()) throw std::invalid_argument("kl_prefix: model width differs from sample");
  if (k == 0 || k > sample.width()) throw std::invalid_argument("kl_prefix: prefix length out of range");
  const double total = static_cast<double>(sample.total());
  double kl = 0.0;
  auto term = [&](const FeatureState& prefix, std::uint64_t count) {
    const double p = static_cast<double>(count) / total;
    kl += p * (std::log2(p) - std::log2(marginal_high_prob(params, prefix)));
  };
  if (k == sample.width()) {
    for (const auto& [state, count] : sample) term(state, count);
  } else {
    std::map<FeatureState, std::uint64_t> marg;
    for (const auto& [state, count] : sample) marg[state.prefix(k)] += count;
    for (const auto& [prefix, count] : marg) term(prefix, count);
  }
  return std::max(kl, 0.0);
}

std::vector<std::pair<std::size_t, double>> kl_prefix_curve(const EmpiricalSample& sample, const HfmParams& params,
                                                            std::size_t n_max) {
  if (n_max < 2) throw std::invalid_argument("kl_prefix_curve: n_max must be at least 2");
  if (n_max > sample.width()) throw std::invalid_argument("kl_prefix_curve: n_max exceeds the layer width");
  std::vector<std::pair<std::size_t, double>> curve;
  for (std::size_t k = 2; k <= n_max; ++k) curve.emplace_back(k, kl_prefix(sample, params, k));
  return curve;
}

GFit fit_g(const EmpiricalSample& sample) {
  require_nonempty(sample, "fit_g");
  const std::size_t n = sample.width();
  const double mean = sample_mean_level(sample);
  auto expected = [n](double g) { return hfm_mean_level(HfmParams(n, g)); };
  if (mean <= expected(kFitGMax)) return {kFitGMax, true};
  if (mean >= expected(kFitGMin)) {
    if (mean >= uniform_mean_level(n))
      throw std::domain_error("fit_g: mean level at or above the g -> 0 limit; no HFM fits");
    return {kFitGMin, true};
  }
  double lo = kFitGMin, hi = kFitGMax;
  for (int it = 0; it < kMaxBisection && hi - lo > 1e-14 * lo; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (expected(mid) > mean) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {0.5 * (lo + hi), false};
}

std::optional<double> kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("kendall_tau_b: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });
  auto pairs = [](std::uint64_t t) { return t * (t - 1) / 2; };
  std::uint64_t x_ties = 0, joint_ties = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && x[idx[j]] == x[idx[i]]) ++j;
    x_ties += pairs(j - i);
    for (std::size_t a = i; a < j;) {
      std::size_t b = a + 1;
      while (b < j && y[idx[b]] == y[idx[a]]) ++b;
      joint_ties += pairs(b - a);
      a = b;
    }
    i = j;
  }
  // Merge sort on y counts pairs ordered by x but reversed in y.
  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
      std::size_t a = lo, b = mid, o = lo;
      while (a < mid && b < hi) {
        if (ys[b] < ys[a]) {
          swaps += mid - a;
          buf[o++] = ys[b++];
        } else {
          buf[o++] = ys[a++];
        }
      }
      while (a < mid) buf[o++] = ys[a++];
      while (b < hi) buf[o++] = ys[b++];
    }
    ys.swap(buf);
  }
  std::uint64_t y_ties = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && ys[j] == ys[i]) ++j;
    y_ties += pairs(j - i);
    i = j;
  }
  const std::uint64_t total = pairs(n);
  if (x_ties == total || y_ties == total) return std::nullopt;
  const double con_minus_dis = static_cast<double>(total) - static_cast<double>(x_ties) -
                               static_cast<double>(y_ties) + static_cast<double>(joint_ties) -
                               2.0 * static_cast<double>(swaps);
  const double denom = std::sqrt(static_cast<double>(total - x_ties)) * std::sqrt(static_cast<double>(total - y_ties));
  return std::clamp(con_minus_dis / denom, -1.0, 1.0);
}

std::optional<double> kendall_distance(const EmpiricalSample& sample) {
  std::vector<double> k, m;
  for (const auto& [state, count] : sample) {
    k.push_back(static_cast<double>(count));
    m.push_back(static_cast<double>(state.level()));
  }
  const auto tau = kendall_tau_b(k, m);
  if (!tau) return std::nullopt;
  return 1.0 + *tau;
}

FitResult fit_hfm(const EmpiricalSample& sample) {
  require_nonempty(sample, "fit_hfm");
  const std::size_t n = sample.width();
  FitResult r;
  const GaugeFixed fixed = gauge_fix(sample);
  const GaugePerm order = optimize_permutation(fixed.sample, 1.0);
  r.gauge = compose(order, fixed.gauge);
  const EmpiricalSample relabeled = apply_gauge(order, fixed.sample);
  try {
    const GFit fit = fit_g(relabeled);
    r.g_fit = fit.g;
    r.g_degenerate = fit.degenerate;
  } catch (const std::domain_error&) {
    r.g_fit = kFitGMin;
    r.g_degenerate = true;
  }
  const HfmParams params(n, r.g_fit);
  if (n >= 2) r.kl_curve = kl_prefix_curve(relabeled, params, n);
  r.kl_full = kl_prefix(relabeled, params, n);
  r.kendall_d = kendall_distance(relabeled);
  r.entropy_bits = entropy_of_counts(sample);
  r.entropy_miller_madow = miller_madow_entropy(sample);
  r.low_statistics = sample.total() < kLowStatisticsStates;
  return r;
}

std::size_t default_peak_threshold(std::size_t n) { return n / 3; }

PeakNode peak_decompose(const EmpiricalSample& sample, std::size_t threshold) {
  require_nonempty(sample, "peak_decompose");
  const double total = static_cast<double>(sample.total());
  PeakNode root = make_node(sample, sample_mode(sample), total);
  split(root, threshold, total);
  return root;
}

std::vector<const PeakNode*> leaves(const PeakNode& tree) {
  std::vector<const PeakNode*> out;
  collect_leaves(tree, out);
  return out;
}

PeakReport per_peak_report(PeakNode& tree) {
  std::vector<PeakNode*> ls;
  collect_leaves_mut(tree, ls);
  PeakReport rep;
  for (PeakNode* leaf : ls) {
    leaf->fit = fit_hfm(leaf->members);
    rep.leaves.push_back(*leaf->fit);
    rep.weights.push_back(leaf->weight);
    rep.weighted_kl += leaf->weight * leaf->fit->kl_full;
    rep.weighted_entropy += leaf->weight * leaf->entropy_bits;
  }
  return rep;
}

LayerAnalysis analyze_layer(const EmpiricalSample& sample) {
  return analyze_layer(sample, default_peak_threshold(sample.width()));
}

LayerAnalysis analyze_layer(const EmpiricalSample& sample, std::size_t threshold) {
  LayerAnalysis a;
  a.width = sample.width();
  a.samples = sample.total();
  a.whole = fit_hfm(sample);
  a.tree = peak_decompose(sample, threshold);
  a.peaks = per_peak_report(a.tree);
  return a;
}

nlohmann::json to_json(const GaugePerm& g) {
  return {{"tau", g.tau}, {"pi", g.pi}};
}

nlohmann::json to_json(const FitResult& f) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& [k, kl] : f.kl_curve) curve.push_back({k, kl});
  return {{"g_fit", f.g_fit},
          {"g_degenerate", f.g_degenerate},
          {"tau", f.gauge.tau},
          {"pi", f.gauge.pi},
          {"kl_curve", curve},
          {"kl_full", f.kl_full},
          {"kendall_d", optional_json(f.kendall_d)},
          {"entropy_bits", f.entropy_bits},
          {"entropy_miller_madow", f.entropy_miller_madow},
          {"low_statistics", f.low_statistics}};
}

nlohmann::json to_json(const PeakNode& node) {
  nlohmann::json j = {{"apex", node.apex.to_string()},
                      {"weight", node.weight},
                      {"states", node.members.total()},
                      {"distinct", node.members.distinct()},
                      {"entropy_bits", node.entropy_bits},
                      {"entropy_miller_madow", node.entropy_miller_madow}};
  if (node.fit) j["fit"] = to_json(*node.fit);
  nlohmann::json children = nlohmann::json::array();
  for (const auto& c : node.children) children.push_back(to_json(c));
  j["children"] = children;
  return j;
}

nlohmann::json layer_report(const LayerAnalysis& a, std::size_t layer) {
  nlohmann::json j = to_json(a.whole);
  j["layer"] = layer;
  j["n"] = a.width;
  j["samples"] = a.samples;
  j["peak_tree"] = to_json(a.tree);
  j["n_leaves"] = a.peaks.leaves.size();
  j["weighted_kl"] = a.peaks.weighted_kl;
  j["weighted_leaf_entropy"] = a.peaks.weighted_entropy;
  return j;
}

std::vector<std::string> layer_csv_rows(const LayerAnalysis& a, std::size_t layer) {
  std::vector<std::string> rows;
  auto emit = [&](std::size_t peak_id, const FitResult& f) {
    for (const auto& [k, kl] : f.kl_curve) {
      std::ostringstream os;
      os.precision(17);
      os << layer << ',' << k << ',' << peak_id << ',' << kl;
      rows.push_back(os.str());
    }
  };
  emit(0, a.whole);
  for (std::size_t i = 0; i < a.peaks.leaves.size(); ++i) emit(i + 1, a.peaks.leaves[i]);
  return rows;
}

}  // namespace hfmrg
