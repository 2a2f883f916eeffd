#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "hfmrg/rep_analysis.hpp"
#include "hfmrg/rng.hpp"
#include "oracles.hpp"

using namespace hfmrg;
using doctest::Approx;

namespace {

GaugePerm random_gauge(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  GaugePerm g = GaugePerm::identity(n);
  std::shuffle(g.pi.begin(), g.pi.end(), rng.engine());
  for (auto& t : g.tau) t = rng.bernoulli(0.5) ? 1 : 0;
  return g;
}

/// Counts proportional to dyadic HFM probabilities at g = ln 2: 2^(n - m) per state.
EmpiricalSample exact_hfm_counts(std::size_t n) {
  EmpiricalSample e(n);
  for (std::uint64_t s = 0; s < (std::uint64_t{1} << n); ++s)
    e.add(FeatureState::from_index(n, s), std::uint64_t{1} << (n - oracle::level(s)));
  return e;
}

/// Plug-in KL of the empirical law on s_{1:k} against a dense model on s_{1:k}.
double brute_kl(const EmpiricalSample& e, const oracle::Probs& model, std::size_t k) {
  oracle::Probs emp(std::size_t{1} << k, 0.0);
  for (const auto& [s, c] : e) emp[s.prefix(k).index()] += static_cast<double>(c) / static_cast<double>(e.total());
  double kl = 0.0;
  for (std::size_t i = 0; i < emp.size(); ++i)
    if (emp[i] > 0) kl += emp[i] * std::log2(emp[i] / model[i]);
  return kl;
}

EmpiricalSample complement(const EmpiricalSample& e) {
  GaugePerm flip = GaugePerm::identity(e.width());
  std::fill(flip.tau.begin(), flip.tau.end(), 0);
  return apply_gauge(flip, e);
}

EmpiricalSample merge(const EmpiricalSample& a, const EmpiricalSample& b) {
  EmpiricalSample out = a;
  for (const auto& [s, c] : b) out.add(s, c);
  return out;
}

}  // namespace

TEST_CASE("gauge application follows the definition") {
  GaugePerm g{{1, 0, 1}, {2, 0, 1}};
  // s' = (s_3, s_1, 1 - s_2): tau is indexed by the original feature
  const auto out = apply_gauge(g, FeatureState::from_string("110"));
  CHECK(out.to_string() == "010");
  CHECK_THROWS(GaugePerm({{1, 1}, {0, 0}}).validate());
  CHECK_THROWS(GaugePerm({{1, 2}, {0, 1}}).validate());
  CHECK_THROWS(apply_gauge(g, FeatureState(4)));
}

TEST_CASE("inverse and composition are consistent") {
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t n = 2 + seed % 9;
    const auto g1 = random_gauge(n, seed), g2 = random_gauge(n, seed + 100);
    for (int t = 0; t < 20; ++t) {
      const auto s = FeatureState::from_index(n, rng.below(std::uint64_t{1} << n));
      CHECK(apply_gauge(inverse(g1), apply_gauge(g1, s)) == s);
      CHECK(apply_gauge(g1, apply_gauge(inverse(g1), s)) == s);
      CHECK(apply_gauge(compose(g2, g1), s) == apply_gauge(g2, apply_gauge(g1, s)));
    }
  }
  GaugePerm flips = GaugePerm::identity(5);
  flips.tau = {0, 1, 0, 0, 1};
  const auto e = hfm_sample(HfmParams(5, 1.0), 1000, 1);
  CHECK(apply_gauge(flips, apply_gauge(flips, e)) == e);
}

TEST_CASE("empirical distribution and entropies") {
  EmpiricalSample e(2);
  e.add(FeatureState::from_string("01"), 3);
  e.add(FeatureState::from_string("11"), 1);
  const auto d = empirical_distribution(e);
  REQUIRE(d.probs.size() == 2);
  CHECK(d.probs[0] == 0.75);
  CHECK(d.probs[1] == 0.25);
  CHECK(d.counts[0] == 3);
  CHECK(plugin_entropy(e) == Approx(oracle::entropy({0.75, 0.25})));
  CHECK(miller_madow_entropy(e) == Approx(oracle::entropy({0.75, 0.25}) + 1.0 / (8.0 * std::numbers::ln2)));
  CHECK_THROWS(empirical_distribution(EmpiricalSample(3)));

  EmpiricalSample single(4);
  single.add(FeatureState::from_string("0110"), 7);
  CHECK(empirical_distribution(single).probs == std::vector<double>{1.0});
  CHECK(plugin_entropy(single) == 0.0);

  const auto big = hfm_sample(HfmParams(8, 1.0), 1000000, 4);
  const auto h = oracle::hfm(8, 1.0);
  oracle::Probs emp(256, 0.0);
  const auto ed = empirical_distribution(big);
  for (std::size_t i = 0; i < ed.states.size(); ++i) emp[ed.states[i].index()] = ed.probs[i];
  CHECK(oracle::tv(emp, h) < 0.01);
}

TEST_CASE("gauge fixing") {
  EmpiricalSample e(4);
  e.add(FeatureState::from_string("0110"), 5);
  e.add(FeatureState::from_string("1110"), 2);
  const auto fixed = gauge_fix(e);
  CHECK(fixed.gauge.tau == std::vector<std::uint8_t>{1, 0, 0, 1});
  CHECK(sample_mode(fixed.sample).is_featureless());
  CHECK(gauge_fix(fixed.sample).gauge == GaugePerm::identity(4));

  EmpiricalSample tie(3);
  tie.add(FeatureState::from_string("011"), 2);
  tie.add(FeatureState::from_string("110"), 2);
  CHECK(sample_mode(tie).to_string() == "110");  // index 3 < index 6
}

TEST_CASE("permutation optimization recovers a planted order") {
  for (std::size_t n : {6u, 10u}) {
    const auto original = hfm_sample(HfmParams(n, 1.0), 100000, n);
    GaugePerm planted = GaugePerm::identity(n);
    Rng rng(n);
    std::shuffle(planted.pi.begin(), planted.pi.end(), rng.engine());
    const auto shuffled = apply_gauge(planted, original);
    const auto found = optimize_permutation(shuffled, 1.0);
    CHECK(apply_gauge(found, shuffled) == original);
    CHECK(optimize_permutation(original, 1.0) == GaugePerm::identity(n));
  }
}

TEST_CASE("optimized level cost never exceeds identity and is optimal for small n") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const std::size_t n = 3 + seed % 9;
    Rng rng(seed);
    EmpiricalSample e(n);
    for (int i = 0; i < 300; ++i) e.add(FeatureState::from_index(n, rng.below(std::uint64_t{1} << n) & rng.next()));
    std::vector<std::size_t> id(n);
    std::iota(id.begin(), id.end(), 0);
    const auto best = optimize_permutation(e, 0.7);
    CHECK(level_cost(e, best.pi) <= level_cost(e, id));
    CHECK(std::all_of(best.tau.begin(), best.tau.end(), [](auto t) { return t == 1; }));
    if (n <= 7) {
      std::uint64_t brute = UINT64_MAX;
      std::vector<std::size_t> pi = id;
      do {
        brute = std::min(brute, level_cost(e, pi));
      } while (std::next_permutation(pi.begin(), pi.end()));
      CHECK(level_cost(e, best.pi) == brute);
    }
  }
}

TEST_CASE("level cost matches a direct sum") {
  const auto e = hfm_sample(HfmParams(7, 0.8), 2000, 9);
  const std::vector<std::size_t> pi = {3, 0, 6, 1, 5, 2, 4};
  std::uint64_t direct = 0;
  for (const auto& [s, c] : e) {
    std::size_t m = 0;
    for (std::size_t i = 0; i < pi.size(); ++i)
      if (s.get(pi[i] + 1)) m = i + 1;
    direct += c * m;
  }
  CHECK(level_cost(e, pi) == direct);
}

TEST_CASE("prefix KL") {
  EmpiricalSample uniform(2);
  for (std::uint64_t s = 0; s < 4; ++s) uniform.add(FeatureState::from_index(2, s));
  CHECK(kl_prefix(uniform, HfmParams(2, std::numbers::ln2), 2) == Approx(0.25).epsilon(1e-12));

  const auto exact = exact_hfm_counts(6);
  for (const auto& [k, kl] : kl_prefix_curve(exact, HfmParams(6, std::numbers::ln2), 6)) CHECK(std::abs(kl) < 1e-12);

  const auto e = hfm_sample(HfmParams(7, 1.3), 5000, 2);
  const auto h = oracle::hfm(7, 0.9);
  for (std::size_t k = 2; k <= 7; ++k)
    CHECK(kl_prefix(e, HfmParams(7, 0.9), k) == Approx(brute_kl(e, oracle::marginal(h, 0, k), k)).epsilon(1e-10));

  CHECK_THROWS(kl_prefix_curve(e, HfmParams(7, 1.0), 1));
  CHECK_THROWS(kl_prefix_curve(e, HfmParams(7, 1.0), 8));
}

TEST_CASE("prefix KL of HFM samples sits at the plug-in bias floor") {
  const std::size_t n = 8, count = 100000, reps = 20;
  std::vector<double> mean(n + 1, 0.0);
  for (std::size_t r = 0; r < reps; ++r) {
    const auto e = hfm_sample(HfmParams(n, 0.5), count, 50 + r);
    for (const auto& [k, kl] : kl_prefix_curve(e, HfmParams(n, 0.5), n)) mean[k] += kl / reps;
  }
  for (std::size_t k = 2; k <= n; ++k) {
    const double floor = (std::ldexp(1.0, static_cast<int>(k)) - 1.0) / (2.0 * count * std::numbers::ln2);
    CAPTURE(k);
    CHECK(mean[k] > 0.6 * floor);
    CHECK(mean[k] < 1.4 * floor);
  }
}

TEST_CASE("KL is invariant under joint relabeling") {
  const std::size_t n = 5;
  const auto e = hfm_sample(HfmParams(n, 0.9), 3000, 6);
  const auto model = oracle::hfm(n, 1.4);
  const auto g = random_gauge(n, 77);
  oracle::Probs moved(model.size());
  for (std::uint64_t s = 0; s < model.size(); ++s) moved[apply_gauge(g, FeatureState::from_index(n, s)).index()] = model[s];
  CHECK(brute_kl(apply_gauge(g, e), moved, n) == Approx(brute_kl(e, model, n)).epsilon(1e-12));
}

TEST_CASE("fit_g") {
  const auto e = hfm_sample(HfmParams(10, 1.0), 1000000, 8);
  const auto fit = fit_g(e);
  CHECK(fit.g == Approx(1.0).epsilon(0.02));
  CHECK_FALSE(fit.degenerate);

  EmpiricalSample zero(6);
  zero.add(FeatureState(6), 50);
  CHECK(fit_g(zero).degenerate);
  CHECK(fit_g(zero).g == kFitGMax);

  EmpiricalSample dyadic(2);
  dyadic.add(FeatureState::from_string("00"), 4);
  dyadic.add(FeatureState::from_string("10"), 2);
  dyadic.add(FeatureState::from_string("01"), 1);
  dyadic.add(FeatureState::from_string("11"), 1);
  CHECK(fit_g(dyadic).g == Approx(std::numbers::ln2).epsilon(1e-9));

  EmpiricalSample top(3);
  top.add(FeatureState::from_string("111"), 10);
  CHECK_THROWS_AS(fit_g(top), std::domain_error);
}

TEST_CASE("kendall tau-b against pair enumeration") {
  Rng rng(12);
  for (int t = 0; t < 10; ++t) {
    std::vector<double> x(200), y(200);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = static_cast<double>(rng.below(15));
      y[i] = static_cast<double>(rng.below(6)) + 0.1 * x[i];
    }
    CHECK(*kendall_tau_b(x, y) == Approx(oracle::kendall_tau_b(x, y)).epsilon(1e-12));
  }
  CHECK_FALSE(kendall_tau_b(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}).has_value());
  CHECK_FALSE(kendall_tau_b(std::vector<double>{1}, std::vector<double>{1}).has_value());
}

TEST_CASE("kendall distance") {
  for (std::size_t n = 2; n <= 10; ++n) CHECK(*kendall_distance(exact_hfm_counts(n)) == Approx(0.0).epsilon(1e-12));
  for (double g : {0.3, 1.0, 2.0}) {
    EmpiricalSample e(6);
    const auto h = oracle::hfm(6, g);
    for (std::uint64_t s = 0; s < h.size(); ++s) e.add(FeatureState::from_index(6, s), static_cast<std::uint64_t>(1e12 * h[s]));
    CHECK(*kendall_distance(e) == Approx(0.0).epsilon(1e-12));
  }
  EmpiricalSample rising(5);
  for (std::uint64_t s = 0; s < 32; ++s) rising.add(FeatureState::from_index(5, s), 1 + oracle::level(s));
  CHECK(*kendall_distance(rising) == Approx(2.0).epsilon(1e-12));

  // permutation null: counts shuffled across states
  Rng rng(4);
  const std::size_t n = 7;
  std::vector<std::uint64_t> counts(std::size_t{1} << n);
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] = 1 + i;
  double mean = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    std::shuffle(counts.begin(), counts.end(), rng.engine());
    EmpiricalSample e(n);
    for (std::uint64_t s = 0; s < counts.size(); ++s) e.add(FeatureState::from_index(n, s), counts[s]);
    mean += *kendall_distance(e) / reps;
  }
  CHECK(mean == Approx(1.0).epsilon(0.03));

  EmpiricalSample one(3);
  one.add(FeatureState(3), 9);
  CHECK_FALSE(kendall_distance(one).has_value());
}

TEST_CASE("peak decomposition of a single HFM gives one leaf") {
  const auto e = hfm_sample(HfmParams(9, 1.0), 100000, 21);
  const auto tree = peak_decompose(e, 3);
  CHECK(tree.is_leaf());
  CHECK(tree.weight == 1.0);
  CHECK(tree.members == e);
  CHECK(default_peak_threshold(9) == 3);
  CHECK(default_peak_threshold(10) == 3);

  const auto twice = merge(e, e);
  CHECK(peak_decompose(twice, 3).is_leaf());
}

TEST_CASE("planted complement mixture splits into two peaks") {
  const std::size_t n = 9;
  // at g = 1 the components overlap so much that no rule attributes 99% (the
  // Bayes ceiling is 98.6%); at g = 1.5 the ceiling is 99.97%
  const auto a = hfm_sample(HfmParams(n, 1.5), 50000, 31);
  const auto b = complement(hfm_sample(HfmParams(n, 1.5), 50000, 32));
  const auto mix = merge(a, b);
  auto tree = peak_decompose(mix, 3);
  const auto ls = leaves(tree);
  REQUIRE(ls.size() == 2);

  double weight = 0.0, correct = 0.0;
  std::uint64_t members = 0;
  for (const auto* leaf : ls) {
    weight += leaf->weight;
    members += leaf->members.total();
    const auto& source = leaf->apex.popcount() < n / 2 ? a : b;
    for (const auto& [s, c] : leaf->members) correct += static_cast<double>(std::min(c, source.count(s)));
    CHECK(leaf->entropy_bits <= tree.entropy_bits);
  }
  CHECK(weight == Approx(1.0));
  CHECK(members == mix.total());
  CHECK(correct / static_cast<double>(mix.total()) >= 0.99);

  const auto again = peak_decompose(mix, 3);
  CHECK(leaves(again)[0]->members == ls[0]->members);

  const auto report = per_peak_report(tree);
  double wsum = std::accumulate(report.weights.begin(), report.weights.end(), 0.0);
  CHECK(wsum == Approx(1.0));
  CHECK(report.weighted_kl < fit_hfm(mix).kl_full);
  for (const auto* leaf : leaves(tree)) CHECK(leaf->fit.has_value());
}

TEST_CASE("single-leaf report reproduces the whole-sample fit") {
  const auto e = hfm_sample(HfmParams(8, 1.2), 20000, 5);
  const auto a = analyze_layer(e, 3);
  REQUIRE(a.peaks.leaves.size() == 1);
  CHECK(a.peaks.leaves[0].kl_full == a.whole.kl_full);
  CHECK(a.peaks.leaves[0].g_fit == a.whole.g_fit);
  CHECK(a.peaks.weighted_kl == a.whole.kl_full);
  CHECK(a.whole.kl_curve.size() == 7);
  CHECK(a.whole.kl_curve.back().first == 8);
  CHECK(a.whole.kendall_d.has_value());
  CHECK(*a.whole.kendall_d < 0.5);
  CHECK(a.whole.g_fit == Approx(1.2).epsilon(0.05));
}

TEST_CASE("fit_hfm undoes a random gauge") {
  const auto e = hfm_sample(HfmParams(7, 1.0), 50000, 14);
  const auto scrambled = apply_gauge(random_gauge(7, 5), e);
  const auto f = fit_hfm(scrambled);
  CHECK(apply_gauge(f.gauge, scrambled) == e);
  CHECK(f.kl_full == Approx(fit_hfm(e).kl_full).epsilon(1e-12));
}

TEST_CASE("low-statistics leaves are flagged") {
  const auto e = hfm_sample(HfmParams(6, 2.0), 60, 2);
  CHECK(fit_hfm(e).low_statistics);
  CHECK_FALSE(fit_hfm(hfm_sample(HfmParams(6, 0.3), 20000, 2)).low_statistics);
}

TEST_CASE("report and csv output") {
  const std::size_t n = 6;
  const auto mix = merge(hfm_sample(HfmParams(n, 1.0), 5000, 1), complement(hfm_sample(HfmParams(n, 1.0), 5000, 2)));
  const auto a = analyze_layer(mix, 2);
  const auto j = layer_report(a, 3);
  for (const char* key : {"layer", "n", "g_fit", "tau", "pi", "kl_curve", "kendall_d", "peak_tree"}) CHECK(j.contains(key));
  CHECK(j["layer"] == 3);
  const auto rows = layer_csv_rows(a, 3);
  CHECK(rows.size() == (1 + a.peaks.leaves.size()) * (n - 1));
  CHECK(rows.front().rfind("3,2,0,", 0) == 0);
}
