#pragma once

// Brute-force reference computations for tests. Everything here works from
// definitions over explicit state enumeration and shares no code with the
// library beyond plain containers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

namespace oracle {

using Probs = std::vector<double>;

inline int bit(std::uint64_t s, std::size_t i) { return static_cast<int>((s >> i) & 1u); }

/// Highest 1-based index of an active feature, 0 for the featureless state.
inline std::size_t level(std::uint64_t s) {
  std::size_t m = 0;
  for (std::size_t i = 0; i < 64; ++i)
    if (bit(s, i)) m = i + 1;
  return m;
}

inline Probs normalize(Probs w) {
  const double z = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= z;
  return w;
}

inline Probs hfm(std::size_t n, double g) {
  Probs w(std::size_t{1} << n);
  for (std::uint64_t s = 0; s < w.size(); ++s) w[s] = std::exp(-g * static_cast<double>(level(s)));
  return normalize(w);
}

inline double entropy(const Probs& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return h;
}

inline double tv(const Probs& a, const Probs& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return 0.5 * d;
}

/// Marginal on features first..first+k-1 (0-based), indexed by those bits.
inline Probs marginal(const Probs& p, std::size_t first, std::size_t k) {
  Probs out(std::size_t{1} << k, 0.0);
  for (std::uint64_t s = 0; s < p.size(); ++s) out[(s >> first) & ((std::uint64_t{1} << k) - 1)] += p[s];
  return out;
}

/// Coarse step from its four-step definition: drop s_n, prepend a uniform
/// feature shifting the others up, mix with the featureless state.
inline Probs coarse_step(const Probs& p, std::size_t n, double alpha) {
  const Probs drop = marginal(p, 0, n - 1);
  Probs out(p.size(), 0.0);
  for (std::uint64_t s = 0; s < p.size(); ++s) {
    const std::uint64_t rest = s >> 1;  // s'_{2:n} = s_{1:n-1}
    out[s] = (1.0 - alpha) * 0.5 * drop[rest];
  }
  out[0] += alpha;
  return out;
}

/// Fine step from its definition: condition on s_1 = 1, shift, append s_n.
inline Probs fine_step(const Probs& p, std::size_t n, double q) {
  const std::size_t half = p.size() / 2;
  Probs zoom(half, 0.0);
  double z = 0.0;
  for (std::uint64_t s = 0; s < p.size(); ++s)
    if (bit(s, 0)) {
      zoom[s >> 1] += p[s];
      z += p[s];
    }
  Probs out(p.size(), 0.0);
  for (std::uint64_t s = 0; s < half; ++s) {
    out[s] = (1.0 - q) * zoom[s] / z;
    out[s + half] = q / static_cast<double>(half);
  }
  (void)n;
  return out;
}

/// Dense transition matrix of the coarse step, T[from][to].
inline std::vector<Probs> transition(std::size_t n, double alpha) {
  const std::size_t size = std::size_t{1} << n;
  std::vector<Probs> t(size, Probs(size, 0.0));
  for (std::uint64_t from = 0; from < size; ++from) {
    Probs e(size, 0.0);
    e[from] = 1.0;
    t[from] = coarse_step(e, n, alpha);
  }
  return t;
}

/// Kendall tau-b by direct enumeration of all pairs.
inline double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  double conc = 0, disc = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) {
        ++tx;
      } else if (dy == 0) {
        ++ty;
      } else if ((dx > 0) == (dy > 0)) {
        ++conc;
      } else {
        ++disc;
      }
    }
  return (conc - disc) / std::sqrt((conc + disc + tx) * (conc + disc + ty));
}

/// Joint law of a binary RBM with weights w[i][j] (visible i, hidden j),
/// indexed by x + 2^m s.
inline Probs rbm_joint(const std::vector<std::vector<double>>& w, const std::vector<double>& c,
                       const std::vector<double>& b) {
  const std::size_t m = c.size(), n = b.size();
  Probs out(std::size_t{1} << (m + n));
  for (std::uint64_t x = 0; x < (std::uint64_t{1} << m); ++x)
    for (std::uint64_t s = 0; s < (std::uint64_t{1} << n); ++s) {
      double e = 0.0;
      for (std::size_t i = 0; i < m; ++i) e += c[i] * bit(x, i);
      for (std::size_t j = 0; j < n; ++j) e += b[j] * bit(s, j);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) e += w[i][j] * bit(x, i) * bit(s, j);
      out[x + (s << m)] = std::exp(e);
    }
  return normalize(out);
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// p(s | x) of an RBM as a vector over s.
inline Probs rbm_hidden_given(const std::vector<std::vector<double>>& w, const std::vector<double>& b,
                              std::uint64_t x) {
  const std::size_t m = w.size(), n = b.size();
  Probs out(std::size_t{1} << n, 1.0);
  for (std::uint64_t s = 0; s < out.size(); ++s)
    for (std::size_t j = 0; j < n; ++j) {
      double a = b[j];
      for (std::size_t i = 0; i < m; ++i) a += w[i][j] * bit(x, i);
      out[s] *= bit(s, j) ? sigmoid(a) : 1.0 - sigmoid(a);
    }
  return out;
}

/// p(x | s) of an RBM as a vector over x.
inline Probs rbm_visible_given(const std::vector<std::vector<double>>& w, const std::vector<double>& c,
                               std::uint64_t s) {
  const std::size_t m = c.size(), n = w.empty() ? 0 : w[0].size();
  Probs out(std::size_t{1} << m, 1.0);
  for (std::uint64_t x = 0; x < out.size(); ++x)
    for (std::size_t i = 0; i < m; ++i) {
      double a = c[i];
      for (std::size_t j = 0; j < n; ++j) a += w[i][j] * bit(s, j);
      out[x] *= bit(x, i) ? sigmoid(a) : 1.0 - sigmoid(a);
    }
  return out;
}

}  // namespace oracle
