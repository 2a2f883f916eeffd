#include "hfmrg/kernels.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hfmrg::kernels {

namespace {

// Below these sizes thread start-up costs more than the loop.
constexpr std::size_t kMinParallelStates = 1 << 12;
constexpr std::size_t kMinParallelRows = 16;
constexpr std::size_t kMinParallelPairs = 512;

void check_rbm_shapes(const Matrix& w, std::size_t bias, std::size_t in_cols, std::size_t expect_in,
                      std::size_t expect_bias) {
  if (bias != expect_bias || in_cols != expect_in || w.rows * w.cols == 0)
    throw std::invalid_argument("kernels: RBM shape mismatch");
}

inline void hidden_row(const Matrix& w, std::span<const double> b, std::span<const std::uint8_t> x,
                       std::span<double> out) {
  std::copy(b.begin(), b.end(), out.begin());
  const std::size_t n = w.cols;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x[i]) continue;
    const double* wr = w.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += wr[j];
  }
  for (auto& v : out) v = sigmoid(v);
}

inline void visible_row(const Matrix& w, std::span<const double> c, std::span<const std::uint8_t> s,
                        std::span<double> out) {
  const std::size_t n = w.cols;
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double* wr = w.data.data() + i * n;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += wr[j] * static_cast<double>(s[j]);
    out[i] = sigmoid(c[i] + acc);
  }
}

inline void tally_pair(double dx, double dy, PairCounts& pc) {
  if (dx == 0.0 && dy == 0.0) {
    ++pc.tied_xy;
  } else if (dx == 0.0) {
    ++pc.tied_x;
  } else if (dy == 0.0) {
    ++pc.tied_y;
  } else if ((dx > 0.0) == (dy > 0.0)) {
    ++pc.concordant;
  } else {
    ++pc.discordant;
  }
}

inline std::size_t hamming_words(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  std::size_t d = 0;
  for (std::size_t w = 0; w < a.size(); ++w) d += static_cast<std::size_t>(std::popcount(a[w] ^ b[w]));
  return d;
}

inline std::uint64_t state_top_position(std::span<const std::uint64_t> words, std::span<const std::uint16_t> position) {
  std::uint16_t top = 0;
  for (std::size_t w = 0; w < words.size(); ++w) {
    std::uint64_t bits = words[w];
    while (bits != 0) {
      const auto j = static_cast<std::size_t>(std::countr_zero(bits)) + 64 * w;
      top = std::max(top, position[j]);
      bits &= bits - 1;
    }
  }
  return top;
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace serial {

void coarse_gather(std::span<const double> p, double alpha, std::span<double> out) {
  const std::size_t size = p.size();
  const std::size_t half = size / 2;
  const double keep = 0.5 * (1.0 - alpha);
  for (std::size_t j = 0; j < size; ++j) {
    const std::size_t src = j >> 1;
    out[j] = keep * (p[src] + p[src | half]);
  }
  out[0] += alpha;
}

void hidden_means(const Matrix& w, std::span<const double> b, const BinaryMatrix& x, Matrix& out) {
  check_rbm_shapes(w, b.size(), x.cols, w.rows, w.cols);
  out = Matrix(x.rows, w.cols);
  for (std::size_t r = 0; r < x.rows; ++r) hidden_row(w, b, x.row(r), out.row(r));
}

void visible_means(const Matrix& w, std::span<const double> c, const BinaryMatrix& s, Matrix& out) {
  check_rbm_shapes(w, c.size(), s.cols, w.cols, w.rows);
  out = Matrix(s.rows, w.rows);
  for (std::size_t r = 0; r < s.rows; ++r) visible_row(w, c, s.row(r), out.row(r));
}

PairCounts kendall_pair_counts(std::span<const double> x, std::span<const double> y) {
  PairCounts pc;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) tally_pair(x[i] - x[j], y[i] - y[j], pc);
  return pc;
}

std::size_t min_hamming(std::span<const std::uint64_t> query, const PackedStates& members, std::size_t stop_at) {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  const std::size_t count = members.size();
  for (std::size_t m = 0; m < count; ++m) {
    best = std::min(best, hamming_words(query, members.state(m)));
    if (best <= stop_at) break;
  }
  return best;
}

std::uint64_t permutation_cost(const PackedStates& states, std::span<const std::uint64_t> counts,
                               std::span<const std::uint16_t> position) {
  std::uint64_t total = 0;
  for (std::size_t s = 0; s < states.size(); ++s) total += counts[s] * state_top_position(states.state(s), position);
  return total;
}

}  // namespace serial

namespace parallel {

void coarse_gather(std::span<const double> p, double alpha, std::span<double> out) {
  const std::ptrdiff_t size = static_cast<std::ptrdiff_t>(p.size());
  const std::size_t half = p.size() / 2;
  const double keep = 0.5 * (1.0 - alpha);
#pragma omp parallel for schedule(static) if (p.size() >= kMinParallelStates)
  for (std::ptrdiff_t j = 0; j < size; ++j) {
    const std::size_t src = static_cast<std::size_t>(j) >> 1;
    out[static_cast<std::size_t>(j)] = keep * (p[src] + p[src | half]);
  }
  out[0] += alpha;
}

void hidden_means(const Matrix& w, std::span<const double> b, const BinaryMatrix& x, Matrix& out) {
  check_rbm_shapes(w, b.size(), x.cols, w.rows, w.cols);
  out = Matrix(x.rows, w.cols);
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(x.rows);
#pragma omp parallel for schedule(static) if (x.rows >= kMinParallelRows)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    hidden_row(w, b, x.row(ru), out.row(ru));
  }
}

void visible_means(const Matrix& w, std::span<const double> c, const BinaryMatrix& s, Matrix& out) {
  check_rbm_shapes(w, c.size(), s.cols, w.cols, w.rows);
  out = Matrix(s.rows, w.rows);
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(s.rows);
#pragma omp parallel for schedule(static) if (s.rows >= kMinParallelRows)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    visible_row(w, c, s.row(ru), out.row(ru));
  }
}

PairCounts kendall_pair_counts(std::span<const double> x, std::span<const double> y) {
  std::uint64_t con = 0, dis = 0, tx = 0, ty = 0, txy = 0;
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(dynamic, 64) reduction(+ : con, dis, tx, ty, txy) if (x.size() >= kMinParallelPairs)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    PairCounts local;
    for (std::ptrdiff_t j = i + 1; j < n; ++j) {
      const auto iu = static_cast<std::size_t>(i);
      const auto ju = static_cast<std::size_t>(j);
      tally_pair(x[iu] - x[ju], y[iu] - y[ju], local);
    }
    con += local.concordant;
    dis += local.discordant;
    tx += local.tied_x;
    ty += local.tied_y;
    txy += local.tied_xy;
  }
  return {con, dis, tx, ty, txy};
}

std::size_t min_hamming(std::span<const std::uint64_t> query, const PackedStates& members, std::size_t stop_at) {
  const std::size_t count = members.size();
  if (count < kMinParallelStates) return serial::min_hamming(query, members, stop_at);
  std::size_t best = std::numeric_limits<std::size_t>::max();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(static) reduction(min : best)
  for (std::ptrdiff_t m = 0; m < n; ++m)
    best = std::min(best, hamming_words(query, members.state(static_cast<std::size_t>(m))));
  return best;
}

std::uint64_t permutation_cost(const PackedStates& states, std::span<const std::uint64_t> counts,
                               std::span<const std::uint16_t> position) {
  std::uint64_t total = 0;
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(states.size());
#pragma omp parallel for schedule(static) reduction(+ : total) if (states.size() >= kMinParallelStates)
  for (std::ptrdiff_t s = 0; s < n; ++s) {
    const auto su = static_cast<std::size_t>(s);
    total += counts[su] * state_top_position(states.state(su), position);
  }
  return total;
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace hfmrg::kernels
