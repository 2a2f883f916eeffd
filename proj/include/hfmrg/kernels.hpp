#pragma once

// Data-parallel inner loops. Each kernel has a serial reference in
// kernels::serial and an OpenMP version in kernels::parallel with identical
// results: per-element outputs are computed independently and every
// reduction is over integers, so thread count never changes a bit.
// min_hamming is the one exception: the serial version may stop early, so
// the two agree exactly only when the minimum exceeds stop_at.

#include <cstdint>
#include <span>

#include "hfmrg/matrix.hpp"

namespace hfmrg::kernels {

/// Pair tallies for Kendall's tau over n items.
struct PairCounts {
  std::uint64_t concordant = 0;
  std::uint64_t discordant = 0;
  std::uint64_t tied_x = 0;   // tied in x only
  std::uint64_t tied_y = 0;   // tied in y only
  std::uint64_t tied_xy = 0;  // tied in both

  friend bool operator==(const PairCounts&, const PairCounts&) = default;
};

/// Equal-width states packed as `words` consecutive uint64 words each.
struct PackedStates {
  std::size_t words = 1;
  std::span<const std::uint64_t> data;

  std::size_t size() const noexcept { return words == 0 ? 0 : data.size() / words; }
  std::span<const std::uint64_t> state(std::size_t i) const { return data.subspan(i * words, words); }
};

double sigmoid(double x);

namespace serial {

/// One coarse-graining step in gather form over 2^n entries:
/// out[j] = (1-alpha)/2 (p[j>>1] + p[(j>>1) | 2^{n-1}]) + alpha [j == 0].
void coarse_gather(std::span<const double> p, double alpha, std::span<double> out);

/// out(r, j) = sigmoid(b_j + sum_i W(i, j) x(r, i)); W is visible x hidden.
void hidden_means(const Matrix& w, std::span<const double> b, const BinaryMatrix& x, Matrix& out);

/// out(r, i) = sigmoid(c_i + sum_j W(i, j) s(r, j)).
void visible_means(const Matrix& w, std::span<const double> c, const BinaryMatrix& s, Matrix& out);

PairCounts kendall_pair_counts(std::span<const double> x, std::span<const double> y);

/// Minimum Hamming distance from query to any member; stops early once a
/// distance <= stop_at is seen. Returns SIZE_MAX for an empty member set.
std::size_t min_hamming(std::span<const std::uint64_t> query, const PackedStates& members,
                        std::size_t stop_at = 0);

/// sum_s counts[s] * max{position[j] : bit j of state s set} (0 when no bit is set).
std::uint64_t permutation_cost(const PackedStates& states, std::span<const std::uint64_t> counts,
                               std::span<const std::uint16_t> position);

}  // namespace serial

namespace parallel {

void coarse_gather(std::span<const double> p, double alpha, std::span<double> out);
void hidden_means(const Matrix& w, std::span<const double> b, const BinaryMatrix& x, Matrix& out);
void visible_means(const Matrix& w, std::span<const double> c, const BinaryMatrix& s, Matrix& out);
PairCounts kendall_pair_counts(std::span<const double> x, std::span<const double> y);
std::size_t min_hamming(std::span<const std::uint64_t> query, const PackedStates& members,
                        std::size_t stop_at = 0);
std::uint64_t permutation_cost(const PackedStates& states, std::span<const std::uint64_t> counts,
                               std::span<const std::uint16_t> position);

}  // namespace parallel

/// Threads available to the parallel kernels (1 without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace hfmrg::kernels
