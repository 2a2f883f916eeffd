#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hfmrg {

/// Binary configuration s = (s_1, ..., s_n), bit-packed.
///
/// Feature 1 is the most coarse-grained one and lives in bit 0 of the first
/// word, so for n <= 64 the packed word equals the state index
/// sum_i s_i 2^(i-1) used by dense distributions.
class FeatureState {
 public:
  FeatureState() = default;

  /// The featureless state 0_{1:n}.
  explicit FeatureState(std::size_t width);

  static FeatureState from_index(std::size_t width, std::uint64_t index);
  /// Parses a 0/1 string with s_1 first.
  static FeatureState from_string(std::string_view bits);
  static FeatureState from_bits(std::span<const std::uint8_t> bits);

  std::size_t width() const noexcept { return width_; }

  /// 1-based access.
  bool get(std::size_t i) const;
  void set(std::size_t i, bool value);

  /// Highest set feature index, 0 for the featureless state.
  std::size_t level() const noexcept;
  std::size_t popcount() const noexcept;
  bool is_featureless() const noexcept;

  /// Packed index; requires width <= 64.
  std::uint64_t index() const;

  std::string to_string() const;
  std::vector<std::uint8_t> to_bits() const;

  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::span<std::uint64_t> words() noexcept { return words_; }

  /// First k features as a state of width k.
  FeatureState prefix(std::size_t k) const;

  friend bool operator==(const FeatureState&, const FeatureState&) = default;

  /// Orders by width, then by the integer value sum_i s_i 2^(i-1).
  friend std::strong_ordering operator<=>(const FeatureState& a, const FeatureState& b);

 private:
  void clear_padding() noexcept;

  std::size_t width_ = 0;
  std::vector<std::uint64_t> words_;
};

std::size_t hamming_distance(const FeatureState& a, const FeatureState& b);

struct FeatureStateHash {
  std::size_t operator()(const FeatureState& s) const noexcept;
};

/// Multiset of equal-width states with counts, iterated in state order.
class EmpiricalSample {
 public:
  using Counts = std::map<FeatureState, std::uint64_t>;

  EmpiricalSample() = default;
  explicit EmpiricalSample(std::size_t width);
  EmpiricalSample(std::size_t width, Counts counts);

  void add(const FeatureState& state, std::uint64_t count = 1);

  std::size_t width() const noexcept { return width_; }
  std::uint64_t total() const noexcept { return total_; }
  std::size_t distinct() const noexcept { return counts_.size(); }
  bool empty() const noexcept { return total_ == 0; }
  std::uint64_t count(const FeatureState& state) const;

  const Counts& counts() const noexcept { return counts_; }
  auto begin() const { return counts_.begin(); }
  auto end() const { return counts_.end(); }

  friend bool operator==(const EmpiricalSample&, const EmpiricalSample&) = default;

 private:
  std::size_t width_ = 0;
  std::uint64_t total_ = 0;
  Counts counts_;
};

/// Text format: '#'-prefixed header lines, then one state per line as a 0/1
/// string (s_1 first) with an optional whitespace-separated count column.
/// The writer emits a "# n=<width>" header so empty samples keep their width.
void write_sample(std::ostream& out, const EmpiricalSample& sample,
                  std::span<const std::string> header = {});
EmpiricalSample read_sample(std::istream& in);

void write_sample_file(const std::string& path, const EmpiricalSample& sample,
                       std::span<const std::string> header = {});
EmpiricalSample read_sample_file(const std::string& path);

}  // namespace hfmrg
