#include "hfmrg/feature_state.hpp"

#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hfmrg {

namespace {

constexpr std::size_t kWordBits = 64;

std::size_t word_count(std::size_t width) { return (width + kWordBits - 1) / kWordBits; }

}  // namespace

FeatureState::FeatureState(std::size_t width) : width_(width), words_(word_count(width), 0) {
  if (width == 0) throw std::invalid_argument("FeatureState: width must be positive");
}

FeatureState FeatureState::from_index(std::size_t width, std::uint64_t index) {
  if (width > kWordBits) throw std::invalid_argument("FeatureState::from_index: width > 64");
  FeatureState s(width);
  if (width < kWordBits && (index >> width) != 0)
    throw std::invalid_argument("FeatureState::from_index: index out of range for width");
  s.words_[0] = index;
  return s;
}

FeatureState FeatureState::from_string(std::string_view bits) {
  FeatureState s(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] == '1') {
      s.set(i + 1, true);
    } else if (bits[i] != '0') {
      throw std::invalid_argument("FeatureState::from_string: expected '0' or '1'");
    }
  }
  return s;
}

FeatureState FeatureState::from_bits(std::span<const std::uint8_t> bits) {
  FeatureState s(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) s.words_[i / kWordBits] |= std::uint64_t{1} << (i % kWordBits);
  }
  return s;
}

bool FeatureState::get(std::size_t i) const {
  if (i == 0 || i > width_) throw std::out_of_range("FeatureState::get: index out of range");
  const std::size_t b = i - 1;
  return (words_[b / kWordBits] >> (b % kWordBits)) & 1U;
}

void FeatureState::set(std::size_t i, bool value) {
  if (i == 0 || i > width_) throw std::out_of_range("FeatureState::set: index out of range");
  const std::size_t b = i - 1;
  const std::uint64_t mask = std::uint64_t{1} << (b % kWordBits);
  if (value) {
    words_[b / kWordBits] |= mask;
  } else {
    words_[b / kWordBits] &= ~mask;
  }
}

std::size_t FeatureState::level() const noexcept {
  for (std::size_t w = words_.size(); w-- > 0;) {
    if (words_[w] != 0) return w * kWordBits + static_cast<std::size_t>(std::bit_width(words_[w]));
  }
  return 0;
}

std::size_t FeatureState::popcount() const noexcept {
  std::size_t c = 0;
  for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
  return c;
}

bool FeatureState::is_featureless() const noexcept {
  for (auto w : words_)
    if (w != 0) return false;
  return true;
}

std::uint64_t FeatureState::index() const {
  if (width_ > kWordBits) throw std::logic_error("FeatureState::index: width > 64");
  return words_.empty() ? 0 : words_[0];
}

std::string FeatureState::to_string() const {
  std::string out(width_, '0');
  for (std::size_t i = 0; i < width_; ++i) {
    if ((words_[i / kWordBits] >> (i % kWordBits)) & 1U) out[i] = '1';
  }
  return out;
}

std::vector<std::uint8_t> FeatureState::to_bits() const {
  std::vector<std::uint8_t> out(width_);
  for (std::size_t i = 0; i < width_; ++i)
    out[i] = static_cast<std::uint8_t>((words_[i / kWordBits] >> (i % kWordBits)) & 1U);
  return out;
}

FeatureState FeatureState::prefix(std::size_t k) const {
  if (k == 0 || k > width_) throw std::out_of_range("FeatureState::prefix: bad length");
  FeatureState s(k);
  for (std::size_t w = 0; w < s.words_.size(); ++w) s.words_[w] = words_[w];
  s.clear_padding();
  return s;
}

void FeatureState::clear_padding() noexcept {
  const std::size_t rem = width_ % kWordBits;
  if (rem != 0 && !words_.empty()) words_.back() &= (std::uint64_t{1} << rem) - 1;
}

std::strong_ordering operator<=>(const FeatureState& a, const FeatureState& b) {
  if (auto c = a.width_ <=> b.width_; c != 0) return c;
  for (std::size_t w = a.words_.size(); w-- > 0;) {
    if (auto c = a.words_[w] <=> b.words_[w]; c != 0) return c;
  }
  return std::strong_ordering::equal;
}

std::size_t hamming_distance(const FeatureState& a, const FeatureState& b) {
  if (a.width() != b.width()) throw std::invalid_argument("hamming_distance: width mismatch");
  std::size_t d = 0;
  auto wa = a.words();
  auto wb = b.words();
  for (std::size_t w = 0; w < wa.size(); ++w) d += static_cast<std::size_t>(std::popcount(wa[w] ^ wb[w]));
  return d;
}

std::size_t FeatureStateHash::operator()(const FeatureState& s) const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ s.width();
  for (auto w : s.words()) {
    h ^= w + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return static_cast<std::size_t>(h);
}

EmpiricalSample::EmpiricalSample(std::size_t width) : width_(width) {
  if (width == 0) throw std::invalid_argument("EmpiricalSample: width must be positive");
}

EmpiricalSample::EmpiricalSample(std::size_t width, Counts counts)
    : width_(width), counts_(std::move(counts)) {
  if (width == 0) throw std::invalid_argument("EmpiricalSample: width must be positive");
  for (auto it = counts_.begin(); it != counts_.end();) {
    if (it->first.width() != width_) throw std::invalid_argument("EmpiricalSample: width mismatch");
    if (it->second == 0) {
      it = counts_.erase(it);
      continue;
    }
    total_ += it->second;
    ++it;
  }
}

void EmpiricalSample::add(const FeatureState& state, std::uint64_t count) {
  if (state.width() != width_) throw std::invalid_argument("EmpiricalSample::add: width mismatch");
  if (count == 0) return;
  counts_[state] += count;
  total_ += count;
}

std::uint64_t EmpiricalSample::count(const FeatureState& state) const {
  auto it = counts_.find(state);
  return it == counts_.end() ? 0 : it->second;
}

void write_sample(std::ostream& out, const EmpiricalSample& sample,
                  std::span<const std::string> header) {
  for (const auto& line : header) out << "# " << line << '\n';
  out << "# n=" << sample.width() << '\n';
  for (const auto& [state, count] : sample) out << state.to_string() << ' ' << count << '\n';
}

EmpiricalSample read_sample(std::istream& in) {
  std::size_t width = 0;
  EmpiricalSample::Counts counts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto pos = line.find("n=");
      if (pos != std::string::npos && width == 0) {
        std::istringstream hs(line.substr(pos + 2));
        std::size_t w = 0;
        if (hs >> w) width = w;
      }
      continue;
    }
    std::istringstream ls(line);
    std::string bits;
    std::uint64_t count = 1;
    ls >> bits;
    if (!(ls >> count)) count = 1;
    FeatureState s = FeatureState::from_string(bits);
    if (width == 0) width = s.width();
    if (s.width() != width)
      throw std::runtime_error("read_sample: width mismatch on line " + std::to_string(line_no));
    counts[s] += count;
  }
  if (width == 0) throw std::runtime_error("read_sample: no states and no 'n=' header");
  return EmpiricalSample(width, std::move(counts));
}

void write_sample_file(const std::string& path, const EmpiricalSample& sample,
                       std::span<const std::string> header) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_sample(out, sample, header);
}

EmpiricalSample read_sample_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_sample(in);
}

}  // namespace hfmrg
