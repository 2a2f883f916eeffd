#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfmrg/matrix.hpp"

namespace hfmrg {

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Grayscale images (0..255) with integer labels.
struct RawImages {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count x rows x cols, row-major
  std::vector<int> labels;
  std::string source;

  std::size_t count() const noexcept { return labels.size(); }
  std::span<const std::uint8_t> image(std::size_t i) const { return {pixels.data() + i * rows * cols, rows * cols}; }
};

/// Parses IDX image (magic 0x803) and label (magic 0x801) buffers.
RawImages parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

/// Reads a file, inflating it when gzip-compressed.
std::vector<std::uint8_t> read_maybe_gzip(const std::string& path);

RawImages load_idx(const std::string& images_path, const std::string& labels_path);

/// Binary images, one per row, with provenance.
struct Dataset {
  std::string name;
  BinaryMatrix images;
  std::vector<int> labels;
  std::size_t side_rows = 0;
  std::size_t side_cols = 0;
  nlohmann::json provenance;

  std::size_t size() const noexcept { return images.rows; }
};

/// Block-averages by `downsample` (must divide both sides) and sets a pixel
/// when its average exceeds threshold * 255. threshold in (0, 1).
Dataset preprocess(const RawImages& raw, std::size_t downsample, double threshold = 0.5);

struct AugmentParams {
  double max_angle_deg = 15.0;
  int max_shift = 2;
};

/// Rotation about the image center followed by an integer shift, bilinear
/// interpolation, zero fill outside.
std::vector<std::uint8_t> transform_image(std::span<const std::uint8_t> image, std::size_t rows, std::size_t cols,
                                          double angle_deg, int shift_rows, int shift_cols);

std::vector<std::uint8_t> mirror_image(std::span<const std::uint8_t> image, std::size_t rows, std::size_t cols);

struct LadderConfig {
  std::size_t target_size = 3000;
  int narrow_class = 2;
  std::size_t downsample = 2;
  double threshold = 0.5;
  AugmentParams augment;
};

struct BreadthLadder {
  Dataset narrow;
  Dataset medium;
  Dataset broad;
};

/// narrow: one digit class topped up by augmentation; medium: all digits;
/// broad: digits plus letters, or digits plus mirrored digits when no letters
/// are given (recorded as "mirror_proxy"). Every set has target_size rows.
BreadthLadder breadth_ladder(const RawImages& digits, const std::optional<RawImages>& letters,
                             const LadderConfig& config, std::uint64_t seed);

/// Writes <prefix>.txt in the sample text format and <prefix>.json with the provenance.
void write_dataset(const std::string& prefix, const Dataset& dataset);

}  // namespace hfmrg
