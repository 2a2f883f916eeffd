#include "hfmrg/data_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "hfmrg/dbn.hpp"
#include "hfmrg/feature_state.hpp"
#include "hfmrg/hash.hpp"
#include "hfmrg/rng.hpp"

namespace hfmrg {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr int kLetterLabelOffset = 10;

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

RawImages subset(const RawImages& raw, const std::vector<std::size_t>& idx) {
  RawImages out;
  out.rows = raw.rows;
  out.cols = raw.cols;
  out.source = raw.source;
  for (std::size_t i : idx) {
    const auto im = raw.image(i);
    out.pixels.insert(out.pixels.end(), im.begin(), im.end());
    out.labels.push_back(raw.labels[i]);
  }
  return out;
}

void append(RawImages& dst, std::span<const std::uint8_t> image, int label) {
  dst.pixels.insert(dst.pixels.end(), image.begin(), image.end());
  dst.labels.push_back(label);
}

struct Rung {
  RawImages images;
  std::size_t originals = 0;
  std::size_t augmented = 0;
};

/// Draws target images from the pool: a sorted random subset when the pool is
/// large enough, otherwise the whole pool plus augmented copies.
Rung fill_rung(const RawImages& pool, std::size_t target, const AugmentParams& aug, std::uint64_t seed) {
  if (pool.count() == 0) throw std::runtime_error("breadth_ladder: insufficient source data (empty pool)");
  Rng rng(seed);
  Rung r;
  if (pool.count() >= target) {
    std::vector<std::size_t> idx(pool.count());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < target; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    idx.resize(target);
    std::sort(idx.begin(), idx.end());
    r.images = subset(pool, idx);
    r.originals = target;
    return r;
  }
  r.images = pool;
  r.originals = pool.count();
  while (r.images.count() < target) {
    const std::size_t src = rng.below(pool.count());
    const double angle = (2.0 * rng.uniform() - 1.0) * aug.max_angle_deg;
    const auto span = static_cast<std::uint64_t>(2 * aug.max_shift + 1);
    const int dr = static_cast<int>(rng.below(span)) - aug.max_shift;
    const int dc = static_cast<int>(rng.below(span)) - aug.max_shift;
    append(r.images, transform_image(pool.image(src), pool.rows, pool.cols, angle, dr, dc), pool.labels[src]);
    ++r.augmented;
  }
  return r;
}

Dataset finish_rung(const std::string& name, const Rung& rung, std::size_t pool_size, const LadderConfig& config,
                    std::uint64_t seed, nlohmann::json extra) {
  Dataset d = preprocess(rung.images, config.downsample, config.threshold);
  d.name = name;
  std::map<int, std::size_t> per_class;
  for (int l : d.labels) ++per_class[l];
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [label, n] : per_class) counts[std::to_string(label)] = n;
  auto& p = d.provenance;
  p["name"] = name;
  p["pool_size"] = pool_size;
  p["originals"] = rung.originals;
  p["augmented"] = rung.augmented;
  p["augment"] = {{"max_angle_deg", config.augment.max_angle_deg}, {"max_shift", config.augment.max_shift}};
  p["class_counts"] = counts;
  p["seed"] = seed;
  for (auto& [k, v] : extra.items()) p[k] = v;
  p["content_hash"] = hex64(fnv1a64(d.images.data));
  return d;
}

}  // namespace

RawImages parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  if (images.size() < 16) throw IdxError("idx: image header truncated");
  if (labels.size() < 8) throw IdxError("idx: label header truncated");
  if (read_be32(images, 0) != kImageMagic) throw IdxError("idx: bad image magic (expected 0x00000803)");
  if (read_be32(labels, 0) != kLabelMagic) throw IdxError("idx: bad label magic (expected 0x00000801)");
  const std::size_t count = read_be32(images, 4);
  const std::size_t rows = read_be32(images, 8);
  const std::size_t cols = read_be32(images, 12);
  const std::size_t label_count = read_be32(labels, 4);
  if (rows == 0 || cols == 0) throw IdxError("idx: zero image dimension");
  if (count != label_count) throw IdxError("idx: image and label counts differ");
  if (images.size() != 16 + count * rows * cols) throw IdxError("idx: image payload size does not match header");
  if (labels.size() != 8 + count) throw IdxError("idx: label payload size does not match header");
  RawImages raw;
  raw.rows = rows;
  raw.cols = cols;
  raw.pixels.assign(images.begin() + 16, images.end());
  raw.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) raw.labels.push_back(labels[8 + i]);
  return raw;
}

std::vector<std::uint8_t> read_maybe_gzip(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw IdxError("cannot open " + path);
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const int n = gzread(f, buf, sizeof buf);
    if (n < 0) {
      gzclose(f);
      throw IdxError("read error in " + path);
    }
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  gzclose(f);
  return out;
}

RawImages load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto im = read_maybe_gzip(images_path);
  const auto lb = read_maybe_gzip(labels_path);
  RawImages raw = parse_idx(im, lb);
  raw.source = images_path;
  return raw;
}

Dataset preprocess(const RawImages& raw, std::size_t downsample, double threshold) {
  if (downsample == 0 || raw.rows % downsample != 0 || raw.cols % downsample != 0)
    throw std::invalid_argument("preprocess: downsample factor must divide the image sides");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("preprocess: threshold must be in (0, 1)");
  Dataset d;
  d.name = raw.source;
  d.side_rows = raw.rows / downsample;
  d.side_cols = raw.cols / downsample;
  d.images = BinaryMatrix(raw.count(), d.side_rows * d.side_cols);
  d.labels = raw.labels;
  const double cut = threshold * 255.0 * static_cast<double>(downsample * downsample);
  for (std::size_t k = 0; k < raw.count(); ++k) {
    const auto im = raw.image(k);
    auto out = d.images.row(k);
    for (std::size_t br = 0; br < d.side_rows; ++br) {
      for (std::size_t bc = 0; bc < d.side_cols; ++bc) {
        unsigned sum = 0;
        for (std::size_t r = br * downsample; r < (br + 1) * downsample; ++r)
          for (std::size_t c = bc * downsample; c < (bc + 1) * downsample; ++c) sum += im[r * raw.cols + c];
        out[br * d.side_cols + bc] = static_cast<double>(sum) > cut ? 1 : 0;
      }
    }
  }
  std::set<int> classes(d.labels.begin(), d.labels.end());
  d.provenance = {{"source", raw.source},
                  {"downsample", downsample},
                  {"threshold", threshold},
                  {"count", raw.count()},
                  {"classes", std::vector<int>(classes.begin(), classes.end())}};
  return d;
}

std::vector<std::uint8_t> transform_image(std::span<const std::uint8_t> image, std::size_t rows, std::size_t cols,
                                          double angle_deg, int shift_rows, int shift_cols) {
  std::vector<std::uint8_t> out(rows * cols, 0);
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  const double cy = (static_cast<double>(rows) - 1.0) / 2.0, cx = (static_cast<double>(cols) - 1.0) / 2.0;
  auto at = [&](long r, long c) -> double {
    if (r < 0 || c < 0 || r >= static_cast<long>(rows) || c >= static_cast<long>(cols)) return 0.0;
    return image[static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c)];
  };
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double y = static_cast<double>(r) - shift_rows - cy;
      const double x = static_cast<double>(c) - shift_cols - cx;
      const double sy = ct * y - st * x + cy;
      const double sx = st * y + ct * x + cx;
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double wy = sy - fy, wx = sx - fx;
      const long iy = static_cast<long>(fy), ix = static_cast<long>(fx);
      const double v = (1 - wy) * ((1 - wx) * at(iy, ix) + wx * at(iy, ix + 1)) +
                       wy * ((1 - wx) * at(iy + 1, ix) + wx * at(iy + 1, ix + 1));
      out[r * cols + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

std::vector<std::uint8_t> mirror_image(std::span<const std::uint8_t> image, std::size_t rows, std::size_t cols) {
  std::vector<std::uint8_t> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = image[r * cols + (cols - 1 - c)];
  return out;
}

BreadthLadder breadth_ladder(const RawImages& digits, const std::optional<RawImages>& letters,
                             const LadderConfig& config, std::uint64_t seed) {
  if (config.target_size == 0) throw std::invalid_argument("breadth_ladder: target_size must be positive");
  if (digits.count() == 0) throw std::runtime_error("breadth_ladder: insufficient source data (no digits)");
  BreadthLadder ladder;

  std::vector<std::size_t> cls;
  for (std::size_t i = 0; i < digits.count(); ++i)
    if (digits.labels[i] == config.narrow_class) cls.push_back(i);
  if (cls.empty())
    throw std::runtime_error("breadth_ladder: insufficient source data (no images of class " +
                             std::to_string(config.narrow_class) + ")");
  const RawImages narrow_pool = subset(digits, cls);
  ladder.narrow = finish_rung("narrow", fill_rung(narrow_pool, config.target_size, config.augment, mix_seed(seed, 1)),
                              narrow_pool.count(), config, seed,
                              {{"source", digits.source}, {"filter_class", config.narrow_class}});

  ladder.medium = finish_rung("medium", fill_rung(digits, config.target_size, config.augment, mix_seed(seed, 2)),
                              digits.count(), config, seed, {{"source", digits.source}});

  RawImages broad_pool = digits;
  std::string broad_source;
  if (letters && letters->count() > 0) {
    if (letters->rows != digits.rows || letters->cols != digits.cols)
      throw std::invalid_argument("breadth_ladder: letter and digit images differ in size");
    for (std::size_t i = 0; i < letters->count(); ++i)
      append(broad_pool, letters->image(i), letters->labels[i] + kLetterLabelOffset);
    broad_source = "letters";
  } else {
    for (std::size_t i = 0; i < digits.count(); ++i)
      append(broad_pool, mirror_image(digits.image(i), digits.rows, digits.cols), digits.labels[i] + kLetterLabelOffset);
    broad_source = "mirror_proxy";
  }
  nlohmann::json extra = {{"source", digits.source}, {"broad_source", broad_source},
                          {"mirror_proxy", broad_source == "mirror_proxy"}};
  if (letters && letters->count() > 0) extra["letters_source"] = letters->source;
  ladder.broad = finish_rung("broad", fill_rung(broad_pool, config.target_size, config.augment, mix_seed(seed, 3)),
                             broad_pool.count(), config, seed, extra);
  return ladder;
}

void write_dataset(const std::string& prefix, const Dataset& dataset) {
  const std::vector<std::string> header = {"dataset " + dataset.name, "rows " + std::to_string(dataset.size())};
  write_sample_file(prefix + ".txt", to_sample(dataset.images), header);
  std::ofstream js(prefix + ".json");
  if (!js) throw std::runtime_error("write_dataset: cannot open " + prefix + ".json");
  js << dataset.provenance.dump(2) << '\n';
}

}  // namespace hfmrg
