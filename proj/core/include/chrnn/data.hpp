#pragma once

// Datasets: IDX ingestion, pixel-mean normalization, and the synthetic
// left-of task used to check that spatial context is learned.

#include <chrnn/tensor.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace chrnn {

/// Images stored sample-major as (N, C, H, W); labels are zero-based.
struct Dataset {
  Tensor<float> images;
  std::vector<std::uint32_t> labels;
  std::size_t classes = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t sample_size() const { return channels() * height() * width(); }
  const float* sample(std::size_t i) const { return images.data() + i * sample_size(); }

  /// Throws DataError when shapes or labels are inconsistent.
  void validate() const;

  /// Gathers samples into the model layout (C, H, W, B). `flip[b]` mirrors
  /// sample b horizontally.
  Tensor<float> gather(std::span<const std::uint32_t> indices,
                       const std::vector<bool>* flip = nullptr) const;
  std::vector<std::uint32_t> gather_labels(std::span<const std::uint32_t> indices) const;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parses an unsigned-byte IDX image file into (N, 1, H, W) with values in [0, 1].
Tensor<float> parse_idx_images(std::span<const std::uint8_t> bytes);
/// Parses an unsigned-byte IDX label file.
std::vector<std::uint32_t> parse_idx_labels(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::string& path);

/// Loads an image/label IDX pair scaled to [0, 1] (not mean-subtracted).
/// `classes` of 0 means one more than the largest label.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::string& split, std::size_t classes = 0);

/// Per-pixel mean image (C, H, W).
Tensor<float> pixel_mean(const Dataset& data);
/// Subtracts a (C, H, W) mean image from every sample.
void subtract_mean(Dataset& data, const Tensor<float>& mean);

// ---------------------------------------------------------------------------
// Synthetic left-of task: two different 4x4 glyphs on a 6x6 layout of 4x4
// cells (24x24 pixels, zero background). Label 0 when glyph A sits in a column
// strictly left of glyph B, else 1. Columns are always distinct, so mirroring
// flips the label and both classes are equally likely.

inline constexpr std::size_t kContextLayout = 6;
inline constexpr std::size_t kGlyphSize = 4;
inline constexpr std::size_t kContextImage = kContextLayout * kGlyphSize;

struct GlyphPlacement {
  std::size_t row_a, col_a, row_b, col_b;  // zero-based layout cells
};

/// Zero-mean, unit-variance 4x4 glyphs: 0 is "plus", 1 is "cross".
const std::array<float, kGlyphSize * kGlyphSize>& glyph(std::size_t which);

std::uint32_t context_label(const GlyphPlacement& p);
/// Renders one (1, 24, 24) image.
Tensor<float> render_context_image(const GlyphPlacement& p);
/// Horizontal mirror of a (C, H, W) image.
Tensor<float> mirror_image(const Tensor<float>& image);

/// n samples from the stream seeded by `seed`. Requires n >= 2.
Dataset gen_context_task(std::size_t n, std::uint64_t seed, const std::string& split = "train");

}  // namespace chrnn
