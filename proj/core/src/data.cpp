#include <chrnn/data.hpp>
#include <chrnn/errors.hpp>
#include <chrnn/random.hpp>

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace chrnn {

void Dataset::validate() const {
  if (images.rank() != 4) {
    throw DataError("dataset '" + split + "': images must be (N, C, H, W), got " +
                    to_string(images.shape()));
  }
  if (images.dim(0) != labels.size()) {
    throw DataError("dataset '" + split + "': " + std::to_string(images.dim(0)) + " images but " +
                    std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw DataError("dataset '" + split + "': label " + std::to_string(labels[i]) +
                      " of sample " + std::to_string(i) + " outside " +
                      std::to_string(classes) + " classes");
    }
  }
}

Tensor<float> Dataset::gather(std::span<const std::uint32_t> indices,
                              const std::vector<bool>* flip) const {
  const std::size_t batch = indices.size();
  const std::size_t c = channels(), h = height(), w = width();
  Tensor<float> out({c, h, w, batch});
  for (std::size_t b = 0; b < batch; ++b) {
    if (indices[b] >= size()) throw DataError("sample index out of range");
    const float* src = sample(indices[b]);
    const bool mirrored = flip && (*flip)[b];
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t sx = mirrored ? w - 1 - x : x;
          out[((ch * h + y) * w + x) * batch + b] = src[(ch * h + y) * w + sx];
        }
  }
  return out;
}

std::vector<std::uint32_t> Dataset::gather_labels(std::span<const std::uint32_t> indices) const {
  std::vector<std::uint32_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::string hex(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

// Validates magic and returns the header dimensions; checks the payload length exactly.
std::vector<std::size_t> idx_header(std::span<const std::uint8_t> bytes, std::uint32_t magic,
                                    std::size_t dims, const char* what) {
  if (bytes.size() < 4) {
    throw DataError(std::string("IDX ") + what + ": truncated header (" +
                    std::to_string(bytes.size()) + " bytes)");
  }
  const std::uint32_t actual = read_be32(bytes, 0);
  if (actual != magic) {
    throw DataError(std::string("IDX ") + what + ": bad magic, expected " + hex(magic) +
                    ", got " + hex(actual));
  }
  const std::size_t header = 4 + 4 * dims;
  if (bytes.size() < header) {
    throw DataError(std::string("IDX ") + what + ": truncated header (" +
                    std::to_string(bytes.size()) + " of " + std::to_string(header) + " bytes)");
  }
  std::vector<std::size_t> extents;
  std::size_t payload = 1;
  for (std::size_t d = 0; d < dims; ++d) {
    extents.push_back(read_be32(bytes, 4 + 4 * d));
    payload *= extents.back();
  }
  if (bytes.size() - header != payload) {
    throw DataError(std::string("IDX ") + what + ": payload is " +
                    std::to_string(bytes.size() - header) + " bytes, header declares " +
                    std::to_string(payload) +
                    (bytes.size() - header < payload ? " (truncated)" : " (trailing bytes)"));
  }
  return extents;
}

}  // namespace

Tensor<float> parse_idx_images(std::span<const std::uint8_t> bytes) {
  const auto ext = idx_header(bytes, kIdxImageMagic, 3, "images");
  Tensor<float> out({ext[0], 1, ext[1], ext[2]});
  const std::uint8_t* src = bytes.data() + 16;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(src[i]) / 255.0f;
  return out;
}

std::vector<std::uint32_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const auto ext = idx_header(bytes, kIdxLabelMagic, 1, "labels");
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(ext[0])};
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::string& split, std::size_t classes) {
  Dataset d;
  d.split = split;
  d.images = parse_idx_images(read_file(images_path));
  d.labels = parse_idx_labels(read_file(labels_path));
  if (d.images.dim(0) != d.labels.size()) {
    throw DataError("IDX count mismatch: '" + images_path + "' holds " +
                    std::to_string(d.images.dim(0)) + " images, '" + labels_path + "' holds " +
                    std::to_string(d.labels.size()) + " labels");
  }
  if (classes == 0) {
    for (auto l : d.labels) classes = std::max<std::size_t>(classes, l + 1);
  }
  d.classes = classes;
  d.validate();
  return d;
}

Tensor<float> pixel_mean(const Dataset& data) {
  if (data.size() == 0) throw DataError("pixel mean of an empty dataset");
  const std::size_t n = data.sample_size();
  std::vector<double> acc(n, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float* s = data.sample(i);
    for (std::size_t k = 0; k < n; ++k) acc[k] += s[k];
  }
  Tensor<float> mean({data.channels(), data.height(), data.width()});
  for (std::size_t k = 0; k < n; ++k)
    mean[k] = static_cast<float>(acc[k] / static_cast<double>(data.size()));
  return mean;
}

void subtract_mean(Dataset& data, const Tensor<float>& mean) {
  if (mean.shape() != Shape{data.channels(), data.height(), data.width()}) {
    throw DataError("mean image " + to_string(mean.shape()) + " does not match samples (" +
                    std::to_string(data.channels()) + ", " + std::to_string(data.height()) +
                    ", " + std::to_string(data.width()) + ")");
  }
  const std::size_t n = data.sample_size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    float* s = data.images.data() + i * n;
    for (std::size_t k = 0; k < n; ++k) s[k] -= mean[k];
  }
}

// ---------------------------------------------------------------------------

namespace {

using Glyph = std::array<float, kGlyphSize * kGlyphSize>;

Glyph make_glyph(const char* bits) {
  Glyph g{};
  double mean = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) mean += bits[i] == '1';
  mean /= static_cast<double>(g.size());
  double var = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) var += std::pow((bits[i] == '1') - mean, 2);
  const double sd = std::sqrt(var / static_cast<double>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = static_cast<float>(((bits[i] == '1') - mean) / sd);
  return g;
}

}  // namespace

const Glyph& glyph(std::size_t which) {
  static const Glyph plus = make_glyph("0110111111110110");
  static const Glyph cross = make_glyph("1001011001101001");
  if (which > 1) throw ContractError("glyph index must be 0 or 1");
  return which == 0 ? plus : cross;
}

std::uint32_t context_label(const GlyphPlacement& p) { return p.col_a < p.col_b ? 0 : 1; }

Tensor<float> render_context_image(const GlyphPlacement& p) {
  if (p.row_a >= kContextLayout || p.col_a >= kContextLayout || p.row_b >= kContextLayout ||
      p.col_b >= kContextLayout) {
    throw ContractError("glyph placement outside the layout");
  }
  if (p.row_a == p.row_b && p.col_a == p.col_b) throw ContractError("glyphs overlap");
  Tensor<float> img({1, kContextImage, kContextImage});
  auto stamp = [&](const Glyph& g, std::size_t row, std::size_t col) {
    for (std::size_t y = 0; y < kGlyphSize; ++y)
      for (std::size_t x = 0; x < kGlyphSize; ++x)
        img[(row * kGlyphSize + y) * kContextImage + col * kGlyphSize + x] = g[y * kGlyphSize + x];
  };
  stamp(glyph(0), p.row_a, p.col_a);
  stamp(glyph(1), p.row_b, p.col_b);
  return img;
}

Tensor<float> mirror_image(const Tensor<float>& image) {
  if (image.rank() != 3) throw ShapeError("mirror_image expects (C, H, W)");
  Tensor<float> out(image.shape());
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out[(ch * h + y) * w + x] = image[(ch * h + y) * w + (w - 1 - x)];
  return out;
}

Dataset gen_context_task(std::size_t n, std::uint64_t seed, const std::string& split) {
  if (n < 2) throw ContractError("gen_context_task needs n >= 2");
  Rng rng(seed);
  Dataset d;
  d.split = split;
  d.classes = 2;
  d.images = Tensor<float>({n, 1, kContextImage, kContextImage});
  d.labels.resize(n);
  const std::size_t pixels = kContextImage * kContextImage;
  for (std::size_t i = 0; i < n; ++i) {
    GlyphPlacement p{};
    p.row_a = rng.below(kContextLayout);
    p.col_a = rng.below(kContextLayout);
    p.row_b = rng.below(kContextLayout);
    p.col_b = rng.below(kContextLayout - 1);
    if (p.col_b >= p.col_a) ++p.col_b;
    const Tensor<float> img = render_context_image(p);
    std::copy(img.data(), img.data() + pixels, d.images.data() + i * pixels);
    d.labels[i] = context_label(p);
  }
  return d;
}

}  // namespace chrnn
