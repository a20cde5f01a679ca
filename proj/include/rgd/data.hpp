#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rgd/checkpoint.hpp"
#include "rgd/numerics.hpp"

namespace rgd {

/// Labelled images [n, c, h, w] in [-1, 1], labels 1..classes, optional binary masks [n, 1, h, w].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int classes = 0;
  std::optional<Tensor> masks;
  std::string split = "train";

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }

  void validate() const {
    if (labels.empty()) throw std::invalid_argument("dataset is empty");
    if (images.rank() != 4 || images.dim(0) != labels.size())
      throw std::invalid_argument("dataset images/labels disagree in count");
    for (int y : labels)
      if (y < 1 || y > classes) throw std::invalid_argument("dataset label outside 1..C");
    if (masks) {
      if (masks->dim(0) != labels.size()) throw std::invalid_argument("dataset mask count mismatch");
      for (double m : masks->storage())
        if (m != 0.0 && m != 1.0) throw std::invalid_argument("dataset masks must be binary");
    }
  }

  Tensor gather(std::span<const std::size_t> idx) const {
    Shape shape = images.shape();
    shape[0] = idx.size();
    Tensor out(shape);
    const std::size_t stride = images.stride0();
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(images.row(idx[i]).data(), stride, out.row(i).data());
    return out;
  }

  std::vector<int> gather_labels(std::span<const std::size_t> idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(labels[i]);
    return out;
  }

  /// Indices of the first `per_class` samples of every class, class-major.
  std::vector<std::size_t> balanced_indices(std::size_t per_class) const {
    std::vector<std::size_t> out;
    for (int c = 1; c <= classes; ++c) {
      std::size_t taken = 0;
      for (std::size_t i = 0; i < size() && taken < per_class; ++i)
        if (labels[i] == c) {
          out.push_back(i);
          ++taken;
        }
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// ShapesToy: ring, cross, horizontal stripes, vertical stripes.

inline constexpr int kShapesClasses = 4;

inline Dataset generate_shapes_toy(std::size_t per_class, int size, RngStream rng, const std::string& split = "train") {
  if (size < 8) throw std::invalid_argument("generate_shapes_toy: size must be >= 8");
  const std::size_t n = per_class * kShapesClasses;
  const auto s = static_cast<std::size_t>(size);
  Dataset d;
  d.classes = kShapesClasses;
  d.split = split;
  d.images = Tensor({n, 1, s, s});
  d.masks = Tensor({n, 1, s, s});
  d.labels.resize(n);
  const double u = size / 16.0;  // geometry is specified for 16x16 and scaled
  for (std::size_t i = 0; i < n; ++i) {
    RngStream r = rng.fork(i);
    const int label = static_cast<int>(i % kShapesClasses) + 1;
    d.labels[i] = label;
    const double cx = size / 2.0 + (2.0 * r.uniform() - 1.0);
    const double cy = size / 2.0 + (2.0 * r.uniform() - 1.0);
    const double intensity = 0.8 + (0.4 * r.uniform() - 0.2);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        bool on = false;
        const bool in_patch = std::abs(dx) <= 5.0 * u && std::abs(dy) <= 5.0 * u;
        switch (label) {
          case 1: {
            const double r2 = dx * dx + dy * dy;
            on = r2 >= 6.25 * u * u && r2 <= 20.25 * u * u;
            break;
          }
          case 2:
            on = (std::abs(dx) <= 1.0 * u && std::abs(dy) <= 5.0 * u) ||
                 (std::abs(dy) <= 1.0 * u && std::abs(dx) <= 5.0 * u);
            break;
          case 3: on = in_patch && static_cast<int>(std::floor(y / (2.0 * u))) % 2 == 0; break;
          case 4: on = in_patch && static_cast<int>(std::floor(x / (2.0 * u))) % 2 == 0; break;
        }
        const std::size_t k = i * s * s + std::size_t(y) * s + std::size_t(x);
        (*d.masks)[k] = on ? 1.0 : 0.0;
        const double v = (on ? intensity : -0.8) + 0.05 * r.normal();
        d.images[k] = std::clamp(v, -1.0, 1.0);
      }
  }
  return d;
}

// ---------------------------------------------------------------------------
// IDX (big-endian header, unsigned byte payload).

inline constexpr std::uint32_t kIdxImages = 0x00000803;
inline constexpr std::uint32_t kIdxLabels = 0x00000801;

namespace detail {
inline std::uint32_t be32(const std::string& b, std::size_t at) {
  if (b.size() < at + 4) throw IoError("IDX file truncated in header");
  return (std::uint32_t(static_cast<unsigned char>(b[at])) << 24) |
         (std::uint32_t(static_cast<unsigned char>(b[at + 1])) << 16) |
         (std::uint32_t(static_cast<unsigned char>(b[at + 2])) << 8) | std::uint32_t(static_cast<unsigned char>(b[at + 3]));
}
inline void put_be32(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
}  // namespace detail

inline std::uint8_t quantize_signed(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp((v + 1.0) * 0.5, 0.0, 1.0) * 255.0));
}
inline double dequantize_signed(std::uint8_t b) { return b / 255.0 * 2.0 - 1.0; }

/// Raw IDX image payload as [n, rows, cols] bytes.
struct IdxImages {
  std::uint32_t n = 0, rows = 0, cols = 0;
  std::string bytes;
};

inline IdxImages parse_idx_images(const std::string& b) {
  if (detail::be32(b, 0) != kIdxImages) throw IoError("IDX images: bad magic");
  IdxImages out{detail::be32(b, 4), detail::be32(b, 8), detail::be32(b, 12), {}};
  const std::size_t need = std::size_t(out.n) * out.rows * out.cols;
  if (b.size() - 16 < need) throw IoError("IDX images: truncated payload");
  out.bytes = b.substr(16, need);
  return out;
}

inline std::vector<std::uint8_t> parse_idx_labels(const std::string& b) {
  if (detail::be32(b, 0) != kIdxLabels) throw IoError("IDX labels: bad magic");
  const std::uint32_t n = detail::be32(b, 4);
  if (b.size() - 8 < n) throw IoError("IDX labels: truncated payload");
  return {b.begin() + 8, b.begin() + 8 + n};
}

/// Loads an IDX image/label pair; pixels rescaled to [-1, 1], labels shifted to 1..C.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::optional<std::filesystem::path> masks_path = std::nullopt) {
  const IdxImages img = parse_idx_images(read_file(images_path));
  const std::vector<std::uint8_t> lab = parse_idx_labels(read_file(labels_path));
  if (lab.size() != img.n)
    throw IoError("IDX: " + std::to_string(lab.size()) + " labels for " + std::to_string(img.n) + " images");
  Dataset d;
  d.images = Tensor({img.n, 1, img.rows, img.cols});
  for (std::size_t i = 0; i < img.bytes.size(); ++i) d.images[i] = dequantize_signed(static_cast<std::uint8_t>(img.bytes[i]));
  d.labels.reserve(lab.size());
  for (std::uint8_t l : lab) d.labels.push_back(int(l) + 1);
  d.classes = d.labels.empty() ? 0 : *std::max_element(d.labels.begin(), d.labels.end());
  if (masks_path) {
    const IdxImages m = parse_idx_images(read_file(*masks_path));
    if (m.n != img.n || m.rows != img.rows || m.cols != img.cols) throw IoError("IDX masks: dimension mismatch");
    Tensor masks(d.images.shape());
    for (std::size_t i = 0; i < m.bytes.size(); ++i) masks[i] = static_cast<unsigned char>(m.bytes[i]) >= 128 ? 1.0 : 0.0;
    d.masks = std::move(masks);
  }
  return d;
}

inline std::string encode_idx_images(const Tensor& images, bool binary_mask = false) {
  if (images.rank() != 4 || images.dim(1) != 1) throw std::invalid_argument("IDX images must be [n, 1, h, w]");
  std::string out;
  detail::put_be32(out, kIdxImages);
  detail::put_be32(out, static_cast<std::uint32_t>(images.dim(0)));
  detail::put_be32(out, static_cast<std::uint32_t>(images.dim(2)));
  detail::put_be32(out, static_cast<std::uint32_t>(images.dim(3)));
  for (double v : images.storage())
    out.push_back(static_cast<char>(binary_mask ? (v > 0.5 ? 255 : 0) : quantize_signed(v)));
  return out;
}

inline std::string encode_idx_labels(std::span<const int> labels) {
  std::string out;
  detail::put_be32(out, kIdxLabels);
  detail::put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int y : labels) out.push_back(static_cast<char>(y - 1));
  return out;
}

/// Writes images.idx, labels.idx (and masks.idx) into dir.
inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  write_file_atomic(dir / "images.idx", encode_idx_images(d.images));
  write_file_atomic(dir / "labels.idx", encode_idx_labels(d.labels));
  if (d.masks) write_file_atomic(dir / "masks.idx", encode_idx_images(*d.masks, true));
}

// ---------------------------------------------------------------------------
// PGM / PPM.

enum class PixelRange { Signed, Unit };  // [-1, 1] or [0, 1]

/// Grayscale [1, h, w] -> P5, colour [3, h, w] -> P6; 8-bit, row-major.
inline std::string encode_image(const Tensor& x, PixelRange range) {
  Shape s = x.shape();
  if (s.size() == 2) s.insert(s.begin(), 1);
  if (s.size() != 3 || (s[0] != 1 && s[0] != 3))
    throw std::invalid_argument("write_image: expected 1 or 3 channels, got shape " + shape_string(x.shape()));
  const std::size_t c = s[0], h = s[1], w = s[2];
  std::string out = (c == 1 ? "P5\n" : "P6\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = x[ch * h * w + p];
      const double unit = range == PixelRange::Signed ? (v + 1.0) * 0.5 : v;
      out.push_back(static_cast<char>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0)));
    }
  return out;
}

inline void write_image(const Tensor& x, const std::filesystem::path& path, PixelRange range = PixelRange::Signed) {
  write_file_atomic(path, encode_image(x, range));
}

/// Reads P5/P6 back to [c, h, w] in the requested range.
inline Tensor read_image(const std::filesystem::path& path, PixelRange range = PixelRange::Signed) {
  const std::string b = read_file(path);
  std::size_t pos = 0;
  auto token = [&] {
    while (pos < b.size() && std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < b.size() && !std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
    return b.substr(start, pos - start);
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw IoError("not a binary PGM/PPM: " + path.string());
  const std::size_t w = std::stoul(token()), h = std::stoul(token());
  if (token() != "255") throw IoError("only 8-bit PGM/PPM supported");
  ++pos;
  const std::size_t c = magic == "P5" ? 1 : 3;
  if (b.size() - pos < c * h * w) throw IoError("image payload truncated: " + path.string());
  Tensor out({c, h, w});
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double unit = static_cast<unsigned char>(b[pos + p * c + ch]) / 255.0;
      out[ch * h * w + p] = range == PixelRange::Signed ? unit * 2.0 - 1.0 : unit;
    }
  return out;
}

/// Loads a directory written by save_dataset (images.idx) or a set of .pgm files (sorted by
/// name, labels from labels.idx when present, otherwise 0).
inline Dataset load_image_dir(const std::filesystem::path& dir) {
  if (std::filesystem::exists(dir / "images.idx")) {
    std::optional<std::filesystem::path> masks;
    if (std::filesystem::exists(dir / "masks.idx")) masks = dir / "masks.idx";
    return load_idx(dir / "images.idx", dir / "labels.idx", masks);
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".pgm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no images found in " + dir.string());
  const Tensor first = read_image(files.front());
  Dataset d;
  d.images = Tensor({files.size(), first.dim(0), first.dim(1), first.dim(2)});
  for (std::size_t i = 0; i < files.size(); ++i) {
    const Tensor img = read_image(files[i]);
    if (img.shape() != first.shape()) throw IoError("image size mismatch in " + files[i].string());
    std::copy(img.storage().begin(), img.storage().end(), d.images.row(i).data());
  }
  if (std::filesystem::exists(dir / "labels.idx")) {
    for (std::uint8_t l : parse_idx_labels(read_file(dir / "labels.idx"))) d.labels.push_back(int(l) + 1);
    if (d.labels.size() != files.size()) throw IoError("labels.idx count does not match images in " + dir.string());
    d.classes = *std::max_element(d.labels.begin(), d.labels.end());
  } else {
    d.labels.assign(files.size(), 0);
  }
  return d;
}

}  // namespace rgd
