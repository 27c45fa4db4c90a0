#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "chexkit/boxes.hpp"
#include "chexkit/error.hpp"
#include "chexkit/io.hpp"
#include "chexkit/rng.hpp"

namespace chexkit::image {

enum class ValueRange : std::uint8_t { raw8, unit };

// Row-major, channel-interleaved intensity grid. raw8 holds integers 0-255,
// unit holds reals in [0,1].
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 1;
  ValueRange range = ValueRange::unit;
  std::vector<double> data;

  static ImageBuffer filled(int w, int h, int c, ValueRange r, double value) {
    ImageBuffer img;
    img.width = w;
    img.height = h;
    img.channels = c;
    img.range = r;
    img.data.assign(static_cast<std::size_t>(w) * h * c, value);
    return img;
  }

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double at(int x, int y, int c) const { return data[index(x, y, c)]; }
  double& at(int x, int y, int c) { return data[index(x, y, c)]; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

inline void require_shape(const ImageBuffer& img) {
  if (img.width < 1 || img.height < 1 || (img.channels != 1 && img.channels != 3) ||
      img.data.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
    fail(errc::dimension_mismatch, "image buffer shape/data mismatch");
  }
}

inline ImageBuffer normalize(const ImageBuffer& img) {
  require_shape(img);
  if (img.range != ValueRange::raw8) {
    fail(errc::already_normalized, "buffer is already in [0,1]");
  }
  ImageBuffer out = img;
  out.range = ValueRange::unit;
  for (double& v : out.data) v /= 255.0;
  return out;
}

namespace detail {

// a + t*(b-a) rather than the two-product form: the result provably stays in
// [min(a,b), max(a,b)], a constant pair comes back exactly, and t = 0 is an
// exact identity.
inline double lerp(double a, double b, double t) { return a + t * (b - a); }

// Bilinear sample at continuous pixel-index coordinates, clamped to edges.
inline double sample_clamped(const ImageBuffer& img, double sx, double sy, int c) {
  const double fx0 = std::floor(sx);
  const double fy0 = std::floor(sy);
  const double wx = sx - fx0;
  const double wy = sy - fy0;
  const int x0 = std::clamp(static_cast<int>(fx0), 0, img.width - 1);
  const int x1 = std::clamp(static_cast<int>(fx0) + 1, 0, img.width - 1);
  const int y0 = std::clamp(static_cast<int>(fy0), 0, img.height - 1);
  const int y1 = std::clamp(static_cast<int>(fy0) + 1, 0, img.height - 1);
  const double top = lerp(img.at(x0, y0, c), img.at(x1, y0, c), wx);
  const double bottom = lerp(img.at(x0, y1, c), img.at(x1, y1, c), wx);
  return lerp(top, bottom, wy);
}

// Bilinear sample where out-of-bounds neighbors contribute 0.
inline double sample_zero_fill(const ImageBuffer& img, double sx, double sy, int c) {
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const double wx = sx - x0;
  const double wy = sy - y0;
  const auto value_or_zero = [&](int x, int y) {
    if (x < 0 || x >= img.width || y < 0 || y >= img.height) return 0.0;
    return img.at(x, y, c);
  };
  const double top = lerp(value_or_zero(x0, y0), value_or_zero(x0 + 1, y0), wx);
  const double bottom = lerp(value_or_zero(x0, y0 + 1), value_or_zero(x0 + 1, y0 + 1), wx);
  return lerp(top, bottom, wy);
}

}  // namespace detail

// Bilinear resize with the pixel-center convention (sample of output pixel x
// comes from source coordinate (x+0.5)*scale-0.5, no corner alignment).
inline ImageBuffer resize(const ImageBuffer& img, int w, int h) {
  require_shape(img);
  if (w < 1 || h < 1) fail(errc::zero_dimension, "resize target must be at least 1x1");
  ImageBuffer out = ImageBuffer::filled(w, h, img.channels, img.range, 0.0);
  const double sx_scale = static_cast<double>(img.width) / w;
  const double sy_scale = static_cast<double>(img.height) / h;
  for (int y = 0; y < h; ++y) {
    const double sy = (y + 0.5) * sy_scale - 0.5;
    for (int x = 0; x < w; ++x) {
      const double sx = (x + 0.5) * sx_scale - 0.5;
      for (int c = 0; c < img.channels; ++c) {
        out.at(x, y, c) = detail::sample_clamped(img, sx, sy, c);
      }
    }
  }
  return out;
}

inline ImageBuffer hflip(const ImageBuffer& img) {
  require_shape(img);
  ImageBuffer out = ImageBuffer::filled(img.width, img.height, img.channels, img.range, 0.0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
      }
    }
  }
  return out;
}

inline ImageBuffer vflip(const ImageBuffer& img) {
  require_shape(img);
  ImageBuffer out = ImageBuffer::filled(img.width, img.height, img.channels, img.range, 0.0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        out.at(x, y, c) = img.at(x, img.height - 1 - y, c);
      }
    }
  }
  return out;
}

// Counter-clockwise rotation about the image center, bilinear sampling,
// out-of-bounds filled with 0. Output dimensions are unchanged.
inline ImageBuffer rotate(const ImageBuffer& img, double degrees) {
  require_shape(img);
  if (!std::isfinite(degrees)) fail(errc::bad_value, "rotation angle must be finite");
  const double theta = degrees * M_PI / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double cx = img.width / 2.0;
  const double cy = img.height / 2.0;
  ImageBuffer out = ImageBuffer::filled(img.width, img.height, img.channels, img.range, 0.0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dx = (x + 0.5) - cx;
      const double dy = (y + 0.5) - cy;
      const double sx = cos_t * dx + sin_t * dy + cx - 0.5;
      const double sy = -sin_t * dx + cos_t * dy + cy - 0.5;
      for (int c = 0; c < img.channels; ++c) {
        out.at(x, y, c) = detail::sample_zero_fill(img, sx, sy, c);
      }
    }
  }
  return out;
}

// Output dims round half away from zero; the crop window is anchored at
// offset floor((dim - out_dim)/2). Plain copy, no resampling.
inline ImageBuffer center_crop(const ImageBuffer& img, double fraction) {
  require_shape(img);
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    fail(errc::bad_config, "crop fraction must be in (0,1]");
  }
  const int out_w = static_cast<int>(std::llround(fraction * img.width));
  const int out_h = static_cast<int>(std::llround(fraction * img.height));
  if (out_w < 1 || out_h < 1) fail(errc::crop_too_small, "crop result would be empty");
  const int off_x = (img.width - out_w) / 2;
  const int off_y = (img.height - out_h) / 2;
  ImageBuffer out = ImageBuffer::filled(out_w, out_h, img.channels, img.range, 0.0);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        out.at(x, y, c) = img.at(off_x + x, off_y + y, c);
      }
    }
  }
  return out;
}

// Sub-image over the integer-clamped box region ([floor(x_min), ceil(x_max))
// intersected with the image rectangle).
inline ImageBuffer crop_bbox(const ImageBuffer& img, const boxes::BBox& box) {
  require_shape(img);
  boxes::require_valid(box);
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x_min)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y_min)));
  const int x1 = std::min(img.width, static_cast<int>(std::ceil(box.x_max)));
  const int y1 = std::min(img.height, static_cast<int>(std::ceil(box.y_max)));
  if (x0 >= x1 || y0 >= y1) {
    fail(errc::box_outside_image, "box does not intersect the image");
  }
  ImageBuffer out = ImageBuffer::filled(x1 - x0, y1 - y0, img.channels, img.range, 0.0);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        out.at(x - x0, y - y0, c) = img.at(x, y, c);
      }
    }
  }
  return out;
}

struct AugmentConfig {
  bool enable_center_crop = true;
  bool enable_rotate = true;
  bool enable_hflip = true;
  bool enable_vflip = true;
  bool enable_resize = true;
  double p_center_crop = 0.5;
  double p_rotate = 0.5;
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double p_resize = 0.5;
  double rotation_lo_deg = -15.0;
  double rotation_hi_deg = 15.0;
  double crop_fraction = 0.9;
  int target_width = 476;
  int target_height = 476;
  std::uint64_t seed = 0;
};

inline void validate(const AugmentConfig& cfg) {
  for (double p : {cfg.p_center_crop, cfg.p_rotate, cfg.p_hflip, cfg.p_vflip, cfg.p_resize}) {
    if (!(p >= 0.0 && p <= 1.0)) fail(errc::bad_config, "augment probability out of [0,1]");
  }
  if (!(cfg.crop_fraction > 0.0 && cfg.crop_fraction <= 1.0)) {
    fail(errc::bad_config, "crop fraction must be in (0,1]");
  }
  if (!(cfg.rotation_lo_deg <= cfg.rotation_hi_deg)) {
    fail(errc::bad_config, "rotation range is inverted");
  }
  if (cfg.target_width < 1 || cfg.target_height < 1) {
    fail(errc::bad_config, "augment target size must be at least 1x1");
  }
}

// Fixed transform order: center_crop -> rotate -> hflip -> vflip -> resize.
// The per-image stream is seeded from (cfg.seed, image_index); one coin is
// drawn per enabled transform in that order, and the rotation angle is drawn
// right after a firing rotate coin.
inline ImageBuffer augment(const ImageBuffer& img, const AugmentConfig& cfg,
                           std::uint64_t image_index) {
  validate(cfg);
  require_shape(img);
  Rng rng(mix_seed(cfg.seed, image_index));
  ImageBuffer out = img;
  if (cfg.enable_center_crop && rng.unit() < cfg.p_center_crop) {
    out = center_crop(out, cfg.crop_fraction);
  }
  if (cfg.enable_rotate && rng.unit() < cfg.p_rotate) {
    const double angle = rng.uniform(cfg.rotation_lo_deg, cfg.rotation_hi_deg);
    out = rotate(out, angle);
  }
  if (cfg.enable_hflip && rng.unit() < cfg.p_hflip) out = hflip(out);
  if (cfg.enable_vflip && rng.unit() < cfg.p_vflip) out = vflip(out);
  if (cfg.enable_resize && rng.unit() < cfg.p_resize) {
    out = resize(out, cfg.target_width, cfg.target_height);
  }
  return out;
}

// Flat binary fixture format: 16-byte header (magic "CXIB", u32 width,
// u32 height, u16 channels, u8 range, u8 version) then f64 little-endian
// samples in row-major order.
inline constexpr std::uint8_t kBufferMagic[4] = {'C', 'X', 'I', 'B'};
inline constexpr std::uint8_t kBufferVersion = 1;

inline std::vector<std::uint8_t> serialize_buffer(const ImageBuffer& img) {
  require_shape(img);
  std::vector<std::uint8_t> out;
  out.reserve(16 + img.data.size() * 8);
  out.insert(out.end(), std::begin(kBufferMagic), std::end(kBufferMagic));
  wire::put_u32(out, static_cast<std::uint32_t>(img.width));
  wire::put_u32(out, static_cast<std::uint32_t>(img.height));
  wire::put_u16(out, static_cast<std::uint16_t>(img.channels));
  out.push_back(static_cast<std::uint8_t>(img.range));
  out.push_back(kBufferVersion);
  for (double v : img.data) wire::put_f64(out, v);
  return out;
}

inline ImageBuffer deserialize_buffer(const std::string& bytes) {
  wire::Reader reader(bytes);
  if (bytes.size() < 16) fail(errc::io_error, "buffer file too short");
  for (std::uint8_t m : kBufferMagic) {
    if (reader.u8() != m) fail(errc::io_error, "bad buffer magic");
  }
  ImageBuffer img;
  img.width = static_cast<int>(reader.u32());
  img.height = static_cast<int>(reader.u32());
  img.channels = reader.u16();
  img.range = static_cast<ValueRange>(reader.u8());
  if (reader.u8() != kBufferVersion) fail(errc::io_error, "unsupported buffer version");
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (reader.remaining() != n * 8) fail(errc::io_error, "buffer payload size mismatch");
  img.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) img.data[i] = reader.f64();
  require_shape(img);
  return img;
}

inline void write_buffer(const std::filesystem::path& path, const ImageBuffer& img) {
  write_file_atomic(path, serialize_buffer(img));
}

inline ImageBuffer read_buffer(const std::filesystem::path& path) {
  return deserialize_buffer(read_file(path));
}

}  // namespace chexkit::image
