#pragma once

// Procedural forgery corpus. "Real" samples are structured face-like images
// (gradient background, layered ellipses, two eye blobs, a mouth bar, sensor
// noise). "Fake" samples are real samples passed through one of five artifact
// operators, each a synthetic analogue of a manipulation family:
//
//   0  quadrant swap        region transplant (face swap)
//   1  local blur patch     blending boundary
//   2  checkerboard         upsampling / GAN texture
//   3  mouth-region warp    expression reenactment
//   4  8x8 DCT truncation   recompression

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedforge/random.hpp"

namespace fedforge::data {

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::int32_t kNumArtifactTypes = 5;

/// Single-channel square image, row-major, values in [0, 1].
struct Image {
  std::vector<float> pixels = std::vector<float>(kImageSize * kImageSize, 0.0f);

  float& at(std::size_t y, std::size_t x) { return pixels[y * kImageSize + x]; }
  float at(std::size_t y, std::size_t x) const { return pixels[y * kImageSize + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

struct Sample {
  Image image;
  std::int32_t label = 0;                    // 0 real, 1 fake
  std::optional<std::int32_t> artifact_type;  // set iff fake
  std::uint64_t seed = 0;                     // seed of the underlying real image
};

/// Artifact intensities. Changing any value changes every generated corpus,
/// so edits must bump `version`.
struct ArtifactTable {
  int version = 1;
  std::size_t blur_patch = 16;
  float blur_sigma = 2.0f;
  float blend_shift = 0.12f;  // brightness mismatch of the blended patch
  float checker_amplitude = 0.05f;
  float warp_amplitude = 3.0f;
  float warp_period = 5.0f;
  std::size_t warp_margin = 8;
  std::size_t dct_keep = 4;  // keep coefficients with u + v < dct_keep
  float noise_sigma = 0.02f; // sensor noise on real images
};

inline constexpr ArtifactTable kArtifactTable{};

/// Seed-jittered geometry and intensities of one real image.
struct FaceLayout {
  float bg_base, bg_gx, bg_gy;
  float hair_cx, hair_cy, hair_rx, hair_ry, hair_level;
  float face_cx, face_cy, face_rx, face_ry, face_level;
  float eye_dx, eye_y, eye_sigma, eye_depth;
  float mouth_cx, mouth_y, mouth_half_w, mouth_half_h, mouth_depth;
};

inline FaceLayout face_layout(std::uint64_t seed) {
  Rng r(derive_seed({seed, 0x6c61796f7574ULL}));
  FaceLayout f{};
  f.bg_base = r.uniform_float(0.15f, 0.35f);
  f.bg_gx = r.uniform_float(-0.2f, 0.2f);
  f.bg_gy = r.uniform_float(-0.2f, 0.2f);
  f.face_cx = 16.0f + r.uniform_float(-2.0f, 2.0f);
  f.face_cy = 17.0f + r.uniform_float(-2.0f, 2.0f);
  f.face_rx = r.uniform_float(8.5f, 11.0f);
  f.face_ry = r.uniform_float(10.5f, 13.0f);
  f.face_level = r.uniform_float(0.55f, 0.8f);
  f.hair_cx = f.face_cx + r.uniform_float(-1.0f, 1.0f);
  f.hair_cy = f.face_cy - r.uniform_float(4.0f, 6.0f);
  f.hair_rx = f.face_rx + r.uniform_float(0.5f, 2.0f);
  f.hair_ry = f.face_ry * r.uniform_float(0.6f, 0.8f);
  f.hair_level = r.uniform_float(0.05f, 0.3f);
  f.eye_dx = r.uniform_float(3.5f, 5.0f);
  f.eye_y = f.face_cy - r.uniform_float(2.5f, 4.0f);
  f.eye_sigma = r.uniform_float(0.9f, 1.4f);
  f.eye_depth = r.uniform_float(0.25f, 0.45f);
  f.mouth_cx = f.face_cx + r.uniform_float(-0.8f, 0.8f);
  f.mouth_y = f.face_cy + r.uniform_float(4.5f, 6.5f);
  f.mouth_half_w = r.uniform_float(3.0f, 4.5f);
  f.mouth_half_h = r.uniform_float(0.7f, 1.3f);
  f.mouth_depth = r.uniform_float(0.2f, 0.35f);
  return f;
}

namespace detail {

inline float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

// Anti-aliased coverage of an axis-aligned ellipse at pixel centre (x, y).
inline float ellipse_coverage(float x, float y, float cx, float cy, float rx, float ry) {
  const float dx = (x - cx) / rx, dy = (y - cy) / ry;
  const float r = std::sqrt(dx * dx + dy * dy);
  return std::clamp(0.5f + (1.0f - r) * std::min(rx, ry), 0.0f, 1.0f);
}

inline float bilinear(const Image& img, float y, float x) {
  const float maxc = static_cast<float>(kImageSize - 1);
  y = std::clamp(y, 0.0f, maxc);
  x = std::clamp(x, 0.0f, maxc);
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const auto y1 = std::min(y0 + 1, kImageSize - 1), x1 = std::min(x0 + 1, kImageSize - 1);
  const float fy = y - static_cast<float>(y0), fx = x - static_cast<float>(x0);
  const float top = img.at(y0, x0) * (1 - fx) + img.at(y0, x1) * fx;
  const float bot = img.at(y1, x0) * (1 - fx) + img.at(y1, x1) * fx;
  return top * (1 - fy) + bot * fy;
}

}  // namespace detail

/// Deterministic real image for `seed`.
inline Sample gen_real(std::uint64_t seed, const ArtifactTable& table = kArtifactTable) {
  const FaceLayout f = face_layout(seed);
  Rng noise(derive_seed({seed, 0x6e6f697365ULL}));
  Sample s;
  s.seed = seed;
  const float span = static_cast<float>(kImageSize - 1);
  for (std::size_t y = 0; y < kImageSize; ++y)
    for (std::size_t x = 0; x < kImageSize; ++x) {
      const float px = static_cast<float>(x) + 0.5f, py = static_cast<float>(y) + 0.5f;
      float v = f.bg_base + f.bg_gx * (static_cast<float>(x) / span - 0.5f) +
                f.bg_gy * (static_cast<float>(y) / span - 0.5f);
      const float hair = detail::ellipse_coverage(px, py, f.hair_cx, f.hair_cy, f.hair_rx, f.hair_ry);
      v += (f.hair_level - v) * hair;
      const float face = detail::ellipse_coverage(px, py, f.face_cx, f.face_cy, f.face_rx, f.face_ry);
      v += (f.face_level - v) * face;
      for (float side : {-1.0f, 1.0f}) {
        const float ex = f.face_cx + side * f.eye_dx;
        const float d2 = (px - ex) * (px - ex) + (py - f.eye_y) * (py - f.eye_y);
        v -= f.eye_depth * std::exp(-d2 / (2.0f * f.eye_sigma * f.eye_sigma));
      }
      const float mx = std::clamp(0.5f + f.mouth_half_w - std::abs(px - f.mouth_cx), 0.0f, 1.0f);
      const float my = std::clamp(0.5f + f.mouth_half_h - std::abs(py - f.mouth_y), 0.0f, 1.0f);
      v -= f.mouth_depth * mx * my;
      v += table.noise_sigma * static_cast<float>(noise.normal());
      s.image.at(y, x) = detail::clamp01(v);
    }
  return s;
}

/// Quadrants: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
inline void swap_quadrants(Image& img, int a, int b) {
  if (a < 0 || a > 3 || b < 0 || b > 3) throw std::invalid_argument("swap_quadrants: bad quadrant");
  if (a == b) return;
  constexpr std::size_t h = kImageSize / 2;
  const std::size_t ay = (a / 2) * h, ax = (a % 2) * h, by = (b / 2) * h, bx = (b % 2) * h;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < h; ++x) std::swap(img.at(ay + y, ax + x), img.at(by + y, bx + x));
}

inline constexpr std::array<std::array<int, 2>, 6> kQuadrantPairs{
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

/// Rectangular region [y0, y1) x [x0, x1) an operator writes to.
struct Region {
  std::size_t y0, y1, x0, x1;
  bool contains(std::size_t y, std::size_t x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

/// Parameters an artifact draws from its seed; exposed so tests can reason
/// about the operator's support.
struct ArtifactPlan {
  std::int32_t type = 0;
  std::array<int, 2> quadrants{0, 0};
  Region region{0, kImageSize, 0, kImageSize};
  float sign = 1.0f;
  float phase = 0.0f;
};

inline Region mouth_region(const FaceLayout& f, const ArtifactTable& t) {
  const auto lo = [](float v) {
    return static_cast<std::size_t>(std::clamp(std::floor(v), 0.0f, static_cast<float>(kImageSize)));
  };
  const auto hi = [](float v) {
    return static_cast<std::size_t>(std::clamp(std::ceil(v), 0.0f, static_cast<float>(kImageSize)));
  };
  const float m = static_cast<float>(t.warp_margin);
  return {lo(f.mouth_y - f.mouth_half_h - m), hi(f.mouth_y + f.mouth_half_h + m),
          lo(f.mouth_cx - f.mouth_half_w - m), hi(f.mouth_cx + f.mouth_half_w + m)};
}

inline ArtifactPlan plan_artifact(const Sample& real, std::int32_t type, std::uint64_t seed,
                                  const ArtifactTable& t = kArtifactTable) {
  if (type < 0 || type >= kNumArtifactTypes) {
    throw std::invalid_argument("unknown artifact type " + std::to_string(type) + " (valid 0-4)");
  }
  Rng r(derive_seed({seed, static_cast<std::uint64_t>(type), 0x61727466ULL}));
  ArtifactPlan p;
  p.type = type;
  const FaceLayout f = face_layout(real.seed);
  switch (type) {
    case 0: {
      p.quadrants = kQuadrantPairs[r.below(kQuadrantPairs.size())];
      p.region = {0, kImageSize, 0, kImageSize};
      break;
    }
    case 1: {
      const auto n = t.blur_patch;
      const auto place = [&](float centre) {
        const float start = centre - static_cast<float>(n) / 2.0f + r.uniform_float(-4.0f, 4.0f);
        return static_cast<std::size_t>(
            std::clamp(std::round(start), 0.0f, static_cast<float>(kImageSize - n)));
      };
      const auto y0 = place(f.face_cy), x0 = place(f.face_cx);
      p.region = {y0, y0 + n, x0, x0 + n};
      p.sign = r.below(2) == 0 ? 1.0f : -1.0f;
      break;
    }
    case 2:
      p.sign = r.below(2) == 0 ? 1.0f : -1.0f;
      break;
    case 3:
      p.region = mouth_region(f, t);
      p.phase = r.uniform_float(0.0f, 2.0f * std::numbers::pi_v<float>);
      break;
    case 4:
      break;
  }
  return p;
}

namespace detail {

inline void blur_patch(Image& img, const Region& reg, float sigma, float shift) {
  const int radius = static_cast<int>(std::ceil(3.0f * sigma));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  float ksum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-(i * i) / (2.0f * sigma * sigma));
    ksum += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= ksum;
  const Image src = img;
  const auto clampi = [](int v) {
    return static_cast<std::size_t>(std::clamp(v, 0, static_cast<int>(kImageSize) - 1));
  };
  // Separable blur evaluated from the untouched source, written inside the patch only.
  Image tmp = src;
  for (std::size_t y = 0; y < kImageSize; ++y)
    for (std::size_t x = reg.x0; x < reg.x1; ++x) {
      float acc = 0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[static_cast<std::size_t>(i + radius)] * src.at(y, clampi(static_cast<int>(x) + i));
      tmp.at(y, x) = acc;
    }
  for (std::size_t y = reg.y0; y < reg.y1; ++y)
    for (std::size_t x = reg.x0; x < reg.x1; ++x) {
      float acc = 0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(clampi(static_cast<int>(y) + i), x);
      img.at(y, x) = clamp01(acc + shift);
    }
}

inline void checkerboard(Image& img, float amplitude, float sign) {
  for (std::size_t y = 0; y < kImageSize; ++y)
    for (std::size_t x = 0; x < kImageSize; ++x) {
      const float s = ((x + y) % 2 == 0) ? sign : -sign;
      img.at(y, x) = clamp01(img.at(y, x) + amplitude * s);
    }
}

inline void warp_region(Image& img, const Region& reg, float amplitude, float period, float phase) {
  const Image src = img;
  const float h = static_cast<float>(reg.y1 - reg.y0), w = static_cast<float>(reg.x1 - reg.x0);
  const float two_pi = 2.0f * std::numbers::pi_v<float>;
  for (std::size_t y = reg.y0; y < reg.y1; ++y)
    for (std::size_t x = reg.x0; x < reg.x1; ++x) {
      const float fy = static_cast<float>(y), fx = static_cast<float>(x);
      // Tapered so the displacement vanishes on the region border.
      const float u = (fx - static_cast<float>(reg.x0) + 0.5f) / w;
      const float v = (fy - static_cast<float>(reg.y0) + 0.5f) / h;
      const float taper = std::sin(std::numbers::pi_v<float> * u) * std::sin(std::numbers::pi_v<float> * v);
      const float dx = amplitude * taper * std::sin(two_pi * fy / period + phase);
      const float dy = amplitude * taper * std::cos(two_pi * fx / period + phase);
      img.at(y, x) = bilinear(src, fy + dy, fx + dx);
    }
}

inline void dct_truncate(Image& img, std::size_t keep) {
  constexpr std::size_t B = 8;
  std::array<std::array<double, B>, B> basis{};  // basis[u][x]
  for (std::size_t u = 0; u < B; ++u)
    for (std::size_t x = 0; x < B; ++x) {
      const double a = u == 0 ? std::sqrt(1.0 / B) : std::sqrt(2.0 / B);
      basis[u][x] = a * std::cos((2.0 * static_cast<double>(x) + 1.0) * static_cast<double>(u) *
                                 std::numbers::pi / (2.0 * B));
    }
  for (std::size_t by = 0; by < kImageSize; by += B)
    for (std::size_t bx = 0; bx < kImageSize; bx += B) {
      std::array<std::array<double, B>, B> coef{};
      for (std::size_t u = 0; u < B; ++u)
        for (std::size_t v = 0; v < B; ++v) {
          if (u + v >= keep) continue;
          double acc = 0;
          for (std::size_t y = 0; y < B; ++y)
            for (std::size_t x = 0; x < B; ++x)
              acc += basis[u][y] * basis[v][x] * img.at(by + y, bx + x);
          coef[u][v] = acc;
        }
      for (std::size_t y = 0; y < B; ++y)
        for (std::size_t x = 0; x < B; ++x) {
          double acc = 0;
          for (std::size_t u = 0; u < B; ++u)
            for (std::size_t v = 0; v < B; ++v) acc += basis[u][y] * basis[v][x] * coef[u][v];
          img.at(by + y, bx + x) = clamp01(static_cast<float>(acc));
        }
    }
}

}  // namespace detail

/// Turns a real sample into a fake one with the given artifact operator.
inline Sample apply_artifact(const Sample& real, std::int32_t type, std::uint64_t seed,
                             const ArtifactTable& t = kArtifactTable) {
  if (real.label != 0 || real.artifact_type) {
    throw std::invalid_argument("apply_artifact: input must be a real sample");
  }
  const ArtifactPlan p = plan_artifact(real, type, seed, t);
  Sample out = real;
  out.label = 1;
  out.artifact_type = type;
  switch (type) {
    case 0: swap_quadrants(out.image, p.quadrants[0], p.quadrants[1]); break;
    case 1: detail::blur_patch(out.image, p.region, t.blur_sigma, p.sign * t.blend_shift); break;
    case 2: detail::checkerboard(out.image, t.checker_amplitude, p.sign); break;
    case 3: detail::warp_region(out.image, p.region, t.warp_amplitude, t.warp_period, p.phase); break;
    case 4: detail::dct_truncate(out.image, t.dct_keep); break;
  }
  return out;
}

enum class Protocol { hybrid, generalized };

inline std::string to_string(Protocol p) { return p == Protocol::hybrid ? "hybrid" : "generalized"; }

struct ProtocolSplit {
  std::vector<Sample> train;
  std::vector<Sample> test;
  Protocol protocol = Protocol::hybrid;
  std::optional<std::int32_t> holdout_type;
};

namespace detail {

inline std::vector<Sample> build_split(std::size_t count, std::uint64_t seed, std::uint64_t split,
                                       const std::vector<std::int32_t>& types,
                                       const ArtifactTable& t) {
  std::vector<Sample> out;
  out.reserve(count);
  const std::size_t reals = count / 2;
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = derive_seed({seed, split, static_cast<std::uint64_t>(i)});
    Sample real = gen_real(s, t);
    if (i < reals) {
      out.push_back(std::move(real));
    } else {
      const auto type = types[(i - reals) % types.size()];
      out.push_back(apply_artifact(real, type, derive_seed({s, 0x66616b65ULL}), t));
    }
  }
  Rng order(derive_seed({seed, split, 0x6f72646572ULL}));
  order.shuffle(std::span<Sample>(out));
  return out;
}

}  // namespace detail

/// Builds a train/test split. Hybrid: every artifact type in both halves.
/// Generalized: `holdout` never appears in train; test fakes are holdout only.
inline ProtocolSplit build_protocol(Protocol protocol, std::size_t n_train, std::size_t n_test,
                                    std::optional<std::int32_t> holdout, std::uint64_t seed,
                                    const ArtifactTable& t = kArtifactTable) {
  if (n_train < 2 || n_train % 2 != 0) {
    throw std::invalid_argument("build_protocol: n_train must be even and >= 2 for class balance");
  }
  if (n_test < 2) throw std::invalid_argument("build_protocol: n_test must be >= 2");
  std::vector<std::int32_t> train_types, test_types;
  if (protocol == Protocol::hybrid) {
    if (holdout) throw std::invalid_argument("build_protocol: hybrid protocol takes no holdout type");
    for (std::int32_t k = 0; k < kNumArtifactTypes; ++k) train_types.push_back(k);
    test_types = train_types;
  } else {
    if (!holdout) throw std::invalid_argument("build_protocol: generalized protocol needs a holdout type");
    if (*holdout < 0 || *holdout >= kNumArtifactTypes) {
      throw std::invalid_argument("build_protocol: holdout type " + std::to_string(*holdout) +
                                  " outside 0-4");
    }
    for (std::int32_t k = 0; k < kNumArtifactTypes; ++k)
      if (k != *holdout) train_types.push_back(k);
    test_types = {*holdout};
  }
  ProtocolSplit split;
  split.protocol = protocol;
  split.holdout_type = holdout;
  split.train = detail::build_split(n_train, seed, 0, train_types, t);
  split.test = detail::build_split(n_test, seed, 1, test_types, t);
  return split;
}

/// Train/test sizes for a single total at a 7:3 ratio (train rounded down to even).
inline std::pair<std::size_t, std::size_t> split_sizes(std::size_t total) {
  std::size_t train = total * 7 / 10;
  if (train % 2 != 0) --train;
  return {train, total - train};
}

inline ProtocolSplit build_protocol(Protocol protocol, std::size_t total,
                                    std::optional<std::int32_t> holdout, std::uint64_t seed,
                                    const ArtifactTable& t = kArtifactTable) {
  const auto [train, test] = split_sizes(total);
  return build_protocol(protocol, train, test, holdout, seed, t);
}

/// Binary PGM (P5), 8-bit.
inline void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << "P5\n" << kImageSize << ' ' << kImageSize << "\n255\n";
  for (float v : img.pixels) {
    f.put(static_cast<char>(static_cast<unsigned char>(std::lround(detail::clamp01(v) * 255.0f))));
  }
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

/// Writes every sample as <prefix>_NNNNN.pgm and appends a manifest row
/// (filename, label, artifact_type, seed) per image.
inline void export_samples(const std::filesystem::path& dir, const std::string& prefix,
                           const std::vector<Sample>& samples, std::ostream& manifest) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%05zu.pgm", prefix.c_str(), i);
    write_pgm(dir / name, samples[i].image);
    manifest << name << ',' << samples[i].label << ','
             << (samples[i].artifact_type ? std::to_string(*samples[i].artifact_type) : "none")
             << ',' << samples[i].seed << '\n';
  }
}

}  // namespace fedforge::data
