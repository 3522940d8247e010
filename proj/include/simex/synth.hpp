#pragma once

// Synthetic dataset generators: ten procedural anti-aliased glyph classes
// plus distortion transforms (rotation, Gaussian noise, textured
// backgrounds). Everything is deterministic under the given seed, so graded
// distortions give ground-truth similarity orderings for free.

#include "simex/dataset.hpp"
#include "simex/rng.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef M_PI
#define M_PI 3.14159265358979323846
#endif

namespace simex {

namespace detail {

// Distance from point p to segment [a,b].
inline double seg_dist(double px, double py, double ax, double ay, double bx,
                       double by) {
  const double vx = bx - ax, vy = by - ay;
  const double wx = px - ax, wy = py - ay;
  const double vv = vx * vx + vy * vy;
  double t = vv > 0 ? (wx * vx + wy * vy) / vv : 0.0;
  t = std::min(1.0, std::max(0.0, t));
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Stroke rendering: intensity falls off linearly from 1 inside the stroke
// to 0 one pixel outside, which anti-aliases the edge.
inline double stroke(double dist, double half_width) {
  return std::min(1.0, std::max(0.0, half_width + 1.0 - dist));
}

}  // namespace detail

// Renders one 28x28 (or h x w) glyph of the given class with small jitter.
// Classes: 0 hbar, 1 vbar, 2 diag, 3 antidiag, 4 cross, 5 xcross,
// 6 circle, 7 square outline, 8 triangle outline, 9 double hbar.
inline void render_glyph(int cls, int h, int w, double jx, double jy,
                         double thickness, float* out) {
  const double cx = (w - 1) / 2.0 + jx, cy = (h - 1) / 2.0 + jy;
  const double r = std::min(h, w) * 0.30;

  std::vector<std::array<double, 4>> segs;  // x0,y0,x1,y1
  bool use_circle = false;
  switch (cls) {
    case 0: segs.push_back({cx - r, cy, cx + r, cy}); break;
    case 1: segs.push_back({cx, cy - r, cx, cy + r}); break;
    case 2: segs.push_back({cx - r, cy - r, cx + r, cy + r}); break;
    case 3: segs.push_back({cx - r, cy + r, cx + r, cy - r}); break;
    case 4:
      segs.push_back({cx - r, cy, cx + r, cy});
      segs.push_back({cx, cy - r, cx, cy + r});
      break;
    case 5:
      segs.push_back({cx - r, cy - r, cx + r, cy + r});
      segs.push_back({cx - r, cy + r, cx + r, cy - r});
      break;
    case 6: use_circle = true; break;
    case 7:
      segs.push_back({cx - r, cy - r, cx + r, cy - r});
      segs.push_back({cx + r, cy - r, cx + r, cy + r});
      segs.push_back({cx + r, cy + r, cx - r, cy + r});
      segs.push_back({cx - r, cy + r, cx - r, cy - r});
      break;
    case 8:
      segs.push_back({cx, cy - r, cx + r, cy + r});
      segs.push_back({cx + r, cy + r, cx - r, cy + r});
      segs.push_back({cx - r, cy + r, cx, cy - r});
      break;
    case 9:
      segs.push_back({cx - r, cy - r * 0.5, cx + r, cy - r * 0.5});
      segs.push_back({cx - r, cy + r * 0.5, cx + r, cy + r * 0.5});
      break;
    default:
      throw std::invalid_argument("render_glyph: class out of [0,10)");
  }

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double dist = 1e9;
      if (use_circle) {
        const double d = std::hypot(x - cx, y - cy);
        dist = std::abs(d - r);
      } else {
        for (const auto& s : segs)
          dist = std::min(dist, detail::seg_dist(x, y, s[0], s[1], s[2], s[3]));
      }
      out[long(y) * w + x] = float(detail::stroke(dist, thickness));
    }
}

struct GlyphParams {
  int count_per_class = 20;
  int num_classes = 10;
  int height = 28, width = 28;
  double jitter = 1.5;           // max |translation| in pixels
  double thickness = 1.0;        // nominal stroke half-width
  double thickness_jitter = 0.3;
};

inline Dataset synth_glyphs(const GlyphParams& p, std::uint64_t seed) {
  if (p.num_classes < 1 || p.num_classes > 10)
    throw std::invalid_argument("synth_glyphs: num_classes in [1,10]");
  if (p.count_per_class < 1)
    throw std::invalid_argument("synth_glyphs: empty class");
  RngStream rng(seed);
  Dataset d;
  d.id = "glyphs";
  d.provenance = "synth:glyphs(seed=" + std::to_string(seed) + ")";
  d.n = p.num_classes * p.count_per_class;
  d.height = p.height;
  d.width = p.width;
  d.pixels.resize(long(d.n) * d.sample_size());
  d.labels.reserve(static_cast<std::size_t>(d.n));
  int i = 0;
  for (int cls = 0; cls < p.num_classes; ++cls)
    for (int s = 0; s < p.count_per_class; ++s, ++i) {
      const double jx = rng.uniform(-p.jitter, p.jitter);
      const double jy = rng.uniform(-p.jitter, p.jitter);
      const double th =
          p.thickness + rng.uniform(-p.thickness_jitter, p.thickness_jitter);
      render_glyph(cls, p.height, p.width, jx, jy, th, d.sample_ptr(i));
      d.labels.push_back(cls);
    }
  d.validate();
  return d;
}

// Per-sample rotation by an angle drawn uniformly from [lo, hi] degrees,
// bilinear resampling about the image center.
inline Dataset synth_rotated(const Dataset& base, double lo_deg, double hi_deg,
                             std::uint64_t seed) {
  if (base.n == 0) throw std::invalid_argument("synth_rotated: empty base");
  RngStream rng(seed);
  Dataset d = base;
  d.id = base.id + "/rotated";
  d.provenance = base.provenance + "+rot[" + std::to_string(lo_deg) + "," +
                 std::to_string(hi_deg) + "](seed=" + std::to_string(seed) + ")";
  const int h = d.height, w = d.width;
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  for (int i = 0; i < d.n; ++i) {
    const double ang = rng.uniform(lo_deg, hi_deg) * M_PI / 180.0;
    const double ca = std::cos(ang), sa = std::sin(ang);
    const float* src = base.sample_ptr(i);
    float* dst = d.sample_ptr(i);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        // inverse-rotate the target pixel into the source frame
        const double dx = x - cx, dy = y - cy;
        const double sx = cx + ca * dx + sa * dy;
        const double sy = cy - sa * dx + ca * dy;
        const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        double v = 0;
        for (int oy = 0; oy <= 1; ++oy)
          for (int ox = 0; ox <= 1; ++ox) {
            const int xs = x0 + ox, ys = y0 + oy;
            if (xs < 0 || xs >= w || ys < 0 || ys >= h) continue;
            const double wgt = (ox ? fx : 1 - fx) * (oy ? fy : 1 - fy);
            v += wgt * src[long(ys) * w + xs];
          }
        dst[long(y) * w + x] = float(std::min(1.0, std::max(0.0, v)));
      }
  }
  return d;
}

// Additive clipped Gaussian noise; sigma = 0 returns the base unchanged.
inline Dataset synth_noisy(const Dataset& base, double sigma, std::uint64_t seed) {
  if (sigma < 0) throw std::invalid_argument("synth_noisy: sigma must be >= 0");
  if (base.n == 0) throw std::invalid_argument("synth_noisy: empty base");
  Dataset d = base;
  d.id = base.id + "/noisy";
  d.provenance = base.provenance + "+noise(sigma=" + std::to_string(sigma) +
                 ",seed=" + std::to_string(seed) + ")";
  if (sigma == 0) return d;
  RngStream rng(seed);
  for (long i = 0; i < d.pixels.size(); ++i) {
    const double v = double(d.pixels[i]) + sigma * rng.normal();
    d.pixels[i] = float(std::min(1.0, std::max(0.0, v)));
  }
  return d;
}

// Low-frequency sinusoidal texture composited behind the glyph:
// out = clamp(base + (1 - base) * texture).
inline Dataset synth_textured(const Dataset& base, std::uint64_t texture_seed) {
  if (base.n == 0) throw std::invalid_argument("synth_textured: empty base");
  RngStream rng(texture_seed);
  Dataset d = base;
  d.id = base.id + "/textured";
  d.provenance = base.provenance + "+texture(seed=" + std::to_string(texture_seed) + ")";
  const int h = d.height, w = d.width;
  for (int i = 0; i < d.n; ++i) {
    const double fx = rng.uniform(0.2, 0.6), fy = rng.uniform(0.2, 0.6);
    const double px = rng.uniform(0, 6.283), py = rng.uniform(0, 6.283);
    const double amp = rng.uniform(0.15, 0.35);
    float* dst = d.sample_ptr(i);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double tex =
            amp * (0.5 + 0.25 * std::sin(fx * x + px) + 0.25 * std::cos(fy * y + py));
        const double b = dst[long(y) * w + x];
        dst[long(y) * w + x] = float(std::min(1.0, b + (1.0 - b) * tex));
      }
  }
  return d;
}

}  // namespace simex
