#include "mrdd/digits.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "mrdd/data.hpp"
#include "mrdd/rng.hpp"

namespace mrdd::digits {

namespace {

struct Seg {
  double x0, y0, x1, y1;
};

// classic seven-segment layout in unit coordinates
constexpr std::array<Seg, 7> kSegments = {{
    {0.22, 0.16, 0.78, 0.16},  // A top
    {0.78, 0.16, 0.78, 0.50},  // B upper right
    {0.78, 0.50, 0.78, 0.84},  // C lower right
    {0.22, 0.84, 0.78, 0.84},  // D bottom
    {0.22, 0.50, 0.22, 0.84},  // E lower left
    {0.22, 0.16, 0.22, 0.50},  // F upper left
    {0.22, 0.50, 0.78, 0.50},  // G middle
}};

constexpr std::array<std::uint8_t, 10> kDigitSegments = {
    0b0111111,  // 0: ABCDEF
    0b0000110,  // 1: BC
    0b1011011,  // 2: ABDEG
    0b1001111,  // 3: ABCDG
    0b1100110,  // 4: BCFG
    0b1101101,  // 5: ACDFG
    0b1111101,  // 6: ACDEFG
    0b0000111,  // 7: ABC
    0b1111111,  // 8: all
    0b1101111,  // 9: ABCDFG
};

double point_segment_dist(double px, double py, const Seg& s) {
  double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double qx = s.x0 + t * dx, qy = s.y0 + t * dy;
  return std::hypot(px - qx, py - qy);
}

}  // namespace

Tensor render_digits(int n, int n_classes, std::uint64_t seed,
                     const DigitStyle& style, std::vector<int>& labels_out) {
  if (n < 1) throw std::invalid_argument("digits: n must be >= 1");
  if (n_classes < 1 || n_classes > 10) {
    throw std::invalid_argument("digits: n_classes must be in [1,10]");
  }
  const int sz = style.size;
  Tensor out({n, sz, sz, 1});
  labels_out.resize(n);

  const double edge = 0.35 / sz;  // anti-aliasing band in unit coords
  for (int i = 0; i < n; ++i) {
    int cls = i % n_classes;
    labels_out[i] = cls;
    RngStream rng(derive_seed(seed, {0x646967697473ULL, static_cast<std::uint64_t>(i)}));

    double angle = rng.uniform(-style.rotate_deg, style.rotate_deg) * M_PI / 180.0;
    double scale = rng.uniform(style.scale_lo, style.scale_hi);
    double tx = rng.uniform(-style.shift, style.shift);
    double ty = rng.uniform(-style.shift, style.shift);
    double shear = rng.uniform(-style.slant, style.slant);
    double halfw = rng.uniform(style.stroke_lo, style.stroke_hi);
    double intensity = rng.uniform(style.intensity_lo, style.intensity_hi);
    double ca = std::cos(angle), sa = std::sin(angle);

    // glyph-space coordinates of a pixel: inverse of scale*rot*shear + shift
    auto to_glyph = [&](double px, double py, double& gx, double& gy) {
      double x = px - 0.5 - tx, y = py - 0.5 - ty;
      double rx = (ca * x + sa * y) / scale;
      double ry = (-sa * x + ca * y) / scale;
      rx -= shear * ry;
      gx = rx + 0.5;
      gy = ry + 0.5;
    };

    std::uint8_t segbits = kDigitSegments[cls];

    int n_distract = style.distractors_max > 0
        ? static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(style.distractors_max + 1)))
        : 0;
    std::vector<Seg> clutter;
    std::vector<double> clutter_gain;
    for (int d = 0; d < n_distract; ++d) {
      double cx = rng.uniform(0.12, 0.88), cy = rng.uniform(0.12, 0.88);
      double lang = rng.uniform(0.0, 2.0 * M_PI);
      double llen = rng.uniform(0.08, 0.22);
      clutter.push_back({cx - llen * std::cos(lang), cy - llen * std::sin(lang),
                         cx + llen * std::cos(lang), cy + llen * std::sin(lang)});
      clutter_gain.push_back(rng.uniform(style.distractor_intensity_lo,
                                         style.distractor_intensity_hi));
    }

    double* img = out.data() + static_cast<std::size_t>(i) * sz * sz;
    for (int y = 0; y < sz; ++y) {
      for (int x = 0; x < sz; ++x) {
        double px = (x + 0.5) / sz, py = (y + 0.5) / sz;
        double gx, gy;
        to_glyph(px, py, gx, gy);
        double v = 0.0;
        for (int s = 0; s < 7; ++s) {
          if (!(segbits & (1u << s))) continue;
          double dist = point_segment_dist(gx, gy, kSegments[s]);
          double cov = std::clamp((halfw - dist) / edge + 0.5, 0.0, 1.0);
          v = std::max(v, intensity * cov);
        }
        for (std::size_t d = 0; d < clutter.size(); ++d) {
          double dist = point_segment_dist(px, py, clutter[d]);
          double cov = std::clamp((0.03 - dist) / edge + 0.5, 0.0, 1.0);
          v = std::max(v, clutter_gain[d] * cov);
        }
        if (style.noise_sigma > 0.0) v += style.noise_sigma * rng.normal();
        img[static_cast<std::size_t>(y) * sz + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

void write_digit_source(const std::string& out_dir, int n, int n_classes,
                        std::uint64_t seed, const DigitStyle& style) {
  std::filesystem::create_directories(out_dir);
  std::vector<int> labels;
  Tensor images = render_digits(n, n_classes, seed, style, labels);
  data::save_array(out_dir + "/images.bin", images);
  data::save_labels(out_dir + "/labels.bin", labels);
}

}  // namespace mrdd::digits
