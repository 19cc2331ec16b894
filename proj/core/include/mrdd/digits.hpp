#ifndef MRDD_DIGITS_HPP
#define MRDD_DIGITS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mrdd/tensor.hpp"

namespace mrdd::digits {

/// Rendering variation for the procedural digit source. Defaults give a
/// clusterable but non-trivial dataset: pose jitter, stroke variation and
/// clutter keep a 10-d code from solving it outright.
struct DigitStyle {
  int size = 32;
  double rotate_deg = 12.0;       // rotation drawn from +-rotate_deg
  double scale_lo = 0.82, scale_hi = 1.12;
  double shift = 0.09;            // translation in unit coords, +-shift
  double stroke_lo = 0.045, stroke_hi = 0.085;  // half-width, unit coords
  double intensity_lo = 0.65, intensity_hi = 1.0;
  double slant = 0.25;            // horizontal shear drawn from +-slant
  int distractors_max = 2;        // short clutter strokes per image
  double distractor_intensity_lo = 0.15, distractor_intensity_hi = 0.45;
  double noise_sigma = 0.02;      // per-pixel Gaussian noise, clipped
};

/// Render n grayscale seven-segment style digit images (n, size, size, 1)
/// with balanced classes 0..n_classes-1. Deterministic given the seed.
Tensor render_digits(int n, int n_classes, std::uint64_t seed,
                     const DigitStyle& style, std::vector<int>& labels_out);

/// Write a single-view source directory (images.bin + labels.bin) consumable
/// by the dataset synthesis recipes.
void write_digit_source(const std::string& out_dir, int n, int n_classes,
                        std::uint64_t seed, const DigitStyle& style = {});

}  // namespace mrdd::digits

#endif
