#pragma once

#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "purify/tensor.hpp"

namespace purify {

struct PupilCenter {
  double x = 0.0, y = 0.0;
};

/// Intensity-weighted centroid of one mask channel (pixel coordinates,
/// origin at the top-left pixel center). Errors on zero total mass.
PupilCenter pupil_center(const Tensor& mask, int channel = 0);

/// Least-squares conic fit through the boundary pixels of the thresholded
/// channel; falls back to the centroid when the boundary is degenerate
/// (fewer than six points or a non-elliptic fit).
PupilCenter pupil_center_ellipse(const Tensor& mask, int channel = 0);

/// Soft pupil weight map (1x1xHxW) re-estimated from an RGB image: darkness
/// below an adaptive luminance threshold. Intended for locating the pupil in
/// a stylized output where no ground-truth mask exists.
Tensor estimate_pupil_weight(const Tensor& image);

struct PupilShiftRow {
  std::string name;
  PupilCenter before, after;
  double shift = 0.0;  // Euclidean distance in pixels
};

struct PupilShiftReport {
  std::vector<PupilShiftRow> rows;
  double mean_shift = 0.0;
  double std_shift = 0.0;  // population standard deviation
};

PupilShiftReport make_shift_report(std::vector<PupilShiftRow> rows);

/// CSV: name,x_before,y_before,x_after,y_after,shift  plus a summary row.
void write_shift_csv(std::ostream& os, const PupilShiftReport& report);

}  // namespace purify
