#include "purify/pupil.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <iomanip>
#include <stdexcept>

namespace purify {
namespace {

void check_channel(const Tensor& mask, int channel) {
  const Shape s = mask.shape();
  if (s.n != 1 || channel < 0 || channel >= s.c) {
    throw std::invalid_argument("pupil_center: channel " + std::to_string(channel) +
                                " out of range for mask " + s.str());
  }
}

}  // namespace

PupilCenter pupil_center(const Tensor& mask, int channel) {
  check_channel(mask, channel);
  const Shape s = mask.shape();
  double mass = 0.0, mx = 0.0, my = 0.0;
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      const double w = mask.at(0, channel, y, x);
      mass += w;
      mx += w * x;
      my += w * y;
    }
  }
  if (mass <= 0.0) throw std::runtime_error("pupil_center: mask channel has zero total mass");
  return {mx / mass, my / mass};
}

PupilCenter pupil_center_ellipse(const Tensor& mask, int channel) {
  check_channel(mask, channel);
  const Shape s = mask.shape();
  auto inside = [&](int y, int x) {
    return y >= 0 && y < s.h && x >= 0 && x < s.w && mask.at(0, channel, y, x) > 0.5f;
  };
  // Boundary pixels: inside with at least one 4-neighbour outside.
  std::vector<std::pair<double, double>> pts;
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      if (!inside(y, x)) continue;
      if (!inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) || !inside(y, x + 1)) {
        pts.emplace_back(x, y);
      }
    }
  }
  const PupilCenter fallback = pupil_center(mask, channel);
  if (pts.size() < 6) return fallback;

  // Conic a x^2 + b xy + c y^2 + d x + e y + f = 0 via the smallest singular
  // vector; coordinates are centered on the centroid for conditioning.
  Eigen::MatrixXd A(static_cast<Eigen::Index>(pts.size()), 6);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const double x = pts[i].first - fallback.x;
    const double y = pts[i].second - fallback.y;
    A(i, 0) = x * x;
    A(i, 1) = x * y;
    A(i, 2) = y * y;
    A(i, 3) = x;
    A(i, 4) = y;
    A(i, 5) = 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
  Eigen::VectorXd v = svd.matrixV().col(5);
  const double a = v(0), b = v(1), c = v(2), d = v(3), e = v(4);
  const double det = 4.0 * a * c - b * b;
  if (det <= 1e-12 * (a * a + b * b + c * c)) return fallback;  // not an ellipse
  const double cx = (b * e - 2.0 * c * d) / det;
  const double cy = (b * d - 2.0 * a * e) / det;
  if (!std::isfinite(cx) || !std::isfinite(cy)) return fallback;
  return {fallback.x + cx, fallback.y + cy};
}

Tensor estimate_pupil_weight(const Tensor& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) {
    throw std::invalid_argument("estimate_pupil_weight: expected 1x3xHxW, got " + s.str());
  }
  Tensor lum(Shape{1, 1, s.h, s.w});
  float lo = 255.f, hi = 0.f;
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      const float l =
          (image.at(0, 0, y, x) + image.at(0, 1, y, x) + image.at(0, 2, y, x)) / 3.f;
      lum.at(0, 0, y, x) = l;
      lo = std::min(lo, l);
      hi = std::max(hi, l);
    }
  }
  // Adaptive darkness threshold: pixels in the darkest 30% of the observed
  // luminance range count, weighted by how far below the threshold they sit.
  const float thr = lo + 0.3f * (hi - lo);
  Tensor weight = Tensor::zeros({1, 1, s.h, s.w});
  for (std::int64_t i = 0; i < lum.numel(); ++i) {
    weight[i] = std::max(0.f, thr - lum[i]);
  }
  return weight;
}

PupilShiftReport make_shift_report(std::vector<PupilShiftRow> rows) {
  if (rows.empty()) throw std::invalid_argument("make_shift_report: no rows");
  PupilShiftReport report;
  report.rows = std::move(rows);
  double sum = 0.0;
  for (auto& row : report.rows) {
    const double dx = row.after.x - row.before.x;
    const double dy = row.after.y - row.before.y;
    row.shift = std::sqrt(dx * dx + dy * dy);
    sum += row.shift;
  }
  report.mean_shift = sum / static_cast<double>(report.rows.size());
  double var = 0.0;
  for (const auto& row : report.rows) {
    const double d = row.shift - report.mean_shift;
    var += d * d;
  }
  report.std_shift = std::sqrt(var / static_cast<double>(report.rows.size()));
  return report;
}

void write_shift_csv(std::ostream& os, const PupilShiftReport& report) {
  os << "name,x_before,y_before,x_after,y_after,shift\n";
  os << std::setprecision(10);
  for (const auto& row : report.rows) {
    os << row.name << ',' << row.before.x << ',' << row.before.y << ',' << row.after.x << ','
       << row.after.y << ',' << row.shift << '\n';
  }
  os << "mean,,,,," << report.mean_shift << '\n';
  os << "std,,,,," << report.std_shift << '\n';
}

}  // namespace purify
