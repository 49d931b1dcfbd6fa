#pragma once

// Differentiable, batched versions of the geometry layer. A batch of 3x3
// rotations is stored column by column: cols[k] is B x 3 and row b holds
// column k of the b-th matrix.

#include <string>

#include "nemo/ad/ops.hpp"
#include "nemo/geom.hpp"

namespace nemo::ad {

struct Rotation {
  Var cols[3];
};

/// B x 6 raw 6D vectors -> batch of rotation matrices (Gram-Schmidt).
inline Rotation rot6d_to_rotation(const Var& six) {
  if (six.cols() != 6) throw ShapeMismatch("rot6d_to_rotation expects 6 columns");
  const Var a1 = slice_cols(six, 0, 3);
  const Var a2 = slice_cols(six, 3, 3);
  const Var b1 = normalize_rows(a1, kRot6dEps);
  const Var b2 = normalize_rows(a2 - dot_rows(b1, a2) * b1, kRot6dEps);
  const Var b3 = cross_rows(b1, b2);
  return {{b1, b2, b3}};
}

/// R v for row vectors v (B x 3). Either side may have batch size 1.
inline Var rotate(const Rotation& r, const Var& v) {
  return r.cols[0] * slice_cols(v, 0, 1) + r.cols[1] * slice_cols(v, 1, 1) + r.cols[2] * slice_cols(v, 2, 1);
}

/// R v for a constant vector v.
inline Var rotate(const Rotation& r, const Vec3& v) {
  return r.cols[0] * v.x() + r.cols[1] * v.y() + r.cols[2] * v.z();
}

/// a * b.
inline Rotation compose(const Rotation& a, const Rotation& b) {
  return {{rotate(a, b.cols[0]), rotate(a, b.cols[1]), rotate(a, b.cols[2])}};
}

/// Flattens into B x 9 with row-major entries (r00 r01 r02 r10 ...).
inline Var to_row_major(const Rotation& r) {
  std::vector<Var> parts;
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) parts.push_back(slice_cols(r.cols[col], row, 1));
  }
  return concat_cols(parts);
}

/// Camera-frame points (M x 3) to pixels (M x 2). Throws BehindCamera with
/// the first offending row index.
inline Var project(const Var& cam_points, const CameraIntrinsics& k) {
  const Tensor& p = cam_points.value();
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    if (!(p(i, 2) > kDepthEps)) {
      throw BehindCamera("point " + std::to_string(i) + " has depth " + std::to_string(p(i, 2)));
    }
  }
  const Var z = slice_cols(cam_points, 2, 1);
  const Var u = (slice_cols(cam_points, 0, 1) / z) * k.fx + k.cx;
  const Var v = (slice_cols(cam_points, 1, 1) / z) * k.fy + k.cy;
  return concat_cols({u, v});
}

/// Row-wise Geman-McClure of M x 2 residuals -> M x 1.
inline Var geman_mcclure(const Var& residual, double sigma) {
  const double s2 = sigma * sigma;
  const Var e2 = row_sums(square(residual));
  return (e2 * s2) / (e2 + s2);
}

}  // namespace nemo::ad
