#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "jv/tensor.hpp"

namespace jv::align {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline constexpr std::size_t kNumLandmarks = 7;

/// Landmark order: left-eye outer, left-eye inner, right-eye inner,
/// right-eye outer, nose tip, left mouth corner, right mouth corner.
using LandmarkSet = std::array<Point, kNumLandmarks>;

/// p -> [[a, -b], [b, a]] p + (tx, ty).
struct SimilarityTransform {
  double a = 1.0;
  double b = 0.0;
  double tx = 0.0;
  double ty = 0.0;

  static SimilarityTransform from_params(double scale, double theta, double tx, double ty);

  Point apply(Point p) const { return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty}; }
  double scale() const;
  double angle() const;
  /// Throws DegenerateError when scale is zero.
  SimilarityTransform inverse() const;
};

struct CanonicalFrame {
  std::size_t width = 100;
  std::size_t height = 100;
  LandmarkSet landmarks = default_landmarks();

  /// Eye centres at (32,40) and (68,40), corners 7 px either side, nose tip
  /// (50,60), mouth corners (36,78) and (64,78).
  static LandmarkSet default_landmarks();
  double interocular_distance() const;

  /// Reads `width`, `height` and `p0.x` .. `p6.y` keys from a key=value file;
  /// missing keys keep their defaults.
  static CanonicalFrame load(const std::filesystem::path& path);
};

/// Least-squares similarity mapping src onto dst (no reflection).
/// A dst equal to src shifted by (dx, dy) yields tx = dx, ty = dy.
SimilarityTransform estimate_similarity(const LandmarkSet& src, const LandmarkSet& dst);

/// Sum of squared landmark residuals |T(src_k) - dst_k|^2.
double residual(const SimilarityTransform& t, const LandmarkSet& src, const LandmarkSet& dst);

/// Sample img[h x w x c] at the continuous pixel position (x, y); neighbours
/// outside the image contribute zero.
double sample_bilinear(const Tensor& img, double x, double y, std::size_t channel);

/// Output pixel (x, y) takes the bilinear sample of img at t^{-1}(x, y).
Tensor warp(const Tensor& img, const SimilarityTransform& t, std::size_t out_h, std::size_t out_w);

inline Tensor warp_to_canonical(const Tensor& img, const SimilarityTransform& t,
                                const CanonicalFrame& frame) {
  return warp(img, t, frame.height, frame.width);
}

/// Square side x side region centred on `center` (pixel-centre coordinates,
/// so the first pixel is round(center - (side - 1) / 2)); pixels outside img
/// are zero.
Tensor crop_region(const Tensor& img, Point center, std::size_t side = 125);

/// Pixel-centre aligned rescale of img to out_h x out_w (pure scale warp).
Tensor resize(const Tensor& img, std::size_t out_h, std::size_t out_w);

/// Estimate from landmarks and warp into the canonical frame.
Tensor align_face(const Tensor& img, const LandmarkSet& landmarks, const CanonicalFrame& frame);

struct LandmarkRecord {
  std::string image;
  LandmarkSet points;
};

/// Rows `image_path,x1,y1,...,x7,y7`. Lines starting with '#' are skipped.
std::vector<LandmarkRecord> read_landmark_file(const std::filesystem::path& path);

}  // namespace jv::align
