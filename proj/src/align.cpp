#include "jv/align.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "jv/config.hpp"
#include "jv/error.hpp"

namespace jv::align {

SimilarityTransform SimilarityTransform::from_params(double scale, double theta, double tx,
                                                    double ty) {
  return {scale * std::cos(theta), scale * std::sin(theta), tx, ty};
}

double SimilarityTransform::scale() const { return std::hypot(a, b); }
double SimilarityTransform::angle() const { return std::atan2(b, a); }

SimilarityTransform SimilarityTransform::inverse() const {
  const double s2 = a * a + b * b;
  if (!(s2 > 0.0)) throw DegenerateError("similarity transform has zero scale");
  // [[a,-b],[b,a]]^-1 = [[a,b],[-b,a]] / s2
  const double ia = a / s2, ib = -b / s2;
  return {ia, ib, -(ia * tx - ib * ty), -(ib * tx + ia * ty)};
}

LandmarkSet CanonicalFrame::default_landmarks() {
  return {{{25, 40}, {39, 40}, {61, 40}, {75, 40}, {50, 60}, {36, 78}, {64, 78}}};
}

double CanonicalFrame::interocular_distance() const {
  const Point left{(landmarks[0].x + landmarks[1].x) / 2, (landmarks[0].y + landmarks[1].y) / 2};
  const Point right{(landmarks[2].x + landmarks[3].x) / 2, (landmarks[2].y + landmarks[3].y) / 2};
  return std::hypot(right.x - left.x, right.y - left.y);
}

CanonicalFrame CanonicalFrame::load(const std::filesystem::path& path) {
  const auto cfg = Config::load(path);
  CanonicalFrame frame;
  const std::string sec = cfg.has_section("frame") ? "frame" : "";
  frame.width = static_cast<std::size_t>(cfg.get_int(sec, "width", 100));
  frame.height = static_cast<std::size_t>(cfg.get_int(sec, "height", 100));
  for (std::size_t k = 0; k < kNumLandmarks; ++k) {
    const auto key = "p" + std::to_string(k);
    frame.landmarks[k].x = cfg.get_double(sec, key + ".x", frame.landmarks[k].x);
    frame.landmarks[k].y = cfg.get_double(sec, key + ".y", frame.landmarks[k].y);
  }
  if (frame.width == 0 || frame.height == 0) throw FormatError("frame size must be positive");
  return frame;
}

SimilarityTransform estimate_similarity(const LandmarkSet& src, const LandmarkSet& dst) {
  const double n = static_cast<double>(kNumLandmarks);
  Point ms, md;
  for (std::size_t k = 0; k < kNumLandmarks; ++k) {
    ms.x += src[k].x;
    ms.y += src[k].y;
    md.x += dst[k].x;
    md.y += dst[k].y;
  }
  ms = {ms.x / n, ms.y / n};
  md = {md.x / n, md.y / n};

  // Normal equations of the centred problem decouple into a and b.
  double ss = 0.0, sa = 0.0, sb = 0.0, spread = 0.0;
  for (std::size_t k = 0; k < kNumLandmarks; ++k) {
    const double x = src[k].x - ms.x, y = src[k].y - ms.y;
    const double u = dst[k].x - md.x, v = dst[k].y - md.y;
    ss += x * x + y * y;
    sa += x * u + y * v;
    sb += x * v - y * u;
    spread = std::max(spread, std::abs(src[k].x) + std::abs(src[k].y));
  }
  if (!(ss > 1e-12 * std::max(1.0, spread * spread)))
    throw DegenerateError("landmarks are coincident; similarity is underdetermined");
  SimilarityTransform t;
  t.a = sa / ss;
  t.b = sb / ss;
  t.tx = md.x - (t.a * ms.x - t.b * ms.y);
  t.ty = md.y - (t.b * ms.x + t.a * ms.y);
  return t;
}

double residual(const SimilarityTransform& t, const LandmarkSet& src, const LandmarkSet& dst) {
  double r = 0.0;
  for (std::size_t k = 0; k < kNumLandmarks; ++k) {
    const Point p = t.apply(src[k]);
    r += (p.x - dst[k].x) * (p.x - dst[k].x) + (p.y - dst[k].y) * (p.y - dst[k].y);
  }
  return r;
}

double sample_bilinear(const Tensor& img, double x, double y, std::size_t channel) {
  const auto h = static_cast<long>(img.dim(0)), w = static_cast<long>(img.dim(1));
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double fx = x - fx0, fy = y - fy0;
  const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
  auto at = [&](long yy, long xx) -> double {
    if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
    return img(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), channel);
  };
  double v = (1.0 - fy) * (1.0 - fx) * at(y0, x0);
  if (fx != 0.0) v += (1.0 - fy) * fx * at(y0, x0 + 1);
  if (fy != 0.0) {
    v += fy * (1.0 - fx) * at(y0 + 1, x0);
    if (fx != 0.0) v += fy * fx * at(y0 + 1, x0 + 1);
  }
  return v;
}

Tensor warp(const Tensor& img, const SimilarityTransform& t, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw DimensionError("warp: image must be h x w x c");
  const auto inv = t.inverse();
  const std::size_t c = img.dim(2);
  Tensor out({out_h, out_w, c});
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const Point p = inv.apply({static_cast<double>(ox), static_cast<double>(oy)});
      for (std::size_t ch = 0; ch < c; ++ch) out(oy, ox, ch) = sample_bilinear(img, p.x, p.y, ch);
    }
  }
  return out;
}

Tensor crop_region(const Tensor& img, Point center, std::size_t side) {
  if (img.rank() != 3) throw DimensionError("crop_region: image must be h x w x c");
  if (side == 0) throw DimensionError("crop_region: side must be positive");
  const auto h = static_cast<long>(img.dim(0)), w = static_cast<long>(img.dim(1));
  const std::size_t c = img.dim(2);
  // Pixel-centre coordinates: the region's middle sits (side - 1) / 2 from
  // its first pixel. Halves round up.
  const double half = (static_cast<double>(side) - 1.0) / 2.0;
  const auto left = static_cast<long>(std::floor(center.x - half + 0.5));
  const auto top = static_cast<long>(std::floor(center.y - half + 0.5));
  Tensor out({side, side, c});
  for (std::size_t i = 0; i < side; ++i) {
    const long y = top + static_cast<long>(i);
    if (y < 0 || y >= h) continue;
    for (std::size_t j = 0; j < side; ++j) {
      const long x = left + static_cast<long>(j);
      if (x < 0 || x >= w) continue;
      for (std::size_t ch = 0; ch < c; ++ch)
        out(i, j, ch) = img(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch);
    }
  }
  return out;
}

Tensor resize(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw DimensionError("resize: image must be h x w x c");
  const double s = static_cast<double>(out_w) / static_cast<double>(img.dim(1));
  if (std::lround(s * static_cast<double>(img.dim(0))) != static_cast<long>(out_h))
    throw DimensionError("resize: aspect ratio must be preserved");
  SimilarityTransform t{s, 0.0, 0.5 * s - 0.5, 0.5 * s - 0.5};
  return warp(img, t, out_h, out_w);
}

Tensor align_face(const Tensor& img, const LandmarkSet& landmarks, const CanonicalFrame& frame) {
  return warp_to_canonical(img, estimate_similarity(landmarks, frame.landmarks), frame);
}

std::vector<LandmarkRecord> read_landmark_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open landmark file " + path.string());
  std::vector<LandmarkRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 1 + 2 * kNumLandmarks)
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected image path and 14 coordinates");
    LandmarkRecord rec;
    rec.image = fields[0];
    try {
      for (std::size_t k = 0; k < kNumLandmarks; ++k) {
        rec.points[k].x = std::stod(fields[1 + 2 * k]);
        rec.points[k].y = std::stod(fields[2 + 2 * k]);
      }
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad coordinate");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace jv::align
