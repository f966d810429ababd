#include "bbw/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <tuple>

#include "bbw/error.hpp"

namespace bbw {

namespace {

std::string describe(double a, double b, double w, double h) {
  std::ostringstream out;
  out << "(" << a << ", " << b << ", " << w << ", " << h << ")";
  return out.str();
}

// Clamps the interval [lo, hi] to [0, limit]; throws when nothing remains.
std::pair<double, double> clamp_interval(double lo, double hi, double limit,
                                         const BoundingBox& source) {
  const double new_lo = std::max(lo, 0.0);
  const double new_hi = std::min(hi, limit);
  if (!(new_hi > new_lo)) {
    throw OverflowRejected("poisoned box " +
                           describe(source.a(), source.b(), source.w(), source.h()) +
                           " leaves the image entirely");
  }
  return {new_lo, new_hi};
}

}  // namespace

BoundingBox::BoundingBox(double a, double b, double w, double h)
    : a_(a), b_(b), w_(w), h_(h) {
  if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(w) ||
      !std::isfinite(h) || w <= 0.0 || h <= 0.0) {
    throw InvalidBoxError("invalid bounding box " + describe(a, b, w, h));
  }
}

BoundingBox BoundingBox::from_corners(double x1, double y1, double x2, double y2) {
  return BoundingBox((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1);
}

bool BoundingBox::contains(const BoundingBox& other, double slack) const noexcept {
  return x1() <= other.x1() + slack && other.x2() <= x2() + slack &&
         y1() <= other.y1() + slack && other.y2() <= y2() + slack;
}

void ImageDetections::validate() const {
  if (!(width > 0.0) || !(height > 0.0) || !std::isfinite(width) ||
      !std::isfinite(height)) {
    throw InvalidBoxError("image '" + image_id + "' has non-positive size");
  }
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& bb = objects[i].bbox;
    const double ix = std::min(bb.x2(), width) - std::max(bb.x1(), 0.0);
    const double iy = std::min(bb.y2(), height) - std::max(bb.y1(), 0.0);
    if (!(ix > 0.0 && iy > 0.0)) {
      throw InvalidBoxError("object " + std::to_string(i) + " of image '" + image_id +
                            "' does not overlap the image");
    }
    if (objects[i].confidence &&
        !(*objects[i].confidence >= 0.0 && *objects[i].confidence <= 1.0)) {
      throw InvalidBoxError("object " + std::to_string(i) + " of image '" + image_id +
                            "' has confidence outside [0,1]");
    }
  }
}

void PoisoningPolicy::validate() const {
  if (!(delta_w > 0.0) || !(delta_h > 0.0) || !std::isfinite(delta_w) ||
      !std::isfinite(delta_h)) {
    throw ConfigError("poisoning magnitudes must be positive and finite");
  }
  if (!std::isfinite(shift_x) || !std::isfinite(shift_y)) {
    throw ConfigError("shift fractions must be finite");
  }
}

bool PoisoningPolicy::is_identity() const noexcept {
  if (pattern == PoisonPattern::Rescale) return delta_w == 1.0 && delta_h == 1.0;
  return shift_x == 0.0 && shift_y == 0.0;
}

double iou(const BoundingBox& lhs, const BoundingBox& rhs) noexcept {
  const double ix = std::min(lhs.x2(), rhs.x2()) - std::max(lhs.x1(), rhs.x1());
  const double iy = std::min(lhs.y2(), rhs.y2()) - std::max(lhs.y1(), rhs.y1());
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = lhs.area() + rhs.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

BoundingBox poison_bb(const BoundingBox& bb, const PoisoningPolicy& policy,
                      double image_w, double image_h) {
  policy.validate();
  double a = bb.a();
  double b = bb.b();
  double w = bb.w();
  double h = bb.h();
  bool touch_x = false;
  bool touch_y = false;
  if (policy.pattern == PoisonPattern::Rescale) {
    touch_x = policy.delta_w != 1.0;
    touch_y = policy.delta_h != 1.0;
    w *= policy.delta_w;
    h *= policy.delta_h;
  } else {
    touch_x = policy.shift_x != 0.0;
    touch_y = policy.shift_y != 0.0;
    a += policy.shift_x * bb.w();
    b += policy.shift_y * bb.h();
  }
  if (!touch_x && !touch_y) return bb;

  const BoundingBox poisoned(a, b, w, h);
  const bool over_x = touch_x && (poisoned.x1() < 0.0 || poisoned.x2() > image_w);
  const bool over_y = touch_y && (poisoned.y1() < 0.0 || poisoned.y2() > image_h);
  if (!over_x && !over_y) return poisoned;

  if (policy.clamp == ClampMode::RejectOverflow) {
    throw OverflowRejected("poisoned box " + describe(a, b, w, h) + " from " +
                           describe(bb.a(), bb.b(), bb.w(), bb.h()) +
                           " exceeds the image extent");
  }
  double x1 = poisoned.x1();
  double x2 = poisoned.x2();
  double y1 = poisoned.y1();
  double y2 = poisoned.y2();
  if (over_x) std::tie(x1, x2) = clamp_interval(x1, x2, image_w, bb);
  if (over_y) std::tie(y1, y2) = clamp_interval(y1, y2, image_h, bb);
  return BoundingBox(over_x ? (x1 + x2) / 2.0 : poisoned.a(),
                     over_y ? (y1 + y2) / 2.0 : poisoned.b(),
                     over_x ? x2 - x1 : poisoned.w(),
                     over_y ? y2 - y1 : poisoned.h());
}

std::string to_string(PoisonPattern pattern) {
  return pattern == PoisonPattern::Rescale ? "rescale" : "shift";
}

std::string to_string(ClampMode mode) {
  return mode == ClampMode::ClampToImage ? "clamp" : "reject";
}

PoisonPattern parse_pattern(const std::string& text) {
  if (text == "rescale") return PoisonPattern::Rescale;
  if (text == "shift") return PoisonPattern::Shift;
  throw ConfigError("unknown poisoning pattern '" + text + "' (expected rescale|shift)");
}

ClampMode parse_clamp(const std::string& text) {
  if (text == "clamp") return ClampMode::ClampToImage;
  if (text == "reject") return ClampMode::RejectOverflow;
  throw ConfigError("unknown clamp mode '" + text + "' (expected clamp|reject)");
}

}  // namespace bbw
