#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bbw {

// Axis-aligned box in center-size form: (a, b) is the center, (w, h) the
// extent, all in continuous pixel units. Construction rejects w <= 0,
// h <= 0 and non-finite coordinates, so every live value is valid.
class BoundingBox {
 public:
  BoundingBox(double a, double b, double w, double h);

  static BoundingBox from_corners(double x1, double y1, double x2, double y2);

  double a() const noexcept { return a_; }
  double b() const noexcept { return b_; }
  double w() const noexcept { return w_; }
  double h() const noexcept { return h_; }

  double x1() const noexcept { return a_ - w_ / 2.0; }
  double x2() const noexcept { return a_ + w_ / 2.0; }
  double y1() const noexcept { return b_ - h_ / 2.0; }
  double y2() const noexcept { return b_ + h_ / 2.0; }
  double area() const noexcept { return w_ * h_; }

  // Geometric containment with an absolute slack.
  bool contains(const BoundingBox& other, double slack = 0.0) const noexcept;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

 private:
  double a_;
  double b_;
  double w_;
  double h_;
};

struct DetectedObject {
  std::uint32_t category = 0;
  BoundingBox bbox{0.5, 0.5, 1.0, 1.0};
  std::optional<double> confidence;

  friend bool operator==(const DetectedObject&, const DetectedObject&) = default;
};

struct ImageDetections {
  std::string image_id;
  double width = 0.0;
  double height = 0.0;
  std::vector<DetectedObject> objects;

  // Throws InvalidBoxError when the image size is not positive or an object
  // has no positive-area overlap with [0,W]x[0,H], and when a confidence
  // falls outside [0,1].
  void validate() const;

  friend bool operator==(const ImageDetections&, const ImageDetections&) = default;
};

using DetectionSet = std::vector<ImageDetections>;

enum class PoisonPattern { Rescale, Shift };
enum class ClampMode { ClampToImage, RejectOverflow };

struct PoisoningPolicy {
  double delta_w = 1.0;
  double delta_h = 1.0;
  PoisonPattern pattern = PoisonPattern::Rescale;
  // Center offsets as fractions of the box's own width / height (Shift only).
  double shift_x = 0.0;
  double shift_y = 0.0;
  ClampMode clamp = ClampMode::ClampToImage;

  void validate() const;
  bool is_identity() const noexcept;
};

double iou(const BoundingBox& lhs, const BoundingBox& rhs) noexcept;

// Applies the poisoning transform to one box. Only the axes the transform
// actually modifies are clamped to (or checked against) the image extent, so
// an identity policy returns the input unchanged even for boxes that already
// overhang the image.
BoundingBox poison_bb(const BoundingBox& bb, const PoisoningPolicy& policy,
                      double image_w, double image_h);

std::string to_string(PoisonPattern pattern);
std::string to_string(ClampMode mode);
PoisonPattern parse_pattern(const std::string& text);
ClampMode parse_clamp(const std::string& text);

}  // namespace bbw
