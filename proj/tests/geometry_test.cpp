#include "bbw/geometry.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "bbw/error.hpp"
#include "oracles/iou_raster.hpp"

namespace bbw {
namespace {

PoisoningPolicy rescale(double dw, double dh, ClampMode clamp = ClampMode::ClampToImage) {
  PoisoningPolicy p;
  p.delta_w = dw;
  p.delta_h = dh;
  p.clamp = clamp;
  return p;
}

TEST(BoundingBoxTest, RejectsDegenerateAndNonFinite) {
  EXPECT_THROW(BoundingBox(0, 0, 0, 1), InvalidBoxError);
  EXPECT_THROW(BoundingBox(0, 0, 1, -1), InvalidBoxError);
  EXPECT_THROW(BoundingBox(std::nan(""), 0, 1, 1), InvalidBoxError);
  EXPECT_THROW(BoundingBox(0, std::numeric_limits<double>::infinity(), 1, 1), InvalidBoxError);
  EXPECT_NO_THROW(BoundingBox(-5, -5, 1, 1));
}

TEST(BoundingBoxTest, CornersRoundTrip) {
  const auto bb = BoundingBox::from_corners(10, 20, 30, 60);
  EXPECT_EQ(bb, BoundingBox(20, 40, 20, 40));
  EXPECT_DOUBLE_EQ(bb.x1(), 10);
  EXPECT_DOUBLE_EQ(bb.y2(), 60);
  EXPECT_DOUBLE_EQ(bb.area(), 800);
}

TEST(IouTest, KnownValues) {
  const BoundingBox a(1, 1, 2, 2);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, BoundingBox(2, 1, 2, 2)), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(a, BoundingBox(3, 1, 2, 2)), 0.0);  // touching edges
  EXPECT_DOUBLE_EQ(iou(a, BoundingBox(10, 10, 2, 2)), 0.0);
  // nested: 4 / 16
  EXPECT_DOUBLE_EQ(iou(BoundingBox(0, 0, 4, 4), BoundingBox(0, 0, 2, 2)), 0.25);
}

TEST(IouTest, MatchesRasterOracle) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> coord(0, 40);
  std::uniform_int_distribution<int> size(1, 20);
  for (int trial = 0; trial < 400; ++trial) {
    // half-pixel grid keeps the raster count exact at resolution 2
    const double x1 = coord(rng) / 2.0, y1 = coord(rng) / 2.0;
    const double x2 = x1 + size(rng) / 2.0, y2 = y1 + size(rng) / 2.0;
    const double u1 = coord(rng) / 2.0, v1 = coord(rng) / 2.0;
    const double u2 = u1 + size(rng) / 2.0, v2 = v1 + size(rng) / 2.0;
    const double expected =
        oracle::raster_iou({x1, y1, x2, y2}, {u1, v1, u2, v2}, 2);
    const double got = iou(BoundingBox::from_corners(x1, y1, x2, y2),
                           BoundingBox::from_corners(u1, v1, u2, v2));
    ASSERT_NEAR(got, expected, 1e-12) << "trial " << trial;
  }
}

TEST(IouTest, SymmetricAndBounded) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(0, 100), ext(0.5, 50);
  for (int i = 0; i < 1000; ++i) {
    const BoundingBox a(pos(rng), pos(rng), ext(rng), ext(rng));
    const BoundingBox b(pos(rng), pos(rng), ext(rng), ext(rng));
    const double x = iou(a, b);
    EXPECT_EQ(x, iou(b, a));
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
}

TEST(PoisonTest, RescaleKeepsCenter) {
  const auto out = poison_bb(BoundingBox(50, 50, 20, 10), rescale(1.2, 0.9), 100, 100);
  EXPECT_DOUBLE_EQ(out.a(), 50);
  EXPECT_DOUBLE_EQ(out.b(), 50);
  EXPECT_DOUBLE_EQ(out.w(), 24);
  EXPECT_DOUBLE_EQ(out.h(), 9);
}

TEST(PoisonTest, ClampsOverflowingAxis) {
  const auto out = poison_bb(BoundingBox(95, 50, 20, 10), rescale(2.0, 1.0), 100, 100);
  EXPECT_EQ(out, BoundingBox(87.5, 50, 25, 10));
}

TEST(PoisonTest, RejectModeThrows) {
  EXPECT_THROW(poison_bb(BoundingBox(95, 50, 20, 10),
                         rescale(2.0, 1.0, ClampMode::RejectOverflow), 100, 100),
               OverflowRejected);
  EXPECT_NO_THROW(poison_bb(BoundingBox(50, 50, 20, 10),
                            rescale(2.0, 1.0, ClampMode::RejectOverflow), 100, 100));
}

TEST(PoisonTest, IdentityIsExactEvenWhenOverhanging) {
  const BoundingBox overhang(98, 50, 20, 10);
  EXPECT_EQ(poison_bb(overhang, rescale(1.0, 1.0), 100, 100), overhang);
  PoisoningPolicy shift;
  shift.pattern = PoisonPattern::Shift;
  EXPECT_TRUE(shift.is_identity());
  EXPECT_EQ(poison_bb(overhang, shift, 100, 100), overhang);
}

TEST(PoisonTest, ShiftMovesByOwnSize) {
  PoisoningPolicy p;
  p.pattern = PoisonPattern::Shift;
  p.shift_x = 0.25;
  p.shift_y = -0.5;
  const auto out = poison_bb(BoundingBox(50, 50, 20, 10), p, 100, 100);
  EXPECT_EQ(out, BoundingBox(55, 45, 20, 10));
}

TEST(PoisonTest, ShiftOutOfImageIsRejected) {
  PoisoningPolicy p;
  p.pattern = PoisonPattern::Shift;
  p.shift_x = 10.0;
  EXPECT_THROW(poison_bb(BoundingBox(50, 50, 10, 10), p, 100, 100), OverflowRejected);
}

TEST(PoisonTest, InvalidMagnitudes) {
  EXPECT_THROW(poison_bb(BoundingBox(5, 5, 2, 2), rescale(0.0, 1.0), 10, 10), ConfigError);
  EXPECT_THROW(poison_bb(BoundingBox(5, 5, 2, 2), rescale(1.0, -2.0), 10, 10), ConfigError);
}

TEST(PoisonTest, EnlargedBoxContainsOriginalWithoutClamping) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(100, 900), ext(1, 100), delta(1.0, 1.5);
  for (int i = 0; i < 500; ++i) {
    const BoundingBox bb(pos(rng), pos(rng), ext(rng), ext(rng));
    const auto out = poison_bb(bb, rescale(delta(rng), delta(rng)), 1000, 1000);
    EXPECT_TRUE(out.contains(bb, 1e-9));
  }
}

TEST(PoisonTest, ParseNames) {
  EXPECT_EQ(parse_pattern("shift"), PoisonPattern::Shift);
  EXPECT_EQ(parse_clamp("reject"), ClampMode::RejectOverflow);
  EXPECT_THROW(parse_pattern("warp"), ConfigError);
  EXPECT_EQ(to_string(ClampMode::ClampToImage), "clamp");
}

TEST(ImageDetectionsTest, ValidateRejectsOutsideObjects) {
  ImageDetections rec{"img", 100, 100, {{1, BoundingBox(50, 50, 10, 10), 0.9}}};
  EXPECT_NO_THROW(rec.validate());
  rec.objects.push_back({1, BoundingBox(200, 50, 10, 10), std::nullopt});
  EXPECT_THROW(rec.validate(), InvalidBoxError);
  rec.objects.pop_back();
  rec.objects[0].confidence = 1.5;
  EXPECT_THROW(rec.validate(), InvalidBoxError);
}

}  // namespace
}  // namespace bbw
