#include <gtest/gtest.h>

#include <numbers>

#include "tmask/geometry.hpp"
#include "tmask/report.hpp"
#include "support.hpp"

using namespace tmask;
using namespace tmask::testing;

namespace {

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

CameraPose about_z(double degrees, Eigen::Vector3d t = Eigen::Vector3d::Zero()) {
  const double h = degrees * std::numbers::pi / 360.0;
  return CameraPose::from_quaternion(std::cos(h), 0, 0, std::sin(h), t);
}

std::map<std::string, std::optional<double>> fixture_distances() {
  return {{"Inner Mirror", 0.0},
          {"Ceiling", 3.275},
          {"A-Column Co-driver", 1.864},
          {"Steering Wheel", 1.257},
          {"A-Column Driver", 1.817}};
}

}  // namespace

TEST(Geodesic, IdentityAndQuarterTurn) {
  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  EXPECT_EQ(geodesic_distance(I, I), 0.0);
  const Eigen::Matrix3d rz = Eigen::AngleAxisd(std::numbers::pi / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  EXPECT_NEAR(geodesic_distance(I, rz), std::numbers::pi / 2, 1e-12);
  EXPECT_NEAR(geodesic_distance(CameraPose{}, about_z(90)), std::numbers::pi / 2, 1e-12);
}

TEST(Geodesic, SymmetricAndTriangleInequality) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_rotation(rng), b = random_rotation(rng), c = random_rotation(rng);
    const double ab = geodesic_distance(a, b), bc = geodesic_distance(b, c), ac = geodesic_distance(a, c);
    ASSERT_NEAR(ab, geodesic_distance(b, a), 1e-9);
    ASSERT_LE(ac, ab + bc + 1e-9);
    ASSERT_GE(ab, 0.0);
    ASSERT_LE(ab, std::numbers::pi + 1e-12);
  }
}

TEST(Geodesic, MatrixAndQuaternionFormsAgree) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = CameraPose::from_matrix(random_rotation(rng));
    const auto b = CameraPose::from_matrix(random_rotation(rng));
    EXPECT_NEAR(geodesic_distance(a, b), geodesic_distance(a.rotation_matrix(), b.rotation_matrix()), 1e-6);
  }
}

TEST(Se3, ThreeFourFive) {
  const CameraPose a;
  const CameraPose b = CameraPose::from_quaternion(1, 0, 0, 0, Eigen::Vector3d(3, 4, 0));
  EXPECT_DOUBLE_EQ(se3_distance(a, b), 5.0);
  // rotation contributes its angle in radians
  const CameraPose c = about_z(180, Eigen::Vector3d(0, 0, 0));
  EXPECT_NEAR(se3_distance(a, c), std::numbers::pi, 1e-12);
}

TEST(Averaging, SymmetricPairAveragesToIdentity) {
  const CameraPose m = average_poses({about_z(10, {1, 0, 0}), about_z(-10, {-1, 2, 0})});
  EXPECT_NEAR(geodesic_distance(CameraPose{}, m), 0.0, 1e-9);
  EXPECT_NEAR((m.translation() - Eigen::Vector3d(0, 1, 0)).norm(), 0.0, 1e-12);
}

TEST(Averaging, QuaternionSignDoesNotMatter) {
  const double s = std::sqrt(0.5);
  const CameraPose p = CameraPose::from_quaternion(s, 0, s, 0);
  const CameraPose n = CameraPose::from_quaternion(-s, 0, -s, 0);
  EXPECT_NEAR(geodesic_distance(p, n), 0.0, 1e-12);
  EXPECT_NEAR(geodesic_distance(average_poses({p, n, p}), p), 0.0, 1e-9);
}

TEST(Poses, InvalidInputsAreGeometryErrors) {
  EXPECT_EQ(code_of([] { CameraPose::from_quaternion(1, 1, 0, 0); }), ErrorCode::kGeometry);
  Eigen::Matrix3d skewed = Eigen::Matrix3d::Identity();
  skewed(0, 1) = 0.2;
  EXPECT_EQ(code_of([&] { CameraPose::from_matrix(skewed); }), ErrorCode::kGeometry);
  EXPECT_EQ(code_of([] { CameraPose::from_matrix(-Eigen::Matrix3d::Identity()); }), ErrorCode::kGeometry);
  EXPECT_EQ(code_of([] { average_poses({}); }), ErrorCode::kGeometry);
  // slightly off-unit input is renormalized
  EXPECT_NO_THROW(CameraPose::from_quaternion(1.0 + 5e-7, 0, 0, 0));
}

TEST(Poses, JsonFileLoads) {
  const auto dir = scratch_dir("poses");
  std::ofstream(dir / "poses.json") << R"({"views": {
    "front": [{"quaternion": [1, 0, 0, 0], "translation": [0, 0, 0]}],
    "side":  [{"rotation": [[0, -1, 0], [1, 0, 0], [0, 0, 1]], "translation": [3, 4, 0]}]}})";
  const ViewPoseSet poses = load_view_poses(dir / "poses.json");
  ASSERT_EQ(poses.size(), 2u);
  EXPECT_NEAR(se3_distance(poses.at("front")[0], poses.at("side")[0]),
              std::sqrt(25.0 + std::numbers::pi * std::numbers::pi / 4), 1e-12);
}

TEST(DifficultyTable, ReproducesFixtureOrdering) {
  const std::map<std::string, double> top1{{"Inner Mirror", 78.96},       {"Steering Wheel", 32.17},
                                           {"A-Column Driver", 27.45},    {"A-Column Co-driver", 25.98},
                                           {"Ceiling", 19.47}};
  const auto rows = difficulty_table(fixture_distances(), "Inner Mirror", top1);
  const std::vector<std::string> order{"Inner Mirror", "Steering Wheel", "A-Column Driver", "A-Column Co-driver",
                                       "Ceiling"};
  ASSERT_EQ(rows.size(), order.size());
  for (std::size_t k = 0; k < order.size(); ++k) EXPECT_EQ(rows[k].view, order[k]);
  EXPECT_TRUE(rows[0].trained);
  EXPECT_FALSE(rows[0].distance.has_value());
  EXPECT_EQ(*rows[0].drop, 0.0);
  EXPECT_NEAR(*rows[1].drop, 46.79, 1e-9);
  EXPECT_NEAR(*rows[4].drop, 59.49, 1e-9);

  const std::string csv = difficulty_table_csv(rows);
  EXPECT_NE(csv.find("Inner Mirror,—,78.96,0.00"), std::string::npos);
  EXPECT_NE(csv.find("Steering Wheel,1.257,32.17,46.79"), std::string::npos);
}

TEST(DifficultyTable, EquidistantViewsSortByName) {
  const std::map<std::string, std::optional<double>> d{{"base", 0.0}, {"zeta", 1.0}, {"alpha", 1.0}, {"mid", 0.5}};
  const auto rows = difficulty_table(d, "base");
  EXPECT_EQ(rows[1].view, "mid");
  EXPECT_EQ(rows[2].view, "alpha");
  EXPECT_EQ(rows[3].view, "zeta");
}

TEST(DifficultyTable, MissingPoseIsFlaggedNotFatal) {
  ViewPoseSet poses;
  poses["front"] = {CameraPose{}};
  poses["side"] = {about_z(30, {0.5, 0, 0}), about_z(50, {0.5, 0, 0})};
  const auto rows = view_difficulty_table(poses, "front", {"front", "side", "rear"});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].view, "side");
  EXPECT_NEAR(*rows[1].distance, std::sqrt(0.25 + std::pow(40.0 * std::numbers::pi / 180.0, 2)), 1e-9);
  EXPECT_EQ(rows[2].view, "rear");
  EXPECT_TRUE(rows[2].missing_pose);
  EXPECT_NE(difficulty_table_csv(rows).find("rear,n/a"), std::string::npos);
  EXPECT_EQ(code_of([&] { view_difficulty_table(poses, "top", {"front"}); }), ErrorCode::kGeometry);
}
