#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tmask/error.hpp"

namespace tmask {

/// Rigid camera pose: unit-quaternion rotation plus translation.
class CameraPose {
 public:
  CameraPose() = default;

  /// Quaternion in (w, x, y, z) order. Inputs within 1e-6 of unit norm are
  /// renormalized; anything further off is rejected.
  static CameraPose from_quaternion(double w, double x, double y, double z, Eigen::Vector3d t = Eigen::Vector3d::Zero()) {
    const double norm = std::sqrt(w * w + x * x + y * y + z * z);
    require(std::isfinite(norm) && std::abs(norm - 1.0) <= 1e-6, ErrorCode::kGeometry,
            "quaternion is not unit length (norm " + std::to_string(norm) + ")");
    CameraPose p;
    p.rotation_ = Eigen::Quaterniond(w / norm, x / norm, y / norm, z / norm);
    p.translation_ = t;
    return p;
  }

  static CameraPose from_matrix(const Eigen::Matrix3d& r, Eigen::Vector3d t = Eigen::Vector3d::Zero()) {
    validate_rotation(r);
    CameraPose p;
    p.rotation_ = Eigen::Quaterniond(r).normalized();
    p.translation_ = t;
    return p;
  }

  static void validate_rotation(const Eigen::Matrix3d& r) {
    require(r.allFinite(), ErrorCode::kGeometry, "rotation has non-finite entries");
    const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    require(ortho <= 1e-6, ErrorCode::kGeometry, "matrix is not orthonormal (max |RᵀR − I| = " + std::to_string(ortho) + ")");
    require(std::abs(r.determinant() - 1.0) <= 1e-6, ErrorCode::kGeometry, "rotation determinant is not +1");
  }

  const Eigen::Quaterniond& rotation() const noexcept { return rotation_; }
  Eigen::Matrix3d rotation_matrix() const { return rotation_.toRotationMatrix(); }
  const Eigen::Vector3d& translation() const noexcept { return translation_; }

 private:
  Eigen::Quaterniond rotation_ = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

/// Angle of the relative rotation aᵀb, in radians within [0, π].
inline double geodesic_distance(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  CameraPose::validate_rotation(a);
  CameraPose::validate_rotation(b);
  const double c = ((a.transpose() * b).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

inline double geodesic_distance(const CameraPose& a, const CameraPose& b) {
  // Quaternion form is better conditioned than acos of the trace near zero.
  const Eigen::Quaterniond rel = a.rotation().conjugate() * b.rotation();
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

/// sqrt(|t_b − t_a|² + θ²), mixing meters and radians as an ordering heuristic.
inline double se3_distance(const CameraPose& a, const CameraPose& b) {
  const double theta = geodesic_distance(a, b);
  const double dt = (b.translation() - a.translation()).norm();
  return std::sqrt(dt * dt + theta * theta);
}

/// Representative pose of a view: chordal L2 quaternion mean (dominant
/// eigenvector of Σ q qᵀ, sign-invariant) and arithmetic mean translation.
inline CameraPose average_poses(const std::vector<CameraPose>& poses) {
  require(!poses.empty(), ErrorCode::kGeometry, "cannot average an empty pose set");
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  for (const auto& p : poses) {
    const Eigen::Vector4d q(p.rotation().w(), p.rotation().x(), p.rotation().y(), p.rotation().z());
    m += q * q.transpose();
    t += p.translation();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> solver(m);
  require(solver.info() == Eigen::Success, ErrorCode::kGeometry, "rotation averaging failed to converge");
  Eigen::Vector4d q = solver.eigenvectors().col(3);
  if (q(0) < 0.0) q = -q;
  q.normalize();
  return CameraPose::from_quaternion(q(0), q(1), q(2), q(3), t / static_cast<double>(poses.size()));
}

using ViewPoseSet = std::map<std::string, std::vector<CameraPose>>;

inline CameraPose pose_from_json(const nlohmann::json& j) {
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  if (j.contains("translation")) {
    const auto v = j.at("translation").get<std::vector<double>>();
    require(v.size() == 3, ErrorCode::kGeometry, "translation must have 3 entries");
    t = Eigen::Vector3d(v[0], v[1], v[2]);
  }
  if (j.contains("quaternion")) {
    const auto q = j.at("quaternion").get<std::vector<double>>();
    require(q.size() == 4, ErrorCode::kGeometry, "quaternion must be [w, x, y, z]");
    return CameraPose::from_quaternion(q[0], q[1], q[2], q[3], t);
  }
  if (j.contains("rotation")) {
    const auto rows = j.at("rotation").get<std::vector<std::vector<double>>>();
    require(rows.size() == 3 && std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.size() == 3; }),
            ErrorCode::kGeometry, "rotation must be a 3x3 matrix");
    Eigen::Matrix3d r;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) r(a, b) = rows[a][b];
    return CameraPose::from_matrix(r, t);
  }
  fail(ErrorCode::kGeometry, "pose needs a 'quaternion' or 'rotation' entry");
}

/// {"views": {"<name>": [ {"quaternion": [w,x,y,z], "translation": [x,y,z]}, ... ]}}
inline ViewPoseSet load_view_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open pose file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  ViewPoseSet out;
  for (const auto& [view, list] : j.at("views").items()) {
    auto& poses = out[view];
    for (const auto& p : list) poses.push_back(pose_from_json(p));
  }
  return out;
}

struct DifficultyRow {
  std::string view;
  std::optional<double> distance;  // absent for the trained view and views without poses
  std::optional<double> top1;
  std::optional<double> drop;
  bool trained = false;
  bool missing_pose = false;
};

/// Views ordered by distance to the trained view (trained first, ties by
/// name, views lacking poses last); drop = trained top-1 − view top-1.
inline std::vector<DifficultyRow> difficulty_table(const std::map<std::string, std::optional<double>>& distances,
                                                   const std::string& trained_view,
                                                   const std::map<std::string, double>& top1 = {}) {
  require(distances.contains(trained_view), ErrorCode::kInput, "trained view '" + trained_view + "' not listed");
  std::optional<double> base;
  if (auto it = top1.find(trained_view); it != top1.end()) base = it->second;
  std::vector<DifficultyRow> rows;
  for (const auto& [view, dist] : distances) {
    DifficultyRow r;
    r.view = view;
    r.trained = view == trained_view;
    r.distance = r.trained ? std::nullopt : dist;
    r.missing_pose = !r.trained && !dist;
    if (auto it = top1.find(view); it != top1.end()) {
      r.top1 = it->second;
      if (base) r.drop = r.trained ? 0.0 : *base - it->second;
    }
    rows.push_back(std::move(r));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const DifficultyRow& a, const DifficultyRow& b) {
    auto rank = [](const DifficultyRow& r) { return r.trained ? 0 : (r.missing_pose ? 2 : 1); };
    if (rank(a) != rank(b)) return rank(a) < rank(b);
    if (a.distance && b.distance && *a.distance != *b.distance) return *a.distance < *b.distance;
    return a.view < b.view;
  });
  return rows;
}

/// Distances from averaged view poses. `views` lists every view to report;
/// those absent from `poses` are flagged instead of failing.
inline std::vector<DifficultyRow> view_difficulty_table(const ViewPoseSet& poses, const std::string& trained_view,
                                                        const std::vector<std::string>& views,
                                                        const std::map<std::string, double>& top1 = {}) {
  auto trained = poses.find(trained_view);
  require(trained != poses.end() && !trained->second.empty(), ErrorCode::kGeometry,
          "no poses for trained view '" + trained_view + "'");
  const CameraPose anchor = average_poses(trained->second);
  std::map<std::string, std::optional<double>> distances;
  distances[trained_view] = 0.0;
  for (const auto& v : views) {
    if (v == trained_view) continue;
    auto it = poses.find(v);
    if (it == poses.end() || it->second.empty()) {
      distances[v] = std::nullopt;
      continue;
    }
    distances[v] = se3_distance(anchor, average_poses(it->second));
  }
  for (const auto& [v, list] : poses)
    if (!distances.contains(v) && !list.empty()) distances[v] = se3_distance(anchor, average_poses(list));
  return difficulty_table(distances, trained_view, top1);
}

}  // namespace tmask
