#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <string>

namespace fetalnav {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Plane pose in the volume-centered frame. The imaged plane is the local z=0
/// plane; its origin sits at `t` and its normal is the rotated +z axis.
struct Pose6D {
    Vec3 t = Vec3::Zero();  ///< millimeters
    Vec3 r = Vec3::Zero();  ///< rotation vector (axis * angle), radians, |r| <= pi

    static Pose6D identity() { return {}; }

    Mat3 rotation() const;
    /// Maps a point given in plane-local millimeters into the volume frame.
    Vec3 apply(const Vec3& local) const { return rotation() * local + t; }
    /// this ∘ other: applies `other` first, then this.
    Pose6D compose(const Pose6D& other) const;
    Pose6D inverse() const;
};

/// The six raw outputs of a rotation head: two (not necessarily orthonormal) columns.
struct Rot6D {
    Vec3 a1 = Vec3::UnitX();
    Vec3 a2 = Vec3::UnitY();
};

struct PlaneAnnotation {
    std::string volume_id;
    std::string label = "TV";
    Pose6D pose;
};

constexpr double kRotationTolerance = 1e-6;
constexpr double kDegeneracyTolerance = 1e-8;

/// Gram-Schmidt orthonormalization; columns of the result are [b1 b2 b1×b2].
/// Throws DegenerateRepresentationError when a1 ~ 0 or a2 ∥ a1.
Mat3 rot6d_to_matrix(const Rot6D& g);

/// First two columns of R, the inverse of rot6d_to_matrix up to positive scale.
Rot6D matrix_to_rot6d(const Mat3& R);

Mat3 rotvec_to_matrix(const Vec3& r);

/// Throws ValidationError if R is not a proper rotation within kRotationTolerance.
Vec3 matrix_to_rotvec(const Mat3& R);

/// Wraps into |r| <= pi. At exactly pi, r and -r describe the same rotation;
/// the lexicographically larger one is returned.
Vec3 canonicalize_rotvec(const Vec3& r);

bool is_rotation(const Mat3& R, double tol = kRotationTolerance);

/// Validates finiteness and canonical range; returns the canonicalized pose.
Pose6D validated(const Pose6D& pose);

Vec3 plane_normal(const Pose6D& pose);

struct Proximity {
    double trans_mm = 0.0;
    /// Angle between plane normals folded into [0, 90] (planes are unoriented).
    double rot_deg = 0.0;
    /// Same angle without folding, in [0, 180].
    double rot_deg_unfolded = 0.0;
    /// Full geodesic angle between the two rotations, in [0, 180]. Logged only.
    double geodesic_deg = 0.0;
};

Proximity proximity(const Pose6D& pred, const Pose6D& target);
inline Proximity proximity(const Pose6D& pred, const PlaneAnnotation& sp) { return proximity(pred, sp.pose); }

nlohmann::json to_json(const PlaneAnnotation& a);
PlaneAnnotation annotation_from_json(const nlohmann::json& j);
PlaneAnnotation load_annotation(const std::string& path);
void save_annotation(const PlaneAnnotation& a, const std::string& path);

nlohmann::json pose_to_json(const Pose6D& p);
Pose6D pose_from_json(const nlohmann::json& j);

}  // namespace fetalnav
