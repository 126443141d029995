#include "fetalnav/geometry.hpp"

#include "fetalnav/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace fetalnav {

namespace {

bool all_finite(const Vec3& v) { return v.allFinite(); }

Vec3 vec_from_json(const nlohmann::json& j, const char* key)
{
    if (!j.contains(key) || !j.at(key).is_array() || j.at(key).size() != 3) {
        throw ValidationError(std::string("expected a 3-element array for '") + key + "'");
    }
    return {j.at(key)[0].get<double>(), j.at(key)[1].get<double>(), j.at(key)[2].get<double>()};
}

double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

}  // namespace

Mat3 Pose6D::rotation() const { return rotvec_to_matrix(r); }

Pose6D Pose6D::compose(const Pose6D& other) const
{
    const Mat3 R = rotation();
    Pose6D out;
    out.t = R * other.t + t;
    out.r = matrix_to_rotvec(R * other.rotation());
    return out;
}

Pose6D Pose6D::inverse() const
{
    const Mat3 Rt = rotation().transpose();
    Pose6D out;
    out.t = -(Rt * t);
    out.r = matrix_to_rotvec(Rt);
    return out;
}

Mat3 rot6d_to_matrix(const Rot6D& g)
{
    if (!all_finite(g.a1) || !all_finite(g.a2)) {
        throw DegenerateRepresentationError("rot6d: non-finite component");
    }
    const double n1 = g.a1.norm();
    if (n1 < kDegeneracyTolerance) {
        throw DegenerateRepresentationError("rot6d: first column is (near) zero");
    }
    const Vec3 b1 = g.a1 / n1;
    const Vec3 u2 = g.a2 - b1.dot(g.a2) * b1;
    const double n2 = u2.norm();
    // Relative test so that scaling a2 does not change the verdict.
    if (n2 < kDegeneracyTolerance * std::max(1.0, g.a2.norm())) {
        throw DegenerateRepresentationError("rot6d: second column is (near) parallel to the first");
    }
    const Vec3 b2 = u2 / n2;
    Mat3 R;
    R.col(0) = b1;
    R.col(1) = b2;
    R.col(2) = b1.cross(b2);
    return R;
}

Rot6D matrix_to_rot6d(const Mat3& R) { return {R.col(0), R.col(1)}; }

Mat3 rotvec_to_matrix(const Vec3& r)
{
    if (!all_finite(r)) {
        throw ValidationError("rotation vector has non-finite components");
    }
    const double angle = r.norm();
    if (angle == 0.0) {
        return Mat3::Identity();
    }
    return Eigen::AngleAxisd(angle, r / angle).toRotationMatrix();
}

bool is_rotation(const Mat3& R, double tol)
{
    if (!R.allFinite()) {
        return false;
    }
    const Mat3 err = R.transpose() * R - Mat3::Identity();
    return err.cwiseAbs().maxCoeff() <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

Vec3 matrix_to_rotvec(const Mat3& R)
{
    if (!is_rotation(R)) {
        throw ValidationError("matrix is not a proper rotation (R^T R != I or det != 1)");
    }
    const Eigen::AngleAxisd aa(R);
    return canonicalize_rotvec(aa.angle() * aa.axis());
}

Vec3 canonicalize_rotvec(const Vec3& r)
{
    constexpr double pi = std::numbers::pi;
    double angle = r.norm();
    if (angle == 0.0) {
        return Vec3::Zero();
    }
    Vec3 axis = r / angle;
    angle = std::fmod(angle, 2.0 * pi);
    if (angle > pi) {
        angle = 2.0 * pi - angle;
        axis = -axis;
    }
    Vec3 out = axis * angle;
    if (std::abs(angle - pi) < 1e-9) {
        const Vec3 neg = -out;
        if (std::lexicographical_compare(out.data(), out.data() + 3, neg.data(), neg.data() + 3)) {
            out = neg;
        }
    }
    return out;
}

Pose6D validated(const Pose6D& pose)
{
    if (!all_finite(pose.t) || !all_finite(pose.r)) {
        throw ValidationError("pose has non-finite components");
    }
    return {pose.t, canonicalize_rotvec(pose.r)};
}

Vec3 plane_normal(const Pose6D& pose) { return (pose.rotation() * Vec3::UnitZ()).normalized(); }

Proximity proximity(const Pose6D& pred, const Pose6D& target)
{
    const Pose6D a = validated(pred);
    const Pose6D b = validated(target);
    Proximity out;
    out.trans_mm = (a.t - b.t).norm();
    const Vec3 na = plane_normal(a);
    const Vec3 nb = plane_normal(b);
    const double c = std::clamp(na.dot(nb) / (na.norm() * nb.norm()), -1.0, 1.0);
    out.rot_deg_unfolded = rad2deg(std::acos(c));
    out.rot_deg = std::min(out.rot_deg_unfolded, 180.0 - out.rot_deg_unfolded);
    const Mat3 rel = a.rotation().transpose() * b.rotation();
    out.geodesic_deg = rad2deg(Eigen::AngleAxisd(rel).angle());
    return out;
}

nlohmann::json pose_to_json(const Pose6D& p)
{
    return {{"t_mm", {p.t.x(), p.t.y(), p.t.z()}}, {"rotvec_rad", {p.r.x(), p.r.y(), p.r.z()}}};
}

Pose6D pose_from_json(const nlohmann::json& j)
{
    return validated({vec_from_json(j, "t_mm"), vec_from_json(j, "rotvec_rad")});
}

nlohmann::json to_json(const PlaneAnnotation& a)
{
    nlohmann::json j = pose_to_json(a.pose);
    j["volume_id"] = a.volume_id;
    j["label"] = a.label;
    return j;
}

PlaneAnnotation annotation_from_json(const nlohmann::json& j)
{
    PlaneAnnotation a;
    if (!j.contains("volume_id") || !j.at("volume_id").is_string() || j.at("volume_id").get<std::string>().empty()) {
        throw ValidationError("annotation requires a non-empty 'volume_id'");
    }
    a.volume_id = j.at("volume_id").get<std::string>();
    a.label = j.value("label", std::string("TV"));
    a.pose = pose_from_json(j);
    return a;
}

PlaneAnnotation load_annotation(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open annotation file " + path);
    }
    return annotation_from_json(nlohmann::json::parse(in));
}

void save_annotation(const PlaneAnnotation& a, const std::string& path)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write annotation file " + path);
    }
    out << to_json(a).dump(2) << '\n';
}

}  // namespace fetalnav
