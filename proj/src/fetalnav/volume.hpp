#pragma once

#include "fetalnav/geometry.hpp"

#include <opencv2/core.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fetalnav {

/// Solid ellipsoid in the volume frame: center, orientation and semi-axes (mm).
struct Ellipsoid {
    Vec3 center = Vec3::Zero();
    Vec3 rotvec = Vec3::Zero();
    Vec3 semi_axes = Vec3::Ones();

    bool contains(const Vec3& p) const;
    /// Squared normalized radius; <= 1 inside.
    double level(const Vec3& p) const;
    double volume_mm3() const;
};

/// Ellipsoid with its rotation precomputed, for per-voxel evaluation.
struct PreparedEllipsoid {
    explicit PreparedEllipsoid(const Ellipsoid& e);
    double level(const Vec3& p) const { return (Rt * (p - center)).cwiseProduct(inv_axes).squaredNorm(); }
    bool contains(const Vec3& p) const { return level(p) <= 1.0; }

    Mat3 Rt;
    Vec3 center;
    Vec3 inv_axes;
};

/// Isotropic scalar grid with values in [0,1]. The frame origin is the grid
/// center: voxel (i,j,k) sits at ((i - (nx-1)/2)·s, (j - (ny-1)/2)·s, (k - (nz-1)/2)·s).
struct Volume {
    std::string volume_id;
    std::array<int, 3> dims{0, 0, 0};
    double spacing_mm = 1.0;
    std::vector<float> voxels;  ///< x-fastest
    std::optional<Ellipsoid> brain;
    std::optional<PlaneAnnotation> annotation;

    std::size_t index(int i, int j, int k) const
    {
        return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
    }
    float at(int i, int j, int k) const { return voxels[index(i, j, k)]; }
    Vec3 voxel_center(int i, int j, int k) const;
    Vec3 half_extent_mm() const;
    /// Throws ValidationError when spacing, dims or voxel values break the invariants.
    void validate() const;
};

using Image = cv::Mat1f;  ///< single-channel float image in [0,1]
using Mask = cv::Mat1b;   ///< 0 / 1

struct SliceSample {
    Image image;
    Pose6D pose;
    std::string volume_id;
    std::optional<Mask> gt_mask;
    double pixel_spacing_mm = 1.0;
};

/// Trilinear interpolation of the 8 surrounding voxel centers; 0 outside the grid.
double trilinear_sample(const Volume& v, const Vec3& p_mm);

/// Plane-local position of pixel (row, col) for an H×W slice: centered grid scaled by spacing.
Vec3 slice_pixel_local(int row, int col, int rows, int cols, double pixel_spacing_mm);

SliceSample extract_slice(const Volume& v, const Pose6D& pose, int rows, int cols, double pixel_spacing_mm);

struct PoseBounds {
    double max_offset_mm = 20.0;
    double max_angle_rad = 0.7853981633974483;  // pi/4
};

/// Translation uniform in the ±max_offset box; rotation axis uniform on the
/// sphere and angle uniform in [0, max_angle].
Pose6D sample_pose(std::mt19937_64& rng, const PoseBounds& bounds);

/// Raw little-endian float32 (x-fastest) plus a JSON sidecar with metadata.
void save_volume(const Volume& v, const std::string& dir);
Volume load_volume(const std::string& sidecar_or_stem);
/// Loads every volume sidecar found in `dir`, sorted by volume id.
std::vector<Volume> load_volume_dir(const std::string& dir);

nlohmann::json ellipsoid_to_json(const Ellipsoid& e);
Ellipsoid ellipsoid_from_json(const nlohmann::json& j);

}  // namespace fetalnav
