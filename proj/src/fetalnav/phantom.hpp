#pragma once

#include "fetalnav/volume.hpp"

#include <cstdint>
#include <vector>

namespace fetalnav {

/// Parameters of a procedurally generated family of registered fetal-head phantoms.
struct PhantomSpec {
    std::uint64_t seed = 7;
    std::array<int, 3> dims{128, 96, 96};
    double spacing_mm = 1.0;

    Vec3 brain_semi_axes_mm{34.0, 27.0, 29.0};
    double skull_thickness_mm = 2.5;

    // Dark structures lying on the canonical TV-like plane.
    int structure_count = 3;
    double structure_size_min_mm = 3.0;
    double structure_size_max_mm = 8.0;
    double structure_contrast_min = 0.25;
    double structure_contrast_max = 0.40;
    // Off-plane echogenic landmarks that disambiguate out-of-plane position.
    int landmark_count = 6;
    // Non-brain blobs placed independently per subject.
    int distractor_count = 6;

    double speckle_level = 0.35;
    int speckle_passes = 3;

    double jitter_mm = 0.5;
    double jitter_deg = 1.0;
    double jitter_scale = 0.01;

    /// Throws ValidationError if the brain does not fit the volume or a range is inverted.
    void validate() const;
    Vec3 half_extent_mm() const;
};

nlohmann::json to_json(const PhantomSpec& s);
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);

/// Analytic primitive; intensity is blended in list order (later wins).
struct Blob {
    enum class Kind { Solid, Shell };
    Ellipsoid shape;
    Kind kind = Kind::Solid;
    float intensity = 0.5f;
    double shell_mm = 0.0;
};

/// Noise-free analytic description of one subject.
struct Anatomy {
    Ellipsoid brain;
    std::vector<Blob> blobs;          ///< everything, in painting order
    std::vector<Vec3> structure_centroids;
    PlaneAnnotation tv_plane;
    float background = 0.04f;
    float tissue = 0.22f;
    Ellipsoid body;

    double intensity(const Vec3& p) const;
};

/// Shared anatomy of a family, before per-subject jitter.
Anatomy canonical_anatomy(const PhantomSpec& spec);

/// Applies subject-specific rigid+scale jitter and redraws the distractors.
Anatomy subject_anatomy(const PhantomSpec& spec, const Anatomy& canonical, std::uint64_t subject_seed);

/// Voxelizes an anatomy and adds 3D speckle.
Volume voxelize(const Anatomy& anatomy, const PhantomSpec& spec, const std::string& volume_id,
                std::uint64_t noise_seed);

/// Noise-free section of an anatomy (no voxelization); gt_mask from the brain ellipsoid.
SliceSample render_analytic(const Anatomy& anatomy, const Pose6D& pose, int rows, int cols, double pixel_spacing_mm);

/// n >= 2 registered volumes named vol0..vol{n-1}; each carries its brain
/// ellipsoid and TV-like annotation.
std::vector<Volume> generate_phantom_family(const PhantomSpec& spec, int n);

}  // namespace fetalnav
