#include "fetalnav/phantom.hpp"

#include "fetalnav/errors.hpp"
#include "fetalnav/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace fetalnav {

namespace {

constexpr float kBrainTissue = 0.42f;
constexpr float kSkull = 0.90f;
constexpr float kLandmark = 0.72f;
constexpr double kTvOffsetFraction = 0.12;  // of the brain's z semi-axis
constexpr double kTvTiltRad = 6.0 * std::numbers::pi / 180.0;

double uniform(std::mt19937_64& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec3 random_unit(std::mt19937_64& rng)
{
    std::normal_distribution<double> g(0.0, 1.0);
    Vec3 v;
    do {
        v = Vec3(g(rng), g(rng), g(rng));
    } while (v.norm() < 1e-9);
    return v.normalized();
}

struct Similarity {
    double scale = 1.0;
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Vec3 point(const Vec3& p) const { return scale * (R * p) + t; }
    Ellipsoid ellipsoid(const Ellipsoid& e) const
    {
        return {point(e.center), matrix_to_rotvec(R * rotvec_to_matrix(e.rotvec)), e.semi_axes * scale};
    }
};

struct PreparedBlob {
    PreparedEllipsoid shape;
    Blob::Kind kind;
    float intensity;
    double inner_radius;  ///< normalized radius where a shell starts
};

std::vector<PreparedBlob> prepare(const std::vector<Blob>& blobs)
{
    std::vector<PreparedBlob> out;
    out.reserve(blobs.size());
    for (const auto& b : blobs) {
        const double mean_axis = b.shape.semi_axes.mean();
        out.push_back({PreparedEllipsoid(b.shape), b.kind, b.intensity,
                       b.kind == Blob::Kind::Shell ? std::max(0.0, 1.0 - b.shell_mm / mean_axis) : 0.0});
    }
    return out;
}

// Fraction of a sample of width edge_mm lying inside a surface, from the signed
// distance (positive inside). edge_mm = 0 gives a hard indicator.
double coverage(double inside_mm, double edge_mm)
{
    if (edge_mm <= 0.0) {
        return inside_mm >= 0.0 ? 1.0 : 0.0;
    }
    return std::clamp(0.5 + inside_mm / edge_mm, 0.0, 1.0);
}

// Approximate signed distance to the ellipsoid surface at normalized radius
// `at`, measured along the ray from the center.
double inside_mm(const PreparedEllipsoid& e, const Vec3& p, double lvl, double at)
{
    const double rho = std::sqrt(lvl);
    if (rho < 1e-12) {
        return at > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
    return (p - e.center).norm() * (at / rho - 1.0);
}

double paint(const std::vector<PreparedBlob>& blobs, const PreparedEllipsoid& body, float background, float tissue,
             const Vec3& p, double edge_mm)
{
    const double body_lvl = body.level(p);
    double value = background + (tissue - background) * coverage(inside_mm(body, p, body_lvl, 1.0), edge_mm);
    const double reach = 1.0 + edge_mm;
    for (const auto& b : blobs) {
        const double lvl = b.shape.level(p);
        // Cheap reject well outside: every semi-axis is at least 1 mm.
        if (lvl > reach * reach) {
            continue;
        }
        double w = coverage(inside_mm(b.shape, p, lvl, 1.0), edge_mm);
        if (b.kind == Blob::Kind::Shell) {
            w = std::min(w, coverage(-inside_mm(b.shape, p, lvl, b.inner_radius), edge_mm));
        }
        if (w > 0.0) {
            value += (b.intensity - value) * w;
        }
    }
    return value;
}

std::vector<Blob> make_distractors(const PhantomSpec& spec, const Ellipsoid& brain, const Ellipsoid& body,
                                   std::mt19937_64& rng)
{
    std::vector<Blob> out;
    const Vec3 half = spec.half_extent_mm();
    const PreparedEllipsoid body_p(body);
    int attempts = 0;
    while (static_cast<int>(out.size()) < spec.distractor_count && attempts++ < 10000) {
        const Vec3 axes(uniform(rng, 5.0, 12.0), uniform(rng, 5.0, 12.0), uniform(rng, 5.0, 12.0));
        const Vec3 c(uniform(rng, -half.x(), half.x()), uniform(rng, -half.y(), half.y()),
                     uniform(rng, -half.z(), half.z()));
        const double r = axes.maxCoeff();
        // Keep clear of the brain: test against the brain grown by the blob radius.
        Ellipsoid grown = brain;
        grown.semi_axes = brain.semi_axes.array() + r + 2.0;
        if (PreparedEllipsoid(grown).contains(c) || !body_p.contains(c)) {
            continue;
        }
        bool overlaps = false;
        for (const auto& o : out) {
            if ((o.shape.center - c).norm() < r + o.shape.semi_axes.maxCoeff() + 1.0) {
                overlaps = true;
                break;
            }
        }
        if (overlaps) {
            continue;
        }
        const Ellipsoid shape{c, random_unit(rng) * uniform(rng, 0.0, std::numbers::pi), axes};
        const int type = static_cast<int>(out.size()) % 3;
        if (type == 0) {
            // head-like: echogenic rim around mid-grey interior
            out.push_back({shape, Blob::Kind::Solid, static_cast<float>(uniform(rng, 0.35, 0.5)), 0.0});
            out.push_back({shape, Blob::Kind::Shell, static_cast<float>(uniform(rng, 0.75, 0.95)), 2.0});
        } else if (type == 1) {
            out.push_back({shape, Blob::Kind::Solid, static_cast<float>(uniform(rng, 0.6, 0.85)), 0.0});
        } else {
            out.push_back({shape, Blob::Kind::Solid, static_cast<float>(uniform(rng, 0.02, 0.1)), 0.0});
        }
    }
    return out;
}

}  // namespace

Vec3 PhantomSpec::half_extent_mm() const
{
    return {(dims[0] - 1) / 2.0 * spacing_mm, (dims[1] - 1) / 2.0 * spacing_mm, (dims[2] - 1) / 2.0 * spacing_mm};
}

void PhantomSpec::validate() const
{
    if (!(spacing_mm > 0.0)) {
        throw ValidationError("phantom spacing must be positive");
    }
    if (dims[0] < 2 || dims[1] < 2 || dims[2] < 2) {
        throw ValidationError("phantom dims must be >= 2");
    }
    if ((brain_semi_axes_mm.array() <= 0.0).any()) {
        throw ValidationError("brain semi-axes must be positive");
    }
    const Vec3 half = half_extent_mm();
    const Vec3 margin = Vec3::Constant(jitter_mm + skull_thickness_mm);
    if (((brain_semi_axes_mm * (1.0 + jitter_scale) + margin).array() > half.array()).any()) {
        throw ValidationError("brain semi-axes do not fit inside the volume extent");
    }
    if (structure_count < 3) {
        throw ValidationError("at least 3 plane structures are required to define the TV plane");
    }
    if (structure_size_min_mm <= 0.0 || structure_size_min_mm > structure_size_max_mm) {
        throw ValidationError("invalid structure size range");
    }
    if (structure_contrast_min < 0.0 || structure_contrast_min > structure_contrast_max ||
        structure_contrast_max > kBrainTissue) {
        throw ValidationError("invalid structure contrast range");
    }
    if (landmark_count < 0 || distractor_count < 0) {
        throw ValidationError("counts must be non-negative");
    }
    if (speckle_passes < 0) {
        throw ValidationError("speckle_passes must be non-negative");
    }
    if (speckle_level < 0.0 || jitter_mm < 0.0 || jitter_deg < 0.0 || jitter_scale < 0.0 || jitter_scale >= 0.5) {
        throw ValidationError("noise and jitter magnitudes must be non-negative (scale < 0.5)");
    }
}

nlohmann::json to_json(const PhantomSpec& s)
{
    return {{"seed", s.seed},
            {"dims", s.dims},
            {"spacing_mm", s.spacing_mm},
            {"brain_semi_axes_mm", {s.brain_semi_axes_mm.x(), s.brain_semi_axes_mm.y(), s.brain_semi_axes_mm.z()}},
            {"skull_thickness_mm", s.skull_thickness_mm},
            {"structure_count", s.structure_count},
            {"structure_size_mm", {s.structure_size_min_mm, s.structure_size_max_mm}},
            {"structure_contrast", {s.structure_contrast_min, s.structure_contrast_max}},
            {"landmark_count", s.landmark_count},
            {"distractor_count", s.distractor_count},
            {"speckle_level", s.speckle_level},
            {"speckle_passes", s.speckle_passes},
            {"jitter_mm", s.jitter_mm},
            {"jitter_deg", s.jitter_deg},
            {"jitter_scale", s.jitter_scale}};
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& j)
{
    PhantomSpec s;
    s.seed = j.value("seed", s.seed);
    s.dims = j.value("dims", s.dims);
    s.spacing_mm = j.value("spacing_mm", s.spacing_mm);
    if (j.contains("brain_semi_axes_mm")) {
        const auto& a = j.at("brain_semi_axes_mm");
        s.brain_semi_axes_mm = Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
    }
    s.skull_thickness_mm = j.value("skull_thickness_mm", s.skull_thickness_mm);
    s.structure_count = j.value("structure_count", s.structure_count);
    if (j.contains("structure_size_mm")) {
        s.structure_size_min_mm = j.at("structure_size_mm")[0].get<double>();
        s.structure_size_max_mm = j.at("structure_size_mm")[1].get<double>();
    }
    if (j.contains("structure_contrast")) {
        s.structure_contrast_min = j.at("structure_contrast")[0].get<double>();
        s.structure_contrast_max = j.at("structure_contrast")[1].get<double>();
    }
    s.landmark_count = j.value("landmark_count", s.landmark_count);
    s.distractor_count = j.value("distractor_count", s.distractor_count);
    s.speckle_level = j.value("speckle_level", s.speckle_level);
    s.speckle_passes = j.value("speckle_passes", s.speckle_passes);
    s.jitter_mm = j.value("jitter_mm", s.jitter_mm);
    s.jitter_deg = j.value("jitter_deg", s.jitter_deg);
    s.jitter_scale = j.value("jitter_scale", s.jitter_scale);
    s.validate();
    return s;
}

double Anatomy::intensity(const Vec3& p) const
{
    return paint(prepare(blobs), PreparedEllipsoid(body), background, tissue, p, 0.0);
}

Anatomy canonical_anatomy(const PhantomSpec& spec)
{
    spec.validate();
    auto rng = derived_rng(spec.seed, {0xA11A});
    Anatomy a;
    const Vec3 abc = spec.brain_semi_axes_mm;
    a.brain = {Vec3::Zero(), Vec3::Zero(), abc};
    a.body = {Vec3::Zero(), Vec3::Zero(), spec.half_extent_mm() * 0.97};

    a.blobs.push_back({a.brain, Blob::Kind::Solid, kBrainTissue, 0.0});
    a.blobs.push_back({a.brain, Blob::Kind::Shell, kSkull, spec.skull_thickness_mm});

    // Internal anatomy with no rotational symmetry, so that off-plane slices
    // still pin down height and orientation.
    const auto inner = [&](Vec3 c, Vec3 axes, double intensity) {
        a.blobs.push_back({{c, Vec3::Zero(), axes}, Blob::Kind::Solid, static_cast<float>(intensity), 0.0});
    };
    inner({0.0, 0.05 * abc.y(), 0.1 * abc.z()}, {1.2, 0.8 * abc.y(), 0.8 * abc.z()}, 0.78);  // falx
    inner({0.0, -0.62 * abc.y(), -0.5 * abc.z()}, {0.38 * abc.x(), 0.2 * abc.y(), 0.22 * abc.z()}, 0.66);  // cerebellum
    for (double side : {-1.0, 1.0}) {
        inner({side * 0.26 * abc.x(), 0.12 * abc.y(), 0.5 * abc.z()}, {0.09 * abc.x(), 0.42 * abc.y(), 0.22 * abc.z()},
              0.1);  // upper horns
        inner({side * 0.14 * abc.x(), -0.12 * abc.y(), -0.18 * abc.z()},
              {0.12 * abc.x(), 0.16 * abc.y(), 0.14 * abc.z()}, 0.27);  // thalami
    }

    // TV-like plane: slightly above the brain center, tilted about x.
    const Mat3 R_tv = Eigen::AngleAxisd(kTvTiltRad, Vec3::UnitX()).toRotationMatrix();
    const Vec3 tv_origin(0.0, 0.0, kTvOffsetFraction * abc.z());
    a.tv_plane.label = "TV";
    a.tv_plane.pose = {tv_origin, matrix_to_rotvec(R_tv)};

    // In-plane extent of the brain cross-section, shrunk to keep structures well inside.
    const double u_max = 0.55 * abc.x();
    const double v_max = 0.55 * abc.y();
    int placed = 0;
    int attempts = 0;
    std::vector<std::pair<Vec3, double>> taken;
    while (placed < spec.structure_count && attempts++ < 20000) {
        const double u = uniform(rng, -u_max, u_max);
        const double v = uniform(rng, -v_max, v_max);
        if ((u / u_max) * (u / u_max) + (v / v_max) * (v / v_max) > 1.0) {
            continue;
        }
        const double su = uniform(rng, spec.structure_size_min_mm, spec.structure_size_max_mm);
        const double sv = uniform(rng, spec.structure_size_min_mm, spec.structure_size_max_mm);
        const double sw = std::min(spec.structure_size_min_mm, 3.5);
        const Vec3 local(u, v, 0.0);
        const double radius = std::max(su, sv);
        bool clash = false;
        for (const auto& [c, rr] : taken) {
            if ((c - local).norm() < radius + rr + 1.5) {
                clash = true;
                break;
            }
        }
        if (clash) {
            continue;
        }
        taken.emplace_back(local, radius);
        const Vec3 centroid = R_tv * local + tv_origin;
        const double in_plane_angle = uniform(rng, 0.0, std::numbers::pi);
        const Mat3 R_blob = R_tv * Eigen::AngleAxisd(in_plane_angle, Vec3::UnitZ()).toRotationMatrix();
        const double contrast = uniform(rng, spec.structure_contrast_min, spec.structure_contrast_max);
        a.blobs.push_back({{centroid, matrix_to_rotvec(R_blob), Vec3(su, sv, sw)}, Blob::Kind::Solid,
                           static_cast<float>(kBrainTissue - contrast), 0.0});
        a.structure_centroids.push_back(centroid);
        ++placed;
    }
    if (placed < spec.structure_count) {
        throw ValidationError("could not place the requested number of plane structures");
    }

    // Echogenic landmarks well away from the TV plane.
    attempts = 0;
    int landmarks = 0;
    const PreparedEllipsoid brain_p(a.brain);
    while (landmarks < spec.landmark_count && attempts++ < 20000) {
        const Vec3 c(uniform(rng, -abc.x(), abc.x()), uniform(rng, -abc.y(), abc.y()), uniform(rng, -abc.z(), abc.z()));
        const double dist_to_plane = std::abs((R_tv.transpose() * (c - tv_origin)).z());
        if (brain_p.level(c) > 0.45 || dist_to_plane < 9.0) {
            continue;
        }
        const Vec3 axes(uniform(rng, 3.0, 6.0), uniform(rng, 3.0, 6.0), uniform(rng, 3.0, 6.0));
        a.blobs.push_back({{c, random_unit(rng) * uniform(rng, 0.0, 3.0), axes}, Blob::Kind::Solid, kLandmark, 0.0});
        ++landmarks;
    }
    return a;
}

Anatomy subject_anatomy(const PhantomSpec& spec, const Anatomy& canonical, std::uint64_t subject_seed)
{
    auto rng = derived_rng(subject_seed, {0x5B1});
    Similarity J;
    J.scale = 1.0 + uniform(rng, -spec.jitter_scale, spec.jitter_scale);
    J.R = rotvec_to_matrix(random_unit(rng) * uniform(rng, 0.0, spec.jitter_deg * std::numbers::pi / 180.0));
    J.t = random_unit(rng) * uniform(rng, 0.0, spec.jitter_mm);

    Anatomy a = canonical;
    a.brain = J.ellipsoid(canonical.brain);
    a.blobs.clear();
    for (const auto& b : canonical.blobs) {
        Blob moved = b;
        moved.shape = J.ellipsoid(b.shape);
        moved.shell_mm = b.shell_mm * J.scale;
        a.blobs.push_back(moved);
    }
    a.structure_centroids.clear();
    for (const auto& c : canonical.structure_centroids) {
        a.structure_centroids.push_back(J.point(c));
    }
    a.tv_plane.pose = {J.point(canonical.tv_plane.pose.t),
                       matrix_to_rotvec(J.R * canonical.tv_plane.pose.rotation())};

    // Distractors are drawn independently per subject and painted first so that
    // brain anatomy always wins.
    auto distractors = make_distractors(spec, a.brain, a.body, rng);
    distractors.insert(distractors.end(), a.blobs.begin(), a.blobs.end());
    a.blobs = std::move(distractors);
    a.tissue = static_cast<float>(canonical.tissue * (1.0 + uniform(rng, -0.1, 0.1)));
    return a;
}

Volume voxelize(const Anatomy& anatomy, const PhantomSpec& spec, const std::string& volume_id, std::uint64_t noise_seed)
{
    Volume v;
    v.volume_id = volume_id;
    v.dims = spec.dims;
    v.spacing_mm = spec.spacing_mm;
    const std::size_t n = static_cast<std::size_t>(v.dims[0]) * v.dims[1] * v.dims[2];
    v.voxels.assign(n, 0.0f);

    const auto blobs = prepare(anatomy.blobs);
    const PreparedEllipsoid body(anatomy.body);
    for (int k = 0; k < v.dims[2]; ++k) {
        for (int j = 0; j < v.dims[1]; ++j) {
            for (int i = 0; i < v.dims[0]; ++i) {
                v.voxels[v.index(i, j, k)] =
                    static_cast<float>(paint(blobs, body, anatomy.background, anatomy.tissue,
                                                 v.voxel_center(i, j, k), spec.spacing_mm));
            }
        }
    }

    // Multiplicative speckle: white noise smoothed by repeated 3-tap box passes
    // (roughly a resolution cell) and rescaled to unit variance.
    if (spec.speckle_level > 0.0) {
        auto rng = derived_rng(noise_seed, {0x5EC});
        std::normal_distribution<float> g(0.0f, 1.0f);
        std::vector<float> noise(n);
        for (auto& x : noise) {
            x = g(rng);
        }
        std::vector<float> tmp(n);
        const int strides[3] = {1, v.dims[0], v.dims[0] * v.dims[1]};
        for (int pass = 0; pass < spec.speckle_passes; ++pass) {
            for (int axis = 0; axis < 3; ++axis) {
                for (int k = 0; k < v.dims[2]; ++k) {
                    for (int j = 0; j < v.dims[1]; ++j) {
                        for (int i = 0; i < v.dims[0]; ++i) {
                            const int idx[3] = {i, j, k};
                            const std::size_t at = v.index(i, j, k);
                            float sum = noise[at];
                            if (idx[axis] > 0) {
                                sum += noise[at - strides[axis]];
                            }
                            if (idx[axis] + 1 < v.dims[axis]) {
                                sum += noise[at + strides[axis]];
                            }
                            tmp[at] = sum / 3.0f;
                        }
                    }
                }
                noise.swap(tmp);
            }
        }
        double sq = 0.0;
        for (float x : noise) {
            sq += static_cast<double>(x) * x;
        }
        const float gain = static_cast<float>(spec.speckle_level / std::sqrt(sq / static_cast<double>(n)));
        for (std::size_t q = 0; q < n; ++q) {
            v.voxels[q] = std::clamp(v.voxels[q] * (1.0f + gain * noise[q]), 0.0f, 1.0f);
        }
    }

    v.brain = anatomy.brain;
    PlaneAnnotation ann = anatomy.tv_plane;
    ann.volume_id = volume_id;
    ann.pose = validated(ann.pose);
    v.annotation = ann;
    return v;
}

SliceSample render_analytic(const Anatomy& anatomy, const Pose6D& pose, int rows, int cols, double pixel_spacing_mm)
{
    SliceSample s;
    s.pose = validated(pose);
    s.pixel_spacing_mm = pixel_spacing_mm;
    s.image = Image(rows, cols, 0.0f);
    s.gt_mask = Mask(rows, cols, uchar{0});
    const auto blobs = prepare(anatomy.blobs);
    const PreparedEllipsoid body(anatomy.body);
    const PreparedEllipsoid brain(anatomy.brain);
    const Mat3 R = s.pose.rotation();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const Vec3 p = R * slice_pixel_local(r, c, rows, cols, pixel_spacing_mm) + s.pose.t;
            s.image(r, c) =
                static_cast<float>(paint(blobs, body, anatomy.background, anatomy.tissue, p, pixel_spacing_mm));
            (*s.gt_mask)(r, c) = brain.contains(p) ? 1 : 0;
        }
    }
    return s;
}

std::vector<Volume> generate_phantom_family(const PhantomSpec& spec, int n)
{
    if (n < 2) {
        throw ValidationError("a phantom family needs at least 2 volumes");
    }
    spec.validate();
    const Anatomy canonical = canonical_anatomy(spec);
    std::vector<Volume> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const auto subject_seed = derived_seed(spec.seed, {0x5B, static_cast<std::uint64_t>(i)});
        const Anatomy subject = subject_anatomy(spec, canonical, subject_seed);
        out.push_back(voxelize(subject, spec, "vol" + std::to_string(i), derived_seed(subject_seed, {0xE0})));
    }
    return out;
}

}  // namespace fetalnav
