#include "fetalnav/volume.hpp"

#include "fetalnav/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace fs = std::filesystem;

namespace fetalnav {

static_assert(std::endian::native == std::endian::little, "volume files are little-endian float32");

bool Ellipsoid::contains(const Vec3& p) const { return level(p) <= 1.0; }

double Ellipsoid::level(const Vec3& p) const
{
    const Vec3 local = rotvec_to_matrix(rotvec).transpose() * (p - center);
    return local.cwiseQuotient(semi_axes).squaredNorm();
}

PreparedEllipsoid::PreparedEllipsoid(const Ellipsoid& e)
    : Rt(rotvec_to_matrix(e.rotvec).transpose()), center(e.center), inv_axes(e.semi_axes.cwiseInverse())
{
}

double Ellipsoid::volume_mm3() const
{
    return 4.0 / 3.0 * std::numbers::pi * semi_axes.x() * semi_axes.y() * semi_axes.z();
}

Vec3 Volume::voxel_center(int i, int j, int k) const
{
    return {(i - (dims[0] - 1) / 2.0) * spacing_mm, (j - (dims[1] - 1) / 2.0) * spacing_mm,
            (k - (dims[2] - 1) / 2.0) * spacing_mm};
}

Vec3 Volume::half_extent_mm() const
{
    return {(dims[0] - 1) / 2.0 * spacing_mm, (dims[1] - 1) / 2.0 * spacing_mm, (dims[2] - 1) / 2.0 * spacing_mm};
}

void Volume::validate() const
{
    if (!(spacing_mm > 0.0) || !std::isfinite(spacing_mm)) {
        throw ValidationError("volume spacing must be positive");
    }
    for (int d : dims) {
        if (d < 2) {
            throw ValidationError("volume dims must be >= 2 along every axis");
        }
    }
    const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    if (voxels.size() != n) {
        throw ValidationError("voxel count does not match dims");
    }
    for (float x : voxels) {
        if (!std::isfinite(x) || x < 0.0f || x > 1.0f) {
            throw ValidationError("voxel values must be finite and within [0,1]");
        }
    }
}

double trilinear_sample(const Volume& v, const Vec3& p_mm)
{
    double u[3];
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        u[a] = p_mm[a] / v.spacing_mm + (v.dims[a] - 1) / 2.0;
        if (!(u[a] >= 0.0) || u[a] > v.dims[a] - 1) {
            return 0.0;
        }
        i0[a] = std::min(static_cast<int>(u[a]), v.dims[a] - 2);
        f[a] = u[a] - i0[a];
    }
    const auto at = [&](int dx, int dy, int dz) {
        return static_cast<double>(v.at(i0[0] + dx, i0[1] + dy, i0[2] + dz));
    };
    const double c00 = at(0, 0, 0) * (1 - f[0]) + at(1, 0, 0) * f[0];
    const double c10 = at(0, 1, 0) * (1 - f[0]) + at(1, 1, 0) * f[0];
    const double c01 = at(0, 0, 1) * (1 - f[0]) + at(1, 0, 1) * f[0];
    const double c11 = at(0, 1, 1) * (1 - f[0]) + at(1, 1, 1) * f[0];
    const double c0 = c00 * (1 - f[1]) + c10 * f[1];
    const double c1 = c01 * (1 - f[1]) + c11 * f[1];
    return c0 * (1 - f[2]) + c1 * f[2];
}

Vec3 slice_pixel_local(int row, int col, int rows, int cols, double pixel_spacing_mm)
{
    return {(col - (cols - 1) / 2.0) * pixel_spacing_mm, (row - (rows - 1) / 2.0) * pixel_spacing_mm, 0.0};
}

SliceSample extract_slice(const Volume& v, const Pose6D& pose, int rows, int cols, double pixel_spacing_mm)
{
    if (rows <= 0 || cols <= 0) {
        throw ValidationError("slice size must be positive");
    }
    if (!(pixel_spacing_mm > 0.0)) {
        throw ValidationError("pixel spacing must be positive");
    }
    SliceSample s;
    s.pose = validated(pose);
    s.volume_id = v.volume_id;
    s.pixel_spacing_mm = pixel_spacing_mm;
    s.image = Image(rows, cols, 0.0f);
    if (v.brain) {
        s.gt_mask = Mask(rows, cols, uchar{0});
    }
    const Mat3 R = s.pose.rotation();
    const std::optional<PreparedEllipsoid> brain = v.brain ? std::optional<PreparedEllipsoid>(*v.brain) : std::nullopt;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const Vec3 p = R * slice_pixel_local(r, c, rows, cols, pixel_spacing_mm) + s.pose.t;
            s.image(r, c) = static_cast<float>(trilinear_sample(v, p));
            if (s.gt_mask) {
                const Vec3 u = p.cwiseQuotient(v.half_extent_mm()).cwiseAbs();
                const bool inside_grid = u.maxCoeff() <= 1.0;
                (*s.gt_mask)(r, c) = (inside_grid && brain->contains(p)) ? 1 : 0;
            }
        }
    }
    return s;
}

Pose6D sample_pose(std::mt19937_64& rng, const PoseBounds& bounds)
{
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> zero_one(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Pose6D p;
    p.t = Vec3(unit(rng), unit(rng), unit(rng)) * bounds.max_offset_mm;
    Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
    while (axis.norm() < 1e-12) {
        axis = Vec3(gauss(rng), gauss(rng), gauss(rng));
    }
    const double angle = zero_one(rng) * bounds.max_angle_rad;
    p.r = canonicalize_rotvec(axis.normalized() * angle);
    return p;
}

nlohmann::json ellipsoid_to_json(const Ellipsoid& e)
{
    return {{"center_mm", {e.center.x(), e.center.y(), e.center.z()}},
            {"rotvec_rad", {e.rotvec.x(), e.rotvec.y(), e.rotvec.z()}},
            {"semi_axes_mm", {e.semi_axes.x(), e.semi_axes.y(), e.semi_axes.z()}}};
}

Ellipsoid ellipsoid_from_json(const nlohmann::json& j)
{
    const auto v3 = [&](const char* k) {
        const auto& a = j.at(k);
        return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
    };
    return {v3("center_mm"), v3("rotvec_rad"), v3("semi_axes_mm")};
}

void save_volume(const Volume& v, const std::string& dir)
{
    v.validate();
    fs::create_directories(dir);
    const fs::path raw = fs::path(dir) / (v.volume_id + ".raw");
    const fs::path meta = fs::path(dir) / (v.volume_id + ".json");
    {
        std::ofstream out(raw, std::ios::binary);
        if (!out) {
            throw IoError("cannot write " + raw.string());
        }
        out.write(reinterpret_cast<const char*>(v.voxels.data()),
                  static_cast<std::streamsize>(v.voxels.size() * sizeof(float)));
    }
    nlohmann::json j;
    j["format"] = "fetalnav-volume";
    j["version"] = 1;
    j["volume_id"] = v.volume_id;
    j["dims"] = v.dims;
    j["spacing_mm"] = v.spacing_mm;
    j["dtype"] = "float32-le";
    j["order"] = "x-fastest";
    j["raw"] = raw.filename().string();
    if (v.brain) {
        j["brain"] = ellipsoid_to_json(*v.brain);
    }
    if (v.annotation) {
        j["annotation"] = to_json(*v.annotation);
    }
    std::ofstream out(meta);
    if (!out) {
        throw IoError("cannot write " + meta.string());
    }
    out << j.dump(2) << '\n';
}

Volume load_volume(const std::string& sidecar_or_stem)
{
    fs::path meta(sidecar_or_stem);
    if (meta.extension() != ".json") {
        meta.replace_extension(".json");
    }
    std::ifstream in(meta);
    if (!in) {
        throw NotFoundError("volume sidecar not found: " + meta.string());
    }
    const auto j = nlohmann::json::parse(in);
    Volume v;
    v.volume_id = j.at("volume_id").get<std::string>();
    v.dims = j.at("dims").get<std::array<int, 3>>();
    v.spacing_mm = j.at("spacing_mm").get<double>();
    if (j.contains("brain")) {
        v.brain = ellipsoid_from_json(j.at("brain"));
    }
    if (j.contains("annotation")) {
        v.annotation = annotation_from_json(j.at("annotation"));
    }
    const fs::path raw = meta.parent_path() / j.value("raw", v.volume_id + ".raw");
    std::ifstream rin(raw, std::ios::binary);
    if (!rin) {
        throw IoError("cannot open " + raw.string());
    }
    v.voxels.resize(static_cast<std::size_t>(v.dims[0]) * v.dims[1] * v.dims[2]);
    rin.read(reinterpret_cast<char*>(v.voxels.data()), static_cast<std::streamsize>(v.voxels.size() * sizeof(float)));
    if (rin.gcount() != static_cast<std::streamsize>(v.voxels.size() * sizeof(float))) {
        throw IoError("truncated raw volume " + raw.string());
    }
    v.validate();
    return v;
}

std::vector<Volume> load_volume_dir(const std::string& dir)
{
    if (!fs::is_directory(dir)) {
        throw NotFoundError("volume directory not found: " + dir);
    }
    std::vector<fs::path> sidecars;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".json") {
            std::ifstream in(e.path());
            const auto j = nlohmann::json::parse(in, nullptr, false);
            if (!j.is_discarded() && j.value("format", "") == "fetalnav-volume") {
                sidecars.push_back(e.path());
            }
        }
    }
    std::vector<Volume> out;
    for (const auto& p : sidecars) {
        out.push_back(load_volume(p.string()));
    }
    std::sort(out.begin(), out.end(), [](const Volume& a, const Volume& b) { return a.volume_id < b.volume_id; });
    return out;
}

}  // namespace fetalnav
