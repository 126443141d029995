#include "fetalnav/profile.hpp"

#include "fetalnav/errors.hpp"

#include <cmath>
#include <cstdio>

namespace fetalnav {

double SegStageConfig::lr_at(int epoch) const
{
    if (step_size <= 0) {
        return lr;
    }
    return lr * std::pow(gamma, epoch / step_size);
}

const SegStageConfig& SegConfig::stage(const std::string& name) const
{
    if (name == "s") {
        return stage_s;
    }
    if (name == "ss") {
        return stage_ss;
    }
    if (name == "ssclass") {
        return stage_ssclass;
    }
    throw ValidationError("unknown segmentation stage '" + name + "' (expected s, ss or ssclass)");
}

Profile Profile::paper()
{
    Profile p;
    p.name = "paper";
    // 249 x 174 x 155 mm at 0.5 mm isotropic.
    p.phantom.dims = {498, 348, 310};
    p.phantom.spacing_mm = 0.5;
    // Same speckle grain in mm as 3 passes at 1 mm.
    p.phantom.speckle_passes = 12;
    return p;
}

Profile Profile::desk()
{
    Profile p;
    p.name = "desk";
    p.phantom.dims = {128, 96, 96};
    p.phantom.spacing_mm = 1.0;
    p.slices_per_volume = 512;
    p.slice_px = 96;
    p.slice_spacing_mm = 1.0;

    p.seg.input_px = 64;
    p.seg.encoder_widths = {8, 16, 32, 48, 64};
    p.seg.stage_s.epochs = 5;
    p.seg.stage_ss.epochs = 15;
    p.seg.stage_ss.step_size = 5;
    p.seg.stage_ssclass.epochs = 15;

    p.pose.input_px = 64;
    p.pose.widths = {16, 32, 64, 128};
    p.pose.epochs = 20;
    // Same physical extent as 30 px at 320 px.
    p.pose.dilation_px = 6;
    // 512 shared poses are too sparse in 6-DOF for the regressor to generalize.
    p.pose.fresh_poses_per_volume = 2048;
    return p;
}

Profile Profile::by_name(const std::string& name)
{
    if (name == "paper") {
        return paper();
    }
    if (name == "desk") {
        return desk();
    }
    throw ValidationError("unknown profile '" + name + "' (expected paper or desk)");
}

namespace {

nlohmann::json stage_json(const SegStageConfig& s)
{
    return {{"name", s.name},       {"epochs", s.epochs},
            {"lr", s.lr},           {"step_size", s.step_size},
            {"gamma", s.gamma},     {"use_unlabeled", s.use_unlabeled},
            {"use_classification", s.use_classification}};
}

}  // namespace

nlohmann::json to_json(const Profile& p)
{
    return {
        {"name", p.name},
        {"phantom", to_json(p.phantom)},
        {"slices_per_volume", p.slices_per_volume},
        {"slice_px", p.slice_px},
        {"slice_spacing_mm", p.slice_spacing_mm},
        {"bounds", {{"max_offset_mm", p.bounds.max_offset_mm}, {"max_angle_rad", p.bounds.max_angle_rad}}},
        {"labeled_total", p.labeled_total},
        {"labeled_brain", p.labeled_brain},
        {"seg",
         {{"input_px", p.seg.input_px},
          {"encoder_widths", p.seg.encoder_widths},
          {"batch_size", p.seg.batch_size},
          {"alpha", p.seg.alpha},
          {"threshold", p.seg.threshold},
          {"dice_eps", p.seg.dice_eps},
          {"augment", p.seg.augment},
          {"stages", {stage_json(p.seg.stage_s), stage_json(p.seg.stage_ss), stage_json(p.seg.stage_ssclass)}}}},
        {"pose",
         {{"input_px", p.pose.input_px},
          {"widths", p.pose.widths},
          {"epochs", p.pose.epochs},
          {"batch_size", p.pose.batch_size},
          {"lr", p.pose.lr},
          {"val_fraction", p.pose.val_fraction},
          {"lambda", p.pose.lambda},
          {"dilation_px", p.pose.dilation_px},
          {"translation_scale_mm", p.pose.translation_scale_mm},
          {"fresh_poses_per_volume", p.pose.fresh_poses_per_volume}}},
        {"frame_hz", p.frame_hz},
        {"seed", p.seed},
    };
}

std::string config_hash(const nlohmann::json& j)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : j.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace fetalnav
