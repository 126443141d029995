#pragma once

#include "fetalnav/phantom.hpp"
#include "fetalnav/volume.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace fetalnav {

/// Schedule of one segmentation training stage.
struct SegStageConfig {
    std::string name;  ///< "s", "ss", "ssclass"
    int epochs = 0;
    double lr = 0.0;
    int step_size = 0;  ///< StepLR period in epochs; 0 disables decay
    double gamma = 1.0;
    bool use_unlabeled = false;
    bool use_classification = false;

    double lr_at(int epoch) const;
};

struct SegConfig {
    int input_px = 320;
    std::vector<int> encoder_widths{16, 32, 64, 128, 256};
    int batch_size = 8;
    double alpha = 0.5;
    double threshold = 0.5;
    double dice_eps = 1.0;
    SegStageConfig stage_s{"s", 50, 0.003, 0, 1.0, false, false};
    SegStageConfig stage_ss{"ss", 150, 0.008, 50, 0.5, true, false};
    SegStageConfig stage_ssclass{"ssclass", 150, 0.00003, 0, 1.0, true, true};
    bool augment = true;

    const SegStageConfig& stage(const std::string& name) const;
};

struct PoseConfig {
    int input_px = 128;
    std::vector<int> widths{64, 128, 256, 512};  ///< ResNet-18 stage widths
    int epochs = 200;
    int batch_size = 64;
    double lr = 1e-4;
    double val_fraction = 0.2;
    double lambda = 1.0;
    int dilation_px = 30;  ///< all-ones kernel, applied at segmentation resolution
    double translation_scale_mm = 20.0;
    /// > 0: train on this many independently drawn poses per training volume
    /// instead of the shared slice set, so that held-out poses are unseen.
    int fresh_poses_per_volume = 0;
};

/// A complete parameter set: "paper" carries the published values, "desk"
/// shrinks sizes and epoch counts for single-machine runs without changing ratios.
struct Profile {
    std::string name = "paper";
    PhantomSpec phantom;
    int slices_per_volume = 22029;
    int slice_px = 320;
    double slice_spacing_mm = 0.5;
    PoseBounds bounds;
    int labeled_total = 346;
    int labeled_brain = 135;
    SegConfig seg;
    PoseConfig pose;
    double frame_hz = 10.0;
    std::uint64_t seed = 7;

    static Profile paper();
    static Profile desk();
    static Profile by_name(const std::string& name);
};

nlohmann::json to_json(const Profile& p);

/// FNV-1a over the canonical JSON dump; used to tag checkpoints.
std::string config_hash(const nlohmann::json& j);

}  // namespace fetalnav
