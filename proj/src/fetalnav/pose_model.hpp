#pragma once

#include "fetalnav/datasets.hpp"
#include "fetalnav/geometry.hpp"
#include "fetalnav/nets.hpp"
#include "fetalnav/profile.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fetalnav {

/// Image multiplied by the mask dilated with a kernel_px × kernel_px all-ones
/// element, at the input resolution. nullopt when the mask is empty (no brain).
std::optional<Image> apply_dilated_mask(const Image& image, const Mask& mask, int kernel_px);

/// apply_dilated_mask followed by a resize to out_px × out_px.
std::optional<Image> mask_and_prepare(const Image& image, const Mask& mask, int kernel_px, int out_px);

enum class MaskMode { Pred, None };
std::string to_string(MaskMode m);
MaskMode mask_mode_from_string(const std::string& s);

/// What the segmentation stage says about one frame.
struct FrameAnalysis {
    Image seg_input;  ///< letterboxed, at segmentation resolution
    Image probs;
    Mask mask;
    double brain_prob = 0.0;
    bool brain_present = false;  ///< classifier ≥ threshold and a non-empty mask
};

std::vector<FrameAnalysis> analyze_frames(SegNet& seg, const std::vector<Image>& frames, int seg_px,
                                          double threshold, int batch = 16);

struct PoseSample {
    Image input;  ///< pose-network resolution
    Pose6D pose;
    std::string volume_id;
    int pose_id = 0;
};

/// Pose-network inputs for both ablation arms, built from the same slices.
struct PoseInputs {
    std::vector<PoseSample> masked;
    std::vector<PoseSample> unmasked;
    std::size_t skipped = 0;  ///< slices judged brain-free by the segmentation model
};

/// Runs `seg` on every listed slice. Slices it calls brain-free are dropped from
/// both arms, so the arms always see identical slices.
PoseInputs build_pose_inputs(SegNet& seg, const SliceDataset& ds, const std::vector<std::size_t>& indices,
                             const SegConfig& seg_cfg, const PoseConfig& pose_cfg);

struct PoseEpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double train_translation = 0.0;
    double train_rotation = 0.0;
    double val_loss = 0.0;
    double val_translation = 0.0;
    double val_rotation = 0.0;
    int steps = 0;
};

/// Seeded split of n items: (train, validation) with round(n·fraction) validation items.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> validation_split(std::size_t n, double fraction,
                                                                               std::uint64_t seed);

class PoseTrainer {
public:
    PoseTrainer(const PoseConfig& cfg, std::uint64_t seed);

    PoseNet& model() { return model_; }
    const PoseConfig& config() const { return cfg_; }

    /// Trains epochs [first_epoch, last_epoch) (last_epoch < 0 → cfg.epochs) on the
    /// train part of a seeded validation split of `samples`.
    std::vector<PoseEpochLog> train(const std::vector<PoseSample>& samples, int first_epoch = 0, int last_epoch = -1,
                                    const std::string& snapshot_dir = "",
                                    const std::function<void(const PoseEpochLog&)>& on_epoch = {});

    void save_checkpoint(const std::string& stem, int epochs_done, const nlohmann::json& extra = {}) const;
    nlohmann::json load_checkpoint(const std::string& stem, bool with_optimizer);

private:
    PoseConfig cfg_;
    std::uint64_t seed_;
    PoseNet model_;
    std::unique_ptr<torch::optim::Adam> optimizer_;
};

/// [9] network output → pose. Throws DegenerateRepresentationError on a degenerate Rot6D.
Pose6D pose_from_output(const float* out9);

std::vector<Pose6D> predict_pose(PoseNet& model, const std::vector<Image>& inputs, int batch = 32);

struct ErrorStats {
    double median = 0.0;
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
};
/// Throws ValidationError on an empty set. Even counts take the midpoint median.
ErrorStats error_stats(std::vector<double> values);

struct SliceError {
    std::string volume_id;
    int pose_id = 0;
    double trans_mm = 0.0;
    double rot_deg = 0.0;  ///< folded normal angle
    double rot_deg_unfolded = 0.0;
    double geodesic_deg = 0.0;
};

struct PoseEvaluation {
    std::vector<SliceError> slices;
    ErrorStats trans;
    ErrorStats rot;
    ErrorStats rot_unfolded;
};

PoseEvaluation summarize_errors(std::vector<SliceError> slices);
PoseEvaluation evaluate_pose(PoseNet& model, const std::vector<PoseSample>& heldout);

nlohmann::json to_json(const ErrorStats& s);
nlohmann::json summary_json(const PoseEvaluation& e);
/// Per-slice CSV: volume_id,pose_id,trans_mm,rot_deg,rot_deg_unfolded,geodesic_deg
void write_slice_errors_csv(const PoseEvaluation& e, const std::string& path);
std::vector<SliceError> read_slice_errors_csv(const std::string& path);

PoseNet load_pose_model(const std::string& stem, nlohmann::json* meta = nullptr);

}  // namespace fetalnav
