#pragma once

#include "fetalnav/datasets.hpp"
#include "fetalnav/pose_model.hpp"
#include "fetalnav/profile.hpp"
#include "fetalnav/seg_model.hpp"

#include <functional>
#include <string>

namespace fetalnav {

using LogFn = std::function<void(const std::string&)>;

/// Directory layout shared by the CLI, the service and the acceptance run:
///   volumes/ slices/ labeled/ folds.json models/fold<K>/ eval/fold<K>/
struct Workspace {
    std::string root;
    Profile profile;

    std::string volumes_dir() const;
    std::string slices_dir() const;
    std::string labeled_dir() const;
    std::string folds_path() const;
    std::string models_dir() const;
    std::string model_dir(int fold) const;
    std::string eval_dir(int fold) const;
    std::string seg_stem(int fold, const std::string& stage) const;
    std::string pose_stem(int fold, MaskMode masks) const;
};

Workspace open_workspace(const std::string& root, const std::string& profile_name);

/// Generates n registered phantoms into out_dir; returns their ids.
std::vector<std::string> phantom_generate(const Profile& p, int n, std::uint64_t seed, const std::string& out_dir);

/// Pose-paired slices of every volume in volumes_dir.
void dataset_slice(const Profile& p, const std::string& volumes_dir, int per_volume, std::uint64_t seed,
                   const std::string& out_dir);

/// Synthetic labeled 2D corpus with its train/val/test split.
void dataset_labeled(const Profile& p, const std::string& out_dir);

/// LOOCV folds over the volume ids of volumes_dir.
std::vector<FoldSpec> dataset_folds(const std::string& volumes_dir, const std::string& out_path);

/// Loads folds.json, creating it from the volumes when missing.
std::vector<FoldSpec> workspace_folds(const Workspace& ws);

/// Trains one segmentation stage of a fold. Stages after "s" start from the
/// previous stage's checkpoint. With resume, continues from `<stage>_last`.
nlohmann::json seg_train(const Workspace& ws, int fold, const std::string& stage, bool resume, const LogFn& log = {});
nlohmann::json seg_eval(const Workspace& ws, int fold, const std::string& stage);

/// Which volumes each loss term would draw from, for every fold and stage.
nlohmann::json loocv_audit(const Workspace& ws);

/// Volumes whose slices feed pose training of a fold (never the held-out one).
std::vector<std::string> pose_training_volumes(const FoldSpec& fold);

/// Trains the pose regressor of a fold on slices masked by that fold's final
/// segmentation model (or unmasked, same slices).
nlohmann::json pose_train(const Workspace& ws, int fold, MaskMode masks, bool resume, const LogFn& log = {});
/// Held-out volume evaluation; writes eval/fold<K>/pose_<masks>.csv and .json.
nlohmann::json pose_eval(const Workspace& ws, int fold, MaskMode masks);
/// Pools the per-fold CSVs present on disk; per-fold breakdown included.
nlohmann::json pose_pool(const Workspace& ws, MaskMode masks);

/// Approach sweep through volume_id toward its annotation: frames, stream.json,
/// poses.jsonl (true poses) and events.json.
nlohmann::json stream_synth(const Workspace& ws, const std::string& volume_id, int frames, double fps,
                            const std::string& out_dir);

struct PipelineRunOptions {
    std::string stream;
    int fold = 0;
    std::string annotation;
    std::string events;
    std::string out_dir;
    std::string labels;  ///< optional external per-frame labels
    std::string truth;   ///< optional poses.jsonl with the true pose of each native frame
    MaskMode masks = MaskMode::Pred;
    double hz = 10.0;
};
nlohmann::json pipeline_run(const Workspace& ws, const PipelineRunOptions& opt);

/// Writes an annotation file for a volume (the volume must exist).
void annotate(const std::string& volume_path, const Pose6D& pose, const std::string& label, const std::string& out);

}  // namespace fetalnav
