#pragma once

#include "fetalnav/datasets.hpp"
#include "fetalnav/nets.hpp"
#include "fetalnav/profile.hpp"

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

namespace fetalnav {

/// Which volumes fed which loss term. The labeled corpus is recorded as "labeled".
struct LossAudit {
    std::map<std::string, std::set<std::string>> sources;  ///< term name → volume ids

    void add(const std::string& term, const std::string& volume_id) { sources[term].insert(volume_id); }
    /// Every volume that contributed to any term.
    std::set<std::string> all() const;
};

/// Inputs of one fold's segmentation training, already at network resolution.
struct SegData {
    std::vector<LabeledSample> labeled_train;
    std::vector<LabeledSample> labeled_val;
    std::vector<LabeledSample> labeled_test;
    std::shared_ptr<const SliceDataset> slices;
    FoldSpec fold;
    std::vector<PosePairedGroup> train_groups;  ///< n = |fold.train|
    std::vector<PosePairedGroup> val_groups;    ///< n = |fold.val|
};

/// Labeled splits preprocessed to `px`, plus pose groups of the fold's volumes.
SegData assemble_seg_data(const std::vector<LabeledSample>& corpus, std::shared_ptr<const SliceDataset> slices,
                          const FoldSpec& fold, int px);

struct SegEpochLog {
    std::string stage;
    int epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_labeled = 0.0;
    double loss_unlabeled = 0.0;
    double loss_classification = 0.0;
    int steps = 0;
};

/// One optimizer step: labeled batch indices (into labeled_train) with their
/// augmentations, and pose-group indices (into train_groups).
struct SegStep {
    std::vector<std::size_t> labeled;
    std::vector<AugmentParams> augment;
    std::vector<std::size_t> groups;
};

struct SegMetrics {
    double miou_labeled_test = 0.0;
    double miou_pairwise_unlabeled = 0.0;
    double class_accuracy = 0.0;
    int labeled_images = 0;
    int unlabeled_pairs = 0;
};

struct SegPrediction {
    std::vector<Image> probs;         ///< per-pixel brain probability
    std::vector<double> class_probs;  ///< brain-present probability
};

class SegTrainer {
public:
    SegTrainer(const SegConfig& cfg, std::uint64_t seed, SegData data);

    SegNet& model() { return model_; }
    const SegData& data() const { return data_; }
    const LossAudit& audit() const { return audit_; }
    const std::string& completed_stage() const { return completed_stage_; }

    /// Deterministic batch plan of one epoch.
    std::vector<SegStep> plan_epoch(const SegStageConfig& stage, int epoch) const;

    /// Trains epochs [first_epoch, last_epoch) of `stage` (last_epoch < 0 → stage.epochs).
    /// A fresh Adam optimizer is created for a stage unless one was restored.
    /// Non-finite loss → NumericError after writing a diagnostic snapshot to `snapshot_dir`.
    std::vector<SegEpochLog> train_stage(const SegStageConfig& stage, int first_epoch = 0, int last_epoch = -1,
                                         const std::string& snapshot_dir = "",
                                         const std::function<void(const SegEpochLog&)>& on_epoch = {});

    /// Walks the batch plan of a stage without touching the model and records
    /// which volumes every loss term would draw from.
    LossAudit dry_run_audit(const SegStageConfig& stage) const;

    /// Saves model, optimizer state and metadata as `<stem>.pt`, `<stem>.opt.pt`, `<stem>.json`.
    void save_checkpoint(const std::string& stem, const std::string& stage, int epochs_done,
                         const nlohmann::json& extra = {}) const;
    /// Restores model and (if present) optimizer state. Returns the metadata.
    nlohmann::json load_checkpoint(const std::string& stem, bool with_optimizer);

private:
    torch::Tensor unlabeled_batch(const std::vector<std::size_t>& group_ids, const std::vector<PosePairedGroup>& groups,
                                  std::vector<float>* class_targets, std::vector<bool>* class_valid);
    const Image& unlabeled_image(std::size_t dataset_index, bool* brain_visible);

    SegConfig cfg_;
    std::uint64_t seed_;
    SegData data_;
    SegNet model_;
    std::unique_ptr<torch::optim::Adam> optimizer_;
    std::string optimizer_stage_;
    std::string completed_stage_;
    LossAudit audit_;
    std::map<std::size_t, std::pair<Image, bool>> cache_;
};

/// Runs the network in eval mode on images already at network resolution.
SegPrediction predict_seg(SegNet& model, const std::vector<Image>& images, int batch = 16);

/// Test-set IoU (empty∩empty = 1) and pairwise IoU across pose-paired predictions.
/// Throws ValidationError when both sets are empty.
SegMetrics evaluate_miou(SegNet& model, const std::vector<LabeledSample>& test,
                         const std::vector<std::vector<Image>>& pose_groups, double threshold = 0.5);

/// Convenience: evaluates on the fold's labeled test split and validation pose groups.
SegMetrics evaluate_fold(SegNet& model, const SegData& data, int px, double threshold = 0.5);

/// Loads an inference-only segmentation network from a checkpoint stem.
SegNet load_seg_model(const std::string& stem, nlohmann::json* meta = nullptr);

/// Slice → network resolution (letterbox to square then resize).
Image to_seg_input(const Image& img, int px);

}  // namespace fetalnav
