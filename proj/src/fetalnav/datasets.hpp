#pragma once

#include "fetalnav/phantom.hpp"
#include "fetalnav/profile.hpp"
#include "fetalnav/volume.hpp"

#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace fetalnav {

enum class ClassLabel { Brain, NotBrain };
enum class Split { Train, Val, Test };

std::string to_string(ClassLabel c);
std::string to_string(Split s);
ClassLabel class_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct LabeledSample {
    std::string name;
    Image image;
    Mask mask;  ///< all-zero for NotBrain
    ClassLabel label = ClassLabel::Brain;
    Split split = Split::Train;
};

// ---------------------------------------------------------------------------
// Labeled corpus

struct LabeledCorpusSpec {
    int total = 346;
    int brain = 135;
    int rows = 96;
    int cols = 128;  ///< wider than tall; preprocessing crops to square
    double pixel_spacing_mm = 1.0;
    std::uint64_t seed = 11;
    int subjects = 42;
    PhantomSpec anatomy;  ///< template for the per-subject brains
};

LabeledCorpusSpec labeled_spec_for(const Profile& p);

/// Synthetic stand-in for labeled 2D scans: near-SP brain views of many
/// independent subjects plus abdomen/femur views with empty masks.
std::vector<LabeledSample> generate_labeled_corpus(const LabeledCorpusSpec& spec);

/// Stratified split with train/val/test fractions 205/346 and 53/346 (rest to test);
/// deterministic in `seed`. Requires >= 10 samples and both classes.
void split_labeled(std::vector<LabeledSample>& corpus, std::uint64_t seed);

/// images/*.png, masks/*.png (0/255) and labels.csv (filename,class,split).
void save_labeled_corpus(const std::vector<LabeledSample>& corpus, const std::string& dir);
std::vector<LabeledSample> load_labeled_corpus(const std::string& dir);

/// Center-crop to square, resize to `px`. Masks follow with nearest-neighbour.
LabeledSample preprocess_labeled(const LabeledSample& s, int px);

// ---------------------------------------------------------------------------
// Folds

struct FoldSpec {
    int fold_id = 0;
    std::string held_out;
    std::vector<std::string> train;  ///< 3 ids
    std::vector<std::string> val;    ///< 2 ids

    std::vector<std::string> non_held_out() const;
};

/// Exactly 6 distinct ids. Fold k holds out ids[k]; the remaining five, taken in
/// cyclic order after k, give 3 train and 2 val volumes.
std::vector<FoldSpec> make_folds(const std::vector<std::string>& volume_ids);
void save_folds(const std::vector<FoldSpec>& folds, const std::string& path);
std::vector<FoldSpec> load_folds(const std::string& path);
const FoldSpec& fold_by_id(const std::vector<FoldSpec>& folds, int fold_id);

// ---------------------------------------------------------------------------
// Pose-paired slice dataset

struct SliceRecord {
    int pose_id = 0;
    std::string volume_id;
    Pose6D pose;
    std::string image_file;  ///< relative to the dataset root; empty for in-memory data
    std::string mask_file;
    bool brain_visible = false;  ///< gt mask non-empty
};

class SliceDataset {
public:
    SliceDataset() = default;

    /// Reads index.jsonl under `root`; images are loaded on demand.
    static SliceDataset open(const std::string& root);

    /// Slices every volume at the same `count` poses (pose k drawn from (seed, k)),
    /// keeping everything in memory. Images are 8-bit quantized like the file format.
    static SliceDataset generate(const std::vector<Volume>& volumes, int count, const PoseBounds& bounds, int px,
                                 double spacing_mm, std::uint64_t seed);

    /// Same as generate() but writes PNGs and index.jsonl under `out_dir`.
    static SliceDataset write(const std::vector<Volume>& volumes, int count, const PoseBounds& bounds, int px,
                              double spacing_mm, std::uint64_t seed, const std::string& out_dir);

    std::size_t size() const { return records_.size(); }
    const SliceRecord& record(std::size_t i) const { return records_.at(i); }
    const std::vector<SliceRecord>& records() const { return records_; }

    /// Image and gt mask of record i.
    SliceSample load(std::size_t i) const;

    std::vector<std::size_t> indices_for(const std::set<std::string>& volume_ids) const;

private:
    std::string root_;
    std::vector<SliceRecord> records_;
    std::vector<Image> images_;  ///< in-memory mode
    std::vector<Mask> masks_;
};

std::uint64_t pose_seed(std::uint64_t seed, int pose_id);

struct PosePairedGroup {
    int pose_id = 0;
    Pose6D pose;
    std::vector<std::size_t> members;  ///< dataset indices, one per volume, ordered by volume id
};

/// Groups records of the given volumes by pose id. Only poses present in every
/// listed volume form a group, so group size == volume_ids.size().
std::vector<PosePairedGroup> make_pose_groups(const SliceDataset& ds, const std::vector<std::string>& volume_ids);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentRanges {
    double flip_prob = 0.5;
    double rotate_prob = 0.5;
    double max_rotate_deg = 15.0;
    double noise_prob = 0.5;
    double max_noise_sigma = 0.05;
    double elastic_prob = 0.3;
    double max_elastic_alpha_px = 20.0;
    double elastic_sigma_px = 4.0;
    double photometric_prob = 0.5;
    double max_brightness = 0.2;
    double max_contrast = 0.2;
};

struct AugmentParams {
    bool flip = false;
    double rotate_deg = 0.0;
    double elastic_alpha_px = 0.0;
    double elastic_sigma_px = 4.0;
    std::uint64_t elastic_seed = 0;
    double noise_sigma = 0.0;
    std::uint64_t noise_seed = 0;
    double brightness = 1.0;
    double contrast = 1.0;

    bool is_identity() const;
};

AugmentParams draw_augment(std::mt19937_64& rng, const AugmentRanges& ranges = {});

/// Geometric part only (flip → rotate → elastic). Images use bilinear, masks nearest.
Image apply_geometric(const AugmentParams& p, const Image& img);
Mask apply_geometric(const AugmentParams& p, const Mask& m);
/// Photometric part only: contrast around the mean, brightness gain, Gaussian noise; clamped to [0,1].
Image apply_photometric(const AugmentParams& p, const Image& img);

LabeledSample augment(const LabeledSample& s, const AugmentParams& p);
LabeledSample augment(const LabeledSample& s, std::mt19937_64& rng, const AugmentRanges& ranges = {});

}  // namespace fetalnav
