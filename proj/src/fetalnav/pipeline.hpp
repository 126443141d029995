#pragma once

#include "fetalnav/geometry.hpp"
#include "fetalnav/nets.hpp"
#include "fetalnav/pose_model.hpp"
#include "fetalnav/volume.hpp"

#include <opencv2/core.hpp>

#include <optional>
#include <string>
#include <vector>

namespace fetalnav {

struct Frame {
    double timestamp = 0.0;  ///< seconds
    Image image;
};

/// Source frame indices sampled at `hz` from a stream of `n_native` frames at
/// `native_fps`: floor(duration·hz)+1 frames, duration = (n_native-1)/native_fps.
std::vector<std::size_t> frame_schedule(std::size_t n_native, double native_fps, double hz);

/// Reads a directory of numbered PNG frames (frame rate from stream.json, default
/// 10 fps) or any container OpenCV can decode, resampled at `hz`.
std::vector<Frame> extract_frames(const std::string& stream, double hz = 10.0);

/// Writes frames as %06d.png plus stream.json {"v":1,"fps":...}.
void write_frame_dir(const std::vector<Image>& frames, double fps, const std::string& dir);

/// Segmentation + pose networks of one fold, with the settings saved next to them.
struct PipelineModels {
    SegNet seg{nullptr};
    PoseNet pose{nullptr};
    int seg_px = 0;
    int pose_px = 0;
    int dilation_px = 0;
    double threshold = 0.5;
    MaskMode masks = MaskMode::Pred;
};

PipelineModels load_pipeline_models(const std::string& seg_stem, const std::string& pose_stem);

struct FrameRecord {
    int index = 0;
    double timestamp = 0.0;
    Image image;
    double brain_prob = 0.0;
    bool brain_present = false;
    bool failed = false;
    std::string error;
    std::optional<Mask> mask;  ///< at segmentation resolution
    std::optional<Pose6D> pose;
    std::optional<Proximity> proximity;
};

/// classify → segment → mask → pose → proximity for one frame. Failures are
/// reported in the record instead of thrown.
FrameRecord process_frame(PipelineModels& models, const Image& image, double timestamp,
                          const PlaneAnnotation& annotation, int index = 0);

std::vector<FrameRecord> run_pipeline(const std::vector<Frame>& frames, PipelineModels& models,
                                      const PlaneAnnotation& annotation);

struct ScanEvent {
    enum class Kind { Freeze, Unfreeze, Score };
    double timestamp = 0.0;
    Kind kind = Kind::Freeze;
    std::optional<double> score;
    std::string text;
};

std::string to_string(ScanEvent::Kind k);
ScanEvent::Kind event_kind_from_string(const std::string& s);

/// {"v":1,"events":[{"t":..,"kind":"freeze",...}]}. Timestamps must lie in [0, duration].
std::vector<ScanEvent> load_events(const std::string& path, double duration);
void save_events(const std::vector<ScanEvent>& events, const std::string& path);

/// Optional external per-frame labels (CSV "timestamp,label") drawn as an overlay strip.
struct FrameLabel {
    double timestamp = 0.0;
    std::string label;
};
std::vector<FrameLabel> load_frame_labels(const std::string& path);

std::string trace_csv(const std::vector<FrameRecord>& records);

struct TracePlot {
    cv::Mat3b image;
    std::vector<int> marker_columns;  ///< x pixel of each event marker, in event order
};
TracePlot render_trace(const std::vector<FrameRecord>& records, const std::vector<ScanEvent>& events,
                       const std::vector<FrameLabel>& labels = {});

nlohmann::json record_json(const FrameRecord& r);

/// trace.csv, trace.png and records.jsonl under out_dir.
void emit_trace(const std::vector<FrameRecord>& records, const std::vector<ScanEvent>& events,
                const std::string& out_dir, const std::vector<FrameLabel>& labels = {});

/// Straight-line probe sweep from `start` to `target`: translation interpolated
/// linearly, rotation along the geodesic. n ≥ 2 poses, the last one equal to target.
std::vector<Pose6D> approach_path(const Pose6D& start, const Pose6D& target, int n);

/// Spearman rank correlation (average ranks for ties). Needs ≥ 2 points.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace fetalnav
