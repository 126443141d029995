#include "fetalnav/pose_model.hpp"

#include "fetalnav/errors.hpp"
#include "fetalnav/image.hpp"
#include "fetalnav/losses.hpp"
#include "fetalnav/rng.hpp"
#include "fetalnav/seg_model.hpp"
#include "fetalnav/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace fetalnav {

namespace {

constexpr int kCheckpointVersion = 1;

struct Batch {
    torch::Tensor x;
    torch::Tensor t;
    torch::Tensor R;
};

Batch make_batch(const std::vector<PoseSample>& samples, const std::vector<std::size_t>& idx, std::size_t begin,
                 std::size_t end)
{
    std::vector<const Image*> imgs;
    auto t = torch::empty({static_cast<int64_t>(end - begin), 3}, torch::kFloat32);
    auto R = torch::empty({static_cast<int64_t>(end - begin), 3, 3}, torch::kFloat32);
    auto ta = t.accessor<float, 2>();
    auto Ra = R.accessor<float, 3>();
    for (std::size_t k = begin; k < end; ++k) {
        const auto& s = samples[idx[k]];
        imgs.push_back(&s.input);
        const Mat3 rot = s.pose.rotation();
        const auto row = static_cast<int64_t>(k - begin);
        for (int i = 0; i < 3; ++i) {
            ta[row][i] = static_cast<float>(s.pose.t[i]);
            for (int j = 0; j < 3; ++j) {
                Ra[row][i][j] = static_cast<float>(rot(i, j));
            }
        }
    }
    return {images_to_tensor(imgs), t, R};
}

}  // namespace

std::optional<Image> apply_dilated_mask(const Image& image, const Mask& mask, int kernel_px)
{
    if (image.size() != mask.size()) {
        throw ValidationError("mask and image sizes differ");
    }
    if (kernel_px < 1) {
        throw ValidationError("dilation kernel must be at least 1 px");
    }
    if (cv::countNonZero(mask) == 0) {
        return std::nullopt;
    }
    const Mask d = dilate_square(mask, kernel_px);
    Image out;
    d.convertTo(out, CV_32F);
    return Image(image.mul(out));
}

std::optional<Image> mask_and_prepare(const Image& image, const Mask& mask, int kernel_px, int out_px)
{
    auto masked = apply_dilated_mask(image, mask, kernel_px);
    if (!masked) {
        return std::nullopt;
    }
    return resize_linear(*masked, out_px);
}

std::string to_string(MaskMode m)
{
    return m == MaskMode::Pred ? "pred" : "none";
}

MaskMode mask_mode_from_string(const std::string& s)
{
    if (s == "pred") {
        return MaskMode::Pred;
    }
    if (s == "none") {
        return MaskMode::None;
    }
    throw ValidationError("mask mode must be 'pred' or 'none', got '" + s + "'");
}

std::vector<FrameAnalysis> analyze_frames(SegNet& seg, const std::vector<Image>& frames, int seg_px, double thr,
                                          int batch)
{
    std::vector<FrameAnalysis> out(frames.size());
    std::vector<Image> inputs;
    inputs.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        out[i].seg_input = to_seg_input(frames[i], seg_px);
        inputs.push_back(out[i].seg_input);
    }
    const auto pred = predict_seg(seg, inputs, batch);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        out[i].probs = pred.probs[i];
        out[i].brain_prob = pred.class_probs[i];
        out[i].mask = threshold(pred.probs[i], thr);
        out[i].brain_present = out[i].brain_prob >= thr && cv::countNonZero(out[i].mask) > 0;
    }
    return out;
}

PoseInputs build_pose_inputs(SegNet& seg, const SliceDataset& ds, const std::vector<std::size_t>& indices,
                             const SegConfig& seg_cfg, const PoseConfig& pose_cfg)
{
    PoseInputs res;
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < indices.size(); start += kChunk) {
        const std::size_t end = std::min(indices.size(), start + kChunk);
        std::vector<Image> frames;
        for (std::size_t k = start; k < end; ++k) {
            frames.push_back(ds.load(indices[k]).image);
        }
        const auto analysis = analyze_frames(seg, frames, seg_cfg.input_px, seg_cfg.threshold);
        for (std::size_t k = start; k < end; ++k) {
            const auto& a = analysis[k - start];
            if (!a.brain_present) {
                ++res.skipped;
                continue;
            }
            const auto& rec = ds.record(indices[k]);
            PoseSample s;
            s.pose = rec.pose;
            s.volume_id = rec.volume_id;
            s.pose_id = rec.pose_id;
            s.input = *mask_and_prepare(a.seg_input, a.mask, pose_cfg.dilation_px, pose_cfg.input_px);
            res.masked.push_back(s);
            s.input = resize_linear(a.seg_input, pose_cfg.input_px);
            res.unmasked.push_back(std::move(s));
        }
    }
    return res;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> validation_split(std::size_t n, double fraction,
                                                                               std::uint64_t seed)
{
    if (fraction < 0.0 || fraction >= 1.0) {
        throw ValidationError("validation fraction must lie in [0, 1)");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = derived_rng(seed, {0x5e11});
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
    std::vector<std::size_t> val(idx.begin(), idx.begin() + n_val);
    std::vector<std::size_t> train(idx.begin() + n_val, idx.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return {train, val};
}

PoseTrainer::PoseTrainer(const PoseConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed), model_(nullptr)
{
    configure_torch_determinism(derived_seed(seed, {0x2020}));
    model_ = PoseNet(cfg_.widths, cfg_.translation_scale_mm);
    optimizer_ = std::make_unique<torch::optim::Adam>(model_->parameters(), torch::optim::AdamOptions(cfg_.lr));
}

std::vector<PoseEpochLog> PoseTrainer::train(const std::vector<PoseSample>& samples, int first_epoch, int last_epoch,
                                             const std::string& snapshot_dir,
                                             const std::function<void(const PoseEpochLog&)>& on_epoch)
{
    if (samples.size() < 2) {
        throw ValidationError("pose training needs at least two samples");
    }
    if (last_epoch < 0) {
        last_epoch = cfg_.epochs;
    }
    auto [train_idx, val_idx] = validation_split(samples.size(), cfg_.val_fraction, seed_);
    const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
    std::vector<PoseEpochLog> logs;
    for (int epoch = first_epoch; epoch < last_epoch; ++epoch) {
        PoseEpochLog log;
        log.epoch = epoch;
        auto order = train_idx;
        auto rng = derived_rng(seed_, {0x90, static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), rng);
        model_->train();
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            const auto b = make_batch(samples, order, start, end);
            const auto terms = loss_pose(model_->forward(b.x), b.t, b.R, cfg_.lambda);
            const double total = terms.total.item<double>();
            if (!std::isfinite(total)) {
                std::string snap;
                if (!snapshot_dir.empty()) {
                    fs::create_directories(snapshot_dir);
                    snap = (fs::path(snapshot_dir) / "nan_snapshot").string();
                    std::ofstream(snap + ".json") << nlohmann::json{{"epoch", epoch},
                                                                    {"step", log.steps},
                                                                    {"translation", terms.translation.item<double>()},
                                                                    {"rotation", terms.rotation.item<double>()}}
                                                         .dump(2);
                    torch::save(model_, snap + ".pt");
                }
                throw NumericError("non-finite pose loss at epoch " + std::to_string(epoch), snap);
            }
            optimizer_->zero_grad();
            terms.total.backward();
            optimizer_->step();
            log.train_loss += total;
            log.train_translation += terms.translation.item<double>();
            log.train_rotation += terms.rotation.item<double>();
            ++log.steps;
        }
        if (log.steps > 0) {
            log.train_loss /= log.steps;
            log.train_translation /= log.steps;
            log.train_rotation /= log.steps;
        }
        if (!val_idx.empty()) {
            torch::NoGradGuard no_grad;
            model_->eval();
            double n = 0.0;
            for (std::size_t start = 0; start < val_idx.size(); start += bs) {
                const std::size_t end = std::min(val_idx.size(), start + bs);
                const auto b = make_batch(samples, val_idx, start, end);
                const auto terms = loss_pose(model_->forward(b.x), b.t, b.R, cfg_.lambda);
                const double w = static_cast<double>(end - start);
                log.val_loss += terms.total.item<double>() * w;
                log.val_translation += terms.translation.item<double>() * w;
                log.val_rotation += terms.rotation.item<double>() * w;
                n += w;
            }
            log.val_loss /= n;
            log.val_translation /= n;
            log.val_rotation /= n;
        }
        logs.push_back(log);
        if (on_epoch) {
            on_epoch(log);
        }
    }
    return logs;
}

void PoseTrainer::save_checkpoint(const std::string& stem, int epochs_done, const nlohmann::json& extra) const
{
    fs::create_directories(fs::path(stem).parent_path());
    torch::save(model_, stem + ".pt");
    torch::save(*optimizer_, stem + ".opt.pt");
    nlohmann::json meta = extra;
    meta["format"] = "fetalnav-pose-checkpoint";
    meta["version"] = kCheckpointVersion;
    meta["epochs_done"] = epochs_done;
    meta["widths"] = cfg_.widths;
    meta["input_px"] = cfg_.input_px;
    meta["dilation_px"] = cfg_.dilation_px;
    meta["translation_scale_mm"] = cfg_.translation_scale_mm;
    std::ofstream(stem + ".json") << meta.dump(2) << '\n';
}

nlohmann::json PoseTrainer::load_checkpoint(const std::string& stem, bool with_optimizer)
{
    std::ifstream in(stem + ".json");
    if (!in) {
        throw NotFoundError("pose checkpoint not found: " + stem);
    }
    const auto meta = nlohmann::json::parse(in);
    if (meta.value("format", "") != "fetalnav-pose-checkpoint") {
        throw ValidationError("not a pose checkpoint: " + stem);
    }
    if (meta.at("widths").get<std::vector<int>>() != cfg_.widths) {
        throw ValidationError("checkpoint widths do not match the configuration");
    }
    torch::load(model_, stem + ".pt");
    if (with_optimizer && fs::exists(stem + ".opt.pt")) {
        torch::load(*optimizer_, stem + ".opt.pt");
    }
    return meta;
}

Pose6D pose_from_output(const float* o)
{
    Pose6D p;
    p.t = Vec3(o[0], o[1], o[2]);
    const Rot6D g{Vec3(o[3], o[4], o[5]), Vec3(o[6], o[7], o[8])};
    p.r = matrix_to_rotvec(rot6d_to_matrix(g));
    return p;
}

std::vector<Pose6D> predict_pose(PoseNet& model, const std::vector<Image>& inputs, int batch)
{
    torch::NoGradGuard no_grad;
    model->eval();
    std::vector<Pose6D> out;
    out.reserve(inputs.size());
    for (std::size_t start = 0; start < inputs.size(); start += batch) {
        const std::size_t end = std::min(inputs.size(), start + batch);
        std::vector<const Image*> chunk;
        for (std::size_t i = start; i < end; ++i) {
            chunk.push_back(&inputs[i]);
        }
        const auto y = model->forward(images_to_tensor(chunk)).contiguous();
        const float* p = y.data_ptr<float>();
        for (int64_t b = 0; b < y.size(0); ++b) {
            out.push_back(pose_from_output(p + 9 * b));
        }
    }
    return out;
}

ErrorStats error_stats(std::vector<double> v)
{
    if (v.empty()) {
        throw ValidationError("error statistics of an empty set");
    }
    std::sort(v.begin(), v.end());
    ErrorStats s;
    const std::size_t n = v.size();
    s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
    s.min = v.front();
    s.max = v.back();
    return s;
}

PoseEvaluation summarize_errors(std::vector<SliceError> slices)
{
    PoseEvaluation e;
    std::vector<double> t, r, ru;
    for (const auto& s : slices) {
        t.push_back(s.trans_mm);
        r.push_back(s.rot_deg);
        ru.push_back(s.rot_deg_unfolded);
    }
    e.trans = error_stats(t);
    e.rot = error_stats(r);
    e.rot_unfolded = error_stats(ru);
    e.slices = std::move(slices);
    return e;
}

PoseEvaluation evaluate_pose(PoseNet& model, const std::vector<PoseSample>& heldout)
{
    if (heldout.empty()) {
        throw ValidationError("evaluate_pose: empty held-out set");
    }
    std::vector<Image> inputs;
    for (const auto& s : heldout) {
        inputs.push_back(s.input);
    }
    const auto preds = predict_pose(model, inputs);
    std::vector<SliceError> errs;
    for (std::size_t i = 0; i < heldout.size(); ++i) {
        const auto px = proximity(preds[i], heldout[i].pose);
        errs.push_back({heldout[i].volume_id, heldout[i].pose_id, px.trans_mm, px.rot_deg, px.rot_deg_unfolded,
                        px.geodesic_deg});
    }
    return summarize_errors(std::move(errs));
}

nlohmann::json to_json(const ErrorStats& s)
{
    return {{"median", s.median}, {"mean", s.mean}, {"min", s.min}, {"max", s.max}};
}

nlohmann::json summary_json(const PoseEvaluation& e)
{
    return {{"count", e.slices.size()},
            {"translation_mm", to_json(e.trans)},
            {"rotation_deg", to_json(e.rot)},
            {"rotation_deg_unfolded", to_json(e.rot_unfolded)}};
}

void write_slice_errors_csv(const PoseEvaluation& e, const std::string& path)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << "volume_id,pose_id,trans_mm,rot_deg,rot_deg_unfolded,geodesic_deg\n";
    char buf[160];
    for (const auto& s : e.slices) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f\n", s.pose_id, s.trans_mm, s.rot_deg,
                      s.rot_deg_unfolded, s.geodesic_deg);
        out << s.volume_id << ',' << buf;
    }
}

std::vector<SliceError> read_slice_errors_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw NotFoundError("cannot read " + path);
    }
    std::string line;
    std::getline(in, line);
    std::vector<SliceError> out;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string f;
        SliceError e;
        std::getline(ss, e.volume_id, ',');
        std::getline(ss, f, ',');
        e.pose_id = std::stoi(f);
        double* dst[] = {&e.trans_mm, &e.rot_deg, &e.rot_deg_unfolded, &e.geodesic_deg};
        for (double* d : dst) {
            if (!std::getline(ss, f, ',')) {
                throw ValidationError("malformed error CSV row in " + path);
            }
            *d = std::stod(f);
        }
        out.push_back(std::move(e));
    }
    return out;
}

PoseNet load_pose_model(const std::string& stem, nlohmann::json* meta_out)
{
    std::ifstream in(stem + ".json");
    if (!in) {
        throw NotFoundError("pose checkpoint not found: " + stem);
    }
    const auto meta = nlohmann::json::parse(in);
    if (meta.value("format", "") != "fetalnav-pose-checkpoint") {
        throw ValidationError("not a pose checkpoint: " + stem);
    }
    PoseNet model(meta.at("widths").get<std::vector<int>>(), meta.at("translation_scale_mm").get<double>());
    torch::load(model, stem + ".pt");
    model->eval();
    if (meta_out) {
        *meta_out = meta;
    }
    return model;
}

}  // namespace fetalnav
