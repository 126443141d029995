#include "fetalnav/seg_model.hpp"

#include "fetalnav/errors.hpp"
#include "fetalnav/image.hpp"
#include "fetalnav/losses.hpp"
#include "fetalnav/rng.hpp"
#include "fetalnav/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace fs = std::filesystem;

namespace fetalnav {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr std::size_t kMaxCachedSlices = 50000;

std::uint64_t stage_tag(const std::string& name)
{
    std::uint64_t h = 0;
    for (char c : name) {
        h = h * 131 + static_cast<unsigned char>(c);
    }
    return h;
}

}  // namespace

std::set<std::string> LossAudit::all() const
{
    std::set<std::string> out;
    for (const auto& [term, ids] : sources) {
        out.insert(ids.begin(), ids.end());
    }
    return out;
}

Image to_seg_input(const Image& img, int px)
{
    return resize_linear(img.rows == img.cols ? img : letterbox_square(img), px);
}

SegData assemble_seg_data(const std::vector<LabeledSample>& corpus, std::shared_ptr<const SliceDataset> slices,
                          const FoldSpec& fold, int px)
{
    SegData d;
    for (const auto& s : corpus) {
        auto p = preprocess_labeled(s, px);
        switch (s.split) {
        case Split::Train:
            d.labeled_train.push_back(std::move(p));
            break;
        case Split::Val:
            d.labeled_val.push_back(std::move(p));
            break;
        case Split::Test:
            d.labeled_test.push_back(std::move(p));
            break;
        }
    }
    if (d.labeled_train.empty()) {
        throw ValidationError("labeled corpus has no training split");
    }
    d.fold = fold;
    d.slices = std::move(slices);
    if (d.slices) {
        d.train_groups = make_pose_groups(*d.slices, fold.train);
        d.val_groups = make_pose_groups(*d.slices, fold.val);
    }
    return d;
}

SegTrainer::SegTrainer(const SegConfig& cfg, std::uint64_t seed, SegData data)
    : cfg_(cfg), seed_(seed), data_(std::move(data)), model_(nullptr)
{
    configure_torch_determinism(derived_seed(seed, {0x1717}));
    model_ = SegNet(cfg_.encoder_widths);
}

std::vector<SegStep> SegTrainer::plan_epoch(const SegStageConfig& stage, int epoch) const
{
    auto rng = derived_rng(seed_, {stage_tag(stage.name), static_cast<std::uint64_t>(epoch)});
    const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
    std::vector<std::size_t> labeled(data_.labeled_train.size());
    std::iota(labeled.begin(), labeled.end(), 0);
    std::shuffle(labeled.begin(), labeled.end(), rng);

    std::vector<std::size_t> groups;
    if (stage.use_unlabeled) {
        groups.resize(data_.train_groups.size());
        std::iota(groups.begin(), groups.end(), 0);
        std::shuffle(groups.begin(), groups.end(), rng);
    }
    const std::size_t steps = groups.empty() ? (labeled.size() + bs - 1) / bs : (groups.size() + bs - 1) / bs;
    std::vector<SegStep> plan(steps);
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < steps; ++s) {
        // Labeled batches cycle through a fresh permutation whenever they run out.
        for (std::size_t k = 0; k < bs && (groups.empty() ? cursor < labeled.size() : true); ++k) {
            if (cursor == labeled.size()) {
                if (groups.empty()) {
                    break;
                }
                std::shuffle(labeled.begin(), labeled.end(), rng);
                cursor = 0;
            }
            plan[s].labeled.push_back(labeled[cursor++]);
            plan[s].augment.push_back(cfg_.augment ? draw_augment(rng) : AugmentParams{});
        }
        for (std::size_t k = s * bs; k < std::min(groups.size(), (s + 1) * bs); ++k) {
            plan[s].groups.push_back(groups[k]);
        }
    }
    return plan;
}

const Image& SegTrainer::unlabeled_image(std::size_t dataset_index, bool* brain_visible)
{
    auto it = cache_.find(dataset_index);
    if (it == cache_.end()) {
        SliceSample s = data_.slices->load(dataset_index);
        std::pair<Image, bool> entry{to_seg_input(s.image, cfg_.input_px),
                                     data_.slices->record(dataset_index).brain_visible};
        if (cache_.size() >= kMaxCachedSlices) {
            cache_.clear();
        }
        it = cache_.emplace(dataset_index, std::move(entry)).first;
    }
    *brain_visible = it->second.second;
    return it->second.first;
}

torch::Tensor SegTrainer::unlabeled_batch(const std::vector<std::size_t>& group_ids,
                                          const std::vector<PosePairedGroup>& groups,
                                          std::vector<float>* class_targets, std::vector<bool>* class_valid)
{
    std::vector<const Image*> imgs;
    for (std::size_t g : group_ids) {
        for (std::size_t idx : groups.at(g).members) {
            bool visible = false;
            imgs.push_back(&unlabeled_image(idx, &visible));
            class_targets->push_back(1.0f);
            class_valid->push_back(visible);
        }
    }
    return images_to_tensor(imgs);
}

std::vector<SegEpochLog> SegTrainer::train_stage(const SegStageConfig& stage, int first_epoch, int last_epoch,
                                                 const std::string& snapshot_dir,
                                                 const std::function<void(const SegEpochLog&)>& on_epoch)
{
    if (last_epoch < 0) {
        last_epoch = stage.epochs;
    }
    if (stage.use_unlabeled && data_.train_groups.empty()) {
        throw ValidationError("stage '" + stage.name + "' needs pose-paired unlabeled slices");
    }
    if (!optimizer_ || optimizer_stage_ != stage.name) {
        optimizer_ = std::make_unique<torch::optim::Adam>(model_->parameters(), torch::optim::AdamOptions(stage.lr));
        optimizer_stage_ = stage.name;
    }
    const int n_per_group = stage.use_unlabeled ? static_cast<int>(data_.fold.train.size()) : 0;
    std::vector<SegEpochLog> logs;
    model_->train();
    for (int epoch = first_epoch; epoch < last_epoch; ++epoch) {
        const double lr = stage.lr_at(epoch);
        for (auto& group : optimizer_->param_groups()) {
            static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        }
        SegEpochLog log;
        log.stage = stage.name;
        log.epoch = epoch;
        log.lr = lr;
        const auto plan = plan_epoch(stage, epoch);
        for (const auto& step : plan) {
            std::vector<LabeledSample> lab;
            lab.reserve(step.labeled.size());
            for (std::size_t k = 0; k < step.labeled.size(); ++k) {
                lab.push_back(augment(data_.labeled_train[step.labeled[k]], step.augment[k]));
                audit_.add("seg_labeled", "labeled");
            }
            std::vector<const Image*> lab_imgs;
            std::vector<const Mask*> lab_masks;
            std::vector<float> cls_targets;
            std::vector<bool> cls_valid;
            for (const auto& s : lab) {
                lab_imgs.push_back(&s.image);
                lab_masks.push_back(&s.mask);
                cls_targets.push_back(s.label == ClassLabel::Brain ? 1.0f : 0.0f);
                cls_valid.push_back(true);
            }
            torch::Tensor x = images_to_tensor(lab_imgs);
            const int64_t n_lab = x.size(0);
            if (!step.groups.empty()) {
                x = torch::cat({x, unlabeled_batch(step.groups, data_.train_groups, &cls_targets, &cls_valid)}, 0);
                for (std::size_t g : step.groups) {
                    for (std::size_t idx : data_.train_groups[g].members) {
                        audit_.add("seg_unlabeled", data_.slices->record(idx).volume_id);
                        if (stage.use_classification && data_.slices->record(idx).brain_visible) {
                            audit_.add("classification", data_.slices->record(idx).volume_id);
                        }
                    }
                }
            }
            if (stage.use_classification) {
                audit_.add("classification", "labeled");
            }
            const auto out = model_->forward(x);
            const auto probs = torch::sigmoid(out.mask_logits);
            const auto l_lab = loss_seg_labeled(probs.narrow(0, 0, n_lab), masks_to_tensor(lab_masks), cfg_.dice_eps);
            torch::Tensor l_unl = torch::zeros({}, x.options());
            if (!step.groups.empty()) {
                const auto up = probs.narrow(0, n_lab, probs.size(0) - n_lab);
                l_unl = loss_seg_unlabeled_batched(
                    up.view({static_cast<int64_t>(step.groups.size()), n_per_group, up.size(2), up.size(3)}));
            }
            torch::Tensor l_cls = torch::zeros({}, x.options());
            if (stage.use_classification) {
                std::vector<int64_t> keep;
                std::vector<float> tgt;
                for (std::size_t i = 0; i < cls_valid.size(); ++i) {
                    if (cls_valid[i]) {
                        keep.push_back(static_cast<int64_t>(i));
                        tgt.push_back(cls_targets[i]);
                    }
                }
                const auto idx = torch::tensor(keep, torch::kLong);
                const auto cls_p = torch::sigmoid(out.class_logits.index_select(0, idx));
                l_cls = bce_loss(cls_p, torch::tensor(tgt));
            }
            const auto total = loss_total(l_lab, l_unl, l_cls, cfg_.alpha);
            const double total_v = total.item<double>();
            if (!std::isfinite(total_v)) {
                std::string snap;
                if (!snapshot_dir.empty()) {
                    fs::create_directories(snapshot_dir);
                    snap = (fs::path(snapshot_dir) / "nan_snapshot").string();
                    std::ofstream(snap + ".json")
                        << nlohmann::json{{"stage", stage.name},
                                          {"epoch", epoch},
                                          {"step", log.steps},
                                          {"loss_labeled", l_lab.item<double>()},
                                          {"loss_unlabeled", l_unl.item<double>()},
                                          {"loss_classification", l_cls.item<double>()},
                                          {"lr", lr}}
                               .dump(2);
                    torch::save(model_, snap + ".pt");
                }
                throw NumericError("non-finite segmentation loss at stage " + stage.name + " epoch " +
                                       std::to_string(epoch),
                                   snap);
            }
            optimizer_->zero_grad();
            total.backward();
            optimizer_->step();
            log.loss_total += total_v;
            log.loss_labeled += l_lab.item<double>();
            log.loss_unlabeled += l_unl.item<double>();
            log.loss_classification += l_cls.item<double>();
            ++log.steps;
        }
        if (log.steps > 0) {
            log.loss_total /= log.steps;
            log.loss_labeled /= log.steps;
            log.loss_unlabeled /= log.steps;
            log.loss_classification /= log.steps;
        }
        logs.push_back(log);
        if (on_epoch) {
            on_epoch(log);
        }
    }
    if (last_epoch >= stage.epochs) {
        completed_stage_ = stage.name;
    }
    return logs;
}

LossAudit SegTrainer::dry_run_audit(const SegStageConfig& stage) const
{
    LossAudit audit;
    for (int epoch = 0; epoch < stage.epochs; ++epoch) {
        for (const auto& step : plan_epoch(stage, epoch)) {
            if (!step.labeled.empty()) {
                audit.add("seg_labeled", "labeled");
                if (stage.use_classification) {
                    audit.add("classification", "labeled");
                }
            }
            for (std::size_t g : step.groups) {
                for (std::size_t idx : data_.train_groups.at(g).members) {
                    const auto& rec = data_.slices->record(idx);
                    audit.add("seg_unlabeled", rec.volume_id);
                    if (stage.use_classification && rec.brain_visible) {
                        audit.add("classification", rec.volume_id);
                    }
                }
            }
        }
    }
    return audit;
}

void SegTrainer::save_checkpoint(const std::string& stem, const std::string& stage, int epochs_done,
                                 const nlohmann::json& extra) const
{
    fs::create_directories(fs::path(stem).parent_path());
    torch::save(model_, stem + ".pt");
    if (optimizer_) {
        torch::save(*optimizer_, stem + ".opt.pt");
    }
    nlohmann::json meta = extra;
    meta["format"] = "fetalnav-seg-checkpoint";
    meta["version"] = kCheckpointVersion;
    meta["stage"] = stage;
    meta["epochs_done"] = epochs_done;
    meta["widths"] = cfg_.encoder_widths;
    meta["input_px"] = cfg_.input_px;
    meta["threshold"] = cfg_.threshold;
    meta["optimizer_stage"] = optimizer_stage_;
    std::ofstream(stem + ".json") << meta.dump(2) << '\n';
}

nlohmann::json SegTrainer::load_checkpoint(const std::string& stem, bool with_optimizer)
{
    std::ifstream in(stem + ".json");
    if (!in) {
        throw NotFoundError("segmentation checkpoint not found: " + stem);
    }
    const auto meta = nlohmann::json::parse(in);
    if (meta.value("format", "") != "fetalnav-seg-checkpoint") {
        throw ValidationError("not a segmentation checkpoint: " + stem);
    }
    if (meta.at("widths").get<std::vector<int>>() != cfg_.encoder_widths) {
        throw ValidationError("checkpoint widths do not match the configuration");
    }
    torch::load(model_, stem + ".pt");
    const std::string opt_stage = meta.value("optimizer_stage", std::string());
    if (with_optimizer && fs::exists(stem + ".opt.pt") && !opt_stage.empty()) {
        const auto& stage = cfg_.stage(opt_stage);
        optimizer_ = std::make_unique<torch::optim::Adam>(model_->parameters(), torch::optim::AdamOptions(stage.lr));
        torch::load(*optimizer_, stem + ".opt.pt");
        optimizer_stage_ = opt_stage;
    }
    completed_stage_ = meta.value("stage", std::string());
    return meta;
}

SegPrediction predict_seg(SegNet& model, const std::vector<Image>& images, int batch)
{
    torch::NoGradGuard no_grad;
    model->eval();
    SegPrediction out;
    for (std::size_t start = 0; start < images.size(); start += batch) {
        const std::size_t end = std::min(images.size(), start + batch);
        std::vector<const Image*> chunk;
        for (std::size_t i = start; i < end; ++i) {
            chunk.push_back(&images[i]);
        }
        const auto res = model->forward(images_to_tensor(chunk));
        const auto probs = torch::sigmoid(res.mask_logits);
        const auto cls = torch::sigmoid(res.class_logits);
        for (int64_t b = 0; b < probs.size(0); ++b) {
            out.probs.push_back(tensor_to_image(probs[b][0]));
            out.class_probs.push_back(cls[b].item<double>());
        }
    }
    return out;
}

SegMetrics evaluate_miou(SegNet& model, const std::vector<LabeledSample>& test,
                         const std::vector<std::vector<Image>>& pose_groups, double threshold)
{
    if (test.empty() && pose_groups.empty()) {
        throw ValidationError("evaluate_miou: empty evaluation set");
    }
    SegMetrics m;
    if (!test.empty()) {
        std::vector<Image> imgs;
        for (const auto& s : test) {
            imgs.push_back(s.image);
        }
        const auto pred = predict_seg(model, imgs);
        double sum = 0.0;
        int correct = 0;
        for (std::size_t i = 0; i < test.size(); ++i) {
            sum += iou(fetalnav::threshold(pred.probs[i], threshold), test[i].mask);
            const bool says_brain = pred.class_probs[i] >= threshold;
            correct += says_brain == (test[i].label == ClassLabel::Brain);
        }
        m.miou_labeled_test = sum / test.size();
        m.class_accuracy = static_cast<double>(correct) / test.size();
        m.labeled_images = static_cast<int>(test.size());
    }
    double pair_sum = 0.0;
    int pairs = 0;
    for (const auto& group : pose_groups) {
        const auto pred = predict_seg(model, group);
        std::vector<Mask> masks;
        for (const auto& p : pred.probs) {
            masks.push_back(fetalnav::threshold(p, threshold));
        }
        for (std::size_t i = 0; i + 1 < masks.size(); ++i) {
            for (std::size_t j = i + 1; j < masks.size(); ++j) {
                pair_sum += iou(masks[i], masks[j]);
                ++pairs;
            }
        }
    }
    m.unlabeled_pairs = pairs;
    m.miou_pairwise_unlabeled = pairs > 0 ? pair_sum / pairs : 0.0;
    return m;
}

SegMetrics evaluate_fold(SegNet& model, const SegData& data, int px, double threshold)
{
    std::vector<std::vector<Image>> groups;
    for (const auto& g : data.val_groups) {
        std::vector<Image> imgs;
        for (std::size_t idx : g.members) {
            imgs.push_back(to_seg_input(data.slices->load(idx).image, px));
        }
        groups.push_back(std::move(imgs));
    }
    return evaluate_miou(model, data.labeled_test, groups, threshold);
}

SegNet load_seg_model(const std::string& stem, nlohmann::json* meta_out)
{
    std::ifstream in(stem + ".json");
    if (!in) {
        throw NotFoundError("segmentation checkpoint not found: " + stem);
    }
    const auto meta = nlohmann::json::parse(in);
    if (meta.value("format", "") != "fetalnav-seg-checkpoint") {
        throw ValidationError("not a segmentation checkpoint: " + stem);
    }
    SegNet model(meta.at("widths").get<std::vector<int>>());
    torch::load(model, stem + ".pt");
    model->eval();
    if (meta_out) {
        *meta_out = meta;
    }
    return model;
}

}  // namespace fetalnav
