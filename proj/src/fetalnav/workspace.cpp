#include "fetalnav/workspace.hpp"

#include "fetalnav/errors.hpp"
#include "fetalnav/image.hpp"
#include "fetalnav/phantom.hpp"
#include "fetalnav/pipeline.hpp"
#include "fetalnav/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

namespace fs = std::filesystem;

namespace fetalnav {

namespace {

std::string join(const std::string& a, const std::string& b)
{
    return (fs::path(a) / b).string();
}

void write_json(const nlohmann::json& j, const std::string& path)
{
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw NotFoundError("not found: " + path);
    }
    return nlohmann::json::parse(in);
}

void say(const LogFn& log, const std::string& msg)
{
    if (log) {
        log(msg);
    }
}

std::vector<LabeledSample> workspace_labeled(const Workspace& ws)
{
    if (!fs::exists(join(ws.labeled_dir(), "labels.csv"))) {
        dataset_labeled(ws.profile, ws.labeled_dir());
    }
    return load_labeled_corpus(ws.labeled_dir());
}

std::shared_ptr<const SliceDataset> workspace_slices(const Workspace& ws)
{
    return std::make_shared<const SliceDataset>(SliceDataset::open(ws.slices_dir()));
}

nlohmann::json checkpoint_tags(const Workspace& ws, int fold)
{
    const auto pj = to_json(ws.profile);
    return {{"profile", pj}, {"config_hash", config_hash(pj)}, {"fold", fold}};
}

const std::vector<std::string> kStages{"s", "ss", "ssclass"};

std::string previous_stage(const std::string& stage)
{
    if (stage == "ss") {
        return "s";
    }
    if (stage == "ssclass") {
        return "ss";
    }
    return "";
}

Volume volume_by_id(const Workspace& ws, const std::string& id)
{
    const auto path = join(ws.volumes_dir(), id + ".json");
    if (!fs::exists(path)) {
        throw NotFoundError("unknown volume '" + id + "'");
    }
    return load_volume(path);
}

}  // namespace

std::string Workspace::volumes_dir() const { return join(root, "volumes"); }
std::string Workspace::slices_dir() const { return join(root, "slices"); }
std::string Workspace::labeled_dir() const { return join(root, "labeled"); }
std::string Workspace::folds_path() const { return join(root, "folds.json"); }
std::string Workspace::models_dir() const { return join(root, "models"); }
std::string Workspace::model_dir(int fold) const { return join(models_dir(), "fold" + std::to_string(fold)); }
std::string Workspace::eval_dir(int fold) const { return join(join(root, "eval"), "fold" + std::to_string(fold)); }

std::string Workspace::seg_stem(int fold, const std::string& stage) const
{
    return join(model_dir(fold), "seg_" + stage);
}

std::string Workspace::pose_stem(int fold, MaskMode masks) const
{
    return join(model_dir(fold), "pose_" + to_string(masks));
}

Workspace open_workspace(const std::string& root, const std::string& profile_name)
{
    Workspace ws;
    ws.root = root;
    ws.profile = Profile::by_name(profile_name);
    fs::create_directories(root);
    return ws;
}

std::vector<std::string> phantom_generate(const Profile& p, int n, std::uint64_t seed, const std::string& out_dir)
{
    PhantomSpec spec = p.phantom;
    spec.seed = seed;
    const auto vols = generate_phantom_family(spec, n);
    std::vector<std::string> ids;
    for (const auto& v : vols) {
        save_volume(v, out_dir);
        ids.push_back(v.volume_id);
    }
    write_json({{"v", 1}, {"phantom", to_json(spec)}, {"volumes", ids}}, join(out_dir, "family.json"));
    return ids;
}

void dataset_slice(const Profile& p, const std::string& volumes_dir, int per_volume, std::uint64_t seed,
                   const std::string& out_dir)
{
    if (per_volume < 1) {
        throw ValidationError("--per-volume must be positive");
    }
    const auto vols = load_volume_dir(volumes_dir);
    if (vols.empty()) {
        throw NotFoundError("no volumes in " + volumes_dir);
    }
    SliceDataset::write(vols, per_volume, p.bounds, p.slice_px, p.slice_spacing_mm, seed, out_dir);
}

void dataset_labeled(const Profile& p, const std::string& out_dir)
{
    const auto spec = labeled_spec_for(p);
    auto corpus = generate_labeled_corpus(spec);
    split_labeled(corpus, derived_seed(spec.seed, {0x5B1}));
    save_labeled_corpus(corpus, out_dir);
}

std::vector<FoldSpec> dataset_folds(const std::string& volumes_dir, const std::string& out_path)
{
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(volumes_dir)) {
        if (e.path().extension() == ".json" && e.path().filename() != "family.json") {
            ids.push_back(e.path().stem().string());
        }
    }
    std::sort(ids.begin(), ids.end());
    const auto folds = make_folds(ids);
    save_folds(folds, out_path);
    return folds;
}

std::vector<FoldSpec> workspace_folds(const Workspace& ws)
{
    if (!fs::exists(ws.folds_path())) {
        return dataset_folds(ws.volumes_dir(), ws.folds_path());
    }
    return load_folds(ws.folds_path());
}

nlohmann::json seg_train(const Workspace& ws, int fold_id, const std::string& stage_name, bool resume,
                         const LogFn& log)
{
    const auto& cfg = ws.profile.seg;
    const SegStageConfig& stage = cfg.stage(stage_name);
    const auto folds = workspace_folds(ws);
    const FoldSpec& fold = fold_by_id(folds, fold_id);
    SegTrainer trainer(cfg, derived_seed(ws.profile.seed, {0x5e6, static_cast<std::uint64_t>(fold_id)}),
                       assemble_seg_data(workspace_labeled(ws), workspace_slices(ws), fold, cfg.input_px));
    const auto tags = checkpoint_tags(ws, fold_id);
    const std::string stem = ws.seg_stem(fold_id, stage.name);
    const std::string last = stem + "_last";
    int first = 0;
    if (resume && fs::exists(last + ".json")) {
        const auto meta = read_json(last + ".json");
        if (meta.value("config_hash", "") != tags["config_hash"]) {
            throw ValidationError("checkpoint " + last + " was written with a different configuration");
        }
        trainer.load_checkpoint(last, true);
        first = meta.at("epochs_done").get<int>();
        say(log, "resuming " + stage.name + " at epoch " + std::to_string(first));
    } else if (const auto prev = previous_stage(stage.name); !prev.empty()) {
        trainer.load_checkpoint(ws.seg_stem(fold_id, prev), false);
    }
    fs::create_directories(ws.model_dir(fold_id));
    const std::string log_path = stem + "_log.csv";
    std::ofstream csv(log_path, first > 0 ? std::ios::app : std::ios::trunc);
    if (first == 0) {
        csv << "epoch,lr,loss_total,loss_labeled,loss_unlabeled,loss_classification\n";
    }
    trainer.train_stage(stage, first, stage.epochs, ws.model_dir(fold_id), [&](const SegEpochLog& e) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "%d,%.8g,%.6f,%.6f,%.6f,%.6f", e.epoch, e.lr, e.loss_total, e.loss_labeled,
                      e.loss_unlabeled, e.loss_classification);
        csv << buf << '\n' << std::flush;
        say(log, "seg " + stage.name + " fold " + std::to_string(fold_id) + " epoch " + buf);
        trainer.save_checkpoint(last, stage.name, e.epoch + 1, tags);
    });
    // Volumes that actually fed each loss term during this run.
    auto final_tags = tags;
    final_tags["loss_sources"] = trainer.audit().sources;
    trainer.save_checkpoint(stem, stage.name, stage.epochs, final_tags);
    auto summary = seg_eval(ws, fold_id, stage.name);
    summary["checkpoint"] = stem;
    return summary;
}

nlohmann::json seg_eval(const Workspace& ws, int fold_id, const std::string& stage)
{
    const auto folds = workspace_folds(ws);
    const FoldSpec& fold = fold_by_id(folds, fold_id);
    auto model = load_seg_model(ws.seg_stem(fold_id, stage));
    const auto data = assemble_seg_data(workspace_labeled(ws), workspace_slices(ws), fold, ws.profile.seg.input_px);
    const auto m = evaluate_fold(model, data, ws.profile.seg.input_px, ws.profile.seg.threshold);
    nlohmann::json j{{"v", 1},
                     {"fold", fold_id},
                     {"stage", stage},
                     {"miou_labeled_test", m.miou_labeled_test},
                     {"miou_pairwise_unlabeled", m.miou_pairwise_unlabeled},
                     {"class_accuracy", m.class_accuracy},
                     {"labeled_images", m.labeled_images},
                     {"unlabeled_pairs", m.unlabeled_pairs}};
    write_json(j, join(ws.eval_dir(fold_id), "seg_" + stage + ".json"));
    return j;
}

nlohmann::json loocv_audit(const Workspace& ws)
{
    const auto folds = workspace_folds(ws);
    const auto slices = workspace_slices(ws);
    const auto labeled = workspace_labeled(ws);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& fold : folds) {
        SegTrainer trainer(ws.profile.seg, ws.profile.seed,
                           assemble_seg_data(labeled, slices, fold, ws.profile.seg.input_px));
        std::set<std::string> used;
        nlohmann::json terms;
        for (const auto& name : kStages) {
            const auto audit = trainer.dry_run_audit(ws.profile.seg.stage(name));
            for (const auto& [term, ids] : audit.sources) {
                terms[name][term] = ids;
                used.insert(ids.begin(), ids.end());
            }
            const std::string meta = ws.seg_stem(fold.fold_id, name) + ".json";
            if (fs::exists(meta)) {
                const auto rec = read_json(meta).value("loss_sources", nlohmann::json::object());
                for (const auto& [term, ids] : rec.items()) {
                    terms[name]["checkpoint_" + term] = ids;
                    for (const auto& id : ids) {
                        used.insert(id.get<std::string>());
                    }
                }
            }
        }
        const auto planned = pose_training_volumes(fold);
        std::set<std::string> pose_vols(planned.begin(), planned.end());
        terms["pose"]["pose_total"] = pose_vols;
        // Volumes recorded by trained checkpoints, when present.
        for (MaskMode m : {MaskMode::Pred, MaskMode::None}) {
            const std::string meta = ws.pose_stem(fold.fold_id, m) + ".json";
            if (fs::exists(meta)) {
                const auto ids = read_json(meta).value("train_volumes", std::vector<std::string>{});
                terms["pose"]["checkpoint_" + to_string(m)] = ids;
                used.insert(ids.begin(), ids.end());
            }
        }
        used.insert(pose_vols.begin(), pose_vols.end());
        out.push_back({{"fold", fold.fold_id},
                       {"held_out", fold.held_out},
                       {"terms", terms},
                       {"held_out_used", used.count(fold.held_out) > 0}});
    }
    return out;
}

namespace {

std::uint64_t volume_tag(const std::vector<FoldSpec>& folds, const std::string& id)
{
    std::vector<std::string> all;
    for (const auto& f : folds) {
        all.push_back(f.held_out);
    }
    std::sort(all.begin(), all.end());
    return static_cast<std::uint64_t>(std::find(all.begin(), all.end(), id) - all.begin());
}

PoseInputs pose_training_inputs(const Workspace& ws, const std::vector<FoldSpec>& folds, const FoldSpec& fold,
                                SegNet& seg)
{
    const auto& p = ws.profile;
    const auto vols = pose_training_volumes(fold);
    if (p.pose.fresh_poses_per_volume <= 0) {
        const auto slices = workspace_slices(ws);
        return build_pose_inputs(seg, *slices, slices->indices_for({vols.begin(), vols.end()}), p.seg, p.pose);
    }
    PoseInputs all;
    for (const auto& id : vols) {
        const Volume v = load_volume((fs::path(ws.volumes_dir()) / (id + ".json")).string());
        const auto ds = SliceDataset::generate({v}, p.pose.fresh_poses_per_volume, p.bounds, p.slice_px,
                                               p.slice_spacing_mm, derived_seed(p.seed, {0xF4E5, volume_tag(folds, id)}));
        std::vector<std::size_t> idx(ds.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        auto part = build_pose_inputs(seg, ds, idx, p.seg, p.pose);
        std::move(part.masked.begin(), part.masked.end(), std::back_inserter(all.masked));
        std::move(part.unmasked.begin(), part.unmasked.end(), std::back_inserter(all.unmasked));
        all.skipped += part.skipped;
    }
    return all;
}

}  // namespace

std::vector<std::string> pose_training_volumes(const FoldSpec& fold)
{
    auto nh = fold.non_held_out();
    std::sort(nh.begin(), nh.end());
    return nh;
}

nlohmann::json pose_train(const Workspace& ws, int fold_id, MaskMode masks, bool resume, const LogFn& log)
{
    const auto folds = workspace_folds(ws);
    const FoldSpec& fold = fold_by_id(folds, fold_id);
    auto seg = load_seg_model(ws.seg_stem(fold_id, "ssclass"));
    const auto inputs = pose_training_inputs(ws, folds, fold, seg);
    const auto& samples = masks == MaskMode::Pred ? inputs.masked : inputs.unmasked;
    say(log, "pose " + to_string(masks) + " fold " + std::to_string(fold_id) + ": " + std::to_string(samples.size()) +
                 " slices, " + std::to_string(inputs.skipped) + " without brain");

    PoseTrainer trainer(ws.profile.pose, derived_seed(ws.profile.seed, {0x9053, static_cast<std::uint64_t>(fold_id)}));
    auto tags = checkpoint_tags(ws, fold_id);
    tags["masks"] = to_string(masks);
    tags["train_slices"] = samples.size();
    std::set<std::string> sources;
    for (const auto& smp : samples) {
        sources.insert(smp.volume_id);
    }
    tags["train_volumes"] = sources;
    const std::string stem = ws.pose_stem(fold_id, masks);
    const std::string last = stem + "_last";
    int first = 0;
    if (resume && fs::exists(last + ".json")) {
        const auto meta = read_json(last + ".json");
        if (meta.value("config_hash", "") != tags["config_hash"]) {
            throw ValidationError("checkpoint " + last + " was written with a different configuration");
        }
        trainer.load_checkpoint(last, true);
        first = meta.at("epochs_done").get<int>();
    }
    fs::create_directories(ws.model_dir(fold_id));
    std::ofstream csv(stem + "_log.csv", first > 0 ? std::ios::app : std::ios::trunc);
    if (first == 0) {
        csv << "epoch,train_loss,train_translation,train_rotation,val_loss,val_translation,val_rotation\n";
    }
    trainer.train(samples, first, ws.profile.pose.epochs, ws.model_dir(fold_id), [&](const PoseEpochLog& e) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", e.epoch, e.train_loss, e.train_translation,
                      e.train_rotation, e.val_loss, e.val_translation, e.val_rotation);
        csv << buf << '\n' << std::flush;
        say(log, "pose " + to_string(masks) + " fold " + std::to_string(fold_id) + " epoch " + buf);
        trainer.save_checkpoint(last, e.epoch + 1, tags);
    });
    trainer.save_checkpoint(stem, ws.profile.pose.epochs, tags);
    auto summary = pose_eval(ws, fold_id, masks);
    summary["checkpoint"] = stem;
    return summary;
}

nlohmann::json pose_eval(const Workspace& ws, int fold_id, MaskMode masks)
{
    const auto folds = workspace_folds(ws);
    const FoldSpec& fold = fold_by_id(folds, fold_id);
    const auto slices = workspace_slices(ws);
    auto seg = load_seg_model(ws.seg_stem(fold_id, "ssclass"));
    auto pose = load_pose_model(ws.pose_stem(fold_id, masks));
    const auto inputs =
        build_pose_inputs(seg, *slices, slices->indices_for({fold.held_out}), ws.profile.seg, ws.profile.pose);
    const auto ev = evaluate_pose(pose, masks == MaskMode::Pred ? inputs.masked : inputs.unmasked);
    const std::string base = join(ws.eval_dir(fold_id), "pose_" + to_string(masks));
    fs::create_directories(ws.eval_dir(fold_id));
    write_slice_errors_csv(ev, base + ".csv");
    auto j = summary_json(ev);
    j["v"] = 1;
    j["fold"] = fold_id;
    j["held_out"] = fold.held_out;
    j["masks"] = to_string(masks);
    j["skipped_no_brain"] = inputs.skipped;
    write_json(j, base + ".json");
    return j;
}

nlohmann::json pose_pool(const Workspace& ws, MaskMode masks)
{
    std::vector<SliceError> all;
    nlohmann::json per_fold = nlohmann::json::array();
    for (const auto& fold : workspace_folds(ws)) {
        const auto csv = join(ws.eval_dir(fold.fold_id), "pose_" + to_string(masks) + ".csv");
        if (!fs::exists(csv)) {
            continue;
        }
        auto errs = read_slice_errors_csv(csv);
        auto s = summary_json(summarize_errors(errs));
        s["fold"] = fold.fold_id;
        per_fold.push_back(s);
        all.insert(all.end(), errs.begin(), errs.end());
    }
    if (all.empty()) {
        throw NotFoundError("no per-fold pose evaluations found under " + ws.root);
    }
    auto j = summary_json(summarize_errors(std::move(all)));
    j["v"] = 1;
    j["masks"] = to_string(masks);
    j["per_fold"] = per_fold;
    write_json(j, join(join(ws.root, "eval"), "pose_" + to_string(masks) + "_pooled.json"));
    return j;
}

nlohmann::json stream_synth(const Workspace& ws, const std::string& volume_id, int frames, double fps,
                            const std::string& out_dir)
{
    const Volume vol = volume_by_id(ws, volume_id);
    if (!vol.annotation) {
        throw ValidationError("volume '" + volume_id + "' has no annotation");
    }
    const Pose6D target = vol.annotation->pose;
    // Start off the target at the edge of the training pose range: a full
    // max offset along the plane normal, some in-plane shift, tilted ~24°.
    const double d = ws.profile.bounds.max_offset_mm;
    Pose6D offset;
    offset.t = Vec3(0.4 * d, -0.3 * d, d);
    offset.r = Vec3(0.3, 0.3, 0.0);
    const Pose6D start = target.compose(offset);
    const auto path = approach_path(start, target, frames);
    std::vector<Image> imgs;
    fs::create_directories(out_dir);
    std::ofstream poses(join(out_dir, "poses.jsonl"));
    for (std::size_t i = 0; i < path.size(); ++i) {
        imgs.push_back(
            extract_slice(vol, path[i], ws.profile.slice_px, ws.profile.slice_px, ws.profile.slice_spacing_mm).image);
        poses << nlohmann::json{{"index", i}, {"pose", pose_to_json(path[i])}}.dump() << '\n';
    }
    write_frame_dir(imgs, fps, out_dir);
    const double duration = static_cast<double>(frames - 1) / fps;
    std::vector<ScanEvent> events{{0.85 * duration, ScanEvent::Kind::Freeze, std::nullopt, ""},
                                  {0.95 * duration, ScanEvent::Kind::Unfreeze, std::nullopt, ""}};
    save_events(events, join(out_dir, "events.json"));
    save_annotation(*vol.annotation, join(out_dir, "annotation.json"));
    return {{"v", 1}, {"frames", frames}, {"fps", fps}, {"duration_s", duration}, {"volume_id", volume_id}};
}

nlohmann::json pipeline_run(const Workspace& ws, const PipelineRunOptions& opt)
{
    auto models = load_pipeline_models(ws.seg_stem(opt.fold, "ssclass"), ws.pose_stem(opt.fold, opt.masks));
    const auto annotation = load_annotation(opt.annotation);
    const auto frames = extract_frames(opt.stream, opt.hz);
    const double duration = frames.empty() ? 0.0 : frames.back().timestamp;
    std::vector<ScanEvent> events;
    if (!opt.events.empty()) {
        events = load_events(opt.events, duration);
    }
    std::vector<FrameLabel> labels;
    if (!opt.labels.empty()) {
        labels = load_frame_labels(opt.labels);
    }
    const auto records = run_pipeline(frames, models, annotation);
    emit_trace(records, events, opt.out_dir, labels);

    int present = 0, failed = 0;
    for (const auto& r : records) {
        present += r.brain_present;
        failed += r.failed;
    }
    nlohmann::json summary{{"v", 1},
                           {"frames", records.size()},
                           {"brain_frames", present},
                           {"failed_frames", failed},
                           {"events", events.size()}};
    if (!opt.truth.empty()) {
        // Oracle distances of the true frame poses, aligned with the resampled frames.
        std::vector<Pose6D> truth;
        std::ifstream in(opt.truth);
        if (!in) {
            throw NotFoundError("truth file not found: " + opt.truth);
        }
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty()) {
                truth.push_back(pose_from_json(nlohmann::json::parse(line).at("pose")));
            }
        }
        double fps = 10.0;
        const auto meta = fs::path(opt.stream) / "stream.json";
        if (fs::exists(meta)) {
            fps = read_json(meta.string()).value("fps", fps);
        }
        const auto sched = frame_schedule(truth.size(), fps, opt.hz);
        std::ofstream oc(join(opt.out_dir, "oracle.csv"), std::ios::binary);
        oc << "timestamp,oracle_trans_mm,oracle_rot_deg,model_trans_mm,model_rot_deg\n";
        char buf[200];
        for (std::size_t k = 0; k < records.size() && k < sched.size(); ++k) {
            const auto o = proximity(truth[sched[k]], annotation);
            std::snprintf(buf, sizeof buf, "%.3f,%.6f,%.6f,", records[k].timestamp, o.trans_mm, o.rot_deg);
            oc << buf;
            if (records[k].proximity) {
                std::snprintf(buf, sizeof buf, "%.6f,%.6f", records[k].proximity->trans_mm,
                              records[k].proximity->rot_deg);
                oc << buf;
            } else {
                oc << ',';
            }
            oc << '\n';
        }
    }
    write_json(summary, join(opt.out_dir, "summary.json"));
    return summary;
}

void annotate(const std::string& volume_path, const Pose6D& pose, const std::string& label, const std::string& out)
{
    const Volume v = load_volume(volume_path);
    PlaneAnnotation a;
    a.volume_id = v.volume_id;
    a.label = label;
    a.pose = validated(pose);
    save_annotation(a, out);
}

}  // namespace fetalnav
