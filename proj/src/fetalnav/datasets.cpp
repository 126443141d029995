#include "fetalnav/datasets.hpp"

#include "fetalnav/errors.hpp"
#include "fetalnav/image.hpp"
#include "fetalnav/rng.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace fs = std::filesystem;

namespace fetalnav {

std::string to_string(ClassLabel c) { return c == ClassLabel::Brain ? "brain" : "not_brain"; }

std::string to_string(Split s)
{
    switch (s) {
    case Split::Train:
        return "train";
    case Split::Val:
        return "val";
    case Split::Test:
        return "test";
    }
    return "train";
}

ClassLabel class_from_string(const std::string& s)
{
    if (s == "brain") {
        return ClassLabel::Brain;
    }
    if (s == "not_brain") {
        return ClassLabel::NotBrain;
    }
    throw ValidationError("unknown class label '" + s + "'");
}

Split split_from_string(const std::string& s)
{
    if (s == "train") {
        return Split::Train;
    }
    if (s == "val") {
        return Split::Val;
    }
    if (s == "test") {
        return Split::Test;
    }
    throw ValidationError("unknown split '" + s + "'");
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Smoothed unit-variance noise used as 2D speckle.
cv::Mat1f speckle_field(int rows, int cols, std::mt19937_64& rng, double sigma_px)
{
    cv::Mat1f n(rows, cols);
    std::normal_distribution<float> g(0.0f, 1.0f);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            n(r, c) = g(rng);
        }
    }
    cv::GaussianBlur(n, n, cv::Size(0, 0), sigma_px);
    cv::Scalar mean, stddev;
    cv::meanStdDev(n, mean, stddev);
    if (stddev[0] > 0) {
        n = (n - mean[0]) / stddev[0];
    }
    return n;
}

Image apply_speckle(const Image& img, double level, std::mt19937_64& rng)
{
    const cv::Mat1f n = speckle_field(img.rows, img.cols, rng, 0.8);
    Image out = img.mul(1.0f + static_cast<float>(level) * n);
    cv::min(cv::max(out, 0.0f), 1.0f, out);
    return out;
}

// Appearance of the labeled 2D scans: brighter gain and coarser speckle than the
// volume slices, so the labeled and unlabeled domains differ as they do clinically.
constexpr double kLabeledGain = 1.12;
constexpr double kLabeledSpeckle = 0.45;

LabeledSample make_brain_sample(const Anatomy& anatomy, const LabeledCorpusSpec& spec, std::mt19937_64& rng)
{
    const double deg = std::numbers::pi / 180.0;
    Pose6D delta;
    delta.t = Vec3(uniform(rng, -3.0, 3.0), uniform(rng, -3.0, 3.0), uniform(rng, -2.0, 2.0));
    const Mat3 tilt = rotvec_to_matrix(Vec3(uniform(rng, -1, 1), uniform(rng, -1, 1), 0.0).normalized() *
                                       uniform(rng, 0.0, 8.0 * deg));
    const Mat3 spin = rotvec_to_matrix(Vec3::UnitZ() * uniform(rng, -30.0 * deg, 30.0 * deg));
    delta.r = matrix_to_rotvec(tilt * spin);
    const Pose6D pose = anatomy.tv_plane.pose.compose(delta);
    const double zoom = uniform(rng, 0.85, 1.15);
    SliceSample s = render_analytic(anatomy, pose, spec.rows, spec.cols, spec.pixel_spacing_mm * zoom);
    LabeledSample out;
    out.image = apply_speckle(s.image * kLabeledGain, kLabeledSpeckle, rng);
    out.mask = *s.gt_mask;
    out.label = ClassLabel::Brain;
    return out;
}

LabeledSample make_non_brain_sample(const LabeledCorpusSpec& spec, std::mt19937_64& rng, bool abdomen)
{
    const double px_per_mm = 1.0 / (spec.pixel_spacing_mm * uniform(rng, 0.85, 1.15));
    Image img(spec.rows, spec.cols, 0.22f);
    const cv::Point2d center(spec.cols / 2.0 + uniform(rng, -10, 10) * px_per_mm,
                             spec.rows / 2.0 + uniform(rng, -10, 10) * px_per_mm);
    const auto pt = [](const cv::Point2d& p) { return cv::Point(cvRound(p.x), cvRound(p.y)); };
    const auto sz = [&](double a, double b) { return cv::Size(cvRound(a * px_per_mm), cvRound(b * px_per_mm)); };
    if (abdomen) {
        const double a = uniform(rng, 22, 32);
        const double b = uniform(rng, 18, 28);
        const double angle = uniform(rng, 0, 180);
        cv::ellipse(img, pt(center), sz(a, b), angle, 0, 360, cv::Scalar(0.33), cv::FILLED);
        cv::ellipse(img, pt(center), sz(a, b), angle, 0, 360, cv::Scalar(0.70), std::max(1, cvRound(2.5 * px_per_mm)));
        const double th = uniform(rng, 0, 2 * std::numbers::pi);
        const cv::Point2d stomach = center + cv::Point2d(std::cos(th), std::sin(th)) * 0.4 * b * px_per_mm;
        cv::ellipse(img, pt(stomach), sz(uniform(rng, 6, 10), uniform(rng, 4, 8)), uniform(rng, 0, 180), 0, 360,
                    cv::Scalar(0.05), cv::FILLED);
        const cv::Point2d spine = center - cv::Point2d(std::cos(th), std::sin(th)) * 0.7 * b * px_per_mm;
        cv::circle(img, pt(spine), cvRound(4 * px_per_mm), cv::Scalar(0.9), cv::FILLED);
    } else {
        const double len = uniform(rng, 30, 45) * px_per_mm;
        const double th = uniform(rng, -0.6, 0.6);
        const cv::Point2d dir(std::cos(th), std::sin(th));
        const cv::Point2d p0 = center - dir * (len / 2);
        const cv::Point2d p1 = center + dir * (len / 2);
        const cv::Point2d down(0, 6 * px_per_mm);
        cv::line(img, pt(p0 + down), pt(p1 + down), cv::Scalar(0.06), std::max(1, cvRound(8 * px_per_mm)));
        cv::line(img, pt(p0), pt(p1), cv::Scalar(0.9), std::max(1, cvRound(3.5 * px_per_mm)));
        cv::circle(img, pt(p0), cvRound(3 * px_per_mm), cv::Scalar(0.9), cv::FILLED);
        cv::circle(img, pt(p1), cvRound(3 * px_per_mm), cv::Scalar(0.9), cv::FILLED);
    }
    // A few soft-tissue blobs.
    const int blobs = static_cast<int>(uniform(rng, 1, 4));
    for (int i = 0; i < blobs; ++i) {
        const cv::Point2d c(uniform(rng, 0, spec.cols), uniform(rng, 0, spec.rows));
        cv::ellipse(img, pt(c), sz(uniform(rng, 4, 10), uniform(rng, 4, 10)), uniform(rng, 0, 180), 0, 360,
                    cv::Scalar(uniform(rng, 0.05, 0.8)), cv::FILLED);
    }
    LabeledSample out;
    out.image = apply_speckle(img * kLabeledGain, kLabeledSpeckle, rng);
    out.mask = Mask(spec.rows, spec.cols, uchar{0});
    out.label = ClassLabel::NotBrain;
    return out;
}

}  // namespace

LabeledCorpusSpec labeled_spec_for(const Profile& p)
{
    LabeledCorpusSpec s;
    s.total = p.labeled_total;
    s.brain = p.labeled_brain;
    s.rows = p.slice_px;
    s.cols = p.slice_px * 4 / 3;
    s.pixel_spacing_mm = p.slice_spacing_mm;
    s.seed = derived_seed(p.seed, {0x1AB});
    s.anatomy = p.phantom;
    return s;
}

std::vector<LabeledSample> generate_labeled_corpus(const LabeledCorpusSpec& spec)
{
    if (spec.total < spec.brain || spec.brain < 0 || spec.subjects < 1) {
        throw ValidationError("labeled corpus counts are inconsistent");
    }
    std::vector<Anatomy> subjects;
    subjects.reserve(spec.subjects);
    for (int s = 0; s < spec.subjects; ++s) {
        auto rng = derived_rng(spec.seed, {0x5, static_cast<std::uint64_t>(s)});
        PhantomSpec ps = spec.anatomy;
        ps.seed = rng();
        ps.brain_semi_axes_mm = ps.brain_semi_axes_mm.cwiseProduct(
            Vec3(uniform(rng, 0.9, 1.05), uniform(rng, 0.9, 1.05), uniform(rng, 0.9, 1.05)));
        subjects.push_back(subject_anatomy(ps, canonical_anatomy(ps), rng()));
    }
    std::vector<LabeledSample> out;
    out.reserve(spec.total);
    for (int i = 0; i < spec.total; ++i) {
        auto rng = derived_rng(spec.seed, {0x1, static_cast<std::uint64_t>(i)});
        LabeledSample s = i < spec.brain ? make_brain_sample(subjects[i % subjects.size()], spec, rng)
                                         : make_non_brain_sample(spec, rng, (i - spec.brain) % 2 == 0);
        char name[32];
        std::snprintf(name, sizeof name, "lab%04d.png", i);
        s.name = name;
        out.push_back(std::move(s));
    }
    return out;
}

void split_labeled(std::vector<LabeledSample>& corpus, std::uint64_t seed)
{
    if (corpus.size() < 10) {
        throw ValidationError("labeled corpus must contain at least 10 samples");
    }
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        by_class[corpus[i].label == ClassLabel::Brain ? 0 : 1].push_back(i);
    }
    if (by_class[0].empty() || by_class[1].empty()) {
        throw ValidationError("labeled corpus must contain both brain and not-brain samples");
    }
    const double n = static_cast<double>(corpus.size());
    const int train_total = static_cast<int>(std::lround(n * 205.0 / 346.0));
    const int val_total = static_cast<int>(std::lround(n * 53.0 / 346.0));
    // Per-class quotas, with the brain class rounded and the other class taking the remainder
    // so that totals match exactly.
    const double brain_share = by_class[0].size() / n;
    const int train_brain = static_cast<int>(std::lround(train_total * brain_share));
    const int val_brain = static_cast<int>(std::lround(val_total * brain_share));
    const int quotas[2][2] = {{train_brain, val_brain}, {train_total - train_brain, val_total - val_brain}};
    for (int c = 0; c < 2; ++c) {
        auto rng = derived_rng(seed, {0x5B17, static_cast<std::uint64_t>(c)});
        std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
        const int tr = std::clamp(quotas[c][0], 0, static_cast<int>(by_class[c].size()));
        const int va = std::clamp(quotas[c][1], 0, static_cast<int>(by_class[c].size()) - tr);
        for (int k = 0; k < static_cast<int>(by_class[c].size()); ++k) {
            corpus[by_class[c][k]].split = k < tr ? Split::Train : (k < tr + va ? Split::Val : Split::Test);
        }
    }
}

void save_labeled_corpus(const std::vector<LabeledSample>& corpus, const std::string& dir)
{
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    std::ofstream csv(fs::path(dir) / "labels.csv");
    if (!csv) {
        throw IoError("cannot write labels.csv in " + dir);
    }
    csv << "filename,class,split\n";
    for (const auto& s : corpus) {
        write_gray(s.image, (fs::path(dir) / "images" / s.name).string());
        write_mask(s.mask, (fs::path(dir) / "masks" / s.name).string());
        csv << s.name << ',' << to_string(s.label) << ',' << to_string(s.split) << '\n';
    }
}

std::vector<LabeledSample> load_labeled_corpus(const std::string& dir)
{
    std::ifstream csv(fs::path(dir) / "labels.csv");
    if (!csv) {
        throw NotFoundError("labels.csv not found in " + dir);
    }
    std::string line;
    std::getline(csv, line);
    std::vector<LabeledSample> out;
    while (std::getline(csv, line)) {
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string name, cls, split;
        std::getline(ss, name, ',');
        std::getline(ss, cls, ',');
        std::getline(ss, split, ',');
        LabeledSample s;
        s.name = name;
        s.label = class_from_string(cls);
        s.split = split_from_string(split);
        s.image = read_gray((fs::path(dir) / "images" / name).string());
        s.mask = read_mask((fs::path(dir) / "masks" / name).string());
        if (s.label == ClassLabel::NotBrain && cv::countNonZero(s.mask) != 0) {
            throw ValidationError("not_brain sample " + name + " has a non-empty mask");
        }
        out.push_back(std::move(s));
    }
    return out;
}

LabeledSample preprocess_labeled(const LabeledSample& s, int px)
{
    LabeledSample out = s;
    const Image sq = center_crop_square(s.image);
    const Mask msq = center_crop_square(s.mask);
    out.image = resize_linear(sq, px);
    out.mask = resize_nearest(msq, px, px);
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> FoldSpec::non_held_out() const
{
    std::vector<std::string> out = train;
    out.insert(out.end(), val.begin(), val.end());
    return out;
}

std::vector<FoldSpec> make_folds(const std::vector<std::string>& ids)
{
    if (ids.size() != 6) {
        throw ValidationError("make_folds expects exactly 6 volume ids");
    }
    if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
        throw ValidationError("make_folds: duplicate volume ids");
    }
    std::vector<FoldSpec> folds;
    for (int k = 0; k < 6; ++k) {
        FoldSpec f;
        f.fold_id = k;
        f.held_out = ids[k];
        for (int m = 1; m <= 5; ++m) {
            (m <= 3 ? f.train : f.val).push_back(ids[(k + m) % 6]);
        }
        folds.push_back(std::move(f));
    }
    return folds;
}

void save_folds(const std::vector<FoldSpec>& folds, const std::string& path)
{
    nlohmann::json j = nlohmann::json::array();
    for (const auto& f : folds) {
        j.push_back({{"fold", f.fold_id}, {"held_out", f.held_out}, {"train", f.train}, {"val", f.val}});
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << nlohmann::json{{"version", 1}, {"folds", j}}.dump(2) << '\n';
}

std::vector<FoldSpec> load_folds(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw NotFoundError("folds file not found: " + path);
    }
    const auto j = nlohmann::json::parse(in);
    std::vector<FoldSpec> folds;
    for (const auto& f : j.at("folds")) {
        FoldSpec s;
        s.fold_id = f.at("fold").get<int>();
        s.held_out = f.at("held_out").get<std::string>();
        s.train = f.at("train").get<std::vector<std::string>>();
        s.val = f.at("val").get<std::vector<std::string>>();
        folds.push_back(std::move(s));
    }
    return folds;
}

const FoldSpec& fold_by_id(const std::vector<FoldSpec>& folds, int fold_id)
{
    for (const auto& f : folds) {
        if (f.fold_id == fold_id) {
            return f;
        }
    }
    throw NotFoundError("fold " + std::to_string(fold_id) + " not found");
}

// ---------------------------------------------------------------------------

std::uint64_t pose_seed(std::uint64_t seed, int pose_id)
{
    return derived_seed(seed, {0x905E, static_cast<std::uint64_t>(pose_id)});
}

namespace {

std::string slice_name(const std::string& volume_id, int pose_id)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%06d.png", pose_id);
    return volume_id + buf;
}

nlohmann::json record_json(const SliceRecord& r)
{
    nlohmann::json j = pose_to_json(r.pose);
    j["pose_id"] = r.pose_id;
    j["volume_id"] = r.volume_id;
    j["image"] = r.image_file;
    j["mask"] = r.mask_file;
    j["brain_visible"] = r.brain_visible;
    return j;
}

}  // namespace

SliceDataset SliceDataset::open(const std::string& root)
{
    std::ifstream in(fs::path(root) / "index.jsonl");
    if (!in) {
        throw NotFoundError("slice index not found in " + root);
    }
    SliceDataset ds;
    ds.root_ = root;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto j = nlohmann::json::parse(line);
        SliceRecord r;
        r.pose_id = j.at("pose_id").get<int>();
        r.volume_id = j.at("volume_id").get<std::string>();
        r.pose = pose_from_json(j);
        r.image_file = j.at("image").get<std::string>();
        r.mask_file = j.value("mask", std::string());
        r.brain_visible = j.value("brain_visible", false);
        ds.records_.push_back(std::move(r));
    }
    return ds;
}

namespace {

void slice_all(const std::vector<Volume>& volumes, int count, const PoseBounds& bounds, int px,
                       double spacing_mm, std::uint64_t seed, const std::string& out_dir,
                       std::vector<SliceRecord>& records, std::vector<Image>* images, std::vector<Mask>* masks)
{
    if (count <= 0) {
        throw ValidationError("slice count must be positive");
    }
    std::ofstream index;
    if (!out_dir.empty()) {
        fs::create_directories(fs::path(out_dir) / "images");
        fs::create_directories(fs::path(out_dir) / "masks");
        index.open(fs::path(out_dir) / "index.jsonl");
        if (!index) {
            throw IoError("cannot write index.jsonl in " + out_dir);
        }
    }
    for (const auto& v : volumes) {
        for (int k = 0; k < count; ++k) {
            auto rng = derived_rng(pose_seed(seed, k));
            const Pose6D pose = sample_pose(rng, bounds);
            SliceSample s = extract_slice(v, pose, px, px, spacing_mm);
            Mask mask = s.gt_mask ? *s.gt_mask : Mask(px, px, uchar{0});
            SliceRecord r;
            r.pose_id = k;
            r.volume_id = v.volume_id;
            r.pose = s.pose;
            r.brain_visible = cv::countNonZero(mask) > 0;
            if (!out_dir.empty()) {
                r.image_file = "images/" + slice_name(v.volume_id, k);
                r.mask_file = "masks/" + slice_name(v.volume_id, k);
                write_gray(s.image, (fs::path(out_dir) / r.image_file).string());
                write_mask(mask, (fs::path(out_dir) / r.mask_file).string());
                index << record_json(r).dump() << '\n';
            } else {
                images->push_back(quantize8(s.image));
                masks->push_back(std::move(mask));
            }
            records.push_back(std::move(r));
        }
    }
}

}  // namespace

SliceDataset SliceDataset::generate(const std::vector<Volume>& volumes, int count, const PoseBounds& bounds, int px,
                                    double spacing_mm, std::uint64_t seed)
{
    SliceDataset ds;
    slice_all(volumes, count, bounds, px, spacing_mm, seed, "", ds.records_, &ds.images_, &ds.masks_);
    return ds;
}

SliceDataset SliceDataset::write(const std::vector<Volume>& volumes, int count, const PoseBounds& bounds, int px,
                                 double spacing_mm, std::uint64_t seed, const std::string& out_dir)
{
    SliceDataset ds;
    ds.root_ = out_dir;
    slice_all(volumes, count, bounds, px, spacing_mm, seed, out_dir, ds.records_, nullptr, nullptr);
    return ds;
}

SliceSample SliceDataset::load(std::size_t i) const
{
    const SliceRecord& r = records_.at(i);
    SliceSample s;
    s.pose = r.pose;
    s.volume_id = r.volume_id;
    if (!images_.empty()) {
        s.image = images_[i];
        s.gt_mask = masks_[i];
        return s;
    }
    s.image = read_gray((fs::path(root_) / r.image_file).string());
    if (!r.mask_file.empty()) {
        s.gt_mask = read_mask((fs::path(root_) / r.mask_file).string());
    }
    return s;
}

std::vector<std::size_t> SliceDataset::indices_for(const std::set<std::string>& volume_ids) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        if (volume_ids.count(records_[i].volume_id)) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<PosePairedGroup> make_pose_groups(const SliceDataset& ds, const std::vector<std::string>& volume_ids)
{
    if (std::set<std::string>(volume_ids.begin(), volume_ids.end()).size() != volume_ids.size()) {
        throw ValidationError("make_pose_groups: duplicate volume ids");
    }
    std::map<int, std::map<std::string, std::size_t>> by_pose;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& r = ds.record(i);
        if (std::find(volume_ids.begin(), volume_ids.end(), r.volume_id) != volume_ids.end()) {
            by_pose[r.pose_id][r.volume_id] = i;
        }
    }
    std::vector<PosePairedGroup> groups;
    for (const auto& [pose_id, members] : by_pose) {
        if (members.size() != volume_ids.size()) {
            continue;
        }
        PosePairedGroup g;
        g.pose_id = pose_id;
        for (const auto& id : volume_ids) {
            g.members.push_back(members.at(id));
        }
        g.pose = ds.record(g.members.front()).pose;
        groups.push_back(std::move(g));
    }
    return groups;
}

// ---------------------------------------------------------------------------

bool AugmentParams::is_identity() const
{
    return !flip && rotate_deg == 0.0 && elastic_alpha_px == 0.0 && noise_sigma == 0.0 && brightness == 1.0 &&
           contrast == 1.0;
}

AugmentParams draw_augment(std::mt19937_64& rng, const AugmentRanges& ranges)
{
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    AugmentParams p;
    p.flip = u01(rng) < ranges.flip_prob;
    if (u01(rng) < ranges.rotate_prob) {
        p.rotate_deg = uniform(rng, -ranges.max_rotate_deg, ranges.max_rotate_deg);
    }
    if (u01(rng) < ranges.elastic_prob) {
        p.elastic_alpha_px = uniform(rng, 0.0, ranges.max_elastic_alpha_px);
        p.elastic_sigma_px = ranges.elastic_sigma_px;
        p.elastic_seed = rng();
    }
    if (u01(rng) < ranges.noise_prob) {
        p.noise_sigma = uniform(rng, 0.0, ranges.max_noise_sigma);
        p.noise_seed = rng();
    }
    if (u01(rng) < ranges.photometric_prob) {
        p.brightness = 1.0 + uniform(rng, -ranges.max_brightness, ranges.max_brightness);
        p.contrast = 1.0 + uniform(rng, -ranges.max_contrast, ranges.max_contrast);
    }
    return p;
}

namespace {

template <typename MatT>
MatT geometric(const AugmentParams& p, const MatT& src, int interp)
{
    MatT out = src.clone();
    if (p.flip) {
        cv::flip(out, out, 1);
    }
    if (p.rotate_deg != 0.0) {
        const cv::Point2f c((out.cols - 1) / 2.0f, (out.rows - 1) / 2.0f);
        const cv::Mat A = cv::getRotationMatrix2D(c, p.rotate_deg, 1.0);
        MatT rotated;
        cv::warpAffine(out, rotated, A, out.size(), interp, cv::BORDER_CONSTANT, cv::Scalar(0));
        out = rotated;
    }
    if (p.elastic_alpha_px > 0.0) {
        auto rng = derived_rng(p.elastic_seed);
        std::uniform_real_distribution<float> u(-1.0f, 1.0f);
        cv::Mat1f dx(out.rows, out.cols), dy(out.rows, out.cols);
        for (int r = 0; r < out.rows; ++r) {
            for (int c = 0; c < out.cols; ++c) {
                dx(r, c) = u(rng);
                dy(r, c) = u(rng);
            }
        }
        cv::GaussianBlur(dx, dx, cv::Size(0, 0), p.elastic_sigma_px);
        cv::GaussianBlur(dy, dy, cv::Size(0, 0), p.elastic_sigma_px);
        cv::Mat1f mx(out.rows, out.cols), my(out.rows, out.cols);
        for (int r = 0; r < out.rows; ++r) {
            for (int c = 0; c < out.cols; ++c) {
                mx(r, c) = c + static_cast<float>(p.elastic_alpha_px) * dx(r, c);
                my(r, c) = r + static_cast<float>(p.elastic_alpha_px) * dy(r, c);
            }
        }
        MatT warped;
        cv::remap(out, warped, mx, my, interp, cv::BORDER_CONSTANT, cv::Scalar(0));
        out = warped;
    }
    return out;
}

}  // namespace

Image apply_geometric(const AugmentParams& p, const Image& img) { return geometric(p, img, cv::INTER_LINEAR); }

Mask apply_geometric(const AugmentParams& p, const Mask& m) { return geometric(p, m, cv::INTER_NEAREST); }

Image apply_photometric(const AugmentParams& p, const Image& img)
{
    Image out = img.clone();
    if (p.contrast != 1.0) {
        const double mean = cv::mean(out)[0];
        out = (out - mean) * p.contrast + mean;
    }
    if (p.brightness != 1.0) {
        out = out * p.brightness;
    }
    if (p.noise_sigma > 0.0) {
        auto rng = derived_rng(p.noise_seed);
        std::normal_distribution<float> g(0.0f, static_cast<float>(p.noise_sigma));
        for (int r = 0; r < out.rows; ++r) {
            for (int c = 0; c < out.cols; ++c) {
                out(r, c) += g(rng);
            }
        }
    }
    cv::min(cv::max(out, 0.0f), 1.0f, out);
    return out;
}

LabeledSample augment(const LabeledSample& s, const AugmentParams& p)
{
    if (p.is_identity()) {
        return s;
    }
    LabeledSample out = s;
    out.image = apply_photometric(p, apply_geometric(p, s.image));
    out.mask = apply_geometric(p, s.mask);
    return out;
}

LabeledSample augment(const LabeledSample& s, std::mt19937_64& rng, const AugmentRanges& ranges)
{
    return augment(s, draw_augment(rng, ranges));
}

}  // namespace fetalnav
