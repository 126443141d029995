#include "fetalnav/pipeline.hpp"

#include "fetalnav/errors.hpp"
#include "fetalnav/image.hpp"
#include "fetalnav/seg_model.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace fetalnav {

std::vector<std::size_t> frame_schedule(std::size_t n_native, double native_fps, double hz)
{
    if (!(hz > 0.0) || !(native_fps > 0.0)) {
        throw ValidationError("frame rates must be positive");
    }
    if (n_native == 0) {
        return {};
    }
    const double duration = static_cast<double>(n_native - 1) / native_fps;
    const auto count = static_cast<std::size_t>(std::floor(duration * hz + 1e-9)) + 1;
    std::vector<std::size_t> idx(count);
    for (std::size_t k = 0; k < count; ++k) {
        const double src = static_cast<double>(k) / hz * native_fps;
        idx[k] = std::min(n_native - 1, static_cast<std::size_t>(std::llround(src)));
    }
    return idx;
}

std::vector<Frame> extract_frames(const std::string& stream, double hz)
{
    if (!(hz > 0.0)) {
        throw ValidationError("hz must be positive");
    }
    std::vector<Frame> out;
    if (fs::is_directory(stream)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(stream)) {
            if (e.path().extension() == ".png") {
                files.push_back(e.path());
            }
        }
        std::sort(files.begin(), files.end());
        double fps = 10.0;
        const auto meta = fs::path(stream) / "stream.json";
        if (fs::exists(meta)) {
            std::ifstream in(meta);
            fps = nlohmann::json::parse(in).value("fps", fps);
        }
        for (std::size_t k : frame_schedule(files.size(), fps, hz)) {
            out.push_back({static_cast<double>(out.size()) / hz, read_gray(files[k].string())});
        }
        if (out.empty()) {
            throw IoError("no PNG frames in " + stream);
        }
        return out;
    }
    if (!fs::exists(stream)) {
        throw NotFoundError("stream not found: " + stream);
    }
    cv::VideoCapture cap(stream);
    if (!cap.isOpened()) {
        throw IoError("cannot open stream " + stream);
    }
    const double fps = cap.get(cv::CAP_PROP_FPS) > 0 ? cap.get(cv::CAP_PROP_FPS) : 10.0;
    std::vector<Image> native;
    cv::Mat frame;
    while (cap.read(frame)) {
        cv::Mat gray;
        if (frame.channels() == 3) {
            cv::cvtColor(frame, gray, cv::COLOR_BGR2GRAY);
        } else {
            gray = frame;
        }
        Image f;
        gray.convertTo(f, CV_32F, 1.0 / 255.0);
        native.push_back(f);
    }
    if (native.empty()) {
        throw IoError("stream has no decodable frames: " + stream);
    }
    for (std::size_t k : frame_schedule(native.size(), fps, hz)) {
        out.push_back({static_cast<double>(out.size()) / hz, native[k]});
    }
    return out;
}

void write_frame_dir(const std::vector<Image>& frames, double fps, const std::string& dir)
{
    fs::create_directories(dir);
    char name[32];
    for (std::size_t i = 0; i < frames.size(); ++i) {
        std::snprintf(name, sizeof name, "%06zu.png", i);
        write_gray(frames[i], (fs::path(dir) / name).string());
    }
    std::ofstream(fs::path(dir) / "stream.json") << nlohmann::json{{"v", 1}, {"fps", fps}}.dump() << '\n';
}

PipelineModels load_pipeline_models(const std::string& seg_stem, const std::string& pose_stem)
{
    PipelineModels m;
    nlohmann::json seg_meta, pose_meta;
    m.seg = load_seg_model(seg_stem, &seg_meta);
    m.pose = load_pose_model(pose_stem, &pose_meta);
    m.seg_px = seg_meta.at("input_px").get<int>();
    m.threshold = seg_meta.value("threshold", 0.5);
    m.pose_px = pose_meta.at("input_px").get<int>();
    m.dilation_px = pose_meta.at("dilation_px").get<int>();
    m.masks = mask_mode_from_string(pose_meta.value("masks", std::string("pred")));
    return m;
}

FrameRecord process_frame(PipelineModels& models, const Image& image, double timestamp,
                          const PlaneAnnotation& annotation, int index)
{
    FrameRecord r;
    r.index = index;
    r.timestamp = timestamp;
    r.image = image;
    try {
        auto a = analyze_frames(models.seg, {image}, models.seg_px, models.threshold).front();
        r.brain_prob = a.brain_prob;
        r.brain_present = a.brain_present;
        if (!a.brain_present) {
            return r;
        }
        r.mask = a.mask;
        Image input;
        if (models.masks == MaskMode::Pred) {
            input = *mask_and_prepare(a.seg_input, a.mask, models.dilation_px, models.pose_px);
        } else {
            input = resize_linear(a.seg_input, models.pose_px);
        }
        r.pose = predict_pose(models.pose, {input}).front();
        r.proximity = proximity(*r.pose, annotation);
    } catch (const std::exception& e) {
        r.failed = true;
        r.error = e.what();
        r.pose.reset();
        r.proximity.reset();
    }
    return r;
}

std::vector<FrameRecord> run_pipeline(const std::vector<Frame>& frames, PipelineModels& models,
                                      const PlaneAnnotation& annotation)
{
    std::vector<FrameRecord> out;
    out.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        out.push_back(process_frame(models, frames[i].image, frames[i].timestamp, annotation, static_cast<int>(i)));
    }
    return out;
}

std::string to_string(ScanEvent::Kind k)
{
    switch (k) {
    case ScanEvent::Kind::Freeze:
        return "freeze";
    case ScanEvent::Kind::Unfreeze:
        return "unfreeze";
    case ScanEvent::Kind::Score:
        return "score";
    }
    return "?";
}

ScanEvent::Kind event_kind_from_string(const std::string& s)
{
    if (s == "freeze") {
        return ScanEvent::Kind::Freeze;
    }
    if (s == "unfreeze") {
        return ScanEvent::Kind::Unfreeze;
    }
    if (s == "score") {
        return ScanEvent::Kind::Score;
    }
    throw ValidationError("unknown event kind '" + s + "'");
}

std::vector<ScanEvent> load_events(const std::string& path, double duration)
{
    std::ifstream in(path);
    if (!in) {
        throw NotFoundError("events file not found: " + path);
    }
    const auto j = nlohmann::json::parse(in);
    std::vector<ScanEvent> out;
    for (const auto& e : j.at("events")) {
        ScanEvent ev;
        ev.timestamp = e.at("t").get<double>();
        ev.kind = event_kind_from_string(e.at("kind").get<std::string>());
        if (e.contains("score") && !e["score"].is_null()) {
            ev.score = e["score"].get<double>();
        }
        ev.text = e.value("text", std::string());
        if (ev.timestamp < 0.0 || ev.timestamp > duration + 1e-9) {
            throw ValidationError("event timestamp outside the stream: " + std::to_string(ev.timestamp));
        }
        out.push_back(std::move(ev));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ScanEvent& a, const ScanEvent& b) { return a.timestamp < b.timestamp; });
    return out;
}

void save_events(const std::vector<ScanEvent>& events, const std::string& path)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : events) {
        nlohmann::json j{{"t", e.timestamp}, {"kind", to_string(e.kind)}};
        if (e.score) {
            j["score"] = *e.score;
        }
        if (!e.text.empty()) {
            j["text"] = e.text;
        }
        arr.push_back(j);
    }
    std::ofstream(path) << nlohmann::json{{"v", 1}, {"events", arr}}.dump(2) << '\n';
}

std::vector<FrameLabel> load_frame_labels(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw NotFoundError("label file not found: " + path);
    }
    std::vector<FrameLabel> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (line.empty() || comma == std::string::npos) {
            continue;
        }
        try {
            out.push_back({std::stod(line.substr(0, comma)), line.substr(comma + 1)});
        } catch (const std::invalid_argument&) {
            // header
        }
    }
    return out;
}

std::string trace_csv(const std::vector<FrameRecord>& records)
{
    std::string out = "timestamp,brain_prob,trans_mm,rot_deg\n";
    char buf[128];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%.3f,%.6f,", r.timestamp, r.brain_prob);
        out += buf;
        if (r.proximity) {
            std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.proximity->trans_mm, r.proximity->rot_deg);
            out += buf;
        } else {
            out += ",";
        }
        out += '\n';
    }
    return out;
}

TracePlot render_trace(const std::vector<FrameRecord>& records, const std::vector<ScanEvent>& events,
                       const std::vector<FrameLabel>& labels)
{
    constexpr int W = 960, H = 540, left = 70, right = 20, top = 20, gap = 40, strip = 16;
    const int panel_h = (H - top - gap - 40 - strip) / 2;
    TracePlot plot;
    plot.image = cv::Mat3b(H, W, cv::Vec3b(255, 255, 255));
    double t_end = 1.0;
    for (const auto& r : records) {
        t_end = std::max(t_end, r.timestamp);
    }
    for (const auto& e : events) {
        t_end = std::max(t_end, e.timestamp);
    }
    const auto x_of = [&](double t) { return left + static_cast<int>(std::lround(t / t_end * (W - left - right - 1))); };

    double max_trans = 1.0, max_rot = 1.0;
    for (const auto& r : records) {
        if (r.proximity) {
            max_trans = std::max(max_trans, r.proximity->trans_mm);
            max_rot = std::max(max_rot, r.proximity->rot_deg);
        }
    }
    const cv::Scalar black(0, 0, 0), grey(200, 200, 200);
    struct Panel {
        int y0;
        double vmax;
        const char* name;
        cv::Scalar color;
        bool trans;
    };
    const Panel panels[] = {{top, max_trans, "trans (mm)", cv::Scalar(180, 80, 20), true},
                            {top + panel_h + gap, max_rot, "rot (deg)", cv::Scalar(20, 120, 230), false}};
    for (const auto& p : panels) {
        cv::rectangle(plot.image, {left, p.y0}, {W - right - 1, p.y0 + panel_h}, grey);
        cv::putText(plot.image, p.name, {5, p.y0 + 14}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.0f", p.vmax);
        cv::putText(plot.image, buf, {5, p.y0 + 30}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
        std::optional<cv::Point> prev;
        for (const auto& r : records) {
            if (!r.proximity) {
                prev.reset();
                continue;
            }
            const double v = p.trans ? r.proximity->trans_mm : r.proximity->rot_deg;
            const cv::Point pt(x_of(r.timestamp), p.y0 + panel_h - static_cast<int>(std::lround(v / p.vmax * panel_h)));
            if (prev) {
                cv::line(plot.image, *prev, pt, p.color, 1, cv::LINE_AA);
            }
            cv::circle(plot.image, pt, 1, p.color, cv::FILLED);
            prev = pt;
        }
    }
    const int strip_y = top + 2 * panel_h + gap + 6;
    for (const auto& l : labels) {
        if (!l.label.empty() && l.label != "background") {
            cv::line(plot.image, {x_of(l.timestamp), strip_y}, {x_of(l.timestamp), strip_y + strip}, cv::Scalar(40, 160, 40));
        }
    }
    for (const auto& e : events) {
        const int x = x_of(e.timestamp);
        cv::Scalar c = e.kind == ScanEvent::Kind::Freeze     ? cv::Scalar(0, 0, 255)
                       : e.kind == ScanEvent::Kind::Unfreeze ? cv::Scalar(0, 170, 0)
                                                             : cv::Scalar(200, 0, 200);
        cv::line(plot.image, {x, top}, {x, top + 2 * panel_h + gap}, c, 1);
        plot.marker_columns.push_back(x);
    }
    cv::putText(plot.image, "time (s)", {W / 2 - 30, H - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", t_end);
    cv::putText(plot.image, buf, {W - right - 40, H - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
    cv::putText(plot.image, "0", {left, H - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
    return plot;
}

nlohmann::json record_json(const FrameRecord& r)
{
    nlohmann::json j{{"v", 1},
                     {"index", r.index},
                     {"timestamp", r.timestamp},
                     {"brain_prob", r.brain_prob},
                     {"brain_present", r.brain_present},
                     {"failed", r.failed}};
    if (r.failed) {
        j["error"] = r.error;
    }
    if (r.pose) {
        j["pose"] = pose_to_json(*r.pose);
    }
    if (r.proximity) {
        j["proximity"] = {{"trans_mm", r.proximity->trans_mm},
                          {"rot_deg", r.proximity->rot_deg},
                          {"rot_deg_unfolded", r.proximity->rot_deg_unfolded},
                          {"geodesic_deg", r.proximity->geodesic_deg}};
    }
    return j;
}

void emit_trace(const std::vector<FrameRecord>& records, const std::vector<ScanEvent>& events,
                const std::string& out_dir, const std::vector<FrameLabel>& labels)
{
    fs::create_directories(out_dir);
    {
        std::ofstream csv(fs::path(out_dir) / "trace.csv", std::ios::binary);
        csv << trace_csv(records);
    }
    const auto plot = render_trace(records, events, labels);
    if (!cv::imwrite((fs::path(out_dir) / "trace.png").string(), plot.image)) {
        throw IoError("cannot write trace.png in " + out_dir);
    }
    std::ofstream jl(fs::path(out_dir) / "records.jsonl", std::ios::binary);
    for (const auto& r : records) {
        jl << record_json(r).dump() << '\n';
    }
}

std::vector<Pose6D> approach_path(const Pose6D& start, const Pose6D& target, int n)
{
    if (n < 2) {
        throw ValidationError("approach path needs at least two poses");
    }
    const Eigen::Quaterniond q0(start.rotation());
    const Eigen::Quaterniond q1(target.rotation());
    std::vector<Pose6D> out;
    for (int i = 0; i < n; ++i) {
        const double s = static_cast<double>(i) / (n - 1);
        Pose6D p;
        p.t = (1.0 - s) * start.t + s * target.t;
        p.r = matrix_to_rotvec(q0.slerp(s, q1).normalized().toRotationMatrix());
        out.push_back(p);
    }
    out.back() = target;
    return out;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v)
{
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) {
            ++j;
        }
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2) {
        throw ValidationError("spearman needs two equally long series of at least 2 points");
    }
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw ValidationError("spearman undefined for a constant series");
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace fetalnav
