#include "fetalnav/errors.hpp"
#include "fetalnav/image.hpp"
#include "fetalnav/pipeline.hpp"
#include "fetalnav/rng.hpp"

#undef CHECK
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace fetalnav;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("fetalnav_" + tag + "_" + std::to_string(::getpid())))
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Tiny networks with hand-set heads: the classifier bias decides brain presence,
// the segmentation bias fills the mask, the pose head can be zeroed.
PipelineModels tiny_models(double class_bias, bool degenerate_pose)
{
    torch::manual_seed(3);
    PipelineModels m;
    m.seg = SegNet(std::vector<int>{4, 8, 16});
    m.pose = PoseNet(std::vector<int>{4, 8, 8, 8}, 20.0);
    torch::NoGradGuard ng;
    m.seg->cls_head->weight.zero_();
    m.seg->cls_head->bias.fill_(class_bias);
    m.seg->seg_head->weight.zero_();
    m.seg->seg_head->bias.fill_(10.0);
    if (degenerate_pose) {
        m.pose->fc->weight.zero_();
        m.pose->fc->bias.zero_();
    }
    m.seg->eval();
    m.pose->eval();
    m.seg_px = 32;
    m.pose_px = 32;
    m.dilation_px = 6;
    return m;
}

Image noise_image(int rows, int cols, std::uint64_t seed)
{
    auto rng = derived_rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image img(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            img(r, c) = u(rng);
        }
    }
    return img;
}

FrameRecord fake_record(int i, double t, std::optional<Proximity> p)
{
    FrameRecord r;
    r.index = i;
    r.timestamp = t;
    r.brain_prob = 0.5;
    r.proximity = p;
    if (p) {
        r.pose = Pose6D{};
        r.brain_present = true;
    }
    return r;
}

}  // namespace

TEST_CASE("frame schedule")
{
    // 10 s of 30 fps video sampled at 10 Hz.
    const auto idx = frame_schedule(301, 30.0, 10.0);
    REQUIRE(idx.size() == 101);
    CHECK(idx.front() == 0);
    CHECK(idx[1] == 3);
    CHECK(idx.back() == 300);
    const auto same = frame_schedule(50, 10.0, 10.0);
    REQUIRE(same.size() == 50);
    for (std::size_t k = 0; k < same.size(); ++k) {
        CHECK(same[k] == k);
    }
    CHECK(frame_schedule(0, 10.0, 10.0).empty());
    CHECK(frame_schedule(1, 10.0, 10.0).size() == 1);
    CHECK_THROWS_AS(frame_schedule(10, 10.0, 0.0), ValidationError);
    CHECK_THROWS_AS(frame_schedule(10, -1.0, 10.0), ValidationError);
}

TEST_CASE("frame directory round trip")
{
    TempDir dir("frames");
    std::vector<Image> frames;
    for (int i = 0; i < 21; ++i) {
        frames.push_back(Image(16, 20, static_cast<float>(i) / 20.0f));
    }
    write_frame_dir(frames, 20.0, dir.path.string());
    const auto back = extract_frames(dir.path.string(), 10.0);
    REQUIRE(back.size() == 11);
    for (std::size_t k = 0; k < back.size(); ++k) {
        CHECK(back[k].timestamp == doctest::Approx(k / 10.0));
        CHECK(back[k].image(0, 0) == doctest::Approx(quantize8(frames[2 * k])(0, 0)));
    }
    CHECK_THROWS_AS(extract_frames((dir.path / "missing").string(), 10.0), NotFoundError);
    CHECK_THROWS_AS(extract_frames(dir.path.string(), 0.0), ValidationError);
}

TEST_CASE("frame without a brain gives no pose")
{
    auto m = tiny_models(-20.0, false);
    const auto r = process_frame(m, Image(48, 64, 0.0f), 1.5, PlaneAnnotation{}, 7);
    CHECK_FALSE(r.brain_present);
    CHECK_FALSE(r.failed);
    CHECK_FALSE(r.pose.has_value());
    CHECK_FALSE(r.proximity.has_value());
    CHECK(r.brain_prob < 1e-6);
    CHECK(r.index == 7);
    CHECK(r.timestamp == 1.5);
}

TEST_CASE("frame with a brain gives a proximity reading")
{
    auto m = tiny_models(20.0, false);
    PlaneAnnotation sp;
    sp.pose.t = Vec3(3, -1, 2);
    sp.pose.r = Vec3(0.2, 0.1, -0.3);
    const auto r = process_frame(m, noise_image(48, 64, 1), 0.0, sp);
    REQUIRE(r.brain_present);
    CHECK_FALSE(r.failed);
    REQUIRE(r.pose);
    REQUIRE(r.proximity);
    REQUIRE(r.mask);
    CHECK(r.mask->rows == 32);
    const auto p = proximity(*r.pose, sp);
    CHECK(p.trans_mm == r.proximity->trans_mm);
    CHECK(p.rot_deg == r.proximity->rot_deg);

    // Without masking the same frame still produces a pose.
    m.masks = MaskMode::None;
    CHECK(process_frame(m, noise_image(48, 64, 1), 0.0, sp).pose.has_value());
}

TEST_CASE("degenerate pose output marks the frame failed")
{
    auto m = tiny_models(20.0, true);
    const auto r = process_frame(m, noise_image(32, 32, 2), 0.2, PlaneAnnotation{});
    CHECK(r.brain_present);
    CHECK(r.failed);
    CHECK_FALSE(r.error.empty());
    CHECK_FALSE(r.pose.has_value());
    CHECK_FALSE(r.proximity.has_value());
    const auto j = record_json(r);
    CHECK(j.at("failed") == true);
    CHECK(j.contains("error"));
    CHECK_FALSE(j.contains("proximity"));

    // run_pipeline keeps going after a failed frame.
    const auto recs = run_pipeline({{0.0, noise_image(32, 32, 3)}, {0.1, noise_image(32, 32, 4)}}, m, PlaneAnnotation{});
    REQUIRE(recs.size() == 2);
    CHECK(recs[1].index == 1);
    CHECK(recs[1].failed);
}

TEST_CASE("trace csv")
{
    CHECK(trace_csv({}) == "timestamp,brain_prob,trans_mm,rot_deg\n");
    Proximity p;
    p.trans_mm = 4.25;
    p.rot_deg = 12.5;
    const std::vector<FrameRecord> recs{fake_record(0, 0.0, p), fake_record(1, 0.1, std::nullopt)};
    const auto csv = trace_csv(recs);
    CHECK(csv == "timestamp,brain_prob,trans_mm,rot_deg\n0.000,0.500000,4.250000,12.500000\n0.100,0.500000,,\n");
    CHECK(trace_csv(recs) == csv);
}

TEST_CASE("trace plot marks every event")
{
    std::vector<FrameRecord> recs;
    for (int i = 0; i <= 50; ++i) {
        Proximity p;
        p.trans_mm = 50 - i;
        p.rot_deg = (50 - i) * 0.5;
        recs.push_back(fake_record(i, i * 0.1, p));
    }
    std::vector<ScanEvent> events(3);
    events[0].timestamp = 1.0;
    events[1].timestamp = 2.5;
    events[1].kind = ScanEvent::Kind::Score;
    events[1].score = 0.8;
    events[2].timestamp = 5.0;
    events[2].kind = ScanEvent::Kind::Unfreeze;
    const auto plot = render_trace(recs, events, {{0.0, "abdomen"}, {2.0, "head"}});
    CHECK(plot.image.cols > 0);
    REQUIRE(plot.marker_columns.size() == 3);
    CHECK(plot.marker_columns[0] < plot.marker_columns[1]);
    CHECK(plot.marker_columns[1] < plot.marker_columns[2]);
    CHECK(render_trace(recs, {}).marker_columns.empty());

    TempDir dir("trace");
    emit_trace(recs, events, dir.path.string());
    CHECK(fs::exists(dir.path / "trace.csv"));
    CHECK(fs::exists(dir.path / "trace.png"));
    std::ifstream jl(dir.path / "records.jsonl");
    int lines = 0;
    for (std::string line; std::getline(jl, line);) {
        CHECK(nlohmann::json::parse(line).at("index") == lines);
        ++lines;
    }
    CHECK(lines == 51);
}

TEST_CASE("event files")
{
    TempDir dir("events");
    const auto path = (dir.path / "events.json").string();
    std::vector<ScanEvent> ev(2);
    ev[0].timestamp = 3.0;
    ev[0].kind = ScanEvent::Kind::Score;
    ev[0].score = 0.7;
    ev[0].text = "good";
    ev[1].timestamp = 1.0;
    save_events(ev, path);
    const auto back = load_events(path, 5.0);
    REQUIRE(back.size() == 2);
    CHECK(back[0].timestamp == 1.0);
    CHECK(back[1].score == 0.7);
    CHECK(back[1].text == "good");
    CHECK_THROWS_AS(load_events(path, 2.0), ValidationError);
    CHECK_THROWS_AS(load_events((dir.path / "none.json").string(), 5.0), NotFoundError);

    std::ofstream(dir.path / "bad.json") << R"({"v":1,"events":[{"t":1.0,"kind":"wiggle"}]})";
    CHECK_THROWS(load_events((dir.path / "bad.json").string(), 5.0));
    CHECK(event_kind_from_string("freeze") == ScanEvent::Kind::Freeze);
    CHECK(to_string(ScanEvent::Kind::Unfreeze) == "unfreeze");
}

TEST_CASE("spearman correlation")
{
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    // Monotone transforms do not matter.
    CHECK(spearman({1, 2, 3, 4, 5}, {1, 8, 27, 64, 125}) == doctest::Approx(1.0));
    // Hand-ranked: x ranks 1..5, y ranks (2,1,4,3,5): 1 - 6·4/(5·24) = 0.8.
    CHECK(spearman({1, 2, 3, 4, 5}, {2, 1, 4, 3, 5}) == doctest::Approx(0.8));
    // Ties take average ranks: y ranks (1, 2.5, 2.5, 4).
    CHECK(spearman({1, 2, 3, 4}, {1, 2, 2, 3}) == doctest::Approx(0.9486832980505138));
    CHECK_THROWS_AS(spearman({1, 2, 3}, {5, 5, 5}), ValidationError);
    CHECK_THROWS_AS(spearman({1}, {1}), ValidationError);
    CHECK_THROWS_AS(spearman({1, 2}, {1, 2, 3}), ValidationError);
}

TEST_CASE("approach path")
{
    Pose6D start, target;
    start.t = Vec3(30, -10, 5);
    start.r = Vec3(0.6, -0.2, 0.3);
    target.t = Vec3(1, 2, 3);
    target.r = Vec3(-0.1, 0.2, 0.05);
    const auto path = approach_path(start, target, 40);
    REQUIRE(path.size() == 40);
    CHECK((path.front().t - start.t).norm() < 1e-12);
    CHECK((path.front().r - start.r).norm() < 1e-9);
    CHECK((path.back().t - target.t).norm() == 0.0);
    CHECK((path.back().r - target.r).norm() == 0.0);

    std::vector<double> time, trans, geo;
    for (std::size_t i = 0; i < path.size(); ++i) {
        const auto p = proximity(path[i], target);
        time.push_back(static_cast<double>(i));
        trans.push_back(p.trans_mm);
        geo.push_back(p.geodesic_deg);
        if (i > 0) {
            CHECK(trans[i] < trans[i - 1]);
            CHECK(geo[i] <= geo[i - 1] + 1e-9);
        }
    }
    CHECK(spearman(time, trans) == -1.0);
    CHECK(proximity(path.back(), target).trans_mm == 0.0);
    CHECK_THROWS_AS(approach_path(start, target, 1), ValidationError);
}
