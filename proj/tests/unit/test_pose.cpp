#include "fetalnav/errors.hpp"
#include "fetalnav/losses.hpp"
#include "fetalnav/pose_model.hpp"
#include "fetalnav/rng.hpp"

#undef CHECK
#include <doctest.h>

#include <filesystem>

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

PoseConfig tiny_config()
{
    PoseConfig c;
    c.input_px = 32;
    c.widths = {8, 16, 32, 64};
    c.epochs = 3;
    c.batch_size = 8;
    c.lr = 3e-3;
    c.translation_scale_mm = 20.0;
    return c;
}

std::vector<PoseSample> random_samples(int n, std::uint64_t seed)
{
    auto rng = derived_rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<PoseSample> out;
    for (int i = 0; i < n; ++i) {
        PoseSample s;
        // A bright disc at a random place and size, so that samples are distinguishable.
        const float cr = 6 + 20 * u(rng), cc = 6 + 20 * u(rng), rad = 3 + 6 * u(rng), level = 0.3f + 0.7f * u(rng);
        s.input = Image(32, 32);
        for (int r = 0; r < 32; ++r) {
            for (int c = 0; c < 32; ++c) {
                const bool in = (r - cr) * (r - cr) + (c - cc) * (c - cc) < rad * rad;
                s.input(r, c) = in ? level : 0.1f * u(rng);
            }
        }
        s.pose = sample_pose(rng, PoseBounds{});
        s.volume_id = "vol" + std::to_string(i % 3);
        s.pose_id = i;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_CASE("pose network emits nine values")
{
    torch::manual_seed(1);
    PoseNet net(std::vector<int>{8, 16, 32, 64}, 20.0);
    net->eval();
    const auto y = net->forward(torch::rand({3, 3, 32, 32}));
    CHECK(y.sizes() == torch::IntArrayRef({3, 9}));
    CHECK(torch::isfinite(y).all().item<bool>());
}

TEST_CASE("dilated masking")
{
    const Image img(64, 64, 1.0f);
    Mask full(64, 64, uchar{1});
    const auto a = apply_dilated_mask(img, full, 30);
    REQUIRE(a);
    CHECK(cv::countNonZero(*a) == 64 * 64);

    Mask dot(64, 64, uchar{0});
    dot(32, 32) = 1;
    const auto b = apply_dilated_mask(img, dot, 30);
    REQUIRE(b);
    CHECK(cv::countNonZero(*b) == 30 * 30);
    int prev = 0;
    for (int k : {1, 3, 6, 11, 20, 30}) {
        const int n = cv::countNonZero(*apply_dilated_mask(img, dot, k));
        CHECK(n == k * k);
        CHECK(n >= prev);
        prev = n;
    }

    CHECK_FALSE(apply_dilated_mask(img, Mask(64, 64, uchar{0}), 30).has_value());
    CHECK_FALSE(mask_and_prepare(img, Mask(64, 64, uchar{0}), 30, 32).has_value());
    const auto p = mask_and_prepare(img, dot, 6, 32);
    REQUIRE(p);
    CHECK(p->rows == 32);
    CHECK(p->cols == 32);
    CHECK_THROWS_AS(apply_dilated_mask(img, Mask(32, 32, uchar{0}), 3), ValidationError);
    CHECK_THROWS_AS(apply_dilated_mask(img, dot, 0), ValidationError);

    CHECK(mask_mode_from_string("pred") == MaskMode::Pred);
    CHECK(to_string(MaskMode::None) == "none");
    CHECK_THROWS_AS(mask_mode_from_string("gt"), ValidationError);
}

TEST_CASE("error statistics")
{
    const auto s = error_stats({1.0, 2.0, 9.0});
    CHECK(s.median == 2.0);
    CHECK(s.mean == 4.0);
    CHECK(s.min == 1.0);
    CHECK(s.max == 9.0);
    CHECK(error_stats({10.0, 1.0, 3.0, 2.0}).median == 2.5);
    CHECK_THROWS_AS(error_stats({}), ValidationError);
}

TEST_CASE("validation split")
{
    const auto [train, val] = validation_split(50, 0.2, 3);
    CHECK(val.size() == 10);
    CHECK(train.size() == 40);
    std::set<std::size_t> all(train.begin(), train.end());
    all.insert(val.begin(), val.end());
    CHECK(all.size() == 50);
    CHECK(validation_split(50, 0.2, 3).second == val);
    CHECK(validation_split(50, 0.2, 4).second != val);
    CHECK_THROWS_AS(validation_split(10, 1.0, 1), ValidationError);
}

TEST_CASE("published training configuration")
{
    const PoseConfig paper;
    CHECK(paper.epochs == 200);
    CHECK(paper.batch_size == 64);
    CHECK(paper.lr == 1e-4);
    CHECK(paper.val_fraction == 0.2);
    CHECK(paper.dilation_px == 30);
    CHECK(paper.input_px == 128);
    CHECK(paper.widths == std::vector<int>{64, 128, 256, 512});
}

TEST_CASE("regressor overfits a tiny set")
{
    auto cfg = tiny_config();
    cfg.epochs = 150;
    cfg.lr = 3e-3;
    cfg.batch_size = 20;
    cfg.val_fraction = 0.0;
    PoseTrainer t(cfg, 2);
    const auto logs = t.train(random_samples(20, 6));
    REQUIRE(logs.size() == 150);
    CHECK(logs.back().train_loss < 0.1 * logs.front().train_loss);
}

TEST_CASE("head gradient matches finite differences")
{
    torch::manual_seed(4);
    PoseNet net(std::vector<int>{4, 8, 8, 8}, 20.0);
    net->to(torch::kFloat64);
    net->eval();
    const auto x = torch::rand({2, 3, 16, 16}, torch::kFloat64);
    const auto gt_t = torch::randn({2, 3}, torch::kFloat64) * 5;
    const auto gt_R = rotvec_to_matrix_batched(torch::randn({2, 3}, torch::kFloat64));
    const auto loss = [&] { return loss_pose(net->forward(x), gt_t, gt_R, 1.0).total; };

    net->zero_grad();
    loss().backward();
    auto& w = net->fc->weight;
    const auto analytic = w.grad().clone();
    torch::NoGradGuard ng;
    // Entries far below the gradient scale sit at the roundoff floor of the difference quotient.
    const double floor = 1e-3 * analytic.abs().max().item<double>();
    double worst = 0;
    for (int64_t row = 0; row < 9; ++row) {
        for (int64_t col = 0; col < std::min<int64_t>(w.size(1), 4); ++col) {
            const double orig = w[row][col].item<double>();
            const double h = 1e-6;
            w[row][col] = orig + h;
            const double up = loss().item<double>();
            w[row][col] = orig - h;
            const double down = loss().item<double>();
            w[row][col] = orig;
            const double num = (up - down) / (2 * h);
            const double an = analytic[row][col].item<double>();
            worst = std::max(worst, std::abs(num - an) / std::max({std::abs(num), std::abs(an), floor}));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("checkpoint resume reproduces the next epoch")
{
    auto cfg = tiny_config();
    const auto samples = random_samples(24, 8);
    TempDir dir("pose_resume");
    const auto stem = (dir.path / "pose").string();

    PoseTrainer a(cfg, 5);
    a.train(samples, 0, 1);
    a.save_checkpoint(stem, 1, {{"masks", "pred"}});
    const auto next = a.train(samples, 1, 2);

    PoseTrainer b(cfg, 5);
    const auto meta = b.load_checkpoint(stem, true);
    CHECK(meta.at("epochs_done") == 1);
    CHECK(meta.at("masks") == "pred");
    const auto again = b.train(samples, 1, 2);
    REQUIRE(next.size() == 1);
    REQUIRE(again.size() == 1);
    CHECK(std::abs(next[0].train_loss - again[0].train_loss) < 1e-6);
    CHECK(std::abs(next[0].val_loss - again[0].val_loss) < 1e-6);

    nlohmann::json m;
    auto net = load_pose_model(stem, &m);
    CHECK(m.at("translation_scale_mm") == 20.0);
    const auto p = predict_pose(net, {samples[0].input, samples[1].input});
    CHECK(p.size() == 2);
    CHECK_THROWS_AS(load_pose_model((dir.path / "missing").string()), NotFoundError);
}

TEST_CASE("pose from network output")
{
    const float ok[9] = {1, 2, 3, 1, 0, 0, 0, 1, 0};
    const auto p = pose_from_output(ok);
    CHECK((p.t - Vec3(1, 2, 3)).norm() < 1e-6);
    CHECK(p.r.norm() < 1e-6);
    const float zero[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(pose_from_output(zero), DegenerateRepresentationError);
    const float parallel[9] = {0, 0, 0, 1, 1, 0, 2, 2, 0};
    CHECK_THROWS_AS(pose_from_output(parallel), DegenerateRepresentationError);
}

TEST_CASE("error summaries and csv")
{
    std::vector<SliceError> errs{{"vol0", 1, 2.0, 10.0, 170.0, 170.0}, {"vol0", 2, 4.0, 20.0, 20.0, 25.0}};
    const auto e = summarize_errors(errs);
    CHECK(e.trans.median == 3.0);
    CHECK(e.rot.max == 20.0);
    CHECK(e.rot_unfolded.max == 170.0);
    TempDir dir("pose_csv");
    const auto path = (dir.path / "e.csv").string();
    write_slice_errors_csv(e, path);
    const auto back = read_slice_errors_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[1].pose_id == 2);
    CHECK(back[1].geodesic_deg == 25.0);
    CHECK(summary_json(e).at("translation_mm").at("median") == 3.0);

    // Evaluating on the training targets of a perfect-translation head.
    auto samples = random_samples(4, 1);
    PoseNet net(std::vector<int>{8, 16, 32, 64}, 20.0);
    const auto ev = evaluate_pose(net, samples);
    CHECK(ev.slices.size() == 4);
    for (const auto& s : ev.slices) {
        CHECK(s.rot_deg <= 90.0);
        CHECK(s.rot_deg >= 0.0);
        CHECK(s.rot_deg_unfolded >= s.rot_deg - 1e-9);
    }
}
