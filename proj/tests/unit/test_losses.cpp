#include "fetalnav/errors.hpp"
#include "fetalnav/geometry.hpp"
#include "fetalnav/losses.hpp"

#undef CHECK
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

using namespace fetalnav;

namespace {

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

torch::Tensor from(const std::vector<double>& v, std::vector<int64_t> shape)
{
    return torch::tensor(v, kF64).view(shape);
}

std::vector<double> to_vec(const torch::Tensor& t)
{
    auto c = t.contiguous().to(torch::kFloat64);
    return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

double clip(double p)
{
    return std::min(std::max(p, kProbClip), 1.0 - kProbClip);
}

// Plain-loop oracles.
double bce_oracle(const std::vector<double>& p, const std::vector<double>& g)
{
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        s += -(g[i] * std::log(clip(p[i])) + (1 - g[i]) * std::log(1 - clip(p[i])));
    }
    return s / p.size();
}

double dice_oracle(const std::vector<double>& p, const std::vector<double>& g, int batch, double eps)
{
    const std::size_t per = p.size() / batch;
    double total = 0;
    for (int b = 0; b < batch; ++b) {
        double inter = 0, sp = 0, sg = 0;
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
            inter += p[i] * g[i];
            sp += p[i];
            sg += g[i];
        }
        total += 1 - (2 * inter + eps) / (sp + sg + eps);
    }
    return total / batch;
}

double mse(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return s / a.size();
}

// Central differences of a scalar function of x, in double precision.
std::vector<double> numeric_grad(const std::function<double(const torch::Tensor&)>& f, const torch::Tensor& x,
                                 double h = 1e-6)
{
    std::vector<double> g(x.numel());
    auto flat = x.detach().clone().contiguous().view(-1);
    for (int64_t i = 0; i < flat.numel(); ++i) {
        const double orig = flat[i].item<double>();
        flat[i] = orig + h;
        const double up = f(flat.view(x.sizes()));
        flat[i] = orig - h;
        const double down = f(flat.view(x.sizes()));
        flat[i] = orig;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

void check_grad(const std::function<torch::Tensor(const torch::Tensor&)>& loss, const torch::Tensor& x0)
{
    auto x = x0.detach().clone().set_requires_grad(true);
    loss(x).backward();
    const auto analytic = to_vec(x.grad());
    const auto numeric = numeric_grad([&](const torch::Tensor& t) { return loss(t).item<double>(); }, x0);
    double worst = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-6});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
    }
    CHECK(worst < 1e-4);
}

torch::Tensor pose_row(const Vec3& t, const Mat3& R)
{
    return torch::tensor({t.x(), t.y(), t.z(), R(0, 0), R(1, 0), R(2, 0), R(0, 1), R(1, 1), R(2, 1)}, kF64)
        .view({1, 9});
}

torch::Tensor mat_tensor(const Mat3& R)
{
    return torch::tensor({R(0, 0), R(0, 1), R(0, 2), R(1, 0), R(1, 1), R(1, 2), R(2, 0), R(2, 1), R(2, 2)}, kF64)
        .view({1, 3, 3});
}

}  // namespace

TEST_CASE("labeled loss: perfect prediction")
{
    auto g = from({1, 0, 1, 1, 0, 0, 1, 0}, {2, 1, 2, 2});
    const double l = loss_seg_labeled(g.clamp(kProbClip, 1 - kProbClip), g).item<double>();
    CHECK(l < 1e-5);
    CHECK(l >= 0.0);
}

TEST_CASE("labeled loss: constant 0.5 on a half-true mask")
{
    const auto g = from({1, 1, 0, 0, 1, 0, 1, 0}, {1, 1, 2, 4});
    const auto p = torch::full({1, 1, 2, 4}, 0.5, kF64);
    CHECK(bce_loss(p, g).item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    // Dice: inter 2, |P| 4, |G| 4 → 1 - 5/9.
    const double expected = (1 - 5.0 / 9.0 + std::log(2.0)) / 2;
    CHECK(std::abs(loss_seg_labeled(p, g).item<double>() - expected) < 1e-6);
}

TEST_CASE("labeled loss: disjoint confident masks")
{
    const auto g = from({1, 1, 0, 0}, {1, 1, 2, 2});
    const auto p = from({0, 0, 1, 1}, {1, 1, 2, 2});
    // Dice term 1 - eps/(|P|+|G|+eps).
    CHECK(dice_loss(p, g).item<double>() == doctest::Approx(1.0 - 1.0 / 5.0));
    CHECK(dice_loss(p, g, 1e-9).item<double>() == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("labeled loss matches loop oracle")
{
    torch::manual_seed(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = torch::rand({3, 1, 8, 8}, kF64);
        const auto g = (torch::rand({3, 1, 8, 8}, kF64) > 0.6).to(torch::kFloat64);
        const auto pv = to_vec(p), gv = to_vec(g);
        const double expected = (dice_oracle(pv, gv, 3, 1.0) + bce_oracle(pv, gv)) / 2;
        CHECK(std::abs(loss_seg_labeled(p, g).item<double>() - expected) < 1e-6);
    }
    CHECK_THROWS_AS(loss_seg_labeled(torch::rand({1, 1, 4, 4}), torch::rand({1, 1, 4, 5})), ValidationError);
}

TEST_CASE("unlabeled loss examples")
{
    const auto m = torch::rand({4, 1, 5, 5}, kF64);
    const auto same = m.narrow(0, 0, 1).expand({4, 1, 5, 5}).contiguous();
    CHECK(loss_seg_unlabeled(same).item<double>() == 0.0);

    // n = 2, one pixel differs by 1 over P = 25 pixels.
    auto a = torch::zeros({1, 1, 5, 5}, kF64);
    auto b = a.clone();
    b[0][0][2][3] = 1.0;
    CHECK(std::abs(loss_seg_unlabeled(torch::cat({a, b})).item<double>() - 1.0 / 25.0) < 1e-12);

    CHECK_THROWS_AS(loss_seg_unlabeled(torch::zeros({1, 1, 5, 5})), ValidationError);
}

TEST_CASE("unlabeled loss pair count for n = 2, 3, 4")
{
    torch::manual_seed(5);
    for (int n = 2; n <= 4; ++n) {
        const auto m = torch::rand({n, 1, 6, 6}, kF64);
        std::vector<std::vector<double>> masks;
        for (int i = 0; i < n; ++i) {
            masks.push_back(to_vec(m[i]));
        }
        double sum = 0;
        int pairs = 0;
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                sum += mse(masks[i], masks[j]);
                ++pairs;
            }
        }
        CHECK(pairs == n * (n - 1) / 2);
        const double expected = 2.0 / (n * (n - 1)) * sum;
        CHECK(std::abs(loss_seg_unlabeled(m).item<double>() - expected) < 1e-6);
        if (n == 3) {
            const double m12 = mse(masks[0], masks[1]), m13 = mse(masks[0], masks[2]), m23 = mse(masks[1], masks[2]);
            CHECK(std::abs(loss_seg_unlabeled(m).item<double>() - (m12 + m13 + m23) / 3) < 1e-12);
        }
    }
}

TEST_CASE("unlabeled loss is permutation invariant and batched consistently")
{
    torch::manual_seed(9);
    const auto m = torch::rand({3, 1, 6, 6}, kF64);
    const auto perm = torch::tensor({2, 0, 1}, torch::kLong);
    CHECK(std::abs(loss_seg_unlabeled(m).item<double>() - loss_seg_unlabeled(m.index_select(0, perm)).item<double>()) <
          1e-12);

    const auto groups = torch::rand({4, 3, 1, 6, 6}, kF64);
    double mean = 0;
    for (int gi = 0; gi < 4; ++gi) {
        mean += loss_seg_unlabeled(groups[gi]).item<double>() / 4;
    }
    CHECK(std::abs(loss_seg_unlabeled_batched(groups).item<double>() - mean) < 1e-12);
}

TEST_CASE("total segmentation loss")
{
    CHECK(loss_total(0.2, 0.4, 0.1, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(loss_total(0.0, 0.0, 0.0, 0.5) == 0.0);
    const auto t = loss_total(torch::tensor(0.2, kF64), torch::tensor(0.4, kF64), torch::tensor(0.1, kF64), 0.5);
    CHECK(std::abs(t.item<double>() - 0.5) < 1e-12);

    // Classification term is BCE on the head output.
    const auto probs = torch::tensor({0.9, 0.2, 0.7}, kF64);
    const auto labels = torch::tensor({1.0, 0.0, 1.0}, kF64);
    const double cls = -(std::log(0.9) + std::log(0.8) + std::log(0.7)) / 3;
    CHECK(std::abs(bce_loss(probs, labels).item<double>() - cls) < 1e-12);
}

TEST_CASE("batched rotations agree with the scalar versions")
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    for (int i = 0; i < 50; ++i) {
        const Vec3 a1(n(rng), n(rng), n(rng)), a2(n(rng), n(rng), n(rng));
        const auto six = torch::tensor({a1.x(), a1.y(), a1.z(), a2.x(), a2.y(), a2.z()}, kF64).view({1, 6});
        const auto Rt = rot6d_to_matrix_batched(six);
        const Mat3 R = rot6d_to_matrix({a1, a2});
        CHECK((Rt - mat_tensor(R)).abs().max().item<double>() < 1e-12);

        const Vec3 r = Vec3(n(rng), n(rng), n(rng)).normalized() * (0.1 + 3.0 * i / 50.0);
        const auto Rv = rotvec_to_matrix_batched(torch::tensor({r.x(), r.y(), r.z()}, kF64).view({1, 3}));
        CHECK((Rv - mat_tensor(rotvec_to_matrix(r))).abs().max().item<double>() < 1e-12);
    }
    const auto I = rotvec_to_matrix_batched(torch::zeros({1, 3}, kF64));
    CHECK((I - mat_tensor(Mat3::Identity())).abs().max().item<double>() < 1e-12);
}

TEST_CASE("pose loss examples")
{
    const Mat3 Rq = rotvec_to_matrix(Vec3(M_PI / 2, 0, 0));
    const Vec3 t(1, -2, 3);

    auto terms = loss_pose(pose_row(t, Rq), torch::tensor({1.0, -2.0, 3.0}, kF64).view({1, 3}), mat_tensor(Rq), 1.0);
    CHECK(terms.translation.item<double>() < 1e-12);
    CHECK(terms.rotation.item<double>() < 1e-12);
    CHECK(terms.total.item<double>() < 1e-12);

    terms = loss_pose(pose_row(t + Vec3(1, 2, 2), Rq), torch::tensor({1.0, -2.0, 3.0}, kF64).view({1, 3}),
                      mat_tensor(Rq), 1.0);
    CHECK(std::abs(terms.translation.item<double>() - 3.0) < 1e-6);
    CHECK(terms.rotation.item<double>() < 1e-12);

    terms = loss_pose(pose_row(t, Mat3::Identity()), torch::tensor({1.0, -2.0, 3.0}, kF64).view({1, 3}),
                      mat_tensor(Rq), 1.0);
    CHECK(std::abs(terms.rotation.item<double>() - 2.0) < 1e-6);
}

TEST_CASE("pose loss: batch mean, lambda linearity, scale invariance")
{
    torch::manual_seed(12);
    const auto pred = torch::randn({5, 9}, kF64);
    const auto gt_t = torch::randn({5, 3}, kF64) * 10;
    const auto gt_R = rotvec_to_matrix_batched(torch::randn({5, 3}, kF64));

    const auto l1 = loss_pose(pred, gt_t, gt_R, 1.0);
    const auto l2 = loss_pose(pred, gt_t, gt_R, 2.0);
    const double trans = l1.translation.item<double>();
    const double rot = l1.rotation.item<double>();
    CHECK(l2.total.item<double>() == rot + 2.0 * trans);
    CHECK(l1.total.item<double>() == rot + 1.0 * trans);
    CHECK(std::abs((l2.total - l1.total).item<double>() - trans) < 1e-12);

    // Translation term: mean Euclidean distance, by hand.
    const auto pv = to_vec(pred), tv = to_vec(gt_t);
    double mean_d = 0;
    for (int b = 0; b < 5; ++b) {
        mean_d += std::sqrt(std::pow(pv[b * 9] - tv[b * 3], 2) + std::pow(pv[b * 9 + 1] - tv[b * 3 + 1], 2) +
                            std::pow(pv[b * 9 + 2] - tv[b * 3 + 2], 2)) /
                  5;
    }
    CHECK(std::abs(trans - mean_d) < 1e-9);

    auto scaled = pred.clone();
    scaled.narrow(1, 3, 3).mul_(3.7);
    scaled.narrow(1, 6, 3).mul_(0.2);
    CHECK(std::abs(loss_pose(scaled, gt_t, gt_R, 1.0).rotation.item<double>() - rot) < 1e-12);

    CHECK_THROWS_AS(loss_pose(torch::zeros({2, 8}, kF64), gt_t, gt_R, 1.0), ValidationError);
}

TEST_CASE("pose loss rejects degenerate rotation parameters")
{
    auto pred = torch::zeros({2, 9}, kF64);
    pred[0][3] = 1.0;
    pred[0][7] = 1.0;
    // Row 1: first column zero.
    CHECK_THROWS_AS(loss_pose(pred, torch::zeros({2, 3}, kF64), torch::eye(3, kF64).expand({2, 3, 3}), 1.0),
                    DegenerateRepresentationError);
    pred[1][3] = 1.0;
    pred[1][6] = 2.0;  // parallel second column
    CHECK_THROWS_AS(loss_pose(pred, torch::zeros({2, 3}, kF64), torch::eye(3, kF64).expand({2, 3, 3}), 1.0),
                    DegenerateRepresentationError);
}

TEST_CASE("gradients match finite differences")
{
    torch::manual_seed(21);
    const auto target = (torch::rand({2, 1, 8, 8}, kF64) > 0.5).to(torch::kFloat64);
    const auto probs = torch::rand({2, 1, 8, 8}, kF64) * 0.9 + 0.05;
    check_grad([&](const torch::Tensor& p) { return loss_seg_labeled(p, target); }, probs);
    check_grad([&](const torch::Tensor& p) { return bce_loss(p, target); }, probs);
    check_grad([&](const torch::Tensor& p) { return dice_loss(p, target); }, probs);

    const auto masks = torch::rand({3, 1, 8, 8}, kF64);
    check_grad([](const torch::Tensor& m) { return loss_seg_unlabeled(m); }, masks);

    const auto gt_t = torch::randn({4, 3}, kF64) * 5;
    const auto gt_R = rotvec_to_matrix_batched(torch::randn({4, 3}, kF64));
    const auto pred = torch::randn({4, 9}, kF64);
    check_grad([&](const torch::Tensor& p) { return loss_pose(p, gt_t, gt_R, 0.7).total; }, pred);
    check_grad([&](const torch::Tensor& p) { return loss_pose(p, gt_t, gt_R, 1.0).rotation; }, pred);
    check_grad([&](const torch::Tensor& p) { return loss_pose(p, gt_t, gt_R, 1.0).translation; }, pred);
}
