#include "fetalnav/errors.hpp"
#include "fetalnav/geometry.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace fetalnav;

namespace {

// Power series of the skew matrix, independent of the Rodrigues code path.
Mat3 expm_series(const Vec3& r)
{
    Mat3 K;
    K << 0, -r.z(), r.y(), r.z(), 0, -r.x(), -r.y(), r.x(), 0;
    Mat3 sum = Mat3::Identity();
    Mat3 term = Mat3::Identity();
    for (int k = 1; k < 60; ++k) {
        term = term * K / static_cast<double>(k);
        sum += term;
    }
    return sum;
}

Mat3 gram_schmidt_by_hand(const Vec3& a1, const Vec3& a2)
{
    const Vec3 b1 = a1 / std::sqrt(a1.dot(a1));
    Vec3 u = a2 - b1.dot(a2) * b1;
    const Vec3 b2 = u / std::sqrt(u.dot(u));
    const Vec3 b3(b1.y() * b2.z() - b1.z() * b2.y(), b1.z() * b2.x() - b1.x() * b2.z(),
                  b1.x() * b2.y() - b1.y() * b2.x());
    Mat3 R;
    R.col(0) = b1;
    R.col(1) = b2;
    R.col(2) = b3;
    return R;
}

Vec3 random_unit(std::mt19937_64& rng)
{
    std::normal_distribution<double> n;
    Vec3 v(n(rng), n(rng), n(rng));
    return v.normalized();
}

Pose6D random_pose(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> ang(0.0, 3.0);
    Pose6D p;
    p.t = Vec3(u(rng), u(rng), u(rng)) * 30.0;
    p.r = random_unit(rng) * ang(rng);
    return p;
}

}  // namespace

TEST_CASE("rot6d examples")
{
    CHECK(rot6d_to_matrix({Vec3(1, 0, 0), Vec3(0, 1, 0)}).isApprox(Mat3::Identity(), 1e-12));
    CHECK(rot6d_to_matrix({Vec3(2, 0, 0), Vec3(0, 3, 0)}).isApprox(Mat3::Identity(), 1e-12));

    Mat3 expected;
    expected.col(0) = Vec3(0, 1, 0);
    expected.col(1) = Vec3(0, 0, 1);
    expected.col(2) = Vec3(1, 0, 0);
    CHECK((rot6d_to_matrix({Vec3(0, 1, 0), Vec3(0, 0, 1)}) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rot6d matches hand Gram-Schmidt")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    for (int i = 0; i < 500; ++i) {
        const Vec3 a1(n(rng), n(rng), n(rng));
        const Vec3 a2(n(rng), n(rng), n(rng));
        const Mat3 R = rot6d_to_matrix({a1, a2});
        CHECK((R - gram_schmidt_by_hand(a1, a2)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("rot6d degenerate inputs throw")
{
    CHECK_THROWS_AS(rot6d_to_matrix({Vec3::Zero(), Vec3(0, 1, 0)}), DegenerateRepresentationError);
    CHECK_THROWS_AS(rot6d_to_matrix({Vec3(1, 2, 3), Vec3(2, 4, 6)}), DegenerateRepresentationError);
    CHECK_THROWS_AS(rot6d_to_matrix({Vec3(1, 0, 0), Vec3(-3, 0, 0)}), DegenerateRepresentationError);
    CHECK_THROWS_AS(rot6d_to_matrix({Vec3(1, 0, 0), Vec3::Zero()}), DegenerateRepresentationError);
    CHECK_THROWS_AS(rot6d_to_matrix({Vec3(NAN, 0, 0), Vec3(0, 1, 0)}), DegenerateRepresentationError);
}

TEST_CASE("rot6d property: orthonormal, det 1, scale invariant")
{
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> s(0.01, 100.0);
    double worst_orth = 0, worst_det = 0, worst_scale = 0;
    for (int i = 0; i < 10000; ++i) {
        const Vec3 a1(n(rng), n(rng), n(rng));
        const Vec3 a2(n(rng), n(rng), n(rng));
        const Mat3 R = rot6d_to_matrix({a1, a2});
        worst_orth = std::max(worst_orth, (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff());
        worst_det = std::max(worst_det, std::abs(R.determinant() - 1.0));
        const Mat3 Rs = rot6d_to_matrix({s(rng) * a1, s(rng) * a2});
        worst_scale = std::max(worst_scale, (R - Rs).cwiseAbs().maxCoeff());
    }
    CHECK(worst_orth < 1e-6);
    CHECK(worst_det < 1e-6);
    CHECK(worst_scale < 1e-9);
}

TEST_CASE("matrix_to_rot6d inverts rot6d_to_matrix")
{
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        const Mat3 R = rotvec_to_matrix(random_unit(rng) * 2.0);
        CHECK((rot6d_to_matrix(matrix_to_rot6d(R)) - R).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("rotvec examples")
{
    CHECK(rotvec_to_matrix(Vec3::Zero()).isApprox(Mat3::Identity()));
    const Mat3 R = rotvec_to_matrix(Vec3(M_PI / 2, 0, 0));
    CHECK(std::abs(R(1, 1)) < 1e-12);
    CHECK(R(1, 2) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(R(2, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((R - expm_series(Vec3(M_PI / 2, 0, 0))).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rotvec_to_matrix agrees with the matrix exponential")
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> ang(0.0, 3.1);
    for (int i = 0; i < 300; ++i) {
        const Vec3 r = random_unit(rng) * ang(rng);
        CHECK((rotvec_to_matrix(r) - expm_series(r)).cwiseAbs().maxCoeff() < 1e-10);
    }
    const Vec3 tiny(1e-10, -2e-10, 3e-10);
    CHECK((rotvec_to_matrix(tiny) - expm_series(tiny)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("rotvec round trip")
{
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> ang(0.0, 3.0);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        const Vec3 r = random_unit(rng) * ang(rng);
        worst = std::max(worst, (matrix_to_rotvec(rotvec_to_matrix(r)) - r).norm());
    }
    CHECK(worst < 1e-6);

    for (int i = 0; i < 200; ++i) {
        const Vec3 r = random_unit(rng) * (M_PI - 1e-3);
        CHECK((matrix_to_rotvec(rotvec_to_matrix(r)) - r).norm() < 1e-6);
    }
}

TEST_CASE("matrix_to_rotvec rejects non-rotations")
{
    Mat3 scaled = Mat3::Identity() * 1.01;
    CHECK_THROWS_AS(matrix_to_rotvec(scaled), ValidationError);
    Mat3 reflection = Mat3::Identity();
    reflection(2, 2) = -1;
    CHECK_THROWS_AS(matrix_to_rotvec(reflection), ValidationError);
    Mat3 bad = Mat3::Identity();
    bad(0, 0) = NAN;
    CHECK_THROWS_AS(matrix_to_rotvec(bad), ValidationError);
}

TEST_CASE("canonicalize_rotvec")
{
    const Vec3 r = canonicalize_rotvec(Vec3(0, 0, 1.5 * M_PI));
    CHECK(r.norm() <= M_PI + 1e-12);
    CHECK((rotvec_to_matrix(r) - rotvec_to_matrix(Vec3(0, 0, 1.5 * M_PI))).cwiseAbs().maxCoeff() < 1e-12);

    // At exactly pi the lexicographically larger representative wins.
    const Vec3 a = canonicalize_rotvec(Vec3(-M_PI, 0, 0));
    CHECK(a.x() == doctest::Approx(M_PI));
    const Vec3 b = canonicalize_rotvec(Vec3(0, -M_PI, 0));
    CHECK(b.y() == doctest::Approx(M_PI));
    CHECK((canonicalize_rotvec(Vec3(0.3, -0.2, 0.1)) - Vec3(0.3, -0.2, 0.1)).norm() < 1e-15);
}

TEST_CASE("validated rejects non-finite poses")
{
    Pose6D p;
    p.t = Vec3(NAN, 0, 0);
    CHECK_THROWS_AS(validated(p), ValidationError);
    p.t = Vec3::Zero();
    p.r = Vec3(0, INFINITY, 0);
    CHECK_THROWS_AS(validated(p), ValidationError);
}

TEST_CASE("plane_normal")
{
    CHECK((plane_normal(Pose6D::identity()) - Vec3(0, 0, 1)).norm() < 1e-15);
    Pose6D p;
    p.r = Vec3(M_PI / 2, 0, 0);
    CHECK((plane_normal(p) - Vec3(0, -1, 0)).norm() < 1e-12);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 100; ++i) {
        CHECK(std::abs(plane_normal(random_pose(rng)).norm() - 1.0) < 1e-9);
    }
}

TEST_CASE("compose and inverse")
{
    std::mt19937_64 rng(4);
    for (int i = 0; i < 100; ++i) {
        const Pose6D a = random_pose(rng);
        const Pose6D b = random_pose(rng);
        const Vec3 x = random_unit(rng) * 7.0;
        CHECK((a.compose(b).apply(x) - a.apply(b.apply(x))).norm() < 1e-9);
        const Pose6D id = a.compose(a.inverse());
        CHECK(id.t.norm() < 1e-9);
        CHECK(id.r.norm() < 1e-9);
    }
}

TEST_CASE("proximity examples")
{
    Pose6D sp;
    sp.t = Vec3(1, 2, 3);
    sp.r = Vec3(0.2, -0.1, 0.3);
    const auto same = proximity(sp, sp);
    CHECK(same.trans_mm == doctest::Approx(0.0));
    CHECK(same.rot_deg == doctest::Approx(0.0).epsilon(1e-6));

    Pose6D moved = sp;
    moved.t += Vec3(3, 4, 0);
    const auto px = proximity(moved, sp);
    CHECK(px.trans_mm == doctest::Approx(5.0));
    CHECK(px.rot_deg < 1e-6);

    // Rotated about its own normal by 30 degrees.
    Pose6D spun = sp;
    spun.r = matrix_to_rotvec(sp.rotation() * rotvec_to_matrix(Vec3(0, 0, M_PI / 6)));
    const auto ip = proximity(spun, sp);
    CHECK(ip.rot_deg < 1e-6);
    CHECK(ip.geodesic_deg == doctest::Approx(30.0));

    PlaneAnnotation ann;
    ann.pose = sp;
    CHECK(proximity(moved, ann).trans_mm == doctest::Approx(5.0));
}

TEST_CASE("proximity folds flipped planes")
{
    Pose6D a;
    Pose6D b;
    b.r = Vec3(M_PI, 0, 0);
    const auto px = proximity(a, b);
    CHECK(px.rot_deg == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(px.rot_deg_unfolded == doctest::Approx(180.0));

    Pose6D c;
    c.r = Vec3(120.0 * M_PI / 180.0, 0, 0);
    const auto pc = proximity(a, c);
    CHECK(pc.rot_deg == doctest::Approx(60.0));
    CHECK(pc.rot_deg_unfolded == doctest::Approx(120.0));
}

TEST_CASE("proximity properties")
{
    std::mt19937_64 rng(9);
    for (int i = 0; i < 300; ++i) {
        const Pose6D a = random_pose(rng);
        const Pose6D b = random_pose(rng);
        const Pose6D c = random_pose(rng);
        const auto ab = proximity(a, b);
        const auto ba = proximity(b, a);
        CHECK(ab.rot_deg == doctest::Approx(ba.rot_deg).epsilon(1e-9));
        CHECK(ab.rot_deg >= 0.0);
        CHECK(ab.rot_deg <= 90.0 + 1e-9);
        CHECK(proximity(a, c).trans_mm <= ab.trans_mm + proximity(b, c).trans_mm + 1e-9);

        // In-plane spin of either argument leaves the reading unchanged.
        Pose6D spun = a;
        spun.r = matrix_to_rotvec(a.rotation() * rotvec_to_matrix(Vec3(0, 0, 2.0 * (i % 7) / 7.0)));
        CHECK(proximity(spun, b).rot_deg == doctest::Approx(ab.rot_deg).epsilon(1e-7));
        CHECK(proximity(b, spun).rot_deg == doctest::Approx(ab.rot_deg).epsilon(1e-7));
    }
}

TEST_CASE("annotation json round trip")
{
    PlaneAnnotation a;
    a.volume_id = "vol3";
    a.label = "TV";
    a.pose.t = Vec3(1.5, -2, 0.25);
    a.pose.r = Vec3(0.1, 0.2, -0.3);
    const auto j = to_json(a);
    CHECK(j.at("volume_id") == "vol3");
    CHECK(j.at("t_mm").size() == 3);
    CHECK(j.at("rotvec_rad").size() == 3);
    const auto b = annotation_from_json(j);
    CHECK(b.volume_id == a.volume_id);
    CHECK(b.label == a.label);
    CHECK((b.pose.t - a.pose.t).norm() < 1e-15);
    CHECK((b.pose.r - a.pose.r).norm() < 1e-15);
}
