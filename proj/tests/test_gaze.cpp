#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "gazeswap/gaze.hpp"
#include "gazeswap/synth.hpp"

using namespace gazeswap;

namespace {
constexpr double pi = std::numbers::pi;

SyntheticIdentity reference_identity() {
    SyntheticIdentity id;
    id.id = "ref";
    id.group = "g";
    return id;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}
}  // namespace

TEST_CASE("angles_to_vector reference directions") {
    auto v = angles_to_vector({0.0, 0.0});
    CHECK(v.x == 0.0);
    CHECK(v.y == 0.0);
    CHECK(v.z == 1.0);
    v = angles_to_vector({0.0, pi / 2});
    CHECK(v.x == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(v.y) < 1e-12);
    CHECK(std::abs(v.z) < 1e-12);
    v = angles_to_vector({pi / 2, pi / 2});
    CHECK(std::abs(v.x) < 1e-12);
    CHECK(v.y == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(v.z) < 1e-12);
}

TEST_CASE("angles_to_vector has unit norm") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> mu(-pi, pi), phi(0.0, pi);
    for (int i = 0; i < 10000; ++i) {
        CHECK(std::abs(angles_to_vector({mu(rng), phi(rng)}).norm() - 1.0) < 1e-6);
    }
}

TEST_CASE("angular_error reference values") {
    CHECK(angular_error({0.4, 0.7}, {0.4, 0.7}) == doctest::Approx(0.0).epsilon(1e-7));
    CHECK(angular_error({0.0, 0.0}, {0.0, pi / 2}) == doctest::Approx(pi / 2).epsilon(1e-12));
    CHECK(angular_error({0.0, pi / 2}, {pi, pi / 2}) == doctest::Approx(pi).epsilon(1e-12));
}

TEST_CASE("angular_error is a metric on sampled triples and never NaN") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> mu(-pi, pi), phi(0.0, pi), tiny(-1e-9, 1e-9);
    for (int i = 0; i < 5000; ++i) {
        GazeAngles a{mu(rng), phi(rng)}, b{mu(rng), phi(rng)}, c{mu(rng), phi(rng)};
        double ab = angular_error(a, b);
        CHECK(ab == angular_error(b, a));
        CHECK(ab <= angular_error(a, c) + angular_error(c, b) + 1e-9);
        CHECK(ab >= 0.0);
        CHECK(ab <= pi);
        GazeAngles near{a.pitch_mu + tiny(rng), a.yaw_phi + tiny(rng)};
        CHECK(!std::isnan(angular_error(a, near)));
        CHECK(!std::isnan(angular_error(a, a)));
    }
}

TEST_CASE("centroid estimator recovers zero gaze") {
    auto id = reference_identity();
    FrameSample s = render_face(id, {0.0, 0.0}, 0.0, 0.0, 3);
    CentroidEstimator est;
    auto g = est.estimate(s.image, &s.masks.eyes);
    REQUIRE(g);
    CHECK(g->yaw_phi < 0.02);
    CHECK(angular_error(*g, {0.0, 0.0}) < 0.02);
}

TEST_CASE("centroid estimator over a 9x9 gaze grid") {
    auto id = reference_identity();
    CentroidEstimator est;
    std::vector<double> errors;
    double worst = 0.0;
    for (int i = 0; i < 9; ++i) {
        for (int j = 0; j < 9; ++j) {
            GazeAngles truth{-pi + 2 * pi * i / 8.0, (pi / 4) * j / 8.0};
            FrameSample s = render_face(id, truth, 0.5, -0.75, 100 + i * 9 + j);
            auto g = est.estimate(s.image, &s.masks.eyes);
            REQUIRE(g);
            errors.push_back(angular_error(*g, truth));
            worst = std::max(worst, errors.back());
        }
    }
    CHECK(median(errors) < 0.03);
    MESSAGE("centroid grid median error " << median(errors) << " worst " << worst);
}

TEST_CASE("centroid estimator recovers gaze on random identities within 0.02 rad") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> mu(-pi / 6, pi / 6), phi(0.0, pi / 4), off(-3.0, 3.0);
    CentroidEstimator est;
    double worst = 0.0;
    for (int i = 0; i < 60; ++i) {
        auto id = random_identity(rng, 64, "r", "g");
        GazeAngles truth{mu(rng), phi(rng)};
        FrameSample s = render_face(id, truth, off(rng), off(rng), rng());
        auto g = est.estimate(s.image, &s.masks.eyes);
        REQUIRE(g);
        worst = std::max(worst, angular_error(*g, truth));
    }
    MESSAGE("centroid worst recovery error " << worst);
    CHECK(worst < 0.02);
}

TEST_CASE("estimators signal failure on degenerate eye regions") {
    auto id = reference_identity();
    FrameSample s = render_face(id, {0.0, 0.3}, 0.0, 0.0, 3);
    CentroidEstimator centroid;
    TemplateEstimator templ;
    FaceImage black = s.image;
    for (int r = 0; r < 64; ++r) {
        for (int c = 0; c < 64; ++c) {
            if (s.masks.eyes.at(r, c)) {
                for (int ch = 0; ch < 3; ++ch) {
                    black.at(r, c, ch) = 0.0f;
                }
            }
        }
    }
    CHECK(!centroid.estimate(black, &s.masks.eyes));
    CHECK(!templ.estimate(black, &s.masks.eyes));
    FaceImage gray(64, 3, 0.5f);
    CHECK(!centroid.estimate(gray, &s.masks.eyes));
    CHECK(!templ.estimate(gray, &s.masks.eyes));
    Mask empty(64);
    CHECK(!centroid.estimate(s.image, &empty));
    CHECK(!centroid.estimate(s.image, nullptr));
    CHECK(!templ.estimate(s.image, nullptr));
}

TEST_CASE("template estimator returns the zero cell for zero gaze") {
    auto id = reference_identity();
    FrameSample s = render_face(id, {0.0, 0.0}, 0.0, 0.0, 3);
    TemplateEstimator est;
    auto g = est.estimate(s.image, &s.masks.eyes);
    REQUIRE(g);
    CHECK(g->yaw_phi == 0.0);
}

TEST_CASE("template and centroid estimators agree within the grid spacing") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> mu(-pi, pi), phi(0.0, pi / 4), off(-3.0, 3.0);
    CentroidEstimator centroid;
    TemplateEstimator templ;
    double worst = 0.0;
    for (int i = 0; i < 40; ++i) {
        auto id = random_identity(rng, 64, "r", "g");
        FrameSample s = render_face(id, {mu(rng), phi(rng)}, off(rng), off(rng), rng());
        auto a = centroid.estimate(s.image, &s.masks.eyes);
        auto b = templ.estimate(s.image, &s.masks.eyes);
        REQUIRE(a);
        REQUIRE(b);
        worst = std::max(worst, angular_error(*a, *b));
    }
    MESSAGE("template/centroid worst disagreement " << worst);
    CHECK(worst < templ.yaw_step());
}

TEST_CASE("estimator registry") {
    CHECK(make_estimator("centroid")->name() == "centroid");
    CHECK(make_estimator("template")->name() == "template");
    CHECK_THROWS_AS(make_estimator("l2cs"), ConfigError);
}
