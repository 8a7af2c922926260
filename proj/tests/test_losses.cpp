#include "torch_doctest.hpp"

#include <cmath>
#include <random>

#include "gazeswap/losses.hpp"
#include "gazeswap/synth.hpp"
#include "gazeswap/tensor.hpp"
#include "nn_oracles.hpp"

using namespace gazeswap;

namespace {

torch::Tensor rand_img(int64_t c, int64_t h, uint64_t seed) {
    torch::manual_seed(seed);
    return torch::rand({c, h, h}, torch::kFloat64);
}

torch::Tensor rand_mask(int64_t h, uint64_t seed, double p = 0.3) {
    torch::manual_seed(seed);
    return (torch::rand({1, h, h}, torch::kFloat64) < p).to(torch::kFloat64);
}

SsimConfig uniform(int n) {
    SsimConfig c;
    c.window = WindowKind::Uniform;
    c.window_size = n;
    return c;
}

}  // namespace

TEST_CASE("ssim of identical images is one") {
    auto y = rand_img(3, 16, 1);
    CHECK(ssim(y, y, SsimConfig{}).item<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dssim(y, y, SsimConfig{}).item<double>() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ssim of constant black against white equals c1/(1+c1)") {
    auto a = torch::zeros({3, 16, 16}, torch::kFloat64);
    auto b = torch::ones({3, 16, 16}, torch::kFloat64);
    const double c1 = 1e-4;
    for (int n : {3, 7, 11}) {
        double s = ssim(a, b, uniform(n)).item<double>();
        CHECK(std::abs(s - c1 / (1 + c1)) < 1e-9);
        double d = dssim(a, b, uniform(n)).item<double>();
        CHECK(std::abs(d - (1 - c1 / (1 + c1)) / 2) < 1e-9);
    }
    CHECK(std::abs(ssim(a, b, uniform(7)).item<double>() - 9.999e-5) < 1e-8);
}

TEST_CASE("ssim matches a loop oracle and is symmetric") {
    for (uint64_t s = 0; s < 6; ++s) {
        auto a = rand_img(3, 16, 10 + s);
        auto b = rand_img(3, 16, 100 + s);
        SsimConfig cfg;
        double got = ssim(a, b, cfg).item<double>();
        double want = oracle::ssim(oracle::to_vec(a), oracle::to_vec(b), 3, 16, 16,
                                   oracle::gaussian_window(11, 1.5), 11, cfg.c1, cfg.c2);
        CHECK(got == doctest::Approx(want).epsilon(1e-10));
        CHECK(got == doctest::Approx(ssim(b, a, cfg).item<double>()).epsilon(1e-12));

        SsimConfig u = uniform(5);
        std::vector<double> flat(25, 1.0 / 25);
        double want_u = oracle::ssim(oracle::to_vec(a), oracle::to_vec(b), 3, 16, 16, flat, 5, u.c1, u.c2);
        CHECK(ssim(a, b, u).item<double>() == doctest::Approx(want_u).epsilon(1e-10));
    }
}

TEST_CASE("dssim stays in [0, 1] on random pairs") {
    for (uint64_t s = 0; s < 100; ++s) {
        double d = dssim(rand_img(3, 16, 2 * s), rand_img(3, 16, 2 * s + 1), uniform(5)).item<double>();
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
    }
}

TEST_CASE("ssim config and shape contracts") {
    auto a = rand_img(3, 16, 1);
    CHECK_THROWS_AS(ssim(a, rand_img(3, 8, 2), SsimConfig{}), ContractViolation);
    CHECK_THROWS_AS(ssim(a, a, uniform(4)), ContractViolation);
    CHECK_THROWS_AS(ssim(a, a, uniform(17)), ContractViolation);
    CHECK_THROWS_AS(ssim(a, a, uniform(1)), ContractViolation);
    SsimConfig bad;
    bad.c2 = 0.0;
    CHECK_THROWS_AS(ssim(a, a, bad), ContractViolation);
    CHECK_THROWS_AS(mse(a, rand_img(1, 16, 2)), ContractViolation);
}

TEST_CASE("mse arithmetic") {
    auto y = rand_img(3, 8, 3);
    CHECK(mse(y, y).item<double>() == 0.0);
    auto a = torch::zeros({3, 8, 8}, torch::kFloat64);
    CHECK(mse(a, torch::full({3, 8, 8}, 0.5, torch::kFloat64)).item<double>() == doctest::Approx(0.25).epsilon(1e-15));
    auto b = a.clone();
    b[1][4][2] = 0.3;
    CHECK(std::abs(mse(a, b).item<double>() - 0.09 / 192) < 1e-15);
}

TEST_CASE("core reconstruction loss") {
    auto y = rand_img(3, 16, 4);
    auto m = rand_mask(16, 5);
    LossWeights w;
    SsimConfig cfg;
    CHECK(core_reconstruction_loss(y, y, m, m, w, cfg).item<double>() == 0.0);
    CHECK(std::abs(core_weighted_sum(w, 0.1, 0.02, 0.01) - 1.3) < 1e-12);

    auto yh = rand_img(3, 16, 6);
    auto mh = torch::rand({1, 16, 16}, torch::kFloat64);
    CoreTerms t = core_terms(y, yh, m, mh, w, cfg);
    CHECK(t.weighted.item<double>() ==
          doctest::Approx(10 * dssim(y, yh, cfg).item<double>() + 10 * mse(y, yh).item<double>() +
                          10 * mse(m, mh).item<double>())
              .epsilon(1e-12));

    LossWeights w0 = w;
    w0.lambda3 = 0.0;
    double v1 = core_reconstruction_loss(y, yh, m, mh, w0, cfg).item<double>();
    double v2 = core_reconstruction_loss(y, yh, m, torch::rand({1, 16, 16}, torch::kFloat64), w0, cfg).item<double>();
    CHECK(v1 == v2);

    LossWeights wm = w;
    wm.core_on_face_mask = true;
    CoreTerms tm = core_terms(y, yh, m, mh, wm, cfg);
    CHECK(tm.mse.item<double>() == doctest::Approx(mse(y * m, yh * m).item<double>()).epsilon(1e-14));
}

TEST_CASE("eyes and mouth priority loss") {
    auto y = rand_img(3, 8, 7);
    auto m = rand_mask(8, 8);
    CHECK(eyes_mouth_priority_loss(y, y, m, 300).item<double>() == 0.0);
    CHECK(eyes_mouth_priority_loss(y, rand_img(3, 8, 9), torch::zeros({1, 8, 8}, torch::kFloat64), 300)
              .item<double>() == 0.0);

    // One masked pixel off by 0.1 among n pixels: 300 * 0.1 / n.
    for (int c : {1, 3}) {
        auto a = torch::full({c, 8, 8}, 0.5, torch::kFloat64);
        auto b = a.clone();
        b.select(1, 3).select(1, 5) += 0.1;
        auto one = torch::zeros({1, 8, 8}, torch::kFloat64);
        one[0][3][5] = 1.0;
        double n = 64.0;
        CHECK(std::abs(eyes_mouth_priority_loss(a, b, one, 300).item<double>() - 30.0 / n) < 1e-12);
    }
}

TEST_CASE("gaze reconstruction loss") {
    auto y = rand_img(3, 16, 11);
    auto yh = rand_img(3, 16, 12);
    auto m = rand_mask(16, 13);
    LossWeights w;
    SsimConfig cfg;
    CHECK(gaze_reconstruction_loss(y, yh, m, 0.0, w, cfg).item<double>() == 0.0);
    auto same_eyes = yh * (1 - m) + y * m;
    CHECK(gaze_reconstruction_loss(y, same_eyes, m, 1.0, w, cfg).item<double>() == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(std::abs(gaze_weighted_sum(w, 0.5, 0.2, 0.01) - 0.45) < 1e-12);

    double v = gaze_reconstruction_loss(y, yh, m, 0.7, w, cfg).item<double>();
    double want = 0.7 * (3 * dssim(y * m, yh * m, cfg).item<double>() + 30 * mse(y * m, yh * m).item<double>());
    CHECK(v == doctest::Approx(want).epsilon(1e-12));
    CHECK(gaze_reconstruction_loss(y, yh, m, 1.4, w, cfg).item<double>() == doctest::Approx(2 * v).epsilon(1e-12));
    CHECK(v > 0.0);
    CHECK_THROWS_AS(gaze_reconstruction_loss(y, yh, m, -0.1, w, cfg), ContractViolation);
    CHECK_THROWS_AS(gaze_reconstruction_loss(y, yh, m, 4.0, w, cfg), ContractViolation);
}

TEST_CASE("gaze loss ignores prediction changes outside the dilated eye support") {
    auto y = rand_img(3, 24, 14);
    auto yh = rand_img(3, 24, 15);
    Mask eyes(24);
    for (int r = 9; r < 13; ++r) {
        for (int c = 5; c < 9; ++c) {
            eyes.at(r, c) = 1;
        }
    }
    SsimConfig cfg;
    cfg.window_size = 7;
    Mask support = eyes.dilated(cfg.window_size / 2);
    auto outside = 1.0 - mask_to_tensor(support).to(torch::kFloat64);
    auto m = mask_to_tensor(eyes).to(torch::kFloat64);
    double v = gaze_reconstruction_loss(y, yh, m, 0.9, LossWeights{}, cfg).item<double>();
    for (uint64_t s = 0; s < 5; ++s) {
        auto changed = yh * (1 - outside) + rand_img(3, 24, 50 + s) * outside;
        CHECK(gaze_reconstruction_loss(y, changed, m, 0.9, LossWeights{}, cfg).item<double>() == v);
    }
}

TEST_CASE("batched gaze loss averages per-sample terms") {
    torch::manual_seed(3);
    auto y = torch::rand({3, 3, 16, 16}, torch::kFloat64);
    auto yh = torch::rand({3, 3, 16, 16}, torch::kFloat64);
    auto m = (torch::rand({3, 1, 16, 16}, torch::kFloat64) < 0.4).to(torch::kFloat64);
    LossWeights w;
    SsimConfig cfg = uniform(5);
    std::vector<double> th{0.1, 0.0, 0.6};
    double got = gaze_reconstruction_loss(y, yh, m, th, w, cfg).item<double>();
    double want = 0.0;
    for (int i = 0; i < 3; ++i) {
        want += gaze_reconstruction_loss(y[i], yh[i], m[i], th[i], w, cfg).item<double>() / 3;
    }
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("non-negativity on arbitrary inputs") {
    LossWeights w;
    SsimConfig cfg = uniform(5);
    for (uint64_t s = 0; s < 30; ++s) {
        auto y = rand_img(3, 12, 3 * s);
        auto yh = rand_img(3, 12, 3 * s + 1);
        auto m = rand_mask(12, 3 * s + 2);
        auto mh = torch::rand({1, 12, 12}, torch::kFloat64);
        CHECK(core_reconstruction_loss(y, yh, m, mh, w, cfg).item<double>() >= 0.0);
        CHECK(eyes_mouth_priority_loss(y, yh, m, 300).item<double>() >= 0.0);
        CHECK(gaze_reconstruction_loss(y, yh, m, 1.0, w, cfg).item<double>() >= 0.0);
        CHECK(dssim(y, yh, cfg).item<double>() >= 0.0);
    }
}

TEST_CASE("analytic gradients match central differences") {
    SsimConfig cfg;
    cfg.window_size = 5;
    LossWeights w;
    double worst = 0.0;
    for (uint64_t s = 0; s < 20; ++s) {
        auto y = rand_img(3, 8, 1000 + s);
        auto yh0 = rand_img(3, 8, 2000 + s);
        auto m = rand_mask(8, 3000 + s, 0.5);
        auto mh = torch::rand({1, 8, 8}, torch::kFloat64);
        std::vector<std::function<torch::Tensor(const torch::Tensor&)>> fns{
            [&](const torch::Tensor& p) { return dssim(y, p, cfg); },
            [&](const torch::Tensor& p) { return mse(y, p); },
            [&](const torch::Tensor& p) { return core_reconstruction_loss(y, p, m, mh, w, cfg); },
            [&](const torch::Tensor& p) { return eyes_mouth_priority_loss(y, p, m, 300); },
            [&](const torch::Tensor& p) { return gaze_reconstruction_loss(y, p, m, 0.8, w, cfg); },
        };
        for (auto& f : fns) {
            auto p = yh0.clone().requires_grad_(true);
            f(p).backward();
            auto analytic = p.grad().detach();
            auto numeric = oracle::fd_gradient(
                [&](const torch::Tensor& x) {
                    torch::NoGradGuard ng;
                    return f(x).item<double>();
                },
                yh0);
            double err = oracle::relative_error(analytic, numeric);
            worst = std::max(worst, err);
            CHECK(err < 1e-4);
        }
    }
    MESSAGE("worst relative gradient error " << worst);
}

TEST_CASE("theta carries no gradient") {
    auto y = rand_img(3, 8, 5);
    auto p = rand_img(3, 8, 6).requires_grad_(true);
    auto m = rand_mask(8, 7, 0.5);
    SsimConfig cfg = uniform(5);
    auto v = gaze_reconstruction_loss(y, p, m, 0.5, LossWeights{}, cfg);
    v.backward();
    auto g1 = p.grad().clone();
    p.grad().zero_();
    gaze_reconstruction_loss(y, p, m, 1.0, LossWeights{}, cfg).backward();
    CHECK(oracle::relative_error(2 * g1, p.grad()) < 1e-12);
}

namespace {

struct Batch {
    LossInputs in;
    std::vector<FrameSample> target;
    std::vector<FrameSample> pred;
};

Batch rendered_batch() {
    std::mt19937_64 rng(5);
    auto id = random_identity(rng, 64, "a", "g");
    Batch b;
    for (int i = 0; i < 3; ++i) {
        b.target.push_back(render_face(id, {0.3 * i, 0.4}, 0, 0, i));
        b.pred.push_back(render_face(id, {0.3 * i + 1.0, 0.2}, 0, 0, i));
    }
    std::vector<const FaceImage*> yt, yp;
    std::vector<const Mask*> face, eyes, em;
    for (int i = 0; i < 3; ++i) {
        yt.push_back(&b.target[i].image);
        yp.push_back(&b.pred[i].image);
        face.push_back(&b.target[i].masks.face);
        eyes.push_back(&b.target[i].masks.eyes);
        em.push_back(&b.target[i].masks.eyes_mouth);
    }
    b.in.target = stack_images(yt).to(torch::kFloat64);
    b.in.prediction = stack_images(yp).to(torch::kFloat64);
    b.in.face_mask = stack_masks(face).to(torch::kFloat64);
    b.in.eyes_mask = stack_masks(eyes).to(torch::kFloat64);
    b.in.em_mask = stack_masks(em).to(torch::kFloat64);
    b.in.predicted_mask = b.in.face_mask * 0.9;
    b.in.eyes = eyes;
    return b;
}

struct FailingEstimator final : GazeEstimator {
    std::string name() const override { return "fail"; }
    std::optional<GazeAngles> estimate(const FaceImage&, const Mask*) const override { return std::nullopt; }
};

}  // namespace

TEST_CASE("total loss gates terms by condition and phase") {
    Batch b = rendered_batch();
    CentroidEstimator est;
    LossWeights w;
    SsimConfig cfg;
    auto dfl = total_loss(ConditionId::Dfl, Phase::Pair, b.in, &est, w, cfg).breakdown;
    CHECK(dfl.em_term == 0.0);
    CHECK(dfl.gaze_term == 0.0);
    CHECK(dfl.theta == 0.0);
    double core = core_reconstruction_loss(b.in.target, b.in.prediction, b.in.face_mask, b.in.predicted_mask, w, cfg)
                      .item<double>();
    CHECK(dfl.total == doctest::Approx(core).epsilon(1e-12));

    auto all = total_loss(ConditionId::DflEmGaze, Phase::Pair, b.in, &est, w, cfg).breakdown;
    auto theta = estimate_theta(b.in.target, b.in.prediction, b.in.eyes, est);
    std::vector<double> th;
    for (auto& t : theta) {
        REQUIRE(t.has_value());
        th.push_back(*t);
    }
    double em = eyes_mouth_priority_loss(b.in.target, b.in.prediction, b.in.em_mask, 300).item<double>();
    double gz = gaze_reconstruction_loss(b.in.target, b.in.prediction, b.in.eyes_mask, th, w, cfg).item<double>();
    CHECK(all.em_term == doctest::Approx(em).epsilon(1e-12));
    CHECK(all.gaze_term == doctest::Approx(gz).epsilon(1e-12));
    CHECK(all.total == doctest::Approx(core + em + gz).epsilon(1e-12));
    CHECK(all.theta > 0.1);
    CHECK(all.dssim == dfl.dssim);
    CHECK(all.mse == dfl.mse);
    CHECK(all.mask_mse == dfl.mask_mse);

    for (ConditionId c : kAllConditions) {
        for (Phase p : {Phase::Pretrain, Phase::Pair}) {
            auto r = total_loss(c, p, b.in, &est, w, cfg).breakdown;
            CHECK((r.em_term != 0.0) == uses_em(c));
            CHECK((r.gaze_term != 0.0) == gaze_active(c, p));
            CHECK(r.dssim == dfl.dssim);
        }
    }
    CHECK(total_loss(ConditionId::DflGazeFinetune, Phase::Pretrain, b.in, &est, w, cfg).breakdown.gaze_term == 0.0);
}

TEST_CASE("estimator failure drops the sample's gaze term") {
    Batch b = rendered_batch();
    FailingEstimator fail;
    auto r = total_loss(ConditionId::DflGaze, Phase::Pair, b.in, &fail, LossWeights{}, SsimConfig{}).breakdown;
    CHECK(r.gaze_term == 0.0);
    CHECK(r.estimator_failures == 3);

    std::vector<std::optional<double>> theta{0.5, std::nullopt, 0.5};
    auto part = total_loss_with_theta(ConditionId::DflGaze, Phase::Pair, b.in, theta, LossWeights{}, SsimConfig{});
    CHECK(part.breakdown.estimator_failures == 1);
    CHECK(part.breakdown.theta == doctest::Approx(0.5));
    CHECK(part.breakdown.gaze_term > 0.0);
    CHECK_THROWS_AS(total_loss(ConditionId::DflGaze, Phase::Pair, b.in, nullptr, LossWeights{}, SsimConfig{}),
                    ContractViolation);
}

TEST_CASE("zero-loss fixed point") {
    Batch b = rendered_batch();
    b.in.prediction = b.in.target.clone();
    b.in.predicted_mask = b.in.face_mask.clone();
    CentroidEstimator est;
    auto r = total_loss(ConditionId::DflEmGaze, Phase::Pair, b.in, &est, LossWeights{}, SsimConfig{}).breakdown;
    CHECK(std::abs(r.total) < 1e-12);
    CHECK(r.theta == 0.0);
}
