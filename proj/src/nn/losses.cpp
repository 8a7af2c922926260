#include "gazeswap/losses.hpp"

#include <cmath>

#include "gazeswap/tensor.hpp"

namespace gazeswap {
namespace {

torch::Tensor as_batch(const torch::Tensor& t) {
    if (t.dim() == 4) {
        return t;
    }
    if (t.dim() == 3) {
        return t.unsqueeze(0);
    }
    if (t.dim() == 2) {
        return t.unsqueeze(0).unsqueeze(0);
    }
    throw ContractViolation("expected an HW, CHW or NCHW tensor, got " + std::to_string(t.dim()) + " dims");
}

void require_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        throw ContractViolation(std::string(what) + ": shape mismatch");
    }
}

/// Image a (NCHW) and mask m (N1HW or 1HW / HW) must agree on batch and extent.
torch::Tensor batch_mask(const torch::Tensor& img, const torch::Tensor& mask, const char* what) {
    torch::Tensor m = as_batch(mask);
    if (m.size(1) != 1 || m.size(2) != img.size(2) || m.size(3) != img.size(3) ||
        (m.size(0) != img.size(0) && m.size(0) != 1)) {
        throw ContractViolation(std::string(what) + ": mask shape does not match image");
    }
    return m.to(img.dtype());
}

}  // namespace

void SsimConfig::validate(int64_t height, int64_t width) const {
    if (window_size % 2 == 0 || window_size < 3 || window_size > std::min(height, width)) {
        throw ContractViolation("SSIM window must be odd and within [3, min(H, W)], got " +
                                std::to_string(window_size));
    }
    if (!(c1 > 0.0) || !(c2 > 0.0)) {
        throw ContractViolation("SSIM stabilizers must be positive");
    }
    if (window == WindowKind::Gaussian && !(sigma > 0.0)) {
        throw ContractViolation("SSIM Gaussian sigma must be positive");
    }
}

void LossWeights::validate() const {
    for (double v : {lambda1, lambda2, lambda3, lambda_em, alpha, beta}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ContractViolation("loss weights must be finite and non-negative");
        }
    }
}

torch::Tensor ssim_window_1d(const SsimConfig& cfg, torch::ScalarType dtype) {
    const int n = cfg.window_size;
    auto g = torch::empty({n}, torch::kFloat64);
    const double r = (n - 1) / 2.0;
    for (int i = 0; i < n; ++i) {
        double d = i - r;
        g[i] = cfg.window == WindowKind::Uniform ? 1.0 : std::exp(-d * d / (2.0 * cfg.sigma * cfg.sigma));
    }
    return (g / g.sum()).to(dtype);
}

torch::Tensor ssim_window(const SsimConfig& cfg, torch::ScalarType dtype) {
    torch::Tensor g = ssim_window_1d(cfg, torch::kFloat64);
    return torch::outer(g, g).to(dtype);
}

torch::Tensor ssim_per_sample(const torch::Tensor& a_in, const torch::Tensor& b_in, const SsimConfig& cfg) {
    require_same(a_in, b_in, "ssim");
    torch::Tensor a = as_batch(a_in);
    torch::Tensor b = as_batch(b_in);
    cfg.validate(a.size(2), a.size(3));
    const int64_t n = cfg.window_size;
    // Both window kinds are separable, so the valid-mode filter is T_h' X T_w
    // with banded matrices T; the five local moments are filtered together.
    torch::Tensor g = ssim_window_1d(cfg, a.scalar_type()).to(a.device());
    auto band = [&](int64_t len) {
        torch::Tensor t = torch::zeros({len, len - n + 1}, g.options());
        for (int64_t j = 0; j + n <= len; ++j) {
            t.slice(0, j, j + n).select(1, j).copy_(g);
        }
        return t;
    };
    torch::Tensor stack = torch::cat({a, b, a * a, b * b, a * b}, 1);
    torch::Tensor m = torch::matmul(torch::matmul(band(a.size(2)).t(), stack), band(a.size(3)));
    auto parts = m.chunk(5, 1);
    torch::Tensor mu_a = parts[0];
    torch::Tensor mu_b = parts[1];
    torch::Tensor mu_aa = mu_a * mu_a;
    torch::Tensor mu_bb = mu_b * mu_b;
    torch::Tensor mu_ab = mu_a * mu_b;
    torch::Tensor var_a = parts[2] - mu_aa;
    torch::Tensor var_b = parts[3] - mu_bb;
    torch::Tensor cov = parts[4] - mu_ab;

    torch::Tensor num = (2.0 * mu_ab + cfg.c1) * (2.0 * cov + cfg.c2);
    torch::Tensor den = (mu_aa + mu_bb + cfg.c1) * (var_a + var_b + cfg.c2);
    return (num / den).flatten(1).mean(1);
}

torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimConfig& cfg) {
    return ssim_per_sample(a, b, cfg).mean();
}

torch::Tensor dssim_per_sample(const torch::Tensor& a, const torch::Tensor& b, const SsimConfig& cfg) {
    return (1.0 - ssim_per_sample(a, b, cfg)) / 2.0;
}

torch::Tensor dssim(const torch::Tensor& a, const torch::Tensor& b, const SsimConfig& cfg) {
    return dssim_per_sample(a, b, cfg).mean();
}

torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b) {
    require_same(a, b, "mse");
    return (a - b).pow(2).mean();
}

torch::Tensor mse_per_sample(const torch::Tensor& a, const torch::Tensor& b) {
    require_same(a, b, "mse");
    return (as_batch(a) - as_batch(b)).pow(2).flatten(1).mean(1);
}

CoreTerms core_terms(const torch::Tensor& target, const torch::Tensor& prediction, const torch::Tensor& face_mask,
                     const torch::Tensor& predicted_mask, const LossWeights& w, const SsimConfig& cfg) {
    require_same(target, prediction, "core_reconstruction_loss");
    torch::Tensor y = as_batch(target);
    torch::Tensor yh = as_batch(prediction);
    torch::Tensor m = batch_mask(y, face_mask, "core_reconstruction_loss");
    torch::Tensor mh = batch_mask(y, predicted_mask, "core_reconstruction_loss");
    if (m.sizes() != mh.sizes()) {
        throw ContractViolation("core_reconstruction_loss: predicted mask shape mismatch");
    }
    CoreTerms t;
    if (w.core_on_face_mask) {
        t.dssim = dssim(y * m, yh * m, cfg);
        t.mse = mse(y * m, yh * m);
    } else {
        t.dssim = dssim(y, yh, cfg);
        t.mse = mse(y, yh);
    }
    t.mask_mse = mse(m, mh);
    t.weighted = core_weighted_sum(w, t.dssim, t.mse, t.mask_mse);
    return t;
}

torch::Tensor core_reconstruction_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                                       const torch::Tensor& face_mask, const torch::Tensor& predicted_mask,
                                       const LossWeights& w, const SsimConfig& cfg) {
    return core_terms(target, prediction, face_mask, predicted_mask, w, cfg).weighted;
}

torch::Tensor eyes_mouth_priority_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                                       const torch::Tensor& em_mask, double lambda_em) {
    require_same(target, prediction, "eyes_mouth_priority_loss");
    torch::Tensor y = as_batch(target);
    torch::Tensor m = batch_mask(y, em_mask, "eyes_mouth_priority_loss");
    return lambda_em * (y * m - as_batch(prediction) * m).abs().mean();
}

torch::Tensor gaze_reconstruction_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                                       const torch::Tensor& eyes_mask, const std::vector<double>& theta,
                                       const LossWeights& w, const SsimConfig& cfg) {
    require_same(target, prediction, "gaze_reconstruction_loss");
    torch::Tensor y = as_batch(target);
    torch::Tensor m = batch_mask(y, eyes_mask, "gaze_reconstruction_loss");
    const int64_t n = y.size(0);
    if (theta.size() != 1 && static_cast<int64_t>(theta.size()) != n) {
        throw ContractViolation("gaze_reconstruction_loss: need one theta or one per sample");
    }
    for (double t : theta) {
        if (!(t >= 0.0 && t <= M_PI)) {
            throw ContractViolation("gaze_reconstruction_loss: theta must lie in [0, pi]");
        }
    }
    torch::Tensor ym = y * m;
    torch::Tensor yhm = as_batch(prediction) * m;
    // theta is a plain constant, so no gradient reaches the estimator.
    torch::Tensor th = torch::tensor(theta, torch::TensorOptions().dtype(torch::kFloat64)).to(y.dtype());
    return gaze_weighted_sum(w, th, dssim_per_sample(ym, yhm, cfg), mse_per_sample(ym, yhm)).mean();
}

torch::Tensor gaze_reconstruction_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                                       const torch::Tensor& eyes_mask, double theta, const LossWeights& w,
                                       const SsimConfig& cfg) {
    return gaze_reconstruction_loss(target, prediction, eyes_mask, std::vector<double>{theta}, w, cfg);
}

std::vector<std::optional<double>> estimate_theta(const torch::Tensor& target, const torch::Tensor& prediction,
                                                  const std::vector<const Mask*>& eyes,
                                                  const GazeEstimator& estimator) {
    torch::Tensor y = as_batch(target).detach().to(torch::kFloat32);
    torch::Tensor yh = as_batch(prediction).detach().to(torch::kFloat32);
    const int64_t n = y.size(0);
    if (static_cast<int64_t>(eyes.size()) != n) {
        throw ContractViolation("estimate_theta: one eye mask per sample required");
    }
    std::vector<std::optional<double>> out(n);
    for (int64_t i = 0; i < n; ++i) {
        auto g_true = estimator.estimate(tensor_to_image(y[i]), eyes[i]);
        auto g_pred = estimator.estimate(tensor_to_image(yh[i]), eyes[i]);
        if (g_true && g_pred) {
            out[i] = angular_error(*g_true, *g_pred);
        }
    }
    return out;
}

LossResult total_loss_with_theta(ConditionId condition, Phase phase, const LossInputs& in,
                                 const std::vector<std::optional<double>>& theta, const LossWeights& w,
                                 const SsimConfig& cfg) {
    return gated_loss(uses_em(condition), gaze_active(condition, phase), in, theta, w, cfg);
}

LossResult gated_loss(bool with_em, bool with_gaze, const LossInputs& in,
                      const std::vector<std::optional<double>>& theta, const LossWeights& w, const SsimConfig& cfg) {
    w.validate();
    LossResult r;
    CoreTerms core = core_terms(in.target, in.prediction, in.face_mask, in.predicted_mask, w, cfg);
    r.total = core.weighted;
    r.breakdown.dssim = core.dssim.item<double>();
    r.breakdown.mse = core.mse.item<double>();
    r.breakdown.mask_mse = core.mask_mse.item<double>();
    if (with_em) {
        torch::Tensor em = eyes_mouth_priority_loss(in.target, in.prediction, in.em_mask, w.lambda_em);
        r.total = r.total + em;
        r.breakdown.em_term = em.item<double>();
    }
    if (with_gaze) {
        std::vector<double> th(theta.size(), 0.0);
        double sum = 0.0;
        int ok = 0;
        for (size_t i = 0; i < theta.size(); ++i) {
            if (theta[i]) {
                th[i] = *theta[i];
                sum += *theta[i];
                ++ok;
            } else {
                ++r.breakdown.estimator_failures;
            }
        }
        torch::Tensor g = gaze_reconstruction_loss(in.target, in.prediction, in.eyes_mask, th, w, cfg);
        r.total = r.total + g;
        r.breakdown.gaze_term = g.item<double>();
        r.breakdown.theta = ok > 0 ? sum / ok : 0.0;
    }
    r.breakdown.total = r.total.item<double>();
    return r;
}

LossResult total_loss(ConditionId condition, Phase phase, const LossInputs& in, const GazeEstimator* estimator,
                      const LossWeights& w, const SsimConfig& cfg) {
    std::vector<std::optional<double>> theta;
    if (gaze_active(condition, phase)) {
        if (estimator == nullptr) {
            throw ContractViolation("total_loss: gaze conditions need an estimator");
        }
        theta = estimate_theta(in.target, in.prediction, in.eyes, *estimator);
    }
    return total_loss_with_theta(condition, phase, in, theta, w, cfg);
}

}  // namespace gazeswap
