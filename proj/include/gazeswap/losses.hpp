#pragma once

#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "gazeswap/condition.hpp"
#include "gazeswap/gaze.hpp"

namespace gazeswap {

enum class WindowKind { Gaussian, Uniform };

struct SsimConfig {
    int window_size = 11;
    WindowKind window = WindowKind::Gaussian;
    double sigma = 1.5;
    double c1 = 1e-4;  // (0.01 L)^2, L = 1
    double c2 = 9e-4;  // (0.03 L)^2

    /// Throws ContractViolation unless the window is odd, 3 <= N <= min(H, W), and c1, c2 > 0.
    void validate(int64_t height, int64_t width) const;
};

struct LossWeights {
    double lambda1 = 10.0;
    double lambda2 = 10.0;
    double lambda3 = 10.0;
    double lambda_em = 300.0;
    double alpha = 3.0;
    double beta = 30.0;
    /// Compute the DSSIM/MSE part of the core loss on face-masked images
    /// instead of full frames.
    bool core_on_face_mask = false;

    void validate() const;
};

struct LossBreakdown {
    double dssim = 0.0;
    double mse = 0.0;
    double mask_mse = 0.0;
    double em_term = 0.0;    ///< weighted
    double gaze_term = 0.0;  ///< weighted, theta included
    double theta = 0.0;      ///< mean over samples with a valid estimate
    double total = 0.0;
    int estimator_failures = 0;
};

/// Normalized 1-D profile; the 2-D window is its outer product.
torch::Tensor ssim_window_1d(const SsimConfig& cfg, torch::ScalarType dtype = torch::kFloat64);
/// Normalized 2-D window, (N, N), summing to one.
torch::Tensor ssim_window(const SsimConfig& cfg, torch::ScalarType dtype = torch::kFloat64);

/// SSIM per batch element, averaged over channels and all valid window
/// positions (no padding). Inputs are CHW or NCHW.
torch::Tensor ssim_per_sample(const torch::Tensor& a, const torch::Tensor& b, const SsimConfig& cfg);
torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimConfig& cfg);
torch::Tensor dssim_per_sample(const torch::Tensor& a, const torch::Tensor& b, const SsimConfig& cfg);
torch::Tensor dssim(const torch::Tensor& a, const torch::Tensor& b, const SsimConfig& cfg);

torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b);
torch::Tensor mse_per_sample(const torch::Tensor& a, const torch::Tensor& b);

/// The weighted sums used by the core and gaze losses, shared by tensors and plain values.
template <class T>
T core_weighted_sum(const LossWeights& w, const T& dssim, const T& mse, const T& mask_mse) {
    return w.lambda1 * dssim + w.lambda2 * mse + w.lambda3 * mask_mse;
}
template <class T, class S>
T gaze_weighted_sum(const LossWeights& w, const S& theta, const T& dssim, const T& mse) {
    return theta * (w.alpha * dssim + w.beta * mse);
}

struct CoreTerms {
    torch::Tensor dssim;
    torch::Tensor mse;
    torch::Tensor mask_mse;
    torch::Tensor weighted;
};

/// lambda1 dssim(Y, Yhat) + lambda2 mse(Y, Yhat) + lambda3 mse(M_face, Mhat_face).
CoreTerms core_terms(const torch::Tensor& target, const torch::Tensor& prediction, const torch::Tensor& face_mask,
                     const torch::Tensor& predicted_mask, const LossWeights& w, const SsimConfig& cfg);
torch::Tensor core_reconstruction_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                                       const torch::Tensor& face_mask, const torch::Tensor& predicted_mask,
                                       const LossWeights& w, const SsimConfig& cfg);

/// lambda_em * mean |Y M_em - Yhat M_em|, the mean taken over every element.
torch::Tensor eyes_mouth_priority_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                                       const torch::Tensor& em_mask, double lambda_em);

/// theta * (alpha dssim(Y M, Yhat M) + beta mse(Y M, Yhat M)) with M the eye mask.
/// theta is a constant (no gradient); one value per batch element, or a single
/// value for all. The batch mean is returned.
torch::Tensor gaze_reconstruction_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                                       const torch::Tensor& eyes_mask, const std::vector<double>& theta,
                                       const LossWeights& w, const SsimConfig& cfg);
torch::Tensor gaze_reconstruction_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                                       const torch::Tensor& eyes_mask, double theta, const LossWeights& w,
                                       const SsimConfig& cfg);

/// Batched inputs to the full objective, all NCHW; masks have one channel.
struct LossInputs {
    torch::Tensor target;
    torch::Tensor prediction;
    torch::Tensor face_mask;
    torch::Tensor eyes_mask;
    torch::Tensor em_mask;
    torch::Tensor predicted_mask;
    /// Eye masks as Mask objects for the estimator, one per batch element.
    std::vector<const Mask*> eyes;
};

/// Per-sample theta between estimate(target) and estimate(prediction); nullopt
/// marks an estimator failure on either image.
std::vector<std::optional<double>> estimate_theta(const torch::Tensor& target, const torch::Tensor& prediction,
                                                  const std::vector<const Mask*>& eyes,
                                                  const GazeEstimator& estimator);

struct LossResult {
    torch::Tensor total;
    LossBreakdown breakdown;
};

/// Condition-gated sum: core always, em when the condition has it, gaze when the
/// condition has it and the phase enables it. Failed estimates contribute no gaze term.
LossResult total_loss(ConditionId condition, Phase phase, const LossInputs& in, const GazeEstimator* estimator,
                      const LossWeights& w, const SsimConfig& cfg);

/// Same, with theta supplied by the caller (nullopt = failure).
LossResult total_loss_with_theta(ConditionId condition, Phase phase, const LossInputs& in,
                                 const std::vector<std::optional<double>>& theta, const LossWeights& w,
                                 const SsimConfig& cfg);

/// The composition itself, with the two optional terms switched explicitly.
LossResult gated_loss(bool with_em, bool with_gaze, const LossInputs& in,
                      const std::vector<std::optional<double>>& theta, const LossWeights& w, const SsimConfig& cfg);

}  // namespace gazeswap
