#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gazeswap/condition.hpp"
#include "gazeswap/gaze.hpp"
#include "gazeswap/synth.hpp"

namespace gazeswap {

struct ExperimentRecord {
    std::string individual;
    ConditionId method = ConditionId::Dfl;
    int64_t frame_index = 0;
    double error_rad = 0.0;

    bool operator==(const ExperimentRecord&) const = default;
};

/// Records CSV: individual,method,frame_index,error_rad
void write_records(const std::filesystem::path& path, const std::vector<ExperimentRecord>& records);
std::vector<ExperimentRecord> read_records(const std::filesystem::path& path);

/// One generated swap frame with the eye mask of the face it depicts.
struct SwapFrame {
    int64_t frame_index = 0;
    FaceImage image;
    Mask eyes;
};

enum class GroundTruth {
    TrueGaze,         ///< dataset metadata
    EstimatedSource,  ///< estimator applied to the source frame
};

struct FrameGaze {
    int64_t frame_index = 0;
    GazeAngles source;
    GazeAngles swap;
};

struct FrameErrorResult {
    std::vector<ExperimentRecord> records;
    std::vector<FrameGaze> gazes;  ///< estimated angles, for scatter plots
    int dropped = 0;               ///< frames where the estimator failed
};

/// Angular error between the estimated swap gaze and the ground truth for every
/// source frame that has a swap with the same frame index.
FrameErrorResult frame_errors(const std::vector<SwapFrame>& swaps, const std::vector<FrameSample>& sources,
                              const GazeEstimator& estimator, GroundTruth truth, const std::string& individual,
                              ConditionId method);

/// Floor applied before taking logs of errors.
inline constexpr double kErrorFloorRad = 1e-4;

struct AggregateRow {
    std::string individual;
    ConditionId method = ConditionId::Dfl;
    double mean_log_error = 0.0;  ///< mean over frames of log(max(error, floor)), radians
    double mean_error_deg = 0.0;  ///< arithmetic mean error in degrees
    size_t frames = 0;
};

/// Frames -> log -> mean, one row per (individual, method), sorted by key.
std::vector<AggregateRow> aggregate_individual(const std::vector<ExperimentRecord>& records);

struct Contrast {
    ConditionId method = ConditionId::Dfl;
    double estimate = 0.0;
    double std_error = 0.0;
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
};

struct MixedModelFit {
    ConditionId reference = ConditionId::Dfl;
    double intercept = 0.0;
    std::map<ConditionId, double> fixed_effects;  ///< reference level maps to 0
    std::vector<Contrast> contrasts;              ///< every non-reference method vs reference
    double random_intercept_variance = 0.0;
    double residual_variance = 0.0;
    double log_likelihood = 0.0;  ///< restricted log-likelihood at the optimum
    bool degenerate = false;      ///< residual variance at the zero boundary
    size_t n_rows = 0;
    size_t n_individuals = 0;
};

/// REML fit of  mean_log_error ~ method + (1 | individual)  by one-dimensional
/// profiling over the variance ratio. Wald t tests use df = N - p - n_individuals + 1.
MixedModelFit fit_mixed_effects(const std::vector<AggregateRow>& rows,
                                std::optional<ConditionId> reference = std::nullopt);

/// Restricted log-likelihood of the model at the given variance components.
/// Exposed so callers can profile or grid-search the surface.
double restricted_log_likelihood(const std::vector<AggregateRow>& rows, ConditionId reference,
                                 double random_intercept_variance, double residual_variance);

/// 100 * (baseline - method) / baseline. Throws ContractViolation when baseline <= 0.
double percent_improvement(double baseline, double method);

struct MethodSummary {
    ConditionId method = ConditionId::Dfl;
    size_t individuals = 0;
    double mean_deg = 0.0;
    std::optional<double> ci_low;  ///< 95% t interval across individuals
    std::optional<double> ci_high;
    std::optional<double> improvement_pct;  ///< relative to the reference method
    std::optional<Contrast> contrast;
};

struct Report {
    ConditionId reference = ConditionId::Dfl;
    std::vector<MethodSummary> methods;
    std::vector<std::string> individuals;
    /// Mean error in degrees per individual (row) and method (column, matching `methods`).
    std::vector<std::vector<std::optional<double>>> per_video;
    std::optional<MixedModelFit> fit;
    std::vector<std::string> warnings;
    std::vector<std::string> notes;
};

/// Aggregates, fits, and tabulates. The reference is DFL when present, otherwise
/// the first method in condition order.
Report summarize(const std::vector<ExperimentRecord>& records, std::optional<ConditionId> reference = std::nullopt);

std::string render_report(const Report& report);
void write_report_csv(const std::filesystem::path& path, const Report& report);

inline double rad_to_deg(double r) { return r * 57.29577951308232; }
inline double deg_to_rad(double d) { return d / 57.29577951308232; }

}  // namespace gazeswap
