#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gazeswap/image.hpp"

namespace gazeswap {

struct GazeVector {
    double x = 0.0;
    double y = 0.0;
    double z = 1.0;

    double norm() const;
    double dot(const GazeVector& o) const { return x * o.x + y * o.y + z * o.z; }
};

/// (sin(phi) cos(mu), sin(phi) sin(mu), cos(phi)).
GazeVector angles_to_vector(const GazeAngles& g);

/// Angle between the two gaze vectors in [0, pi]. The normalized dot product is
/// clamped to [-1, 1] before acos.
double angular_error(const GazeAngles& a, const GazeAngles& b);

/// One eye located from a binary eye mask: pixel-centroid center, radius from
/// area, and the interior pixels (footprint fully inside the disk) used for pupil search.
struct EyeRegion {
    double center_x = 0.0;
    double center_y = 0.0;
    double radius = 0.0;
    std::vector<std::array<int, 2>> interior;  ///< (row, col)
};

/// Splits an eye mask into its two largest 4-connected components, ordered left
/// to right. Returns nullopt unless exactly two plausible eyes are present.
std::optional<std::array<EyeRegion, 2>> locate_eyes(const Mask& eyes);

/// Pluggable, non-differentiable gaze estimator. Implementations are immutable
/// after construction and safe to share across threads.
class GazeEstimator {
public:
    virtual ~GazeEstimator() = default;
    virtual std::string name() const = 0;

    /// nullopt signals estimator failure (no eye region, no detectable pupil).
    /// The eye mask may be null; the bundled estimators fail without it.
    virtual std::optional<GazeAngles> estimate(const FaceImage& image, const Mask* eyes) const = 0;
};

/// Locates the darkness-weighted pupil centroid inside each eye and inverts the
/// renderer's displacement gain; the two eyes are averaged.
class CentroidEstimator final : public GazeEstimator {
public:
    std::string name() const override { return "centroid"; }
    std::optional<GazeAngles> estimate(const FaceImage& image, const Mask* eyes) const override;
};

/// Normalized cross-correlation of the eye darkness map against rasterized pupil
/// templates over a discrete gaze grid; returns the best cell.
class TemplateEstimator final : public GazeEstimator {
public:
    /// `yaw_step` is the polar grid spacing; pitch uses `pitch_cells` azimuth bins.
    explicit TemplateEstimator(double yaw_step = 0.08726646259971647, double yaw_max = 1.0471975511965976,
                               int pitch_cells = 36);

    std::string name() const override { return "template"; }
    std::optional<GazeAngles> estimate(const FaceImage& image, const Mask* eyes) const override;

    double yaw_step() const { return yaw_step_; }
    const std::vector<GazeAngles>& grid() const { return grid_; }

private:
    double yaw_step_;
    std::vector<GazeAngles> grid_;
    std::vector<std::array<double, 2>> unit_displacements_;  ///< (dx, dy) per grid cell at unit gain
};

/// "centroid" or "template"; anything else is a ConfigError.
std::unique_ptr<GazeEstimator> make_estimator(const std::string& name);

}  // namespace gazeswap
