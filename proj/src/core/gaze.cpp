#include "gazeswap/gaze.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gazeswap/synth.hpp"

namespace gazeswap {
namespace {

// Minimum luminance spread inside the eye before a pupil counts as detected.
constexpr double kMinPupilContrast = 0.08;

struct DarknessMap {
    std::vector<double> values;  // aligned with EyeRegion::interior
    double contrast = 0.0;
};

DarknessMap darkness(const FaceImage& image, const EyeRegion& eye) {
    DarknessMap d;
    double ref = 0.0;
    double lo = 1.0;
    for (auto [r, c] : eye.interior) {
        double l = image.luminance(r, c);
        ref = std::max(ref, l);
        lo = std::min(lo, l);
    }
    d.contrast = eye.interior.empty() ? 0.0 : ref - lo;
    d.values.reserve(eye.interior.size());
    for (auto [r, c] : eye.interior) {
        d.values.push_back(std::max(0.0, ref - image.luminance(r, c)));
    }
    return d;
}

GazeAngles from_unit_displacement(double dx, double dy) {
    // Image rows grow downward; the renderer moves the pupil up for positive y.
    double x = dx;
    double y = -dy;
    double r = std::min(1.0, std::hypot(x, y));
    double phi = std::asin(r);
    double mu = r > 1e-12 ? std::atan2(y, x) : 0.0;
    return {mu, phi};
}

// Sub-pixel eye geometry from anti-aliased sclera coverage. The binary mask only
// fixes the eye to pixel resolution, which would bias the displacement gain.
void refine_eye(const FaceImage& image, EyeRegion& eye) {
    const int n = image.size();
    const double cx = eye.center_x;
    const double cy = eye.center_y;
    const double r0 = eye.radius;
    std::vector<double> ring;
    double ref = 0.0;
    for (int r = std::max(0, static_cast<int>(cy - r0 - 3)); r < std::min(n, static_cast<int>(cy + r0 + 4)); ++r) {
        for (int c = std::max(0, static_cast<int>(cx - r0 - 3)); c < std::min(n, static_cast<int>(cx + r0 + 4)); ++c) {
            double d = std::hypot(c + 0.5 - cx, r + 0.5 - cy);
            if (d > r0 + 1.0 && d <= r0 + 2.5) {
                ring.push_back(image.luminance(r, c));
            }
            if (d <= r0 - 0.75) {
                ref = std::max(ref, static_cast<double>(image.luminance(r, c)));
            }
        }
    }
    if (ring.size() < 8) {
        return;
    }
    std::nth_element(ring.begin(), ring.begin() + static_cast<long>(ring.size() / 2), ring.end());
    const double skin = ring[ring.size() / 2];
    if (ref - skin < 0.1) {
        return;
    }
    double area = 0.0;
    double mx = 0.0;
    double my = 0.0;
    for (int r = std::max(0, static_cast<int>(cy - r0 - 3)); r < std::min(n, static_cast<int>(cy + r0 + 4)); ++r) {
        for (int c = std::max(0, static_cast<int>(cx - r0 - 3)); c < std::min(n, static_cast<int>(cx + r0 + 4)); ++c) {
            double d = std::hypot(c + 0.5 - cx, r + 0.5 - cy);
            if (d > r0 + 1.5) {
                continue;
            }
            double a = d <= r0 - 1.0 ? 1.0 : std::clamp((image.luminance(r, c) - skin) / (ref - skin), 0.0, 1.0);
            area += a;
            mx += a * (c + 0.5);
            my += a * (r + 0.5);
        }
    }
    if (area <= 0.0) {
        return;
    }
    const double radius = std::sqrt(area / std::numbers::pi);
    if (std::abs(radius - r0) > 1.0) {
        return;
    }
    eye.center_x = mx / area;
    eye.center_y = my / area;
    eye.radius = radius;
}

}  // namespace

double GazeVector::norm() const { return std::sqrt(x * x + y * y + z * z); }

GazeVector angles_to_vector(const GazeAngles& g) {
    return {std::sin(g.yaw_phi) * std::cos(g.pitch_mu), std::sin(g.yaw_phi) * std::sin(g.pitch_mu),
            std::cos(g.yaw_phi)};
}

double angular_error(const GazeAngles& a, const GazeAngles& b) {
    GazeVector va = angles_to_vector(a);
    GazeVector vb = angles_to_vector(b);
    double cosine = va.dot(vb) / (va.norm() * vb.norm());
    return std::acos(std::clamp(cosine, -1.0, 1.0));
}

std::optional<std::array<EyeRegion, 2>> locate_eyes(const Mask& eyes) {
    const int n = eyes.size();
    if (n == 0) {
        return std::nullopt;
    }
    std::vector<int> label(static_cast<size_t>(n) * n, -1);
    std::vector<std::vector<std::array<int, 2>>> comps;
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            if (!eyes.at(r, c) || label[r * n + c] >= 0) {
                continue;
            }
            int id = static_cast<int>(comps.size());
            comps.emplace_back();
            std::vector<std::array<int, 2>> stack{{r, c}};
            label[r * n + c] = id;
            while (!stack.empty()) {
                auto [pr, pc] = stack.back();
                stack.pop_back();
                comps[id].push_back({pr, pc});
                const int nb[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
                for (auto& d : nb) {
                    int rr = pr + d[0];
                    int cc = pc + d[1];
                    if (rr >= 0 && cc >= 0 && rr < n && cc < n && eyes.at(rr, cc) && label[rr * n + cc] < 0) {
                        label[rr * n + cc] = id;
                        stack.push_back({rr, cc});
                    }
                }
            }
        }
    }
    if (comps.size() < 2) {
        return std::nullopt;
    }
    std::sort(comps.begin(), comps.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
    comps.resize(2);

    std::array<EyeRegion, 2> out;
    for (int e = 0; e < 2; ++e) {
        const auto& comp = comps[e];
        if (comp.size() < 20) {
            return std::nullopt;
        }
        double sx = 0.0;
        double sy = 0.0;
        for (auto [r, c] : comp) {
            sx += c + 0.5;
            sy += r + 0.5;
        }
        out[e].center_x = sx / comp.size();
        out[e].center_y = sy / comp.size();
        out[e].radius = std::sqrt(static_cast<double>(comp.size()) / std::numbers::pi);
        // Pixels whose whole footprint lies inside the eye disk cannot mix with skin.
        const double limit = out[e].radius - 0.75;
        for (auto [r, c] : comp) {
            if (std::hypot(c + 0.5 - out[e].center_x, r + 0.5 - out[e].center_y) <= limit) {
                out[e].interior.push_back({r, c});
            }
        }
        std::sort(out[e].interior.begin(), out[e].interior.end());
    }
    if (out[0].center_x > out[1].center_x) {
        std::swap(out[0], out[1]);
    }
    return out;
}

std::optional<GazeAngles> CentroidEstimator::estimate(const FaceImage& image, const Mask* eyes) const {
    if (!eyes || eyes->size() != image.size()) {
        return std::nullopt;
    }
    auto regions = locate_eyes(*eyes);
    if (!regions) {
        return std::nullopt;
    }
    for (auto& eye : *regions) {
        refine_eye(image, eye);
    }
    double ux = 0.0;
    double uy = 0.0;
    for (const auto& eye : *regions) {
        DarknessMap d = darkness(image, eye);
        if (d.contrast < kMinPupilContrast) {
            return std::nullopt;
        }
        double w = 0.0;
        double mx = 0.0;
        double my = 0.0;
        for (size_t i = 0; i < eye.interior.size(); ++i) {
            auto [r, c] = eye.interior[i];
            w += d.values[i];
            mx += d.values[i] * (c + 0.5);
            my += d.values[i] * (r + 0.5);
        }
        if (w <= 1e-9) {
            return std::nullopt;
        }
        double gain = kGazeGainRatio * eye.radius;
        ux += (mx / w - eye.center_x) / gain;
        uy += (my / w - eye.center_y) / gain;
    }
    return from_unit_displacement(ux / 2.0, uy / 2.0);
}

TemplateEstimator::TemplateEstimator(double yaw_step, double yaw_max, int pitch_cells) : yaw_step_(yaw_step) {
    if (!(yaw_step > 0.0) || !(yaw_max > 0.0) || pitch_cells < 1) {
        throw ContractViolation("template grid parameters must be positive");
    }
    grid_.push_back({0.0, 0.0});
    int yaw_cells = static_cast<int>(std::floor(yaw_max / yaw_step + 1e-9));
    for (int j = 1; j <= yaw_cells; ++j) {
        for (int i = 0; i < pitch_cells; ++i) {
            double mu = -std::numbers::pi + 2.0 * std::numbers::pi * i / pitch_cells;
            grid_.push_back({mu, j * yaw_step});
        }
    }
    for (const auto& g : grid_) {
        double x = std::sin(g.yaw_phi) * std::cos(g.pitch_mu);
        double y = std::sin(g.yaw_phi) * std::sin(g.pitch_mu);
        unit_displacements_.push_back({x, -y});
    }
}

std::optional<GazeAngles> TemplateEstimator::estimate(const FaceImage& image, const Mask* eyes) const {
    if (!eyes || eyes->size() != image.size()) {
        return std::nullopt;
    }
    auto regions = locate_eyes(*eyes);
    if (!regions) {
        return std::nullopt;
    }
    for (auto& eye : *regions) {
        refine_eye(image, eye);
    }
    constexpr int ss = 4;
    std::vector<double> score(grid_.size(), 0.0);
    for (const auto& eye : *regions) {
        DarknessMap d = darkness(image, eye);
        if (d.contrast < kMinPupilContrast) {
            return std::nullopt;
        }
        const size_t m = eye.interior.size();
        double dmean = 0.0;
        for (double v : d.values) {
            dmean += v;
        }
        dmean /= static_cast<double>(m);
        double dvar = 0.0;
        for (double v : d.values) {
            dvar += (v - dmean) * (v - dmean);
        }
        if (dvar <= 1e-12) {
            return std::nullopt;
        }
        const double gain = kGazeGainRatio * eye.radius;
        const double pr = kPupilRadiusRatio * eye.radius;
        std::vector<double> t(m);
        for (size_t g = 0; g < grid_.size(); ++g) {
            double px = eye.center_x + gain * unit_displacements_[g][0];
            double py = eye.center_y + gain * unit_displacements_[g][1];
            double tmean = 0.0;
            for (size_t i = 0; i < m; ++i) {
                auto [r, c] = eye.interior[i];
                int hits = 0;
                for (int a = 0; a < ss; ++a) {
                    for (int b = 0; b < ss; ++b) {
                        double x = c + (b + 0.5) / ss - px;
                        double y = r + (a + 0.5) / ss - py;
                        hits += (x * x + y * y <= pr * pr);
                    }
                }
                t[i] = static_cast<double>(hits) / (ss * ss);
                tmean += t[i];
            }
            tmean /= static_cast<double>(m);
            double cov = 0.0;
            double tvar = 0.0;
            for (size_t i = 0; i < m; ++i) {
                cov += (d.values[i] - dmean) * (t[i] - tmean);
                tvar += (t[i] - tmean) * (t[i] - tmean);
            }
            score[g] += tvar > 1e-12 ? cov / std::sqrt(dvar * tvar) : -1.0;
        }
    }
    size_t best = static_cast<size_t>(std::max_element(score.begin(), score.end()) - score.begin());
    return grid_[best];
}

std::unique_ptr<GazeEstimator> make_estimator(const std::string& name) {
    if (name == "centroid") {
        return std::make_unique<CentroidEstimator>();
    }
    if (name == "template") {
        return std::make_unique<TemplateEstimator>();
    }
    throw ConfigError("unknown estimator '" + name + "' (expected centroid or template)");
}

}  // namespace gazeswap
