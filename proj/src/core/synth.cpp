#include "gazeswap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace gazeswap {
namespace {

constexpr int kSupersample = 8;

struct Geometry {
    double cx, cy;        // face center
    double eye_x[2], eye_y[2];
    double pupil_x[2], pupil_y[2];
    double mouth_cy, mouth_sy;
};

bool inside_ellipse(double x, double y, double cx, double cy, double sx, double sy) {
    double dx = (x - cx) / sx;
    double dy = (y - cy) / sy;
    return dx * dx + dy * dy <= 1.0;
}

bool inside_disk(double x, double y, double cx, double cy, double r) {
    double dx = x - cx;
    double dy = y - cy;
    return dx * dx + dy * dy <= r * r;
}

Geometry layout(const SyntheticIdentity& id, double ox, double oy, double mouth_open, const GazeAngles& gaze) {
    Geometry g{};
    g.cx = id.resolution / 2.0 + ox;
    g.cy = id.resolution / 2.0 + oy;
    auto disp = pupil_displacement(id, gaze);
    for (int e = 0; e < 2; ++e) {
        auto c = eye_center(id, e, ox, oy);
        g.eye_x[e] = c[0];
        g.eye_y[e] = c[1];
        g.pupil_x[e] = c[0] + disp[0];
        g.pupil_y[e] = c[1] + disp[1];
    }
    g.mouth_cy = g.cy + id.mouth_height;
    g.mouth_sy = id.mouth_semi_y * mouth_open;
    return g;
}

float quantize(double v) {
    double c = std::clamp(v, 0.0, 1.0);
    return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

std::string describe(const SyntheticIdentity& id) {
    std::ostringstream os;
    os << "identity '" << id.id << "'";
    return os.str();
}

}  // namespace

std::array<double, 2> eye_center(const SyntheticIdentity& identity, int eye, double offset_x, double offset_y) {
    double side = eye == 0 ? -1.0 : 1.0;
    return {identity.resolution / 2.0 + offset_x + side * identity.eye_spacing,
            identity.resolution / 2.0 + offset_y + identity.eye_height};
}

std::array<double, 2> pupil_displacement(const SyntheticIdentity& identity, const GazeAngles& gaze) {
    double gain = kGazeGainRatio * identity.eye_radius;
    double x = std::sin(gaze.yaw_phi) * std::cos(gaze.pitch_mu);
    double y = std::sin(gaze.yaw_phi) * std::sin(gaze.pitch_mu);
    return {gain * x, -gain * y};
}

double expression_from_seed(uint64_t rng_seed) {
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> open(0.3, 1.0);
    return open(rng);
}

void validate_identity(const SyntheticIdentity& id, double ox, double oy) {
    const double n = id.resolution;
    auto fail = [&](const std::string& why) { throw ContractViolation(describe(id) + ": " + why); };
    if (id.resolution < 16) {
        fail("resolution below 16");
    }
    if (id.eye_radius < 3.0) {
        fail("eye radius below 3 px");
    }
    double cx = n / 2.0 + ox;
    double cy = n / 2.0 + oy;
    if (cx - id.face_semi_x < 1.0 || cx + id.face_semi_x > n - 1.0 || cy - id.face_semi_y < 1.0 ||
        cy + id.face_semi_y > n - 1.0) {
        fail("face ellipse leaves the frame at offset (" + std::to_string(ox) + ", " + std::to_string(oy) + ")");
    }
    if (id.eye_spacing <= id.eye_radius + 1.0) {
        fail("eyes overlap");
    }
    // Eye disks and the fully open mouth must sit inside the face ellipse with a one pixel margin.
    for (int k = 0; k < 64; ++k) {
        double t = 2.0 * std::numbers::pi * k / 64.0;
        for (int e = 0; e < 2; ++e) {
            auto c = eye_center(id, e, ox, oy);
            double x = c[0] + (id.eye_radius + 1.0) * std::cos(t);
            double y = c[1] + (id.eye_radius + 1.0) * std::sin(t);
            if (!inside_ellipse(x, y, cx, cy, id.face_semi_x, id.face_semi_y)) {
                fail("eye extends outside the face");
            }
        }
        double mx = cx + (id.mouth_semi_x + 1.0) * std::cos(t);
        double my = cy + id.mouth_height + (id.mouth_semi_y + 1.0) * std::sin(t);
        if (!inside_ellipse(mx, my, cx, cy, id.face_semi_x, id.face_semi_y)) {
            fail("mouth extends outside the face");
        }
    }
    if (id.mouth_height - id.mouth_semi_y <= id.eye_height + id.eye_radius + 1.0) {
        fail("mouth overlaps the eyes");
    }
}

MaskSet render_masks(const SyntheticIdentity& id, double ox, double oy, double mouth_open) {
    validate_identity(id, ox, oy);
    Geometry g = layout(id, ox, oy, mouth_open, {});
    const int n = id.resolution;
    MaskSet m{Mask(n), Mask(n), Mask(n)};
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            double x = c + 0.5;
            double y = r + 0.5;
            bool face = inside_ellipse(x, y, g.cx, g.cy, id.face_semi_x, id.face_semi_y);
            bool eye = inside_disk(x, y, g.eye_x[0], g.eye_y[0], id.eye_radius) ||
                       inside_disk(x, y, g.eye_x[1], g.eye_y[1], id.eye_radius);
            bool mouth = inside_ellipse(x, y, g.cx, g.mouth_cy, id.mouth_semi_x, g.mouth_sy);
            m.face.at(r, c) = face;
            m.eyes.at(r, c) = eye && face;
            m.eyes_mouth.at(r, c) = (eye || mouth) && face;
        }
    }
    return m;
}

FrameSample render_face(const SyntheticIdentity& id, const GazeAngles& gaze, double ox, double oy,
                        uint64_t rng_seed) {
    validate_gaze(gaze);
    validate_identity(id, ox, oy);
    const double mouth_open = expression_from_seed(rng_seed);
    Geometry g = layout(id, ox, oy, mouth_open, gaze);
    const int n = id.resolution;
    const double pupil_r = kPupilRadiusRatio * id.eye_radius;

    FrameSample s;
    s.image = FaceImage(n, 3);
    s.true_gaze = gaze;
    s.identity_id = id.id;
    s.offset_x = ox;
    s.offset_y = oy;

    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            double acc[3] = {0.0, 0.0, 0.0};
            for (int sr = 0; sr < kSupersample; ++sr) {
                for (int sc = 0; sc < kSupersample; ++sc) {
                    double x = c + (sc + 0.5) / kSupersample;
                    double y = r + (sr + 0.5) / kSupersample;
                    const float* col = id.background.data();
                    if (inside_ellipse(x, y, g.cx, g.cy, id.face_semi_x, id.face_semi_y)) {
                        col = id.skin_color.data();
                        if (inside_ellipse(x, y, g.cx, g.mouth_cy, id.mouth_semi_x, g.mouth_sy)) {
                            col = id.mouth_color.data();
                        }
                        for (int e = 0; e < 2; ++e) {
                            if (inside_disk(x, y, g.eye_x[e], g.eye_y[e], id.eye_radius)) {
                                col = inside_disk(x, y, g.pupil_x[e], g.pupil_y[e], pupil_r) ? kPupilColor.data()
                                                                                             : kScleraColor.data();
                            }
                        }
                    }
                    for (int ch = 0; ch < 3; ++ch) {
                        acc[ch] += col[ch];
                    }
                }
            }
            for (int ch = 0; ch < 3; ++ch) {
                s.image.at(r, c, ch) = quantize(acc[ch] / (kSupersample * kSupersample));
            }
        }
    }
    s.masks = render_masks(id, ox, oy, mouth_open);
    return s;
}

SyntheticIdentity random_identity(std::mt19937_64& rng, int resolution, std::string id, std::string group) {
    const double s = resolution / 64.0;
    auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    for (int attempt = 0; attempt < 1000; ++attempt) {
        SyntheticIdentity out;
        out.id = id;
        out.group = group;
        out.resolution = resolution;
        double red = u(0.50, 0.92);
        double green = red * u(0.68, 0.86);
        double blue = green * u(0.72, 0.95);
        out.skin_color = {static_cast<float>(red), static_cast<float>(green), static_cast<float>(blue)};
        double bg = u(0.15, 0.45);
        out.background = {static_cast<float>(bg), static_cast<float>(bg * u(0.9, 1.1)),
                          static_cast<float>(std::min(1.0, bg * u(1.0, 1.3)))};
        out.mouth_color = {static_cast<float>(u(0.45, 0.70)), static_cast<float>(u(0.12, 0.25)),
                           static_cast<float>(u(0.15, 0.28))};
        out.face_semi_x = u(21.0, 24.0) * s;
        out.face_semi_y = u(25.0, 28.0) * s;
        out.eye_spacing = u(10.0, 11.5) * s;
        out.eye_height = u(-7.0, -5.0) * s;
        out.eye_radius = u(6.0, 7.0) * s;
        out.mouth_semi_x = u(6.0, 9.0) * s;
        out.mouth_semi_y = u(2.5, 4.0) * s;
        out.mouth_height = u(11.0, 14.0) * s;
        try {
            // Must remain valid at the largest head offset used by the dataset sampler.
            validate_identity(out, 3.0 * s, 3.0 * s);
            validate_identity(out, -3.0 * s, -3.0 * s);
            return out;
        } catch (const ContractViolation&) {
        }
    }
    throw ContractViolation("could not sample a valid identity at resolution " + std::to_string(resolution));
}

}  // namespace gazeswap
