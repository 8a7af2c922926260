#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>

#include "gazeswap/image.hpp"

namespace gazeswap {

/// Appearance and geometry of one procedurally rendered face. Lengths are in
/// pixels at the stated resolution; the renderer never rescales them.
struct SyntheticIdentity {
    std::string id;
    std::string group;  ///< used to enumerate character/original pairs within a group
    int resolution = 64;
    std::array<float, 3> skin_color{0.80f, 0.62f, 0.50f};
    std::array<float, 3> background{0.30f, 0.33f, 0.38f};
    std::array<float, 3> mouth_color{0.55f, 0.18f, 0.20f};
    double face_semi_x = 22.0;   ///< horizontal semi-axis of the face ellipse
    double face_semi_y = 27.0;   ///< vertical semi-axis
    double eye_spacing = 11.0;   ///< distance from face center to each eye center
    double eye_height = -6.0;    ///< vertical eye position relative to face center (negative is up)
    double eye_radius = 6.5;
    double mouth_semi_x = 8.0;
    double mouth_semi_y = 3.0;   ///< at fully open expression
    double mouth_height = 12.0;  ///< vertical mouth position relative to face center

    bool operator==(const SyntheticIdentity&) const = default;
};

/// Pupil radius as a fraction of the eye radius.
inline constexpr double kPupilRadiusRatio = 0.33;
/// Pupil displacement gain as a fraction of the eye radius.
inline constexpr double kGazeGainRatio = 0.6;

inline constexpr std::array<float, 3> kScleraColor{1.0f, 1.0f, 1.0f};
inline constexpr std::array<float, 3> kPupilColor{0.04f, 0.03f, 0.03f};

struct FrameSample {
    FaceImage image;
    MaskSet masks;
    GazeAngles true_gaze;
    std::string identity_id;
    int64_t frame_index = 0;
    double offset_x = 0.0;
    double offset_y = 0.0;

    bool operator==(const FrameSample&) const = default;
};

/// Rejects identities whose geometry would leave the frame or violate mask nesting.
void validate_identity(const SyntheticIdentity& identity, double offset_x = 0.0, double offset_y = 0.0);

/// Image-plane eye center for `eye` 0 (left in the image) or 1, including head offset.
std::array<double, 2> eye_center(const SyntheticIdentity& identity, int eye, double offset_x, double offset_y);

/// Pupil displacement (columns, rows) in pixels for a gaze. Rows grow downward,
/// so a positive Cartesian y moves the pupil up.
std::array<double, 2> pupil_displacement(const SyntheticIdentity& identity, const GazeAngles& gaze);

/// Rasterizes a face. Pixels are anti-aliased by 8x8 supersampling and quantized
/// to multiples of 1/255 so that 8-bit PNG storage is lossless. The seed drives
/// the expression (mouth opening) only.
FrameSample render_face(const SyntheticIdentity& identity, const GazeAngles& gaze,
                        double offset_x, double offset_y, uint64_t rng_seed);

/// Mouth opening in [0.3, 1] drawn from the frame seed.
double expression_from_seed(uint64_t rng_seed);

/// Masks only; identical to the masks of render_face for the same geometry and expression.
MaskSet render_masks(const SyntheticIdentity& identity, double offset_x, double offset_y,
                     double mouth_open = 1.0);

/// Samples a random identity at the given resolution.
SyntheticIdentity random_identity(std::mt19937_64& rng, int resolution, std::string id, std::string group);

}  // namespace gazeswap
