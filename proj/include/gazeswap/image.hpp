#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gazeswap/error.hpp"

namespace gazeswap {

/// Square HxWxC image with interleaved float channels in [0, 1].
class FaceImage {
public:
    FaceImage() = default;
    FaceImage(int size, int channels, float fill = 0.0f);
    FaceImage(int size, int channels, std::vector<float> pixels);

    int size() const { return size_; }
    int channels() const { return channels_; }
    size_t numel() const { return pixels_.size(); }

    float& at(int row, int col, int ch) { return pixels_[index(row, col, ch)]; }
    float at(int row, int col, int ch) const { return pixels_[index(row, col, ch)]; }

    std::span<float> pixels() { return pixels_; }
    std::span<const float> pixels() const { return pixels_; }

    /// Rec.601 luma of one pixel; single-channel images return the value itself.
    float luminance(int row, int col) const;

    /// Throws ContractViolation if any value is non-finite or outside [0, 1].
    void validate() const;

    bool operator==(const FaceImage&) const = default;

private:
    size_t index(int row, int col, int ch) const {
        return (static_cast<size_t>(row) * size_ + col) * channels_ + ch;
    }

    int size_ = 0;
    int channels_ = 0;
    std::vector<float> pixels_;
};

/// Binary HxW mask, one byte per pixel holding 0 or 1.
class Mask {
public:
    Mask() = default;
    explicit Mask(int size, uint8_t fill = 0) : size_(size), bits_(static_cast<size_t>(size) * size, fill) {}

    int size() const { return size_; }
    uint8_t& at(int row, int col) { return bits_[static_cast<size_t>(row) * size_ + col]; }
    uint8_t at(int row, int col) const { return bits_[static_cast<size_t>(row) * size_ + col]; }
    std::span<const uint8_t> bits() const { return bits_; }
    std::span<uint8_t> bits() { return bits_; }

    size_t count() const;
    bool empty() const { return count() == 0; }

    /// True when every set pixel of this mask is also set in `outer`.
    bool subset_of(const Mask& outer) const;

    /// Binary erosion with a 3x3 cross, repeated `steps` times.
    Mask eroded(int steps = 1) const;

    /// Binary dilation with a (2r+1)x(2r+1) square.
    Mask dilated(int radius) const;

    bool operator==(const Mask&) const = default;

private:
    int size_ = 0;
    std::vector<uint8_t> bits_;
};

struct MaskSet {
    Mask face;
    Mask eyes;
    Mask eyes_mouth;

    /// eyes ⊆ eyes_mouth ⊆ face.
    bool nested() const { return eyes.subset_of(eyes_mouth) && eyes_mouth.subset_of(face); }

    bool operator==(const MaskSet&) const = default;
};

/// Pitch (mu) and yaw (phi) in radians. phi acts as the polar angle of the gaze
/// vector: phi = 0 looks straight into the camera.
struct GazeAngles {
    double pitch_mu = 0.0;
    double yaw_phi = 0.0;

    bool operator==(const GazeAngles&) const = default;
};

/// Throws ContractViolation unless both angles are finite and inside the canonical ranges.
void validate_gaze(const GazeAngles& g);

/// Wraps pitch into [-pi, pi] and folds yaw into [0, pi].
GazeAngles normalize_gaze(GazeAngles g);

}  // namespace gazeswap
