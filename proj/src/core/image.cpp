#include "gazeswap/image.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace gazeswap {

FaceImage::FaceImage(int size, int channels, float fill)
    : size_(size), channels_(channels), pixels_(static_cast<size_t>(size) * size * channels, fill) {
    if (size <= 0 || channels <= 0) {
        throw ContractViolation("FaceImage: size and channels must be positive");
    }
}

FaceImage::FaceImage(int size, int channels, std::vector<float> pixels)
    : size_(size), channels_(channels), pixels_(std::move(pixels)) {
    if (size <= 0 || channels <= 0) {
        throw ContractViolation("FaceImage: size and channels must be positive");
    }
    if (pixels_.size() != static_cast<size_t>(size) * size * channels) {
        throw ContractViolation("FaceImage: pixel buffer has " + std::to_string(pixels_.size()) +
                                " values, expected " + std::to_string(size * size * channels));
    }
}

float FaceImage::luminance(int row, int col) const {
    if (channels_ < 3) {
        return at(row, col, 0);
    }
    return 0.299f * at(row, col, 0) + 0.587f * at(row, col, 1) + 0.114f * at(row, col, 2);
}

void FaceImage::validate() const {
    for (float v : pixels_) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            throw ContractViolation("FaceImage: pixel value outside [0,1] or non-finite");
        }
    }
}

size_t Mask::count() const {
    return static_cast<size_t>(std::count(bits_.begin(), bits_.end(), uint8_t{1}));
}

bool Mask::subset_of(const Mask& outer) const {
    if (outer.size_ != size_) {
        return false;
    }
    for (size_t i = 0; i < bits_.size(); ++i) {
        if (bits_[i] && !outer.bits_[i]) {
            return false;
        }
    }
    return true;
}

Mask Mask::eroded(int steps) const {
    Mask cur = *this;
    for (int s = 0; s < steps; ++s) {
        Mask next(size_);
        for (int r = 0; r < size_; ++r) {
            for (int c = 0; c < size_; ++c) {
                if (!cur.at(r, c)) {
                    continue;
                }
                bool keep = r > 0 && c > 0 && r + 1 < size_ && c + 1 < size_ && cur.at(r - 1, c) &&
                            cur.at(r + 1, c) && cur.at(r, c - 1) && cur.at(r, c + 1);
                next.at(r, c) = keep ? 1 : 0;
            }
        }
        cur = std::move(next);
    }
    return cur;
}

Mask Mask::dilated(int radius) const {
    Mask out(size_);
    for (int r = 0; r < size_; ++r) {
        for (int c = 0; c < size_; ++c) {
            if (!at(r, c)) {
                continue;
            }
            for (int dr = -radius; dr <= radius; ++dr) {
                for (int dc = -radius; dc <= radius; ++dc) {
                    int rr = r + dr;
                    int cc = c + dc;
                    if (rr >= 0 && cc >= 0 && rr < size_ && cc < size_) {
                        out.at(rr, cc) = 1;
                    }
                }
            }
        }
    }
    return out;
}

void validate_gaze(const GazeAngles& g) {
    constexpr double pi = std::numbers::pi;
    if (!std::isfinite(g.pitch_mu) || !std::isfinite(g.yaw_phi)) {
        throw ContractViolation("gaze angles must be finite");
    }
    if (g.pitch_mu < -pi || g.pitch_mu > pi) {
        throw ContractViolation("pitch outside [-pi, pi]: " + std::to_string(g.pitch_mu));
    }
    if (g.yaw_phi < 0.0 || g.yaw_phi > pi) {
        throw ContractViolation("yaw outside [0, pi]: " + std::to_string(g.yaw_phi));
    }
}

GazeAngles normalize_gaze(GazeAngles g) {
    constexpr double pi = std::numbers::pi;
    constexpr double two_pi = 2.0 * pi;
    // phi is a polar angle with period 2pi; negative phi mirrors the azimuth.
    double phi = std::remainder(g.yaw_phi, two_pi);
    double mu = g.pitch_mu;
    if (phi < 0.0) {
        phi = -phi;
        mu += pi;
    }
    mu = std::remainder(mu, two_pi);
    return {mu, phi};
}

}  // namespace gazeswap
