#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gazeswap/synth.hpp"

namespace gazeswap {

/// Distribution of ground-truth gaze. Text form:
///   uniform:<pitch_lo>,<pitch_hi>,<yaw_lo>,<yaw_hi>
///   normal:<pitch_mean>,<pitch_sd>,<yaw_mean>,<yaw_sd>   (yaw clipped to the visible range)
/// Yaw must stay in [0, pi/2]: beyond that the gaze faces away from the camera.
struct GazeSampler {
    enum class Kind { Uniform, Normal };
    Kind kind = Kind::Uniform;
    double a = -3.141592653589793;  ///< pitch lo / mean
    double b = 3.141592653589793;   ///< pitch hi / sd
    double c = 0.0;                 ///< yaw lo / mean
    double d = 0.7853981633974483;  ///< yaw hi / sd

    static GazeSampler parse(const std::string& text);
    std::string to_string() const;
    void validate() const;
    GazeAngles sample(std::mt19937_64& rng) const;
};

struct DatasetSpec {
    int frames_per_identity = 100;
    GazeSampler gaze;
    double max_head_offset = 3.0;  ///< head offset drawn uniformly from [-max, max] per axis
    uint64_t seed = 0;
};

/// All frames of one identity, ordered by frame index.
struct IdentityFrames {
    SyntheticIdentity identity;
    std::vector<FrameSample> frames;
};

using Dataset = std::vector<IdentityFrames>;

/// Renders every frame in memory; pure function of (identities, spec).
Dataset synthesize_dataset(const std::vector<SyntheticIdentity>& identities, const DatasetSpec& spec);

/// Renders and writes:
///   <root>/<id>/frames/<idx>.png
///   <root>/<id>/masks/<idx>_{face,eyes,em}.png
///   <root>/<id>/meta.csv            frame_index,pitch_mu,yaw_phi,offset_x,offset_y
///   <root>/<id>/identity.json       renderer parameters
Dataset generate_dataset(const std::vector<SyntheticIdentity>& identities, const DatasetSpec& spec,
                         const std::filesystem::path& root);

void write_dataset(const Dataset& dataset, const std::filesystem::path& root);

Dataset load_dataset(const std::filesystem::path& root);

/// `count` identities split round-robin over `groups` groups, named id0, id1, ...
std::vector<SyntheticIdentity> random_identities(int count, int groups, int resolution, uint64_t seed);

struct IdentityPair {
    std::string character;
    std::string original;

    std::string label() const { return character + "-" + original; }
    bool operator==(const IdentityPair&) const = default;
};

/// Ordered (character, original) pairs of distinct identities sharing a group.
std::vector<IdentityPair> enumerate_pairs(const Dataset& dataset);

const IdentityFrames& find_identity(const Dataset& dataset, const std::string& id);

}  // namespace gazeswap
