#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <torch/torch.h>

#include "gazeswap/image.hpp"

namespace gazeswap {

struct ModelConfig {
    int resolution = 64;
    int channels = 3;
    int latent_dim = 128;
    int base_channels = 16;  ///< width of the first encoder block; doubles per block

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct LatentPair {
    torch::Tensor first;
    torch::Tensor second;
};

struct Reconstruction {
    torch::Tensor image;  ///< N x C x H x W in [0, 1]
    torch::Tensor mask;   ///< N x 1 x H x W in [0, 1]
    LatentPair latent;
};

class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(const ModelConfig& cfg);
    torch::Tensor forward(torch::Tensor x);
    int64_t output_size() const { return out_size_; }

private:
    torch::nn::Sequential blocks_{nullptr};
    int64_t out_size_ = 0;
};
TORCH_MODULE(Encoder);

/// Fully connected map from the flattened encoding to a latent code.
class IntermediateImpl : public torch::nn::Module {
public:
    IntermediateImpl(int64_t in, int64_t d);
    torch::Tensor forward(torch::Tensor e);

private:
    torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(Intermediate);

/// Decodes a 2d latent into an image and a face mask.
class DecoderImpl : public torch::nn::Module {
public:
    explicit DecoderImpl(const ModelConfig& cfg);
    std::pair<torch::Tensor, torch::Tensor> forward(torch::Tensor z);

private:
    ModelConfig cfg_;
    int64_t seed_ch_ = 0;
    int64_t seed_hw_ = 0;
    torch::nn::Linear fc_{nullptr};
    torch::nn::Sequential up_{nullptr};
    torch::nn::Conv2d image_head_{nullptr};
    torch::nn::Conv2d mask_head_{nullptr};
};
TORCH_MODULE(Decoder);

/// One encoder, intermediates I_AB and I_B, one decoder. Original faces decode
/// I_AB(E(y)) || I_B(E(y)); character faces and swaps decode I_AB(E(y)) twice.
class LiaeModelImpl : public torch::nn::Module {
public:
    explicit LiaeModelImpl(const ModelConfig& cfg);

    Reconstruction forward_original(const torch::Tensor& y);
    Reconstruction forward_character(const torch::Tensor& y);
    /// Both training pathways in one pass over shared E and D: equal to
    /// {forward_character(y_char), forward_original(y_orig)}.
    std::pair<Reconstruction, Reconstruction> forward_pair(const torch::Tensor& y_char, const torch::Tensor& y_orig);
    /// Inference-mode swap: the character pathway applied to an original face.
    Reconstruction swap(const torch::Tensor& y);

    const ModelConfig& config() const { return cfg_; }
    int64_t parameter_count() const;

    Encoder encoder{nullptr};
    Intermediate inter_ab{nullptr};
    Intermediate inter_b{nullptr};
    Decoder decoder{nullptr};

    /// Instrumentation for wiring tests.
    int64_t inter_b_calls() const { return inter_b_calls_; }
    int64_t inter_ab_calls() const { return inter_ab_calls_; }

private:
    torch::Tensor check_input(const torch::Tensor& y) const;

    ModelConfig cfg_;
    int64_t inter_b_calls_ = 0;
    int64_t inter_ab_calls_ = 0;
};
TORCH_MODULE(LiaeModel);

/// Deterministic construction: parameters are drawn after seeding torch's generator.
LiaeModel make_model(const ModelConfig& cfg, uint64_t seed);

struct CheckpointMeta {
    ModelConfig arch;
    int64_t iteration = 0;
    std::string condition;
    std::string phase;
    std::string rng_state;  ///< serialized std::mt19937_64 of the training loop
    std::string config_hash;
};

struct LoadedCheckpoint {
    LiaeModel model{nullptr};
    CheckpointMeta meta;
    std::string optimizer_state;  ///< empty when the checkpoint holds none
};

inline constexpr uint32_t kCheckpointVersion = 1;

/// Container: 8-byte magic, u32 format version, u64 JSON header length, JSON
/// header (architecture, iteration, condition, RNG state, tensor table), then
/// raw little-endian float32 parameter blobs and an optional optimizer blob.
void save_checkpoint(LiaeModel& model, const CheckpointMeta& meta, const std::filesystem::path& path,
                     torch::optim::Optimizer* optimizer = nullptr);

/// Throws ArchitectureMismatch on a bad magic/version or when `expected` differs
/// from the stored architecture; IoError when the file cannot be read.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::optional<ModelConfig>& expected = std::nullopt);

void restore_optimizer(torch::optim::Optimizer& optimizer, const std::string& state);

/// Header fields only, without materializing the model.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace gazeswap
