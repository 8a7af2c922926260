#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gazeswap/condition.hpp"
#include "gazeswap/dataset.hpp"
#include "gazeswap/eval_stats.hpp"
#include "gazeswap/losses.hpp"
#include "gazeswap/model.hpp"

namespace gazeswap {

inline constexpr int kConfigSchemaVersion = 1;

struct TrainConfig {
    ConditionId condition = ConditionId::Dfl;
    int64_t pretrain_iters = 2000;
    int64_t pair_iters = 1000;
    int batch_size = 4;  ///< frames per side (character and original) per iteration
    double learning_rate = 5e-5;
    uint64_t seed = 0;
    LossWeights weights;
    SsimConfig ssim;
    ModelConfig model;
    std::string estimator = "centroid";
    /// Extra terms of a condition also apply during pretraining (the finetuning
    /// condition never uses the gaze term there).
    bool em_in_pretrain = true;
    bool gaze_in_pretrain = true;
    /// Single-threaded kernels for bit-reproducible runs.
    bool deterministic = true;
    std::filesystem::path pretrain_data;
    std::filesystem::path pair_data;
    std::string character;  ///< identity id inside pair_data
    std::string original;
    std::filesystem::path output_dir;
    /// Reuse this pretrain checkpoint instead of pretraining.
    std::filesystem::path pretrain_checkpoint;

    void validate() const;
};

/// key=value text, one field per line, '#' comments. Unknown keys are rejected.
std::string config_to_text(const TrainConfig& cfg);
TrainConfig config_from_text(const std::string& text, const TrainConfig& base = TrainConfig{});
TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base = TrainConfig{});
/// Applies one key=value assignment; throws ConfigError on unknown keys or bad values.
void apply_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);

/// SHA-256 over the canonical serialization of the experimental fields (paths
/// excluded), hex encoded.
std::string config_hash(const TrainConfig& cfg);
std::string sha256_hex(const std::string& data);

struct TrainLogRow {
    int64_t iteration = 0;
    Phase phase = Phase::Pretrain;
    LossBreakdown loss;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
    int64_t estimator_failures = 0;
    double wall_seconds = 0.0;
    uint64_t seed = 0;
    std::string config_hash;
};

/// CSV with header iteration,dssim,mse,mask_mse,em_term,gaze_term,theta,total.
void write_train_log(const TrainLog& log, const std::filesystem::path& path);
std::vector<TrainLogRow> read_train_log(const std::filesystem::path& path);

struct TrainResult {
    std::filesystem::path pretrain_checkpoint;
    std::filesystem::path final_checkpoint;
    TrainLog log;
};

/// Data already in memory, so matrix runs load each dataset once.
struct TrainData {
    const Dataset* pretrain = nullptr;
    const Dataset* pair = nullptr;
};

/// Pretrain on the identity pool (unless a pretrain checkpoint is given), then
/// train on the (character, original) pair. Writes pretrain.ckpt, final.ckpt,
/// train_log.csv and train_config.cfg under output_dir.
TrainResult train(const TrainConfig& cfg);
TrainResult train(const TrainConfig& cfg, const TrainData& data);

/// Phase-1 loss signature: conditions with equal keys share pretrain checkpoints.
std::string pretrain_key(const TrainConfig& cfg);

struct MatrixCell {
    ConditionId condition = ConditionId::Dfl;
    IdentityPair pair;
    uint64_t seed = 0;
    std::string config_hash;
    std::string pretrain_key;
    std::filesystem::path pretrain_checkpoint;
    std::filesystem::path checkpoint;
    std::filesystem::path train_log;
    std::filesystem::path swaps;
    bool ok = false;
    std::string error;
};

struct Manifest {
    std::filesystem::path pretrain_data;
    std::filesystem::path pair_data;
    std::vector<MatrixCell> cells;
};

void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

/// Trains every (condition, pair, seed) cell under `root` and writes swaps for
/// each finished cell. Failed cells are marked and the rest proceed. The
/// manifest is written to root/manifest.json after every cell.
Manifest run_condition_matrix(const TrainConfig& base, const std::vector<ConditionId>& conditions,
                              const std::vector<IdentityPair>& pairs, const std::vector<uint64_t>& seeds,
                              const std::filesystem::path& root);

/// Inference-mode swaps of every frame of `original`, written as
/// <out_dir>/<frame_index>.png. Returns the number of frames written.
size_t generate_swaps(const std::filesystem::path& checkpoint, const IdentityFrames& original,
                      const std::filesystem::path& out_dir);

/// Loads swaps written by generate_swaps. Eye masks come from the character's
/// analytic geometry placed at each original frame's head offset.
std::vector<SwapFrame> load_swaps(const std::filesystem::path& dir, const IdentityFrames& character,
                                  const IdentityFrames& original);

/// Per-frame errors of one manifest cell against its original identity.
FrameErrorResult evaluate_cell(const MatrixCell& cell, const Dataset& pair_data, const GazeEstimator& estimator,
                               GroundTruth truth, const std::string& individual);

}  // namespace gazeswap
