#include "gazeswap/trainer.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "gazeswap/csv.hpp"
#include "gazeswap/png_io.hpp"
#include "gazeswap/synth.hpp"
#include "gazeswap/tensor.hpp"

namespace gazeswap {
namespace fs = std::filesystem;

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    throw ConfigError("config key '" + key + "' expects true or false, got '" + v + "'");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

int64_t int_value(const std::string& key, const std::string& v) {
    try {
        return parse_int(v);
    } catch (const ConfigError&) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double real_value(const std::string& key, const std::string& v) {
    try {
        return parse_double(v);
    } catch (const ConfigError&) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
    }
}

struct Field {
    const char* key;
    bool experimental;  // part of the hash
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

#define GS_INT(name, member)                                                                              \
    Field{name, true, [](const TrainConfig& c) { return std::to_string(c.member); },                       \
          [](TrainConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(int_value(name, v)); }}
#define GS_REAL(name, member)                                                                    \
    Field{name, true, [](const TrainConfig& c) { return format_double(c.member); },               \
          [](TrainConfig& c, const std::string& v) { c.member = real_value(name, v); }}
#define GS_BOOL(name, member, exp)                                                               \
    Field{name, exp, [](const TrainConfig& c) { return bool_text(c.member); },                    \
          [](TrainConfig& c, const std::string& v) { c.member = parse_bool(name, v); }}
#define GS_PATH(name, member)                                                                    \
    Field{name, false, [](const TrainConfig& c) { return c.member.string(); },                    \
          [](TrainConfig& c, const std::string& v) { c.member = v; }}

const std::vector<Field>& fields() {
    static const std::vector<Field> f{
        Field{"condition", true, [](const TrainConfig& c) { return std::string(condition_name(c.condition)); },
              [](TrainConfig& c, const std::string& v) { c.condition = parse_condition(v); }},
        GS_INT("pretrain_iters", pretrain_iters),
        GS_INT("pair_iters", pair_iters),
        GS_INT("batch_size", batch_size),
        GS_REAL("learning_rate", learning_rate),
        GS_INT("seed", seed),
        GS_REAL("lambda1", weights.lambda1),
        GS_REAL("lambda2", weights.lambda2),
        GS_REAL("lambda3", weights.lambda3),
        GS_REAL("lambda_em", weights.lambda_em),
        GS_REAL("alpha", weights.alpha),
        GS_REAL("beta", weights.beta),
        GS_BOOL("core_on_face_mask", weights.core_on_face_mask, true),
        GS_INT("ssim_window", ssim.window_size),
        Field{"ssim_kind", true,
              [](const TrainConfig& c) {
                  return std::string(c.ssim.window == WindowKind::Gaussian ? "gaussian" : "uniform");
              },
              [](TrainConfig& c, const std::string& v) {
                  if (v == "gaussian") {
                      c.ssim.window = WindowKind::Gaussian;
                  } else if (v == "uniform") {
                      c.ssim.window = WindowKind::Uniform;
                  } else {
                      throw ConfigError("ssim_kind must be gaussian or uniform, got '" + v + "'");
                  }
              }},
        GS_REAL("ssim_sigma", ssim.sigma),
        GS_REAL("ssim_c1", ssim.c1),
        GS_REAL("ssim_c2", ssim.c2),
        GS_INT("resolution", model.resolution),
        GS_INT("latent_dim", model.latent_dim),
        GS_INT("base_channels", model.base_channels),
        Field{"estimator", true, [](const TrainConfig& c) { return c.estimator; },
              [](TrainConfig& c, const std::string& v) {
                  make_estimator(v);
                  c.estimator = v;
              }},
        GS_BOOL("em_in_pretrain", em_in_pretrain, true),
        GS_BOOL("gaze_in_pretrain", gaze_in_pretrain, true),
        GS_BOOL("deterministic", deterministic, true),
        Field{"character", true, [](const TrainConfig& c) { return c.character; },
              [](TrainConfig& c, const std::string& v) { c.character = v; }},
        Field{"original", true, [](const TrainConfig& c) { return c.original; },
              [](TrainConfig& c, const std::string& v) { c.original = v; }},
        GS_PATH("pretrain_data", pretrain_data),
        GS_PATH("pair_data", pair_data),
        GS_PATH("output_dir", output_dir),
        GS_PATH("pretrain_checkpoint", pretrain_checkpoint),
    };
    return f;
}

#undef GS_INT
#undef GS_REAL
#undef GS_BOOL
#undef GS_PATH

std::string canonical(const TrainConfig& cfg, bool experimental_only) {
    std::ostringstream os;
    os << "schema_version=" << kConfigSchemaVersion << "\n";
    for (const auto& f : fields()) {
        if (!experimental_only || f.experimental) {
            os << f.key << "=" << f.get(cfg) << "\n";
        }
    }
    return os.str();
}

std::string rng_text(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void rng_restore(std::mt19937_64& rng, const std::string& text) {
    std::istringstream is(text);
    is >> rng;
    if (!is) {
        throw ArchitectureMismatch("checkpoint holds an unreadable RNG state");
    }
}

const char* phase_name(Phase p) { return p == Phase::Pretrain ? "pretrain" : "pair"; }

/// One training step's worth of frames, plus where they came from for diagnostics.
struct Batch {
    std::vector<const FrameSample*> character;
    std::vector<const FrameSample*> original;
};

std::vector<const FrameSample*> flatten(const Dataset& d) {
    std::vector<const FrameSample*> out;
    for (const auto& block : d) {
        for (const auto& f : block.frames) {
            out.push_back(&f);
        }
    }
    return out;
}

std::vector<const FrameSample*> frames_of(const IdentityFrames& block) {
    std::vector<const FrameSample*> out;
    for (const auto& f : block.frames) {
        out.push_back(&f);
    }
    return out;
}

std::vector<const FrameSample*> draw(const std::vector<const FrameSample*>& pool, int n, std::mt19937_64& rng) {
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    std::vector<const FrameSample*> out(n);
    for (auto& f : out) {
        f = pool[pick(rng)];
    }
    return out;
}

std::string describe_batch(const Batch& b) {
    std::ostringstream os;
    os << "character frames:";
    for (auto* f : b.character) {
        os << " " << f->identity_id << "/" << f->frame_index;
    }
    os << "; original frames:";
    for (auto* f : b.original) {
        os << " " << f->identity_id << "/" << f->frame_index;
    }
    return os.str();
}

/// Estimates of training targets never change, so each frame is estimated once.
class TargetGazeCache {
public:
    explicit TargetGazeCache(const GazeEstimator& est) : est_(est) {}
    const std::optional<GazeAngles>& get(const FrameSample* f) {
        auto it = cache_.find(f);
        if (it == cache_.end()) {
            it = cache_.emplace(f, est_.estimate(f->image, &f->masks.eyes)).first;
        }
        return it->second;
    }

private:
    const GazeEstimator& est_;
    std::unordered_map<const FrameSample*, std::optional<GazeAngles>> cache_;
};

struct Loop {
    const TrainConfig& cfg;
    LiaeModel model;
    torch::optim::Adam& opt;
    std::mt19937_64& rng;
    const GazeEstimator& estimator;
    TargetGazeCache& targets;
    TrainLog& log;
    int64_t iteration = 0;

    void run(Phase phase, int64_t iters, const std::vector<const FrameSample*>& char_pool,
             const std::vector<const FrameSample*>& orig_pool) {
        const bool with_em = uses_em(cfg.condition) && (phase == Phase::Pair || cfg.em_in_pretrain);
        const bool with_gaze = gaze_active(cfg.condition, phase) && (phase == Phase::Pair || cfg.gaze_in_pretrain);
        model->train();
        for (int64_t it = 0; it < iters; ++it) {
            Batch b{draw(char_pool, cfg.batch_size, rng), draw(orig_pool, cfg.batch_size, rng)};
            std::vector<const FrameSample*> all(b.character);
            all.insert(all.end(), b.original.begin(), b.original.end());
            std::vector<const FaceImage*> imgs;
            std::vector<const Mask*> face, eyes, em;
            for (auto* f : all) {
                imgs.push_back(&f->image);
                face.push_back(&f->masks.face);
                eyes.push_back(&f->masks.eyes);
                em.push_back(&f->masks.eyes_mouth);
            }
            LossInputs in;
            in.target = stack_images(imgs);
            in.face_mask = stack_masks(face);
            in.eyes_mask = stack_masks(eyes);
            in.em_mask = stack_masks(em);
            in.eyes = eyes;
            const int64_t nc = static_cast<int64_t>(b.character.size());
            auto [rc, ro] = model->forward_pair(in.target.slice(0, 0, nc), in.target.slice(0, nc));
            in.prediction = torch::cat({rc.image, ro.image}, 0);
            in.predicted_mask = torch::cat({rc.mask, ro.mask}, 0);

            std::vector<std::optional<double>> theta;
            if (with_gaze) {
                torch::Tensor pred = in.prediction.detach();
                for (size_t i = 0; i < all.size(); ++i) {
                    const auto& g_true = targets.get(all[i]);
                    auto g_pred = estimator.estimate(tensor_to_image(pred[static_cast<int64_t>(i)]), eyes[i]);
                    theta.push_back(g_true && g_pred ? std::optional<double>(angular_error(*g_true, *g_pred))
                                                     : std::nullopt);
                }
            }
            LossResult r = gated_loss(with_em, with_gaze, in, theta, cfg.weights, cfg.ssim);
            ++iteration;
            if (!std::isfinite(r.breakdown.total)) {
                std::ostringstream os;
                os << "non-finite loss at iteration " << iteration << " (" << phase_name(phase)
                   << " phase); " << describe_batch(b);
                std::error_code ec;
                fs::create_directories(cfg.output_dir, ec);
                std::ofstream dump(cfg.output_dir / "nan_dump.txt");
                dump << os.str() << "\n";
                throw TrainingError(os.str());
            }
            opt.zero_grad();
            r.total.backward();
            opt.step();
            log.estimator_failures += r.breakdown.estimator_failures;
            log.rows.push_back({iteration, phase, r.breakdown});
        }
    }
};

const Dataset& need_dataset(const Dataset* given, const fs::path& path, std::optional<Dataset>& storage,
                            const char* what) {
    if (given != nullptr) {
        return *given;
    }
    if (path.empty() || !fs::exists(path)) {
        throw ConfigError(std::string(what) + " dataset missing: '" + path.string() + "'");
    }
    storage = load_dataset(path);
    return *storage;
}

void write_summary(const TrainConfig& cfg, const TrainLog& log, const fs::path& path) {
    nlohmann::json j;
    j["seed"] = log.seed;
    j["config_hash"] = log.config_hash;
    j["iterations"] = log.rows.size();
    j["estimator_failures"] = log.estimator_failures;
    if (!cfg.deterministic) {
        j["wall_seconds"] = log.wall_seconds;
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << j.dump(2) << "\n";
}

}  // namespace

void TrainConfig::validate() const {
    if (pretrain_iters < 0 || pair_iters < 0) {
        throw ConfigError("iteration counts must be non-negative");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be at least 1");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be positive");
    }
    try {
        weights.validate();
        model.validate();
        ssim.validate(model.resolution, model.resolution);
    } catch (const ContractViolation& e) {
        throw ConfigError(e.what());
    }
    make_estimator(estimator);
}

void apply_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "schema_version") {
        if (int_value(key, value) != kConfigSchemaVersion) {
            throw ConfigError("unsupported config schema_version " + value + " (expected " +
                              std::to_string(kConfigSchemaVersion) + ")");
        }
        return;
    }
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

std::string config_to_text(const TrainConfig& cfg) { return canonical(cfg, false); }

TrainConfig config_from_text(const std::string& text, const TrainConfig& base) {
    TrainConfig cfg = base;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" + t + "'");
        }
        apply_config_value(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

TrainConfig load_config(const fs::path& path, const TrainConfig& base) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_text(ss.str(), base);
}

std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 digest failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) {
        os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    }
    return os.str();
}

std::string config_hash(const TrainConfig& cfg) { return sha256_hex(canonical(cfg, true)); }

void write_train_log(const TrainLog& log, const fs::path& path) {
    CsvTable t;
    t.header = {"iteration", "dssim", "mse", "mask_mse", "em_term", "gaze_term", "theta", "total"};
    for (const auto& r : log.rows) {
        t.rows.push_back({std::to_string(r.iteration), format_double(r.loss.dssim), format_double(r.loss.mse),
                          format_double(r.loss.mask_mse), format_double(r.loss.em_term),
                          format_double(r.loss.gaze_term), format_double(r.loss.theta),
                          format_double(r.loss.total)});
    }
    write_csv(path, t);
}

std::vector<TrainLogRow> read_train_log(const fs::path& path) {
    CsvTable t = read_csv(path);
    std::vector<TrainLogRow> rows;
    const size_t ci = t.column("iteration"), cd = t.column("dssim"), cm = t.column("mse"),
                 cmm = t.column("mask_mse"), ce = t.column("em_term"), cg = t.column("gaze_term"),
                 ct = t.column("theta"), cto = t.column("total");
    for (const auto& r : t.rows) {
        TrainLogRow row;
        row.iteration = parse_int(r[ci]);
        row.loss.dssim = parse_double(r[cd]);
        row.loss.mse = parse_double(r[cm]);
        row.loss.mask_mse = parse_double(r[cmm]);
        row.loss.em_term = parse_double(r[ce]);
        row.loss.gaze_term = parse_double(r[cg]);
        row.loss.theta = parse_double(r[ct]);
        row.loss.total = parse_double(r[cto]);
        rows.push_back(row);
    }
    return rows;
}

std::string pretrain_key(const TrainConfig& cfg) {
    const bool em = uses_em(cfg.condition) && cfg.em_in_pretrain;
    const bool gaze = gaze_active(cfg.condition, Phase::Pretrain) && cfg.gaze_in_pretrain;
    return std::string("em") + (em ? "1" : "0") + "-gaze" + (gaze ? "1" : "0");
}

TrainResult train(const TrainConfig& cfg) { return train(cfg, TrainData{}); }

TrainResult train(const TrainConfig& cfg, const TrainData& data) {
    cfg.validate();
    if (cfg.output_dir.empty()) {
        throw ConfigError("output_dir is required");
    }
    if (cfg.deterministic) {
        torch::set_num_threads(1);
    }
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) {
        throw IoError("cannot create " + cfg.output_dir.string() + ": " + ec.message());
    }
    const auto t0 = std::chrono::steady_clock::now();
    const std::string hash = config_hash(cfg);
    {
        std::ofstream snap(cfg.output_dir / "train_config.cfg");
        snap << config_to_text(cfg);
    }

    TrainResult result;
    result.log.seed = cfg.seed;
    result.log.config_hash = hash;
    auto estimator = make_estimator(cfg.estimator);
    TargetGazeCache targets(*estimator);

    std::mt19937_64 rng(cfg.seed);
    LiaeModel model{nullptr};
    std::unique_ptr<torch::optim::Adam> opt;
    int64_t start_iteration = 0;

    std::optional<Dataset> pretrain_store;
    std::optional<Dataset> pair_store;

    if (!cfg.pretrain_checkpoint.empty()) {
        LoadedCheckpoint ck = load_checkpoint(cfg.pretrain_checkpoint, cfg.model);
        if (ck.meta.iteration != cfg.pretrain_iters) {
            throw ConfigError("pretrain checkpoint " + cfg.pretrain_checkpoint.string() + " stopped at iteration " +
                              std::to_string(ck.meta.iteration) + ", config expects " +
                              std::to_string(cfg.pretrain_iters));
        }
        model = ck.model;
        opt = std::make_unique<torch::optim::Adam>(model->parameters(),
                                                   torch::optim::AdamOptions(cfg.learning_rate));
        restore_optimizer(*opt, ck.optimizer_state);
        rng_restore(rng, ck.meta.rng_state);
        start_iteration = ck.meta.iteration;
        result.pretrain_checkpoint = cfg.pretrain_checkpoint;
    } else {
        model = make_model(cfg.model, cfg.seed);
        opt = std::make_unique<torch::optim::Adam>(model->parameters(),
                                                   torch::optim::AdamOptions(cfg.learning_rate));
        if (cfg.pretrain_iters > 0) {
            const Dataset& pool = need_dataset(data.pretrain, cfg.pretrain_data, pretrain_store, "pretrain");
            auto frames = flatten(pool);
            if (frames.empty()) {
                throw ConfigError("pretrain dataset has no frames");
            }
            Loop loop{cfg, model, *opt, rng, *estimator, targets, result.log, 0};
            loop.run(Phase::Pretrain, cfg.pretrain_iters, frames, frames);
            start_iteration = loop.iteration;
        }
        CheckpointMeta meta{cfg.model, start_iteration, std::string(condition_name(cfg.condition)), "pretrain",
                            rng_text(rng), hash};
        result.pretrain_checkpoint = cfg.output_dir / "pretrain.ckpt";
        save_checkpoint(model, meta, result.pretrain_checkpoint, opt.get());
    }

    int64_t end_iteration = start_iteration;
    if (cfg.pair_iters > 0) {
        const Dataset& pair = need_dataset(data.pair, cfg.pair_data, pair_store, "pair");
        const IdentityFrames& ch = find_identity(pair, cfg.character);
        const IdentityFrames& orig = find_identity(pair, cfg.original);
        if (ch.identity.resolution != cfg.model.resolution || orig.identity.resolution != cfg.model.resolution) {
            throw ConfigError("pair dataset resolution does not match the model resolution");
        }
        Loop loop{cfg, model, *opt, rng, *estimator, targets, result.log, start_iteration};
        loop.run(Phase::Pair, cfg.pair_iters, frames_of(ch), frames_of(orig));
        end_iteration = loop.iteration;
    }
    CheckpointMeta meta{cfg.model, end_iteration, std::string(condition_name(cfg.condition)), "pair", rng_text(rng),
                        hash};
    result.final_checkpoint = cfg.output_dir / "final.ckpt";
    save_checkpoint(model, meta, result.final_checkpoint, opt.get());

    result.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_train_log(result.log, cfg.output_dir / "train_log.csv");
    write_summary(cfg, result.log, cfg.output_dir / "train_summary.json");
    return result;
}

void write_manifest(const Manifest& m, const fs::path& path) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : m.cells) {
        cells.push_back({{"condition", std::string(condition_name(c.condition))},
                         {"character", c.pair.character},
                         {"original", c.pair.original},
                         {"seed", c.seed},
                         {"config_hash", c.config_hash},
                         {"pretrain_key", c.pretrain_key},
                         {"pretrain_checkpoint", c.pretrain_checkpoint.string()},
                         {"checkpoint", c.checkpoint.string()},
                         {"train_log", c.train_log.string()},
                         {"swaps", c.swaps.string()},
                         {"ok", c.ok},
                         {"error", c.error}});
    }
    nlohmann::json j{{"format", "gazeswap-manifest"},
                     {"version", 1},
                     {"pretrain_data", m.pretrain_data.string()},
                     {"pair_data", m.pair_data.string()},
                     {"cells", cells}};
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) {
            throw IoError("cannot write manifest " + path.string());
        }
        out << j.dump(2) << "\n";
    }
    fs::rename(tmp, path);
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read manifest " + path.string());
    }
    Manifest m;
    try {
        nlohmann::json j = nlohmann::json::parse(in);
        m.pretrain_data = j.value("pretrain_data", "");
        m.pair_data = j.value("pair_data", "");
        for (const auto& c : j.at("cells")) {
            MatrixCell cell;
            cell.condition = parse_condition(c.at("condition").get<std::string>());
            cell.pair = {c.at("character").get<std::string>(), c.at("original").get<std::string>()};
            cell.seed = c.at("seed").get<uint64_t>();
            cell.config_hash = c.at("config_hash").get<std::string>();
            cell.pretrain_key = c.at("pretrain_key").get<std::string>();
            cell.pretrain_checkpoint = c.at("pretrain_checkpoint").get<std::string>();
            cell.checkpoint = c.at("checkpoint").get<std::string>();
            cell.train_log = c.at("train_log").get<std::string>();
            cell.swaps = c.at("swaps").get<std::string>();
            cell.ok = c.at("ok").get<bool>();
            cell.error = c.at("error").get<std::string>();
            m.cells.push_back(std::move(cell));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed manifest " + path.string() + ": " + e.what());
    }
    return m;
}

Manifest run_condition_matrix(const TrainConfig& base, const std::vector<ConditionId>& conditions,
                              const std::vector<IdentityPair>& pairs, const std::vector<uint64_t>& seeds,
                              const fs::path& root) {
    if (conditions.empty() || pairs.empty() || seeds.empty()) {
        throw ConfigError("the condition matrix needs at least one condition, pair and seed");
    }
    base.validate();
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) {
        throw IoError("cannot create " + root.string() + ": " + ec.message());
    }
    std::optional<Dataset> pretrain_store, pair_store;
    const Dataset* pretrain = nullptr;
    if (base.pretrain_iters > 0) {
        pretrain = &need_dataset(nullptr, base.pretrain_data, pretrain_store, "pretrain");
    }
    const Dataset& pair_data = need_dataset(nullptr, base.pair_data, pair_store, "pair");
    TrainData data{pretrain, &pair_data};

    Manifest manifest;
    manifest.pretrain_data = base.pretrain_data;
    manifest.pair_data = base.pair_data;
    for (uint64_t seed : seeds) {
        const fs::path seed_dir = root / ("seed-" + std::to_string(seed));
        std::map<std::string, fs::path> shared;
        for (ConditionId c : conditions) {
            for (const auto& pair : pairs) {
                TrainConfig cfg = base;
                cfg.condition = c;
                cfg.seed = seed;
                cfg.character = pair.character;
                cfg.original = pair.original;
                MatrixCell cell;
                cell.condition = c;
                cell.pair = pair;
                cell.seed = seed;
                cell.pretrain_key = pretrain_key(cfg);
                cell.config_hash = config_hash(cfg);
                const fs::path cell_dir = seed_dir / std::string(condition_name(c)) / pair.label();
                try {
                    auto it = shared.find(cell.pretrain_key);
                    if (it == shared.end()) {
                        TrainConfig pre = cfg;
                        pre.pair_iters = 0;
                        pre.output_dir = seed_dir / ("pretrain-" + cell.pretrain_key);
                        TrainResult r = train(pre, data);
                        it = shared.emplace(cell.pretrain_key, r.pretrain_checkpoint).first;
                    }
                    cfg.pretrain_checkpoint = it->second;
                    cfg.output_dir = cell_dir;
                    TrainResult r = train(cfg, data);
                    cell.pretrain_checkpoint = r.pretrain_checkpoint;
                    cell.checkpoint = r.final_checkpoint;
                    cell.train_log = cell_dir / "train_log.csv";
                    cell.swaps = cell_dir / "swaps";
                    generate_swaps(cell.checkpoint, find_identity(pair_data, pair.original), cell.swaps);
                    cell.ok = true;
                } catch (const Error& e) {
                    cell.ok = false;
                    cell.error = e.what();
                } catch (const c10::Error& e) {
                    cell.ok = false;
                    cell.error = e.what_without_backtrace();
                }
                manifest.cells.push_back(cell);
                write_manifest(manifest, root / "manifest.json");
            }
        }
    }
    return manifest;
}

size_t generate_swaps(const fs::path& checkpoint, const IdentityFrames& original, const fs::path& out_dir) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint);
    if (original.identity.resolution != ck.meta.arch.resolution) {
        throw ArchitectureMismatch("frames are " + std::to_string(original.identity.resolution) +
                                   " px but the checkpoint model expects " +
                                   std::to_string(ck.meta.arch.resolution) + " px");
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    }
    constexpr size_t kChunk = 16;
    size_t written = 0;
    for (size_t start = 0; start < original.frames.size(); start += kChunk) {
        std::vector<const FaceImage*> imgs;
        for (size_t i = start; i < std::min(original.frames.size(), start + kChunk); ++i) {
            imgs.push_back(&original.frames[i].image);
        }
        torch::Tensor out = ck.model->swap(stack_images(imgs)).image;
        for (size_t k = 0; k < imgs.size(); ++k) {
            const FrameSample& f = original.frames[start + k];
            write_png(out_dir / (std::to_string(f.frame_index) + ".png"), tensor_to_image(out[k]));
            ++written;
        }
    }
    return written;
}

std::vector<SwapFrame> load_swaps(const fs::path& dir, const IdentityFrames& character,
                                  const IdentityFrames& original) {
    std::vector<SwapFrame> out;
    for (const auto& f : original.frames) {
        fs::path p = dir / (std::to_string(f.frame_index) + ".png");
        if (!fs::exists(p)) {
            throw LoadError("missing swap frame " + p.string(), original.identity.id, f.frame_index);
        }
        SwapFrame s;
        s.frame_index = f.frame_index;
        s.image = read_png(p);
        s.eyes = render_masks(character.identity, f.offset_x, f.offset_y).eyes;
        out.push_back(std::move(s));
    }
    return out;
}

FrameErrorResult evaluate_cell(const MatrixCell& cell, const Dataset& pair_data, const GazeEstimator& estimator,
                               GroundTruth truth, const std::string& individual) {
    const IdentityFrames& ch = find_identity(pair_data, cell.pair.character);
    const IdentityFrames& orig = find_identity(pair_data, cell.pair.original);
    return frame_errors(load_swaps(cell.swaps, ch, orig), orig.frames, estimator, truth, individual, cell.condition);
}

}  // namespace gazeswap
