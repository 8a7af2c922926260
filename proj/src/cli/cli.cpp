#include "gazeswap/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gazeswap/csv.hpp"
#include "gazeswap/dataset.hpp"
#include "gazeswap/eval_stats.hpp"
#include "gazeswap/plots.hpp"
#include "gazeswap/trainer.hpp"

namespace gazeswap {
namespace fs = std::filesystem;

namespace {

std::vector<ConditionId> parse_conditions(const std::string& text) {
    std::vector<ConditionId> out;
    for (const auto& s : split(text, ',')) {
        std::string t = trim(s);
        if (!t.empty()) {
            out.push_back(parse_condition(t));
        }
    }
    if (out.empty()) {
        throw ConfigError("no conditions given; valid names are " + valid_condition_names());
    }
    return out;
}

std::vector<ConditionId> all_conditions() {
    return {ConditionId::Dfl, ConditionId::DflEm, ConditionId::DflGaze, ConditionId::DflGazeFinetune,
            ConditionId::DflEmGaze};
}

std::vector<uint64_t> parse_seeds(const std::string& text) {
    std::vector<uint64_t> out;
    for (const auto& s : split(text, ',')) {
        std::string t = trim(s);
        if (t.empty()) {
            continue;
        }
        int64_t v = parse_int(t);
        if (v < 0) {
            throw ConfigError("seeds must be non-negative, got " + t);
        }
        out.push_back(static_cast<uint64_t>(v));
    }
    if (out.empty()) {
        throw ConfigError("no seeds given");
    }
    return out;
}

std::vector<IdentityPair> parse_pairs(const std::string& text) {
    std::vector<IdentityPair> out;
    for (const auto& s : split(text, ',')) {
        std::string t = trim(s);
        if (t.empty()) {
            continue;
        }
        auto parts = split(t, ':');
        if (parts.size() != 2 || parts[0].empty() || parts[1].empty()) {
            throw ConfigError("pair '" + t + "' must look like character:original");
        }
        out.push_back({parts[0], parts[1]});
    }
    return out;
}

GroundTruth parse_truth(const std::string& text) {
    if (text == "estimated") {
        return GroundTruth::EstimatedSource;
    }
    if (text == "true") {
        return GroundTruth::TrueGaze;
    }
    throw ConfigError("--truth must be estimated or true, got '" + text + "'");
}

std::string timestamp_utc() {
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string read_file_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
}

/// Flags shared by the commands that build a TrainConfig.
struct ConfigFlags {
    std::string config;
    std::vector<std::string> sets;
    std::string estimator;
    std::string pretrain_data;
    std::string pair_data;

    void add(CLI::App* cmd) {
        cmd->add_option("--config", config, "key=value config file (schema_version=1)");
        cmd->add_option("--set", sets, "override one config key, as key=value (repeatable)");
        cmd->add_option("--estimator", estimator, "gaze estimator used by the training loss: centroid|template");
        cmd->add_option("--pretrain-data", pretrain_data, "identity pool used for pretraining");
        cmd->add_option("--pair-data", pair_data, "dataset holding the character and original identities");
    }

    TrainConfig build() const {
        TrainConfig cfg = config.empty() ? TrainConfig{} : load_config(config);
        for (const auto& kv : sets) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("--set expects key=value, got '" + kv + "'");
            }
            apply_config_value(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
        }
        if (!estimator.empty()) {
            apply_config_value(cfg, "estimator", estimator);
        }
        if (!pretrain_data.empty()) {
            cfg.pretrain_data = pretrain_data;
        }
        if (!pair_data.empty()) {
            cfg.pair_data = pair_data;
        }
        return cfg;
    }
};

struct GenDataFlags {
    int identities = 2;
    int groups = 1;
    int frames = 100;
    int resolution = 64;
    uint64_t seed = 0;
    std::optional<uint64_t> identity_seed;
    std::string gaze = GazeSampler{}.to_string();
    double max_offset = 3.0;
    std::string out;
};

std::string summarize_dataset(const Dataset& d, const fs::path& root) {
    std::ostringstream os;
    size_t frames = 0;
    std::set<std::string> groups;
    for (const auto& b : d) {
        frames += b.frames.size();
        groups.insert(b.identity.group);
    }
    os << "dataset " << root.string() << ": " << d.size() << " identities, " << groups.size() << " groups, "
       << frames << " frames\n";
    for (const auto& b : d) {
        os << "  " << b.identity.id << " (group " << b.identity.group << "): " << b.frames.size() << " frames\n";
    }
    os << "summary_hash " << directory_hash(root.string()) << "\n";
    return os.str();
}

Dataset run_gen_data(const GenDataFlags& f, const std::string& id_prefix = "id") {
    if (f.identities < 1 || f.groups < 1 || f.groups > f.identities) {
        throw ConfigError("--identities must be >= 1 and --groups within [1, identities]");
    }
    if (f.frames < 1) {
        throw ConfigError("--frames must be >= 1");
    }
    if (f.resolution < 16) {
        throw ConfigError("--resolution must be >= 16");
    }
    if (!(f.max_offset >= 0.0)) {
        throw ConfigError("--max-offset must be >= 0");
    }
    DatasetSpec spec;
    spec.frames_per_identity = f.frames;
    spec.gaze = GazeSampler::parse(f.gaze);
    spec.max_head_offset = f.max_offset;
    spec.seed = f.seed;
    auto ids = random_identities(f.identities, f.groups, f.resolution, f.identity_seed.value_or(f.seed + 1000003));
    if (id_prefix != "id") {
        for (auto& id : ids) {
            id.id = id_prefix + id.id.substr(2);
        }
    }
    return generate_dataset(ids, spec, f.out);
}

std::vector<IdentityPair> default_pairs(const TrainConfig& cfg) {
    if (cfg.pair_data.empty() || !fs::exists(cfg.pair_data)) {
        throw ConfigError("pair dataset missing: '" + cfg.pair_data.string() + "'");
    }
    auto pairs = enumerate_pairs(load_dataset(cfg.pair_data));
    if (pairs.empty()) {
        throw ConfigError("pair dataset " + cfg.pair_data.string() + " has no identity pairs");
    }
    return pairs;
}

struct EvalOutput {
    std::vector<ExperimentRecord> records;
    std::vector<FrameGaze> gazes;
    std::vector<std::string> lines;
};

/// Evaluates every finished cell. Individuals are labeled by pair, with a seed
/// suffix when the manifest holds more than one seed.
EvalOutput evaluate_manifest(const Manifest& m, const GazeEstimator& estimator, GroundTruth truth,
                             const std::optional<ConditionId>& only) {
    if (m.pair_data.empty()) {
        throw ConfigError("manifest does not name its pair dataset");
    }
    Dataset pair_data = load_dataset(m.pair_data);
    std::set<uint64_t> seeds;
    for (const auto& c : m.cells) {
        seeds.insert(c.seed);
    }
    EvalOutput out;
    for (const auto& c : m.cells) {
        if (only && c.condition != *only) {
            continue;
        }
        if (!c.ok) {
            out.lines.push_back("skipped failed cell " + std::string(condition_name(c.condition)) + " " +
                                c.pair.label() + " seed " + std::to_string(c.seed) + ": " + c.error);
            continue;
        }
        std::string individual = c.pair.label();
        if (seeds.size() > 1) {
            individual += "@s" + std::to_string(c.seed);
        }
        FrameErrorResult r = evaluate_cell(c, pair_data, estimator, truth, individual);
        double sum = 0.0;
        for (const auto& rec : r.records) {
            sum += rec.error_rad;
        }
        std::ostringstream os;
        os << std::string(condition_name(c.condition)) << " " << individual << ": " << r.records.size()
           << " frames, mean " << std::fixed << std::setprecision(2)
           << (r.records.empty() ? 0.0 : rad_to_deg(sum / static_cast<double>(r.records.size()))) << " deg, "
           << r.dropped << " dropped";
        out.lines.push_back(os.str());
        out.records.insert(out.records.end(), r.records.begin(), r.records.end());
        out.gazes.insert(out.gazes.end(), r.gazes.begin(), r.gazes.end());
    }
    return out;
}

struct CompareResult {
    Report report;
    std::string text;
};

CompareResult compare_records(const std::vector<ExperimentRecord>& records, std::optional<ConditionId> reference) {
    std::set<ConditionId> methods;
    for (const auto& r : records) {
        methods.insert(r.method);
    }
    if (records.empty()) {
        throw ContractViolation("no records to compare");
    }
    if (methods.size() < 2) {
        throw ConfigError("compare needs records from at least two methods");
    }
    CompareResult c;
    c.report = summarize(records, reference);
    c.text = render_report(c.report);
    return c;
}

std::vector<ExperimentRecord> read_all_records(const std::vector<std::string>& paths) {
    std::vector<ExperimentRecord> all;
    for (const auto& p : paths) {
        auto r = read_records(p);
        all.insert(all.end(), r.begin(), r.end());
    }
    return all;
}

}  // namespace

std::string directory_hash(const std::string& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) {
            files.push_back(fs::relative(e.path(), root));
        }
    }
    std::sort(files.begin(), files.end());
    std::string blob;
    for (const auto& f : files) {
        std::ifstream in(fs::path(root) / f, std::ios::binary);
        blob += f.generic_string();
        blob.push_back('\0');
        blob.append(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        blob.push_back('\0');
    }
    return sha256_hex(blob);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Face-swap training with a gaze reconstruction loss, on synthetic faces", "gazeswap"};
    app.require_subcommand(1);
    bool reproducible = false;
    app.add_flag("--reproducible", reproducible, "deterministic kernels and no timestamps in outputs");

    // gen-data
    GenDataFlags gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "render a synthetic face dataset with ground-truth gaze");
    gen_cmd->add_option("--identities", gen.identities, "number of identities")->capture_default_str();
    gen_cmd->add_option("--groups", gen.groups, "identity groups; pairs form within a group")->capture_default_str();
    gen_cmd->add_option("--frames", gen.frames, "frames per identity")->capture_default_str();
    gen_cmd->add_option("--resolution", gen.resolution, "image side in pixels")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "frame sampling seed")->capture_default_str();
    gen_cmd->add_option("--identity-seed", gen.identity_seed, "identity appearance seed (default derived from --seed)");
    gen_cmd->add_option("--gaze", gen.gaze, "uniform:plo,phi,ylo,yhi or normal:pmean,psd,ymean,ysd")
        ->capture_default_str();
    gen_cmd->add_option("--max-offset", gen.max_offset, "head offset range in pixels")->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "output directory")->required();

    // train
    ConfigFlags train_flags;
    std::string train_condition;
    std::string train_out;
    std::string train_character;
    std::string train_original;
    std::optional<uint64_t> train_seed;
    auto* train_cmd = app.add_subcommand("train", "pretrain and train one model for one condition");
    train_flags.add(train_cmd);
    train_cmd->add_option("--condition", train_condition, "dfl|dfl-em|dfl-gaze|dfl-gaze-ft|dfl-em-gaze");
    train_cmd->add_option("--out", train_out, "run directory (overrides output_dir)");
    train_cmd->add_option("--character", train_character, "character identity id");
    train_cmd->add_option("--original", train_original, "original identity id");
    train_cmd->add_option("--seed", train_seed, "training seed");

    // matrix
    ConfigFlags matrix_flags;
    std::string matrix_conditions;
    std::string matrix_seeds = "0";
    std::string matrix_pairs;
    std::string matrix_out;
    auto* matrix_cmd = app.add_subcommand("matrix", "train every condition x pair x seed cell and write swaps");
    matrix_flags.add(matrix_cmd);
    matrix_cmd->add_option("--conditions", matrix_conditions, "comma-separated conditions (default: all five)");
    matrix_cmd->add_option("--seeds", matrix_seeds, "comma-separated seeds")->capture_default_str();
    matrix_cmd->add_option("--pairs", matrix_pairs, "comma-separated character:original (default: all pairs)");
    matrix_cmd->add_option("--out", matrix_out, "run directory")->required();

    // swap
    std::string swap_ckpt;
    std::string swap_data;
    std::string swap_original;
    std::string swap_out;
    auto* swap_cmd = app.add_subcommand("swap", "render swaps of an original identity's frames");
    swap_cmd->add_option("--checkpoint", swap_ckpt, "trained checkpoint")->required();
    swap_cmd->add_option("--data", swap_data, "dataset holding the original identity")->required();
    swap_cmd->add_option("--original", swap_original, "original identity id")->required();
    swap_cmd->add_option("--out", swap_out, "output directory")->required();

    // eval
    std::string eval_manifest;
    std::string eval_estimator = "template";
    std::string eval_truth = "estimated";
    std::string eval_condition;
    std::string eval_out;
    std::string eval_gaze_out;
    auto* eval_cmd = app.add_subcommand("eval", "per-frame gaze errors of every finished matrix cell");
    eval_cmd->add_option("--manifest", eval_manifest, "manifest.json written by matrix")->required();
    eval_cmd->add_option("--estimator", eval_estimator, "centroid|template")->capture_default_str();
    eval_cmd->add_option("--truth", eval_truth, "estimated (estimator on the source frame) or true")
        ->capture_default_str();
    eval_cmd->add_option("--condition", eval_condition, "only evaluate this condition");
    eval_cmd->add_option("--out", eval_out, "records CSV")->required();
    eval_cmd->add_option("--gaze-out", eval_gaze_out, "optional per-frame gaze CSV for scatter plots");

    // compare
    std::vector<std::string> cmp_records;
    std::string cmp_baseline;
    std::string cmp_methods;
    std::string cmp_reference;
    std::string cmp_out;
    bool cmp_strict = false;
    auto* cmp_cmd = app.add_subcommand("compare", "mixed-effects comparison and summary tables");
    cmp_cmd->add_option("--records", cmp_records, "records CSV files (repeatable)");
    cmp_cmd->add_option("--baseline", cmp_baseline, "records CSV of the reference method");
    cmp_cmd->add_option("--methods", cmp_methods, "comma-separated records CSVs compared to the baseline");
    cmp_cmd->add_option("--reference", cmp_reference, "reference condition (default dfl when present)");
    cmp_cmd->add_option("--out", cmp_out, "directory for report.txt and report.csv");
    cmp_cmd->add_flag("--strict", cmp_strict, "exit nonzero when the fit is degenerate");

    // plot
    std::string plot_kind;
    PlotSpec plot_spec;
    auto* plot_cmd = app.add_subcommand("plot", "emit an SVG figure");
    plot_cmd->add_option("--kind", plot_kind, "box_whisker|per_video_bars|gaze_scatter")->required();
    plot_cmd->add_option("--input", plot_spec.input, "records CSV, gaze CSV or meta.csv")->required();
    plot_cmd->add_option("--out", plot_spec.output, "output SVG")->required();
    plot_cmd->add_option("--x-label", plot_spec.x_label, "horizontal axis label");
    plot_cmd->add_option("--y-label", plot_spec.y_label, "vertical axis label");

    // reproduce-paper-pipeline
    ConfigFlags pipe_flags;
    uint64_t pipe_seed = 0;
    int pipe_seed_count = 1;
    int pipe_identities = 2;
    int pipe_frames = 100;
    int pipe_pool_identities = 8;
    int pipe_pool_frames = 50;
    std::optional<int64_t> pipe_pretrain_iters;
    std::optional<int64_t> pipe_pair_iters;
    std::string pipe_conditions;
    std::string pipe_eval_estimator = "template";
    std::string pipe_truth = "estimated";
    std::string pipe_gaze = GazeSampler{}.to_string();
    std::string pipe_out;
    auto* pipe_cmd = app.add_subcommand("reproduce-paper-pipeline",
                                        "gen-data, matrix, swap, eval, compare and plot with desk defaults");
    pipe_flags.add(pipe_cmd);
    pipe_cmd->add_option("--seed", pipe_seed, "base seed for data and training")->capture_default_str();
    pipe_cmd->add_option("--seed-count", pipe_seed_count, "training seeds seed, seed+1, ...")->capture_default_str();
    pipe_cmd->add_option("--identities", pipe_identities, "identities in the pair dataset")->capture_default_str();
    pipe_cmd->add_option("--frames", pipe_frames, "frames per pair identity")->capture_default_str();
    pipe_cmd->add_option("--pool-identities", pipe_pool_identities, "identities in the pretrain pool")
        ->capture_default_str();
    pipe_cmd->add_option("--pool-frames", pipe_pool_frames, "frames per pool identity")->capture_default_str();
    pipe_cmd->add_option("--pretrain-iters", pipe_pretrain_iters, "override pretrain_iters");
    pipe_cmd->add_option("--pair-iters", pipe_pair_iters, "override pair_iters");
    pipe_cmd->add_option("--conditions", pipe_conditions, "comma-separated conditions (default: all five)");
    pipe_cmd->add_option("--eval-estimator", pipe_eval_estimator, "estimator used for evaluation")
        ->capture_default_str();
    pipe_cmd->add_option("--truth", pipe_truth, "estimated or true")->capture_default_str();
    pipe_cmd->add_option("--gaze", pipe_gaze, "gaze sampler for both datasets")->capture_default_str();
    pipe_cmd->add_option("--out", pipe_out, "run directory")->required();

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(std::move(rev));
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) {
            Dataset d = run_gen_data(gen);
            out << summarize_dataset(d, gen.out);
            return kExitOk;
        }

        if (train_cmd->parsed()) {
            TrainConfig cfg = train_flags.build();
            if (!train_condition.empty()) {
                cfg.condition = parse_condition(train_condition);
            }
            if (!train_out.empty()) {
                cfg.output_dir = train_out;
            }
            if (!train_character.empty()) {
                cfg.character = train_character;
            }
            if (!train_original.empty()) {
                cfg.original = train_original;
            }
            if (train_seed) {
                cfg.seed = *train_seed;
            }
            if (reproducible) {
                cfg.deterministic = true;
            }
            if (cfg.character.empty() != cfg.original.empty()) {
                throw ConfigError("give both --character and --original, or neither");
            }
            if (cfg.character.empty()) {
                IdentityPair p = default_pairs(cfg).front();
                cfg.character = p.character;
                cfg.original = p.original;
            }
            if (cfg.output_dir.empty()) {
                throw ConfigError("no output directory: pass --out or set output_dir");
            }
            TrainResult r = train(cfg);
            out << "condition " << condition_name(cfg.condition) << ", pair " << cfg.character << "-"
                << cfg.original << ", seed " << cfg.seed << "\n";
            out << "checkpoint " << r.final_checkpoint.string() << "\n";
            out << "train_log " << (cfg.output_dir / "train_log.csv").string() << "\n";
            if (!r.log.rows.empty()) {
                out << "final total loss " << format_double(r.log.rows.back().loss.total) << "\n";
            }
            out << "estimator failures " << r.log.estimator_failures << "\n";
            out << "config_hash " << r.log.config_hash << "\n";
            return kExitOk;
        }

        if (matrix_cmd->parsed()) {
            TrainConfig cfg = matrix_flags.build();
            if (reproducible) {
                cfg.deterministic = true;
            }
            auto conditions = matrix_conditions.empty() ? all_conditions() : parse_conditions(matrix_conditions);
            auto seeds = parse_seeds(matrix_seeds);
            auto pairs = matrix_pairs.empty() ? default_pairs(cfg) : parse_pairs(matrix_pairs);
            Manifest m = run_condition_matrix(cfg, conditions, pairs, seeds, matrix_out);
            size_t failed = 0;
            for (const auto& c : m.cells) {
                out << (c.ok ? "ok     " : "FAILED ") << condition_name(c.condition) << " " << c.pair.label()
                    << " seed " << c.seed;
                if (!c.ok) {
                    out << ": " << c.error;
                    ++failed;
                }
                out << "\n";
            }
            out << "manifest " << (fs::path(matrix_out) / "manifest.json").string() << "\n";
            return failed == 0 ? kExitOk : kExitFailure;
        }

        if (swap_cmd->parsed()) {
            Dataset d = load_dataset(swap_data);
            size_t n = generate_swaps(swap_ckpt, find_identity(d, swap_original), swap_out);
            out << "wrote " << n << " swap frames to " << swap_out << "\n";
            return kExitOk;
        }

        if (eval_cmd->parsed()) {
            auto estimator = make_estimator(eval_estimator);
            std::optional<ConditionId> only;
            if (!eval_condition.empty()) {
                only = parse_condition(eval_condition);
            }
            EvalOutput e = evaluate_manifest(read_manifest(eval_manifest), *estimator, parse_truth(eval_truth), only);
            for (const auto& l : e.lines) {
                out << l << "\n";
            }
            if (e.records.empty()) {
                throw ContractViolation("no records produced (no finished cells, or every frame dropped)");
            }
            write_records(eval_out, e.records);
            if (!eval_gaze_out.empty()) {
                write_gaze_csv(eval_gaze_out, e.records, e.gazes);
            }
            out << "records " << eval_out << " (" << e.records.size() << " rows)\n";
            return kExitOk;
        }

        if (cmp_cmd->parsed()) {
            std::vector<std::string> files = cmp_records;
            std::optional<ConditionId> reference;
            if (!cmp_reference.empty()) {
                reference = parse_condition(cmp_reference);
            }
            if (!cmp_baseline.empty()) {
                auto base = read_records(cmp_baseline);
                std::set<ConditionId> m;
                for (const auto& r : base) {
                    m.insert(r.method);
                }
                if (m.size() != 1) {
                    throw ConfigError("--baseline must hold exactly one method");
                }
                if (!reference) {
                    reference = *m.begin();
                }
                files.insert(files.begin(), cmp_baseline);
                for (const auto& p : split(cmp_methods, ',')) {
                    if (!trim(p).empty()) {
                        files.push_back(trim(p));
                    }
                }
            } else if (!cmp_methods.empty()) {
                throw ConfigError("--methods requires --baseline");
            }
            if (files.empty()) {
                throw ConfigError("compare needs --records or --baseline with --methods");
            }
            CompareResult c = compare_records(read_all_records(files), reference);
            out << c.text;
            if (!cmp_out.empty()) {
                write_text(fs::path(cmp_out) / "report.txt", c.text);
                write_report_csv(fs::path(cmp_out) / "report.csv", c.report);
            }
            if (cmp_strict && c.report.fit && c.report.fit->degenerate) {
                err << "error: degenerate mixed-model fit (residual variance at zero) under --strict\n";
                return kExitFailure;
            }
            return kExitOk;
        }

        if (plot_cmd->parsed()) {
            plot_spec.kind = parse_plot_kind(plot_kind);
            PlotSummary s = render_plot(plot_spec);
            out << "wrote " << plot_spec.output.string() << " (" << plot_kind_name(plot_spec.kind) << ": " << s.boxes
                << " boxes, " << s.lines << " lines, " << s.groups << " groups, " << s.bars << " bars, " << s.panels
                << " panels, " << s.points << " points)\n";
            return kExitOk;
        }

        if (pipe_cmd->parsed()) {
            if (pipe_seed_count < 1) {
                throw ConfigError("--seed-count must be >= 1");
            }
            const fs::path run = pipe_out;
            auto conditions = pipe_conditions.empty() ? all_conditions() : parse_conditions(pipe_conditions);
            auto eval_estimator_ptr = make_estimator(pipe_eval_estimator);
            GroundTruth truth = parse_truth(pipe_truth);
            TrainConfig cfg = pipe_flags.build();
            cfg.deterministic = cfg.deterministic || reproducible;
            if (pipe_pretrain_iters) {
                cfg.pretrain_iters = *pipe_pretrain_iters;
            }
            if (pipe_pair_iters) {
                cfg.pair_iters = *pipe_pair_iters;
            }

            GenDataFlags pair_gen;
            pair_gen.identities = pipe_identities;
            pair_gen.frames = pipe_frames;
            pair_gen.resolution = cfg.model.resolution;
            pair_gen.seed = pipe_seed * 4 + 1;
            pair_gen.identity_seed = pipe_seed * 4 + 2;
            pair_gen.gaze = pipe_gaze;
            pair_gen.out = (run / "data" / "pair").string();
            GenDataFlags pool_gen = pair_gen;
            pool_gen.identities = pipe_pool_identities;
            pool_gen.frames = pipe_pool_frames;
            pool_gen.seed = pipe_seed * 4 + 3;
            pool_gen.identity_seed = pipe_seed * 4 + 4;
            pool_gen.out = (run / "data" / "pool").string();

            out << "[1/6] gen-data\n";
            Dataset pair_data = run_gen_data(pair_gen);
            out << summarize_dataset(pair_data, pair_gen.out);
            Dataset pool_data = run_gen_data(pool_gen, "pool");
            out << summarize_dataset(pool_data, pool_gen.out);
            cfg.pair_data = pair_gen.out;
            cfg.pretrain_data = pool_gen.out;

            write_text(run / "pipeline.cfg", config_to_text(cfg));
            out << "[2/6] matrix\n[3/6] swap\n";
            std::vector<uint64_t> seeds;
            for (int i = 0; i < pipe_seed_count; ++i) {
                seeds.push_back(pipe_seed + static_cast<uint64_t>(i));
            }
            Manifest m = run_condition_matrix(cfg, conditions, enumerate_pairs(pair_data), seeds, run / "matrix");
            size_t failed = 0;
            for (const auto& c : m.cells) {
                if (!c.ok) {
                    ++failed;
                    out << "FAILED " << condition_name(c.condition) << " " << c.pair.label() << " seed " << c.seed
                        << ": " << c.error << "\n";
                }
            }
            out << m.cells.size() - failed << "/" << m.cells.size() << " cells trained\n";

            out << "[4/6] eval\n";
            EvalOutput e = evaluate_manifest(m, *eval_estimator_ptr, truth, std::nullopt);
            for (const auto& l : e.lines) {
                out << "  " << l << "\n";
            }
            if (e.records.empty()) {
                throw ContractViolation("no records produced");
            }
            write_records(run / "records.csv", e.records);
            write_gaze_csv(run / "gaze.csv", e.records, e.gazes);

            out << "[5/6] compare\n";
            CompareResult c = compare_records(e.records, std::nullopt);
            write_text(run / "report.txt", c.text);
            write_report_csv(run / "report.csv", c.report);
            out << c.text;

            out << "[6/6] plot\n";
            struct Fig {
                PlotKind kind;
                fs::path input;
                const char* file;
            };
            const Fig figs[] = {{PlotKind::BoxWhisker, run / "records.csv", "box_whisker.svg"},
                                {PlotKind::PerVideoBars, run / "records.csv", "per_video_bars.svg"},
                                {PlotKind::GazeScatter, run / "gaze.csv", "gaze_scatter.svg"}};
            for (const auto& f : figs) {
                PlotSpec ps;
                ps.kind = f.kind;
                ps.input = f.input;
                ps.output = run / "plots" / f.file;
                render_plot(ps);
                out << "  " << ps.output.string() << "\n";
            }

            nlohmann::json j;
            j["seed"] = pipe_seed;
            j["seed_count"] = pipe_seed_count;
            j["conditions"] = nlohmann::json::array();
            for (auto cid : conditions) {
                j["conditions"].push_back(std::string(condition_name(cid)));
            }
            j["eval_estimator"] = pipe_eval_estimator;
            j["truth"] = pipe_truth;
            j["config_hash"] = config_hash(cfg);
            j["config"] = "pipeline.cfg";
            j["manifest"] = "matrix/manifest.json";
            j["records_sha256"] = sha256_hex(read_file_text(run / "records.csv"));
            j["failed_cells"] = failed;
            if (!reproducible) {
                j["created"] = timestamp_utc();
            }
            write_text(run / "run.json", j.dump(2) + "\n");
            return failed == 0 ? kExitOk : kExitFailure;
        }
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace gazeswap
