#include "torch_doctest.hpp"

#include <cmath>

#include "gazeswap/csv.hpp"
#include "gazeswap/trainer.hpp"
#include "test_util.hpp"

using namespace gazeswap;
using namespace gazeswap::test;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    TempDir dir{"trainer"};
    fs::path pool = dir / "pool";
    fs::path pair = dir / "pair";
    Dataset pool_data;
    Dataset pair_data;

    Fixture() {
        DatasetSpec a;
        a.frames_per_identity = 6;
        a.seed = 1;
        pool_data = generate_dataset(random_identities(4, 1, 64, 10), a, pool);
        DatasetSpec b;
        b.frames_per_identity = 6;
        b.seed = 2;
        pair_data = generate_dataset(random_identities(2, 1, 64, 20), b, pair);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

TrainConfig tiny(const std::string& out, ConditionId c = ConditionId::Dfl) {
    Fixture& f = fixture();
    TrainConfig cfg;
    cfg.condition = c;
    cfg.pretrain_iters = 3;
    cfg.pair_iters = 3;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-3;
    cfg.seed = 5;
    cfg.model.latent_dim = 16;
    cfg.model.base_channels = 4;
    cfg.pretrain_data = f.pool;
    cfg.pair_data = f.pair;
    cfg.character = "id0";
    cfg.original = "id1";
    cfg.output_dir = f.dir / out;
    return cfg;
}

bool same_rows(const std::vector<TrainLogRow>& a, const std::vector<TrainLogRow>& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (size_t i = 0; i < a.size(); ++i) {
        const auto &x = a[i].loss, &y = b[i].loss;
        if (a[i].iteration != b[i].iteration || x.dssim != y.dssim || x.mse != y.mse || x.mask_mse != y.mask_mse ||
            x.em_term != y.em_term || x.gaze_term != y.gaze_term || x.theta != y.theta || x.total != y.total) {
            return false;
        }
    }
    return true;
}

bool same_weights(const fs::path& a, const fs::path& b) {
    auto ma = load_checkpoint(a).model->parameters();
    auto mb = load_checkpoint(b).model->parameters();
    if (ma.size() != mb.size()) {
        return false;
    }
    for (size_t i = 0; i < ma.size(); ++i) {
        if (!torch::equal(ma[i], mb[i])) {
            return false;
        }
    }
    return true;
}

// Inactive: nothing is estimated. Active: the term is positive unless the
// estimator failed on every sample of the batch.
void check_gaze_gating(const TrainLogRow& row, bool active, int samples) {
    CAPTURE(row.iteration);
    if (!active) {
        CHECK(row.loss.gaze_term == 0.0);
        CHECK(row.loss.theta == 0.0);
        CHECK(row.loss.estimator_failures == 0);
    } else if (row.loss.estimator_failures < samples) {
        CHECK(row.loss.gaze_term > 0.0);
    } else {
        CHECK(row.loss.gaze_term == 0.0);
    }
}

}  // namespace

TEST_CASE("config text round trip and hash stability") {
    TrainConfig cfg = tiny("cfg");
    cfg.condition = ConditionId::DflEmGaze;
    cfg.learning_rate = 1.25e-4;
    cfg.weights.lambda_em = 123.5;
    cfg.ssim.window = WindowKind::Uniform;
    std::string text = config_to_text(cfg);
    TrainConfig back = config_from_text(text);
    CHECK(config_to_text(back) == text);
    CHECK(config_hash(back) == config_hash(cfg));
    CHECK(back.condition == ConditionId::DflEmGaze);
    CHECK(back.learning_rate == 1.25e-4);
    CHECK(back.ssim.window == WindowKind::Uniform);
    CHECK(text.find("schema_version=1") == 0);

    TrainConfig moved = cfg;
    moved.output_dir = "/somewhere/else";
    CHECK(config_hash(moved) == config_hash(cfg));
    TrainConfig other = cfg;
    other.seed = 6;
    CHECK(config_hash(other) != config_hash(cfg));
    CHECK(config_hash(cfg).size() == 64);
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

    TrainConfig c2 = config_from_text("# comment\n\n  seed = 9 \npair_iters=7\n");
    CHECK(c2.seed == 9);
    CHECK(c2.pair_iters == 7);
    CHECK_THROWS_AS(config_from_text("bogus=1\n"), ConfigError);
    CHECK_THROWS_AS(config_from_text("seed=abc\n"), ConfigError);
    CHECK_THROWS_AS(config_from_text("no equals sign\n"), ConfigError);
    CHECK_THROWS_AS(config_from_text("schema_version=2\n"), ConfigError);
    CHECK_THROWS_AS(config_from_text("condition=dfl-magic\n"), ConfigError);
    CHECK_THROWS_AS(config_from_text("estimator=l2cs\n"), ConfigError);
    CHECK_THROWS_AS(config_from_text("deterministic=maybe\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/file.cfg"), ConfigError);
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.pair_iters = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.ssim.window_size = 10;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.model.resolution = 40;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("missing datasets are config errors") {
    TrainConfig cfg = tiny("missing");
    cfg.pretrain_data = fixture().dir / "nope";
    CHECK_THROWS_AS(train(cfg), ConfigError);
    cfg = tiny("missing2");
    cfg.original = "id9";
    CHECK_THROWS_AS(train(cfg), ConfigError);
}

TEST_CASE("train writes the expected artifacts") {
    TrainConfig cfg = tiny("basic");
    TrainResult r = train(cfg);
    CHECK(fs::exists(r.pretrain_checkpoint));
    CHECK(fs::exists(r.final_checkpoint));
    CHECK(r.log.rows.size() == 6);
    CHECK(r.log.config_hash == config_hash(cfg));
    CHECK(read_checkpoint_meta(r.pretrain_checkpoint).iteration == 3);
    CHECK(read_checkpoint_meta(r.final_checkpoint).iteration == 6);
    CHECK(read_checkpoint_meta(r.final_checkpoint).condition == "dfl");
    auto t = read_csv(cfg.output_dir / "train_log.csv");
    CHECK(t.header == std::vector<std::string>{"iteration", "dssim", "mse", "mask_mse", "em_term", "gaze_term",
                                               "theta", "total"});
    CHECK(t.rows.size() == 6);
    CHECK(same_rows(read_train_log(cfg.output_dir / "train_log.csv"), r.log.rows));
    CHECK(config_from_text(slurp(cfg.output_dir / "train_config.cfg")).seed == cfg.seed);
    CHECK(fs::exists(cfg.output_dir / "train_summary.json"));
    for (size_t i = 0; i < r.log.rows.size(); ++i) {
        CHECK(r.log.rows[i].iteration == static_cast<int64_t>(i + 1));
    }
}

TEST_CASE("condition gating is exhaustive over both phases") {
    for (ConditionId c : kAllConditions) {
        TrainConfig cfg = tiny("gate-" + std::string(condition_name(c)), c);
        TrainResult r = train(cfg);
        for (const auto& row : r.log.rows) {
            CAPTURE(condition_name(c));
            CAPTURE(row.iteration);
            CHECK(row.loss.dssim > 0.0);
            CHECK(row.loss.mse > 0.0);
            CHECK(row.loss.mask_mse > 0.0);
            CHECK((row.loss.em_term > 0.0) == uses_em(c));
            check_gaze_gating(row, gaze_active(c, row.phase), 2 * cfg.batch_size);
            double sum = 10 * row.loss.dssim + 10 * row.loss.mse + 10 * row.loss.mask_mse + row.loss.em_term +
                         row.loss.gaze_term;
            CHECK(row.loss.total == doctest::Approx(sum).epsilon(1e-5));
        }
    }
}

TEST_CASE("pretrain flags switch extra terms off in phase one") {
    TrainConfig cfg = tiny("flags", ConditionId::DflEmGaze);
    cfg.em_in_pretrain = false;
    cfg.gaze_in_pretrain = false;
    TrainResult r = train(cfg);
    for (const auto& row : r.log.rows) {
        bool pair = row.phase == Phase::Pair;
        CHECK((row.loss.em_term > 0.0) == pair);
        check_gaze_gating(row, pair, 2 * cfg.batch_size);
    }
    CHECK(pretrain_key(cfg) == "em0-gaze0");
    CHECK(pretrain_key(tiny("k", ConditionId::DflGazeFinetune)) == "em0-gaze0");
    CHECK(pretrain_key(tiny("k", ConditionId::DflEmGaze)) == "em1-gaze1");
}

TEST_CASE("pair_iters = 0 leaves the pretrained weights") {
    TrainConfig cfg = tiny("noop");
    cfg.pair_iters = 0;
    TrainResult r = train(cfg);
    CHECK(r.log.rows.size() == 3);
    CHECK(same_weights(r.pretrain_checkpoint, r.final_checkpoint));
}

TEST_CASE("finetune condition pretrains exactly like the baseline") {
    TrainResult a = train(tiny("ft-dfl", ConditionId::Dfl));
    TrainResult b = train(tiny("ft-ft", ConditionId::DflGazeFinetune));
    std::vector<TrainLogRow> pa(a.log.rows.begin(), a.log.rows.begin() + 3);
    std::vector<TrainLogRow> pb(b.log.rows.begin(), b.log.rows.begin() + 3);
    CHECK(same_rows(pa, pb));
    CHECK(same_weights(a.pretrain_checkpoint, b.pretrain_checkpoint));
    for (size_t i = 3; i < b.log.rows.size(); ++i) {
        check_gaze_gating(b.log.rows[i], true, 4);
    }
    for (size_t i = 0; i < 3; ++i) {
        check_gaze_gating(b.log.rows[i], false, 4);
    }
}

TEST_CASE("training is deterministic for a fixed seed") {
    TrainResult a = train(tiny("det-a", ConditionId::DflEmGaze));
    TrainResult b = train(tiny("det-b", ConditionId::DflEmGaze));
    CHECK(same_rows(a.log.rows, b.log.rows));
    CHECK(same_weights(a.final_checkpoint, b.final_checkpoint));
    TrainConfig other = tiny("det-c", ConditionId::DflEmGaze);
    other.seed = 6;
    CHECK(!same_rows(a.log.rows, train(other).log.rows));
}

TEST_CASE("resuming from a shared pretrain checkpoint matches a single run") {
    TrainConfig full = tiny("share-full", ConditionId::DflGaze);
    TrainResult a = train(full);
    TrainConfig pre = tiny("share-pre", ConditionId::DflGaze);
    pre.pair_iters = 0;
    TrainResult p = train(pre);
    TrainConfig resume = tiny("share-resume", ConditionId::DflGaze);
    resume.pretrain_checkpoint = p.pretrain_checkpoint;
    TrainResult b = train(resume);
    std::vector<TrainLogRow> tail(a.log.rows.begin() + 3, a.log.rows.end());
    CHECK(same_rows(tail, b.log.rows));
    CHECK(same_weights(a.final_checkpoint, b.final_checkpoint));
    CHECK(read_checkpoint_meta(b.final_checkpoint).iteration == 6);

    TrainConfig wrong = resume;
    wrong.pretrain_iters = 4;
    CHECK_THROWS_AS(train(wrong), ConfigError);
    TrainConfig arch = resume;
    arch.model.latent_dim = 8;
    CHECK_THROWS_AS(train(arch), ArchitectureMismatch);
}

TEST_CASE("non-finite loss aborts with the offending batch") {
    Fixture& f = fixture();
    Dataset bad = f.pair_data;
    for (auto& block : bad) {
        for (auto& fr : block.frames) {
            fr.image.at(10, 10, 0) = std::nanf("");
        }
    }
    TrainConfig cfg = tiny("nan");
    cfg.pretrain_iters = 0;
    TrainData data{nullptr, &bad};
    try {
        train(cfg, data);
        FAIL("expected a TrainingError");
    } catch (const TrainingError& e) {
        std::string msg = e.what();
        CHECK(msg.find("iteration 1") != std::string::npos);
        CHECK(msg.find("id0/") != std::string::npos);
        CHECK(msg.find("id1/") != std::string::npos);
    }
    CHECK(fs::exists(cfg.output_dir / "nan_dump.txt"));
}

TEST_CASE("swap generation") {
    Fixture& f = fixture();
    TrainConfig cfg = tiny("swap");
    TrainResult r = train(cfg);
    const IdentityFrames& orig = find_identity(f.pair_data, "id1");
    CHECK(generate_swaps(r.final_checkpoint, orig, f.dir / "sw1") == orig.frames.size());
    generate_swaps(r.final_checkpoint, orig, f.dir / "sw2");
    for (const auto& fr : orig.frames) {
        std::string name = std::to_string(fr.frame_index) + ".png";
        CHECK(fs::exists(f.dir / "sw1" / name));
        CHECK(slurp(f.dir / "sw1" / name) == slurp(f.dir / "sw2" / name));
    }
    auto swaps = load_swaps(f.dir / "sw1", find_identity(f.pair_data, "id0"), orig);
    CHECK(swaps.size() == orig.frames.size());
    CHECK(!swaps[0].eyes.empty());

    IdentityFrames small = orig;
    small.identity.resolution = 32;
    CHECK_THROWS_AS(generate_swaps(r.final_checkpoint, small, f.dir / "sw3"), ArchitectureMismatch);
    fs::remove(f.dir / "sw1" / "0.png");
    CHECK_THROWS_AS(load_swaps(f.dir / "sw1", find_identity(f.pair_data, "id0"), orig), LoadError);
}

TEST_CASE("condition matrix") {
    Fixture& f = fixture();
    TrainConfig base = tiny("unused");
    base.pretrain_iters = 2;
    base.pair_iters = 2;
    auto pairs = enumerate_pairs(f.pair_data);
    REQUIRE(pairs.size() == 2);
    std::vector<ConditionId> all(kAllConditions.begin(), kAllConditions.end());
    Manifest m = run_condition_matrix(base, all, pairs, {3}, f.dir / "matrix");
    CHECK(m.cells.size() == 10);
    std::set<std::string> pretrains;
    for (const auto& c : m.cells) {
        CHECK(c.ok);
        CHECK(fs::exists(c.checkpoint));
        CHECK(fs::exists(c.swaps / "0.png"));
        pretrains.insert(c.pretrain_checkpoint.string());
    }
    CHECK(pretrains.size() == 4);
    auto find = [&](ConditionId c) {
        for (const auto& cell : m.cells) {
            if (cell.condition == c) {
                return cell;
            }
        }
        return MatrixCell{};
    };
    CHECK(find(ConditionId::Dfl).pretrain_checkpoint == find(ConditionId::DflGazeFinetune).pretrain_checkpoint);
    CHECK(find(ConditionId::Dfl).pretrain_checkpoint != find(ConditionId::DflEm).pretrain_checkpoint);

    Manifest back = read_manifest(f.dir / "matrix" / "manifest.json");
    REQUIRE(back.cells.size() == 10);
    for (size_t i = 0; i < 10; ++i) {
        CHECK(back.cells[i].config_hash == m.cells[i].config_hash);
        CHECK(back.cells[i].pair == m.cells[i].pair);
        CHECK(back.cells[i].condition == m.cells[i].condition);
    }

    Manifest again = run_condition_matrix(base, {ConditionId::Dfl, ConditionId::DflGaze}, pairs, {3},
                                          f.dir / "matrix2");
    for (const auto& c : again.cells) {
        bool matched = false;
        for (const auto& o : m.cells) {
            if (o.condition == c.condition && o.pair == c.pair) {
                CHECK(o.config_hash == c.config_hash);
                matched = true;
            }
        }
        CHECK(matched);
    }

    CentroidEstimator est;
    auto res = evaluate_cell(m.cells[0], f.pair_data, est, GroundTruth::TrueGaze, "v");
    CHECK(res.records.size() + res.dropped == 6);
}

TEST_CASE("matrix marks failed cells and continues") {
    Fixture& f = fixture();
    TrainConfig base = tiny("unused");
    base.pretrain_iters = 1;
    base.pair_iters = 1;
    std::vector<IdentityPair> pairs{{"id0", "id1"}, {"id0", "ghost"}};
    Manifest m = run_condition_matrix(base, {ConditionId::Dfl}, pairs, {1}, f.dir / "partial");
    REQUIRE(m.cells.size() == 2);
    CHECK(m.cells[0].ok);
    CHECK(!m.cells[1].ok);
    CHECK(m.cells[1].error.find("ghost") != std::string::npos);
    CHECK_THROWS_AS(run_condition_matrix(base, {}, pairs, {1}, f.dir / "empty"), ConfigError);
}

TEST_CASE("gaze term decreases over training") {
    // Start from a model that already draws eyes; a blank one gives the
    // estimator nothing to find.
    Fixture& f = fixture();
    TrainConfig cfg = tiny("decrease", ConditionId::DflGaze);
    cfg.gaze_in_pretrain = false;
    cfg.pretrain_iters = 300;
    cfg.pair_iters = 300;
    cfg.model.base_channels = 8;
    cfg.model.latent_dim = 32;
    cfg.learning_rate = 5e-4;
    TrainResult r = train(cfg, TrainData{&f.pool_data, &f.pair_data});
    std::vector<double> terms;
    for (const auto& row : r.log.rows) {
        if (row.phase == Phase::Pair && row.loss.estimator_failures < 2 * cfg.batch_size) {
            terms.push_back(row.loss.gaze_term);
        }
    }
    REQUIRE(terms.size() >= 200);
    double first = 0, last = 0;
    for (int i = 0; i < 50; ++i) {
        first += terms[i];
        last += terms[terms.size() - 1 - i];
    }
    MESSAGE("gaze term first/last 50 mean " << first / 50 << " " << last / 50 << " over " << terms.size());
    CHECK(last < first);
}
