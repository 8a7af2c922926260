#include "torch_doctest.hpp"

#include <random>
#include <set>

#include "gazeswap/model.hpp"
#include "gazeswap/synth.hpp"
#include "gazeswap/tensor.hpp"
#include "test_util.hpp"

using namespace gazeswap;
using namespace gazeswap::test;

namespace {

ModelConfig small() {
    ModelConfig c;
    c.resolution = 32;
    c.latent_dim = 32;
    c.base_channels = 8;
    return c;
}

torch::Tensor batch(int n, int res, uint64_t seed) {
    torch::manual_seed(seed);
    return torch::rand({n, 3, res, res});
}

std::set<const void*> storage(const std::vector<torch::Tensor>& ps) {
    std::set<const void*> s;
    for (const auto& p : ps) {
        s.insert(p.data_ptr());
    }
    return s;
}

bool has_grad(const std::vector<torch::Tensor>& ps) {
    for (const auto& p : ps) {
        if (p.grad().defined() && p.grad().abs().sum().item<double>() > 0) {
            return true;
        }
    }
    return false;
}

}  // namespace

TEST_CASE("forward outputs have image shape and unit range") {
    auto m = make_model(small(), 1);
    auto x = batch(2, 32, 2);
    for (auto r : {m->forward_original(x), m->forward_character(x), m->swap(x)}) {
        CHECK(r.image.sizes() == x.sizes());
        CHECK(r.mask.sizes() == torch::IntArrayRef({2, 1, 32, 32}));
        CHECK(r.image.min().item<float>() >= 0.0f);
        CHECK(r.image.max().item<float>() <= 1.0f);
        CHECK(r.mask.min().item<float>() >= 0.0f);
        CHECK(r.mask.max().item<float>() <= 1.0f);
        CHECK(!torch::isnan(r.image).any().item<bool>());
        CHECK(r.latent.first.size(1) == 32);
    }
    CHECK(m->forward_original(x[0]).image.size(0) == 1);
    CHECK_THROWS_AS(m->forward_original(batch(1, 64, 2)), ContractViolation);
    CHECK_THROWS_AS(m->swap(torch::rand({1, 1, 32, 32})), ContractViolation);
    CHECK(m->parameter_count() > 0);
}

TEST_CASE("original pathway concatenates I_AB and I_B of one encoding") {
    auto m = make_model(small(), 3);
    auto x = batch(3, 32, 4);
    torch::NoGradGuard g;
    auto r = m->forward_original(x);
    auto e = m->encoder->forward(x);
    CHECK(torch::equal(r.latent.first, m->inter_ab->forward(e)));
    CHECK(torch::equal(r.latent.second, m->inter_b->forward(e)));
    auto dec = m->decoder->forward(torch::cat({r.latent.first, r.latent.second}, 1));
    CHECK(torch::equal(r.image, dec.first));
    CHECK(torch::equal(r.mask, dec.second));
}

TEST_CASE("character and swap pathways self-concatenate and never call I_B") {
    auto m = make_model(small(), 5);
    auto x = batch(2, 32, 6);
    const int64_t before = m->inter_b_calls();
    auto c = m->forward_character(x);
    CHECK(torch::equal(c.latent.first, c.latent.second));
    auto s = m->swap(x);
    CHECK(torch::equal(s.latent.first, s.latent.second));
    CHECK(m->inter_b_calls() == before);
    CHECK(m->inter_ab_calls() == 2);

    auto o = m->forward_original(x);
    CHECK(m->inter_b_calls() == before + 1);
    CHECK(torch::allclose(s.latent.first, o.latent.first, 0, 0));
    torch::NoGradGuard g;
    auto dup = m->decoder->forward(torch::cat({o.latent.first, o.latent.first}, 1));
    CHECK(torch::equal(s.image, dup.first));
}

TEST_CASE("fused pair pass equals the separate pathways") {
    auto m = make_model(small(), 7);
    auto xc = batch(2, 32, 8);
    auto xo = batch(3, 32, 9);
    torch::NoGradGuard g;
    auto [c, o] = m->forward_pair(xc, xo);
    auto c2 = m->forward_character(xc);
    auto o2 = m->forward_original(xo);
    CHECK(torch::allclose(c.image, c2.image, 1e-5, 1e-6));
    CHECK(torch::allclose(o.image, o2.image, 1e-5, 1e-6));
    CHECK(torch::allclose(o.mask, o2.mask, 1e-5, 1e-6));
    CHECK(torch::equal(c.latent.first, c.latent.second));
    CHECK(c.image.size(0) == 2);
    CHECK(o.image.size(0) == 3);
}

TEST_CASE("pathways share one encoder and one decoder") {
    auto m = make_model(small(), 9);
    auto all = storage(m->parameters());
    auto enc = storage(m->encoder->parameters());
    auto dec = storage(m->decoder->parameters());
    size_t parts = enc.size() + dec.size() + m->inter_ab->parameters().size() + m->inter_b->parameters().size();
    CHECK(parts == all.size());
    for (auto p : enc) {
        CHECK(all.count(p) == 1);
    }
    // Gradients from both pathways accumulate into the same encoder tensors.
    auto x = batch(1, 32, 10);
    m->forward_character(x).image.sum().backward();
    auto first = m->encoder->parameters()[0].grad().clone();
    m->forward_original(x).image.sum().backward();
    auto both = m->encoder->parameters()[0].grad();
    CHECK(!torch::equal(first, both));
    m->zero_grad();
    m->forward_original(x).image.sum().backward();
    CHECK(torch::allclose(both, first + m->encoder->parameters()[0].grad(), 1e-4, 1e-6));
}

TEST_CASE("gradient flow by pathway") {
    auto m = make_model(small(), 11);
    auto x = batch(2, 32, 12);
    m->forward_original(x).image.mean().backward();
    CHECK(has_grad(m->encoder->parameters()));
    CHECK(has_grad(m->inter_ab->parameters()));
    CHECK(has_grad(m->inter_b->parameters()));
    CHECK(has_grad(m->decoder->parameters()));

    auto m2 = make_model(small(), 11);
    std::vector<torch::Tensor> before;
    for (auto& p : m2->inter_b->parameters()) {
        before.push_back(p.detach().clone());
    }
    torch::optim::Adam opt(m2->parameters(), torch::optim::AdamOptions(1e-3));
    for (int i = 0; i < 3; ++i) {
        opt.zero_grad();
        m2->forward_character(x).image.mean().backward();
        CHECK(!has_grad(m2->inter_b->parameters()));
        opt.step();
    }
    auto after = m2->inter_b->parameters();
    for (size_t i = 0; i < after.size(); ++i) {
        CHECK(torch::equal(before[i], after[i]));
    }
}

TEST_CASE("overfitting one face for 50 steps") {
    std::mt19937_64 rng(4);
    auto id = random_identity(rng, 64, "a", "g");
    auto frame = render_face(id, {0.5, 0.3}, 0, 0, 1);
    auto y = image_to_tensor(frame.image).unsqueeze(0);
    for (bool character : {false, true}) {
        auto m = make_model(ModelConfig{}, 13);
        torch::optim::Adam opt(m->parameters(), torch::optim::AdamOptions(1e-3));
        double last = 1.0;
        for (int i = 0; i < 50; ++i) {
            opt.zero_grad();
            auto r = character ? m->forward_character(y) : m->forward_original(y);
            auto loss = (r.image - y).pow(2).mean();
            loss.backward();
            opt.step();
            last = loss.item<double>();
        }
        auto r = character ? m->forward_character(y) : m->forward_original(y);
        double err = (r.image - y).pow(2).mean().item<double>();
        MESSAGE(std::string(character ? "character" : "original") << " overfit mse " << err << " (last step " << last << ")");
        CHECK(err < 0.01);
    }
}

TEST_CASE("checkpoint round trip") {
    TempDir dir("model");
    auto m = make_model(small(), 15);
    auto x = batch(2, 32, 16);
    CheckpointMeta meta;
    meta.arch = small();
    meta.iteration = 1234;
    meta.condition = "dfl-gaze";
    meta.phase = "pretrain";
    std::mt19937_64 rng(99);
    rng();
    std::ostringstream os;
    os << rng;
    meta.rng_state = os.str();
    auto path = dir.path() / "m.ckpt";
    save_checkpoint(m, meta, path);

    auto loaded = load_checkpoint(path, small());
    CHECK(loaded.meta.iteration == 1234);
    CHECK(loaded.meta.condition == "dfl-gaze");
    CHECK(loaded.meta.phase == "pretrain");
    CHECK(loaded.meta.arch == small());
    std::mt19937_64 restored;
    std::istringstream is(loaded.meta.rng_state);
    is >> restored;
    CHECK(restored() == rng());
    CHECK(torch::equal(m->swap(x).image, loaded.model->swap(x).image));
    CHECK(torch::equal(m->swap(x).mask, loaded.model->swap(x).mask));
    CHECK(read_checkpoint_meta(path).iteration == 1234);
    CHECK(loaded.optimizer_state.empty());

    // Saving twice gives identical bytes.
    save_checkpoint(loaded.model, loaded.meta, dir.path() / "again.ckpt");
    CHECK(slurp(path) == slurp(dir.path() / "again.ckpt"));
}

TEST_CASE("checkpoint errors") {
    TempDir dir("model");
    auto m = make_model(small(), 17);
    CheckpointMeta meta;
    meta.arch = small();
    auto path = dir.path() / "m.ckpt";
    save_checkpoint(m, meta, path);
    ModelConfig other = small();
    other.latent_dim = 64;
    CHECK_THROWS_AS(load_checkpoint(path, other), ArchitectureMismatch);
    try {
        load_checkpoint(path, other);
    } catch (const ArchitectureMismatch& e) {
        CHECK(std::string(e.what()).find("latent_dim=32") != std::string::npos);
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), IoError);
    {
        std::ofstream bad(dir.path() / "bad.ckpt", std::ios::binary);
        bad << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "bad.ckpt"), ArchitectureMismatch);
    std::string bytes = slurp(path);
    bytes[8] = 7;  // format version
    {
        std::ofstream v(dir.path() / "v.ckpt", std::ios::binary);
        v << bytes;
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "v.ckpt"), ArchitectureMismatch);
    std::string cut = slurp(path).substr(0, slurp(path).size() - 100);
    {
        std::ofstream t(dir.path() / "t.ckpt", std::ios::binary);
        t << cut;
    }
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "t.ckpt"), IoError);
}

TEST_CASE("resuming from a checkpoint continues training exactly") {
    TempDir dir("model");
    auto x = batch(2, 32, 18);
    auto step = [&](LiaeModel& m, torch::optim::Adam& opt) {
        opt.zero_grad();
        m->forward_original(x).image.mean().backward();
        opt.step();
    };
    auto full = make_model(small(), 19);
    torch::optim::Adam o1(full->parameters(), torch::optim::AdamOptions(1e-3));
    for (int i = 0; i < 6; ++i) {
        step(full, o1);
    }

    auto half = make_model(small(), 19);
    torch::optim::Adam o2(half->parameters(), torch::optim::AdamOptions(1e-3));
    for (int i = 0; i < 3; ++i) {
        step(half, o2);
    }
    CheckpointMeta meta;
    meta.arch = small();
    meta.iteration = 3;
    save_checkpoint(half, meta, dir.path() / "h.ckpt", &o2);
    auto loaded = load_checkpoint(dir.path() / "h.ckpt");
    CHECK(!loaded.optimizer_state.empty());
    torch::optim::Adam o3(loaded.model->parameters(), torch::optim::AdamOptions(1e-3));
    restore_optimizer(o3, loaded.optimizer_state);
    int64_t iteration = loaded.meta.iteration;
    for (int i = 0; i < 3; ++i) {
        step(loaded.model, o3);
        ++iteration;
    }
    CHECK(iteration == 6);
    auto a = full->parameters();
    auto b = loaded.model->parameters();
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(torch::equal(a[i], b[i]));
    }
}
