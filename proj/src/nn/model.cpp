#include "gazeswap/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace gazeswap {
namespace {

constexpr char kMagic[8] = {'G', 'Z', 'S', 'W', 'C', 'K', 'P', 'T'};
constexpr int kBlocks = 4;

void conv_block(torch::nn::Sequential& seq, int64_t in, int64_t out) {
    seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 5).stride(2).padding(2)));
    seq->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.1)));
}

// Sub-pixel upscale: convolve at the low resolution into 4x the channels, then
// rearrange depth into a 2x larger grid.
void up_block(torch::nn::Sequential& seq, int64_t in, int64_t out) {
    seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 4 * out, 3).padding(1)));
    seq->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.1)));
    seq->push_back(torch::nn::PixelShuffle(2));
}

nlohmann::json arch_json(const ModelConfig& c) {
    return {{"resolution", c.resolution},
            {"channels", c.channels},
            {"latent_dim", c.latent_dim},
            {"base_channels", c.base_channels}};
}

ModelConfig arch_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.resolution = j.at("resolution").get<int>();
    c.channels = j.at("channels").get<int>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    return c;
}

std::string describe(const ModelConfig& c) {
    std::ostringstream os;
    os << "resolution=" << c.resolution << " channels=" << c.channels << " latent_dim=" << c.latent_dim
       << " base_channels=" << c.base_channels;
    return os.str();
}

struct RawHeader {
    nlohmann::json header;
    uint64_t data_start = 0;
};

RawHeader read_header(std::ifstream& in, const std::filesystem::path& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw ArchitectureMismatch(path.string() + " is not a checkpoint (bad magic)");
    }
    uint32_t version = 0;
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in) {
        throw ArchitectureMismatch(path.string() + ": truncated checkpoint header");
    }
    if (version != kCheckpointVersion) {
        throw ArchitectureMismatch(path.string() + ": checkpoint format version " + std::to_string(version) +
                                   ", expected " + std::to_string(kCheckpointVersion));
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) {
        throw ArchitectureMismatch(path.string() + ": truncated checkpoint header");
    }
    RawHeader h;
    try {
        h.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ArchitectureMismatch(path.string() + ": malformed checkpoint header: " + e.what());
    }
    h.data_start = 8 + sizeof version + sizeof len + len;
    return h;
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
    CheckpointMeta m;
    m.arch = arch_from_json(j.at("architecture"));
    m.iteration = j.at("iteration").get<int64_t>();
    m.condition = j.at("condition").get<std::string>();
    m.phase = j.at("phase").get<std::string>();
    m.rng_state = j.at("rng_state").get<std::string>();
    m.config_hash = j.value("config_hash", "");
    return m;
}

}  // namespace

void ModelConfig::validate() const {
    if (resolution < 16 || resolution % 16 != 0) {
        throw ContractViolation("model resolution must be a positive multiple of 16, got " +
                                std::to_string(resolution));
    }
    if (channels < 1 || latent_dim < 1 || base_channels < 1) {
        throw ContractViolation("model channels, latent_dim and base_channels must be positive");
    }
}

EncoderImpl::EncoderImpl(const ModelConfig& cfg) {
    blocks_ = torch::nn::Sequential();
    int64_t in = cfg.channels;
    int64_t out = cfg.base_channels;
    for (int i = 0; i < kBlocks; ++i) {
        conv_block(blocks_, in, out);
        in = out;
        out *= 2;
    }
    register_module("blocks", blocks_);
    const int64_t hw = cfg.resolution >> kBlocks;
    out_size_ = in * hw * hw;
}

torch::Tensor EncoderImpl::forward(torch::Tensor x) { return blocks_->forward(x).flatten(1); }

IntermediateImpl::IntermediateImpl(int64_t in, int64_t d) {
    fc_ = register_module("fc", torch::nn::Linear(in, d));
}

torch::Tensor IntermediateImpl::forward(torch::Tensor e) { return fc_->forward(e); }

DecoderImpl::DecoderImpl(const ModelConfig& cfg) : cfg_(cfg) {
    seed_hw_ = cfg.resolution >> kBlocks;
    seed_ch_ = static_cast<int64_t>(cfg.base_channels) << (kBlocks - 1);
    fc_ = register_module("fc", torch::nn::Linear(2 * cfg.latent_dim, seed_ch_ * seed_hw_ * seed_hw_));
    up_ = torch::nn::Sequential();
    int64_t ch = seed_ch_;
    // Three upscales here; the heads perform the last one.
    for (int i = 0; i + 1 < kBlocks; ++i) {
        int64_t next = std::max<int64_t>(cfg.base_channels, ch / 2);
        up_block(up_, ch, next);
        ch = next;
    }
    register_module("up", up_);
    image_head_ = register_module("image_head",
                                  torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, 4 * cfg.channels, 3).padding(1)));
    mask_head_ = register_module("mask_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, 4, 3).padding(1)));
}

std::pair<torch::Tensor, torch::Tensor> DecoderImpl::forward(torch::Tensor z) {
    torch::Tensor h = torch::leaky_relu(fc_->forward(z), 0.1).view({-1, seed_ch_, seed_hw_, seed_hw_});
    h = up_->forward(h);
    return {torch::sigmoid(torch::pixel_shuffle(image_head_->forward(h), 2)),
            torch::sigmoid(torch::pixel_shuffle(mask_head_->forward(h), 2))};
}

LiaeModelImpl::LiaeModelImpl(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    encoder = register_module("encoder", Encoder(cfg));
    inter_ab = register_module("inter_ab", Intermediate(encoder->output_size(), cfg.latent_dim));
    inter_b = register_module("inter_b", Intermediate(encoder->output_size(), cfg.latent_dim));
    decoder = register_module("decoder", Decoder(cfg));
}

torch::Tensor LiaeModelImpl::check_input(const torch::Tensor& y) const {
    torch::Tensor x = y.dim() == 3 ? y.unsqueeze(0) : y;
    if (x.dim() != 4 || x.size(1) != cfg_.channels || x.size(2) != cfg_.resolution || x.size(3) != cfg_.resolution) {
        std::ostringstream os;
        os << "model expects N x " << cfg_.channels << " x " << cfg_.resolution << " x " << cfg_.resolution
           << " input, got " << y.sizes();
        throw ContractViolation(os.str());
    }
    return x.to(torch::kFloat32);
}

Reconstruction LiaeModelImpl::forward_original(const torch::Tensor& y) {
    torch::Tensor e = encoder->forward(check_input(y));
    Reconstruction r;
    r.latent.first = inter_ab->forward(e);
    r.latent.second = inter_b->forward(e);
    ++inter_ab_calls_;
    ++inter_b_calls_;
    std::tie(r.image, r.mask) = decoder->forward(torch::cat({r.latent.first, r.latent.second}, 1));
    return r;
}

Reconstruction LiaeModelImpl::forward_character(const torch::Tensor& y) {
    torch::Tensor e = encoder->forward(check_input(y));
    Reconstruction r;
    r.latent.first = inter_ab->forward(e);
    r.latent.second = r.latent.first;
    ++inter_ab_calls_;
    std::tie(r.image, r.mask) = decoder->forward(torch::cat({r.latent.first, r.latent.second}, 1));
    return r;
}

std::pair<Reconstruction, Reconstruction> LiaeModelImpl::forward_pair(const torch::Tensor& y_char,
                                                                      const torch::Tensor& y_orig) {
    torch::Tensor xc = check_input(y_char);
    torch::Tensor xo = check_input(y_orig);
    const int64_t nc = xc.size(0);
    torch::Tensor e = encoder->forward(torch::cat({xc, xo}, 0));
    torch::Tensor z_ab = inter_ab->forward(e);
    torch::Tensor z_b = inter_b->forward(e.slice(0, nc));
    ++inter_ab_calls_;
    ++inter_b_calls_;
    std::pair<Reconstruction, Reconstruction> out;
    out.first.latent.first = z_ab.slice(0, 0, nc);
    out.first.latent.second = out.first.latent.first;
    out.second.latent.first = z_ab.slice(0, nc);
    out.second.latent.second = z_b;
    torch::Tensor z = torch::cat({torch::cat({out.first.latent.first, out.first.latent.second}, 1),
                                  torch::cat({out.second.latent.first, out.second.latent.second}, 1)},
                                 0);
    auto [img, mask] = decoder->forward(z);
    out.first.image = img.slice(0, 0, nc);
    out.first.mask = mask.slice(0, 0, nc);
    out.second.image = img.slice(0, nc);
    out.second.mask = mask.slice(0, nc);
    return out;
}

Reconstruction LiaeModelImpl::swap(const torch::Tensor& y) {
    torch::NoGradGuard guard;
    const bool was_training = is_training();
    eval();
    Reconstruction r = forward_character(y);
    train(was_training);
    return r;
}

int64_t LiaeModelImpl::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : parameters()) {
        n += p.numel();
    }
    return n;
}

LiaeModel make_model(const ModelConfig& cfg, uint64_t seed) {
    torch::manual_seed(seed);
    return LiaeModel(cfg);
}

void save_checkpoint(LiaeModel& model, const CheckpointMeta& meta, const std::filesystem::path& path,
                     torch::optim::Optimizer* optimizer) {
    nlohmann::json h;
    h["format"] = "gazeswap-liae";
    h["format_version"] = kCheckpointVersion;
    h["architecture"] = arch_json(model->config());
    h["iteration"] = meta.iteration;
    h["condition"] = meta.condition;
    h["phase"] = meta.phase;
    h["rng_state"] = meta.rng_state;
    h["config_hash"] = meta.config_hash;

    std::vector<torch::Tensor> blobs;
    uint64_t offset = 0;
    nlohmann::json table = nlohmann::json::array();
    for (const auto& item : model->named_parameters()) {
        torch::Tensor t = item.value().detach().to(torch::kFloat32).contiguous();
        const uint64_t bytes = static_cast<uint64_t>(t.numel()) * sizeof(float);
        table.push_back({{"name", item.key()}, {"dtype", "float32"}, {"shape", t.sizes().vec()},
                         {"offset", offset}, {"bytes", bytes}});
        offset += bytes;
        blobs.push_back(t);
    }
    h["tensors"] = table;

    std::string opt_blob;
    if (optimizer != nullptr) {
        std::ostringstream os;
        torch::serialize::OutputArchive archive;
        optimizer->save(archive);
        archive.save_to(os);
        opt_blob = os.str();
    }
    h["optimizer"] = {{"offset", offset}, {"bytes", opt_blob.size()}};

    const std::string text = h.dump();
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw IoError("cannot write checkpoint " + path.string());
        }
        const uint32_t version = kCheckpointVersion;
        const uint64_t len = text.size();
        out.write(kMagic, 8);
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(len));
        for (const auto& t : blobs) {
            out.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
                      static_cast<std::streamsize>(t.numel() * sizeof(float)));
        }
        out.write(opt_blob.data(), static_cast<std::streamsize>(opt_blob.size()));
        if (!out) {
            throw IoError("failed writing checkpoint " + path.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    return meta_from_json(read_header(in, path).header);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    RawHeader raw = read_header(in, path);
    LoadedCheckpoint out;
    out.meta = meta_from_json(raw.header);
    if (expected && !(*expected == out.meta.arch)) {
        throw ArchitectureMismatch("checkpoint architecture (" + describe(out.meta.arch) +
                                   ") does not match requested (" + describe(*expected) + ")");
    }
    out.model = LiaeModel(out.meta.arch);
    auto params = out.model->named_parameters();
    const auto& table = raw.header.at("tensors");
    if (table.size() != params.size()) {
        throw ArchitectureMismatch(path.string() + ": tensor table has " + std::to_string(table.size()) +
                                   " entries, architecture expects " + std::to_string(params.size()));
    }
    torch::NoGradGuard guard;
    for (const auto& entry : table) {
        const std::string name = entry.at("name").get<std::string>();
        torch::Tensor* p = params.find(name);
        if (p == nullptr) {
            throw ArchitectureMismatch(path.string() + ": unknown tensor " + name);
        }
        auto shape = entry.at("shape").get<std::vector<int64_t>>();
        if (p->sizes().vec() != shape) {
            throw ArchitectureMismatch(path.string() + ": shape mismatch for " + name);
        }
        torch::Tensor buf = torch::empty(shape, torch::kFloat32);
        in.seekg(static_cast<std::streamoff>(raw.data_start + entry.at("offset").get<uint64_t>()));
        in.read(reinterpret_cast<char*>(buf.data_ptr<float>()),
                static_cast<std::streamsize>(entry.at("bytes").get<uint64_t>()));
        if (!in) {
            throw IoError(path.string() + ": truncated tensor data for " + name);
        }
        p->copy_(buf);
    }
    const auto& opt = raw.header.at("optimizer");
    const uint64_t opt_bytes = opt.at("bytes").get<uint64_t>();
    if (opt_bytes > 0) {
        out.optimizer_state.resize(opt_bytes);
        in.seekg(static_cast<std::streamoff>(raw.data_start + opt.at("offset").get<uint64_t>()));
        in.read(out.optimizer_state.data(), static_cast<std::streamsize>(opt_bytes));
        if (!in) {
            throw IoError(path.string() + ": truncated optimizer state");
        }
    }
    return out;
}

void restore_optimizer(torch::optim::Optimizer& optimizer, const std::string& state) {
    if (state.empty()) {
        return;
    }
    std::istringstream is(state);
    torch::serialize::InputArchive archive;
    archive.load_from(is);
    optimizer.load(archive);
}

}  // namespace gazeswap
