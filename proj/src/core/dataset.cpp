#include "gazeswap/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "gazeswap/csv.hpp"
#include "gazeswap/png_io.hpp"

namespace fs = std::filesystem;

namespace gazeswap {
namespace {

constexpr const char* kMetaHeader = "frame_index,pitch_mu,yaw_phi,offset_x,offset_y";

nlohmann::json identity_to_json(const SyntheticIdentity& id) {
    return {{"id", id.id},
            {"group", id.group},
            {"resolution", id.resolution},
            {"skin_color", id.skin_color},
            {"background", id.background},
            {"mouth_color", id.mouth_color},
            {"face_semi_x", id.face_semi_x},
            {"face_semi_y", id.face_semi_y},
            {"eye_spacing", id.eye_spacing},
            {"eye_height", id.eye_height},
            {"eye_radius", id.eye_radius},
            {"mouth_semi_x", id.mouth_semi_x},
            {"mouth_semi_y", id.mouth_semi_y},
            {"mouth_height", id.mouth_height}};
}

SyntheticIdentity identity_from_json(const nlohmann::json& j) {
    SyntheticIdentity id;
    id.id = j.at("id").get<std::string>();
    id.group = j.at("group").get<std::string>();
    id.resolution = j.at("resolution").get<int>();
    id.skin_color = j.at("skin_color").get<std::array<float, 3>>();
    id.background = j.at("background").get<std::array<float, 3>>();
    id.mouth_color = j.at("mouth_color").get<std::array<float, 3>>();
    id.face_semi_x = j.at("face_semi_x").get<double>();
    id.face_semi_y = j.at("face_semi_y").get<double>();
    id.eye_spacing = j.at("eye_spacing").get<double>();
    id.eye_height = j.at("eye_height").get<double>();
    id.eye_radius = j.at("eye_radius").get<double>();
    id.mouth_semi_x = j.at("mouth_semi_x").get<double>();
    id.mouth_semi_y = j.at("mouth_semi_y").get<double>();
    id.mouth_height = j.at("mouth_height").get<double>();
    return id;
}

uint64_t frame_seed(uint64_t seed, size_t identity_index, int64_t frame) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                      static_cast<uint32_t>(identity_index), static_cast<uint32_t>(frame)};
    std::array<uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<uint64_t>(out[0]) << 32) | out[1];
}

std::vector<double> parse_numbers(const std::string& text, char sep) {
    std::vector<double> out;
    for (const auto& field : split(text, sep)) {
        out.push_back(parse_double(field));
    }
    return out;
}

}  // namespace

GazeSampler GazeSampler::parse(const std::string& text) {
    auto colon = text.find(':');
    if (colon == std::string::npos) {
        throw ConfigError("gaze distribution '" + text + "' must look like uniform:a,b,c,d or normal:a,b,c,d");
    }
    GazeSampler s;
    std::string kind = text.substr(0, colon);
    if (kind == "uniform") {
        s.kind = Kind::Uniform;
    } else if (kind == "normal") {
        s.kind = Kind::Normal;
    } else {
        throw ConfigError("unknown gaze distribution kind '" + kind + "'");
    }
    std::vector<double> v;
    try {
        v = parse_numbers(text.substr(colon + 1), ',');
    } catch (const Error&) {
        throw ConfigError("gaze distribution '" + text + "' has non-numeric parameters");
    }
    if (v.size() != 4) {
        throw ConfigError("gaze distribution '" + text + "' needs four parameters");
    }
    s.a = v[0];
    s.b = v[1];
    s.c = v[2];
    s.d = v[3];
    s.validate();
    return s;
}

std::string GazeSampler::to_string() const {
    return std::string(kind == Kind::Uniform ? "uniform:" : "normal:") + format_double(a) + "," + format_double(b) +
           "," + format_double(c) + "," + format_double(d);
}

void GazeSampler::validate() const {
    constexpr double pi = std::numbers::pi;
    for (double v : {a, b, c, d}) {
        if (!std::isfinite(v)) {
            throw ConfigError("gaze distribution parameters must be finite");
        }
    }
    if (kind == Kind::Uniform) {
        if (a > b || c > d) {
            throw ConfigError("gaze distribution ranges must be ordered lo,hi");
        }
        if (a < -pi || b > pi) {
            throw ConfigError("pitch range must lie in [-pi, pi]");
        }
        if (c < 0.0 || d > pi / 2.0) {
            throw ConfigError("yaw range must lie in [0, pi/2]");
        }
    } else {
        if (b < 0.0 || d < 0.0) {
            throw ConfigError("standard deviations must be non-negative");
        }
        if (c < 0.0 || c > pi / 2.0) {
            throw ConfigError("yaw mean must lie in [0, pi/2]");
        }
    }
}

GazeAngles GazeSampler::sample(std::mt19937_64& rng) const {
    constexpr double pi = std::numbers::pi;
    if (kind == Kind::Uniform) {
        std::uniform_real_distribution<double> pitch(a, b);
        std::uniform_real_distribution<double> yaw(c, d);
        double p = pitch(rng);
        return {p, yaw(rng)};
    }
    std::normal_distribution<double> pitch(a, b);
    std::normal_distribution<double> yaw(c, d);
    double p = std::clamp(pitch(rng), -pi, pi);
    return {p, std::clamp(yaw(rng), 0.0, pi / 2.0)};
}

std::vector<SyntheticIdentity> random_identities(int count, int groups, int resolution, uint64_t seed) {
    if (count < 1 || groups < 1) {
        throw ConfigError("identity and group counts must be positive");
    }
    std::mt19937_64 rng(seed);
    std::vector<SyntheticIdentity> out;
    for (int i = 0; i < count; ++i) {
        out.push_back(random_identity(rng, resolution, "id" + std::to_string(i), "g" + std::to_string(i % groups)));
    }
    return out;
}

Dataset synthesize_dataset(const std::vector<SyntheticIdentity>& identities, const DatasetSpec& spec) {
    if (identities.size() < 2) {
        throw ConfigError("a dataset needs at least two identities");
    }
    if (spec.frames_per_identity < 1) {
        throw ConfigError("frames_per_identity must be at least 1");
    }
    spec.gaze.validate();
    Dataset out;
    for (size_t i = 0; i < identities.size(); ++i) {
        IdentityFrames block{identities[i], {}};
        std::mt19937_64 rng(frame_seed(spec.seed, i, -1));
        std::uniform_real_distribution<double> offset(-spec.max_head_offset, spec.max_head_offset);
        for (int f = 0; f < spec.frames_per_identity; ++f) {
            GazeAngles g = spec.gaze.sample(rng);
            double ox = offset(rng);
            double oy = offset(rng);
            FrameSample s = render_face(identities[i], g, ox, oy, frame_seed(spec.seed, i, f));
            s.frame_index = f;
            block.frames.push_back(std::move(s));
        }
        out.push_back(std::move(block));
    }
    return out;
}

void write_dataset(const Dataset& dataset, const fs::path& root) {
    std::error_code ec;
    for (const auto& block : dataset) {
        fs::path dir = root / block.identity.id;
        fs::create_directories(dir / "frames", ec);
        fs::create_directories(dir / "masks", ec);
        if (ec) {
            throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
        }
        std::ofstream meta(dir / "meta.csv", std::ios::binary);
        std::ofstream ident(dir / "identity.json", std::ios::binary);
        if (!meta || !ident) {
            throw IoError("cannot write metadata under " + dir.string());
        }
        ident << identity_to_json(block.identity).dump(2) << "\n";
        meta << kMetaHeader << "\n";
        for (const auto& s : block.frames) {
            std::string idx = std::to_string(s.frame_index);
            write_png(dir / "frames" / (idx + ".png"), s.image);
            write_mask_png(dir / "masks" / (idx + "_face.png"), s.masks.face);
            write_mask_png(dir / "masks" / (idx + "_eyes.png"), s.masks.eyes);
            write_mask_png(dir / "masks" / (idx + "_em.png"), s.masks.eyes_mouth);
            meta << idx << "," << format_double(s.true_gaze.pitch_mu) << "," << format_double(s.true_gaze.yaw_phi)
                 << "," << format_double(s.offset_x) << "," << format_double(s.offset_y) << "\n";
        }
        if (!meta) {
            throw IoError("failed writing " + (dir / "meta.csv").string());
        }
    }
}

Dataset generate_dataset(const std::vector<SyntheticIdentity>& identities, const DatasetSpec& spec,
                         const fs::path& root) {
    Dataset d = synthesize_dataset(identities, spec);
    write_dataset(d, root);
    return d;
}

Dataset load_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) {
        throw LoadError("dataset root does not exist: " + root.string(), "", -1);
    }
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && fs::exists(entry.path() / "meta.csv")) {
            dirs.push_back(entry.path());
        }
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) {
        throw LoadError("no identity directories with meta.csv under " + root.string(), "", -1);
    }

    Dataset out;
    for (const auto& dir : dirs) {
        const std::string name = dir.filename().string();
        IdentityFrames block;
        {
            std::ifstream in(dir / "identity.json");
            if (!in) {
                throw LoadError("missing identity.json for " + name, name, -1);
            }
            try {
                block.identity = identity_from_json(nlohmann::json::parse(in));
            } catch (const nlohmann::json::exception& e) {
                throw LoadError("malformed identity.json for " + name + ": " + e.what(), name, -1);
            }
        }
        std::ifstream meta(dir / "meta.csv");
        std::string line;
        if (!std::getline(meta, line) || trim(line) != kMetaHeader) {
            throw LoadError("meta.csv for " + name + " has a missing or wrong header", name, -1);
        }
        int64_t row = 0;
        while (std::getline(meta, line)) {
            if (trim(line).empty()) {
                continue;
            }
            auto fields = split(trim(line), ',');
            int64_t idx = row;
            FrameSample s;
            try {
                if (fields.size() != 5) {
                    throw ConfigError("expected 5 columns");
                }
                idx = parse_int(fields[0]);
                s.true_gaze = {parse_double(fields[1]), parse_double(fields[2])};
                s.offset_x = parse_double(fields[3]);
                s.offset_y = parse_double(fields[4]);
                validate_gaze(s.true_gaze);
            } catch (const Error& e) {
                throw LoadError("corrupt meta.csv row for " + name + " frame_index " + std::to_string(idx) + ": " +
                                    e.what(),
                                name, idx);
            }
            s.frame_index = idx;
            s.identity_id = block.identity.id;
            const std::string base = std::to_string(idx);
            auto need = [&](const fs::path& p) {
                if (!fs::exists(p)) {
                    throw LoadError("missing " + p.filename().string() + " for " + name + " frame_index " + base, name,
                                    idx);
                }
                return p;
            };
            try {
                s.image = read_png(need(dir / "frames" / (base + ".png")));
                s.masks.face = read_mask_png(need(dir / "masks" / (base + "_face.png")));
                s.masks.eyes = read_mask_png(need(dir / "masks" / (base + "_eyes.png")));
                s.masks.eyes_mouth = read_mask_png(need(dir / "masks" / (base + "_em.png")));
            } catch (const IoError& e) {
                throw LoadError(std::string(e.what()) + " (" + name + " frame_index " + base + ")", name, idx);
            }
            block.frames.push_back(std::move(s));
            ++row;
        }
        std::sort(block.frames.begin(), block.frames.end(),
                  [](const FrameSample& a, const FrameSample& b) { return a.frame_index < b.frame_index; });
        out.push_back(std::move(block));
    }
    return out;
}

std::vector<IdentityPair> enumerate_pairs(const Dataset& dataset) {
    std::vector<IdentityPair> out;
    for (const auto& a : dataset) {
        for (const auto& b : dataset) {
            if (a.identity.id != b.identity.id && a.identity.group == b.identity.group) {
                out.push_back({a.identity.id, b.identity.id});
            }
        }
    }
    return out;
}

const IdentityFrames& find_identity(const Dataset& dataset, const std::string& id) {
    for (const auto& block : dataset) {
        if (block.identity.id == id) {
            return block;
        }
    }
    throw ConfigError("identity '" + id + "' not found in dataset");
}

}  // namespace gazeswap
