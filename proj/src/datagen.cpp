#include "doll/datagen.hpp"

#include "doll/formats.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace doll {

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw FormatError("unknown split: " + name);
}

const char* shape_name(ShapeFamily f) {
    switch (f) {
        case ShapeFamily::ellipse: return "ellipse";
        case ShapeFamily::bar: return "bar";
        default: return "blob";
    }
}

ShapeFamily shape_from_name(const std::string& name) {
    if (name == "ellipse") return ShapeFamily::ellipse;
    if (name == "bar") return ShapeFamily::bar;
    if (name == "blob") return ShapeFamily::blob;
    throw ConfigError("shape_palette: unknown family '" + name + "'");
}

std::vector<ShapeFamily> CorpusConfig::resolved_palette() const {
    if (!shape_palette.empty()) return shape_palette;
    static const ShapeFamily cycle[3] = {ShapeFamily::ellipse, ShapeFamily::bar,
                                         ShapeFamily::blob};
    std::vector<ShapeFamily> out;
    out.reserve(n_observations);
    for (int c = 0; c < n_observations; ++c) out.push_back(cycle[c % 3]);
    return out;
}

void CorpusConfig::validate() const {
    if (image_size < 16) throw ConfigError("corpus.image_size: must be >= 16");
    if (n_observations < 2) throw ConfigError("corpus.n_observations: must be >= 2");
    if (n_train < 1) throw ConfigError("corpus.n_train: must be >= 1");
    if (n_val < 1) throw ConfigError("corpus.n_val: must be >= 1");
    if (n_test < 1) throw ConfigError("corpus.n_test: must be >= 1");
    if (!(noise_level >= 0.0 && noise_level <= 1.0))
        throw ConfigError("corpus.noise_level: must be in [0,1]");
    if (!shape_palette.empty() && static_cast<int>(shape_palette.size()) != n_observations)
        throw ConfigError("corpus.shape_palette: must bind exactly one family per observation");
}

std::vector<const ImageSample*> Corpus::split_view(Split s) const {
    std::vector<const ImageSample*> out;
    for (const auto& sample : samples)
        if (sample.split == s) out.push_back(&sample);
    return out;
}

namespace {

struct Anchor {
    real y, x;  // fractional image coordinates
};

// Each observation owns a home region around the image center, so that two
// observations sharing a shape family stay distinguishable by position.
Anchor anchor_for(int c, int n_obs) {
    const real angle = 6.283185307179586 * c / n_obs - 1.5707963267948966;
    return {0.5 + 0.24 * std::sin(angle), 0.5 + 0.24 * std::cos(angle)};
}

void paint(Plane& img, Mask& gt, const Mask& support, real delta) {
    for (size_t i = 0; i < support.v.size(); ++i) {
        if (support.v[i]) {
            img.v[i] += delta;
            gt.v[i] = 1;
        }
    }
}

Mask render_ellipse(int S, Rng& rng, const Anchor& a) {
    const real cy = (a.y + rng.uniform(-0.06, 0.06)) * S;
    const real cx = (a.x + rng.uniform(-0.06, 0.06)) * S;
    const real ra = rng.uniform(0.16, 0.22) * S;
    const real rb = rng.uniform(0.12, 0.17) * S;
    if (rb < 1.0) throw PlacementError("ellipse semi-axis under one pixel at this image_size");
    const real theta = rng.uniform(0.0, 3.141592653589793);
    const real ct = std::cos(theta), st = std::sin(theta);
    Mask m(S, S);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const real dy = y + 0.5 - cy, dx = x + 0.5 - cx;
            const real u = (dx * ct + dy * st) / ra;
            const real v = (-dx * st + dy * ct) / rb;
            if (u * u + v * v <= 1.0) m.at(y, x) = 1;
        }
    return m;
}

Mask render_bar(int S, Rng& rng, const Anchor& a) {
    const real cy = (a.y + rng.uniform(-0.06, 0.06)) * S;
    const real cx = (a.x + rng.uniform(-0.06, 0.06)) * S;
    const real half_len = rng.uniform(0.20, 0.27) * S;
    const real half_thk = rng.uniform(0.065, 0.09) * S;
    if (half_thk < 1.0) throw PlacementError("bar thickness under one pixel at this image_size");
    const real theta = rng.uniform(0.0, 3.141592653589793);
    const real ct = std::cos(theta), st = std::sin(theta);
    Mask m(S, S);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const real dy = y + 0.5 - cy, dx = x + 0.5 - cx;
            const real u = dx * ct + dy * st;
            const real v = -dx * st + dy * ct;
            if (std::abs(u) <= half_len && std::abs(v) <= half_thk) m.at(y, x) = 1;
        }
    return m;
}

Mask render_blob(int S, Rng& rng, const Anchor& a) {
    const real cy = (a.y + rng.uniform(-0.06, 0.06)) * S;
    const real cx = (a.x + rng.uniform(-0.06, 0.06)) * S;
    const int n_disks = rng.range(3, 4);
    Mask m(S, S);
    for (int d = 0; d < n_disks; ++d) {
        const real oy = cy + rng.uniform(-0.07, 0.07) * S;
        const real ox = cx + rng.uniform(-0.07, 0.07) * S;
        const real r = rng.uniform(0.08, 0.12) * S;
        if (r < 1.0) throw PlacementError("blob disk radius under one pixel at this image_size");
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const real dy = y + 0.5 - oy, dx = x + 0.5 - ox;
                if (dy * dy + dx * dx <= r * r) m.at(y, x) = 1;
            }
    }
    // Disk unions around an interior anchor always cover the anchor pixel.
    return m;
}

Mask render_shape(ShapeFamily f, int S, Rng& rng, const Anchor& a) {
    switch (f) {
        case ShapeFamily::ellipse: return render_ellipse(S, rng, a);
        case ShapeFamily::bar: return render_bar(S, rng, a);
        default: return render_blob(S, rng, a);
    }
}

}  // namespace

ImageSample render_sample(const std::string& id, const CorpusConfig& config, Split split) {
    const int S = config.image_size;
    const int C = config.n_observations;
    const auto palette = config.resolved_palette();

    Rng label_rng = Rng::derive(config.seed, id + "/labels");
    Rng shape_rng = Rng::derive(config.seed, id + "/shape");
    Rng bg_rng = Rng::derive(config.seed, id + "/background");
    Rng noise_rng = Rng::derive(config.seed, id + "/noise");

    ImageSample s;
    s.id = id;
    s.split = split;
    s.labels.resize(C);
    for (int c = 0; c < C; ++c) {
        const real rate = 0.35 + 0.05 * (c % 3);
        s.labels[c] = label_rng.bernoulli(rate) ? 1 : 0;
    }

    // Smooth low-frequency background.
    const real fy = bg_rng.range(1, 2), fx = bg_rng.range(1, 2);
    const real p1 = bg_rng.uniform(), p2 = bg_rng.uniform();
    const real gy = bg_rng.uniform(-0.08, 0.08), gx = bg_rng.uniform(-0.08, 0.08);
    s.image = Plane(S, S);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const real yy = static_cast<real>(y) / S, xx = static_cast<real>(x) / S;
            s.image.at(y, x) = 0.30 +
                               0.06 * std::sin(6.283185307179586 * (fy * yy + p1)) *
                                   std::sin(6.283185307179586 * (fx * xx + p2)) +
                               gy * (yy - 0.5) + gx * (xx - 0.5);
        }

    s.gt_masks.assign(C, Mask(S, S));
    for (int c = 0; c < C; ++c) {
        if (!s.labels[c]) continue;
        Mask support = render_shape(palette[c], S, shape_rng, anchor_for(c, C));
        if (support.empty_mask())
            throw PlacementError("shape for observation " + std::to_string(c) +
                                 " rendered no pixels in sample " + id);
        const real delta = shape_rng.uniform(0.28, 0.42);
        paint(s.image, s.gt_masks[c], support, delta);
    }

    if (config.noise_level > 0.0) {
        const real sigma = 0.25 * config.noise_level;
        for (real& v : s.image.v) v += noise_rng.normal(0.0, sigma);
    }
    for (real& v : s.image.v) v = std::clamp(v, 0.0, 1.0);
    return s;
}

Corpus generate_corpus(const CorpusConfig& config) {
    config.validate();
    Corpus corpus;
    corpus.config = config;

    struct Slot {
        std::string id;
        Split split;
    };
    std::vector<Slot> slots;
    slots.reserve(static_cast<size_t>(config.n_train) + config.n_val + config.n_test);
    char buf[32];
    for (int i = 0; i < config.n_train; ++i) {
        std::snprintf(buf, sizeof(buf), "tr-%05d", i);
        slots.push_back({buf, Split::train});
    }
    for (int i = 0; i < config.n_val; ++i) {
        std::snprintf(buf, sizeof(buf), "va-%05d", i);
        slots.push_back({buf, Split::val});
    }
    for (int i = 0; i < config.n_test; ++i) {
        std::snprintf(buf, sizeof(buf), "te-%05d", i);
        slots.push_back({buf, Split::test});
    }

    corpus.samples.resize(slots.size());
    // Per-sample seeding keeps the result identical for any schedule.
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(slots.size()); ++i)
        corpus.samples[i] = render_sample(slots[i].id, config, slots[i].split);
    return corpus;
}

std::vector<uint8_t> quantize_u8(const Plane& img) {
    std::vector<uint8_t> out(img.v.size());
    for (size_t i = 0; i < img.v.size(); ++i) {
        const real v = std::clamp(img.v[i], 0.0, 1.0);
        out[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

std::string corpus_digest(const Corpus& corpus) {
    std::vector<uint8_t> stream;
    for (const auto& s : corpus.samples) {
        stream.insert(stream.end(), s.id.begin(), s.id.end());
        stream.push_back('\n');
        for (int l : s.labels) stream.push_back(static_cast<uint8_t>(l));
        const auto img = quantize_u8(s.image);
        stream.insert(stream.end(), img.begin(), img.end());
        for (const auto& m : s.gt_masks) stream.insert(stream.end(), m.v.begin(), m.v.end());
    }
    return sha256_hex(stream.data(), stream.size());
}

void write_pgm(const std::string& path, const Plane& img) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw MissingArtifact("cannot write: " + path);
    f << "P5\n" << img.w << " " << img.h << "\n255\n";
    const auto bytes = quantize_u8(img);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_pgm(const std::string& path, const Mask& mask) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw MissingArtifact("cannot write: " + path);
    f << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    std::vector<uint8_t> bytes(mask.v.size());
    for (size_t i = 0; i < mask.v.size(); ++i) bytes[i] = mask.v[i] ? 255 : 0;
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {
std::vector<uint8_t> read_pgm_bytes(const std::string& path, int& h, int& w) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifact("cannot open: " + path);
    std::string magic;
    int maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P5" || maxval != 255)
        throw FormatError("unsupported PGM (want P5 maxval 255): " + path);
    f.get();  // single whitespace after header
    std::vector<uint8_t> bytes(static_cast<size_t>(h) * w);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("truncated PGM: " + path);
    return bytes;
}
}  // namespace

Plane read_pgm(const std::string& path) {
    int h = 0, w = 0;
    const auto bytes = read_pgm_bytes(path, h, w);
    Plane img(h, w);
    for (size_t i = 0; i < bytes.size(); ++i) img.v[i] = bytes[i] / 255.0;
    return img;
}

Mask read_pgm_mask(const std::string& path) {
    int h = 0, w = 0;
    const auto bytes = read_pgm_bytes(path, h, w);
    Mask m(h, w);
    for (size_t i = 0; i < bytes.size(); ++i) m.v[i] = bytes[i] > 127 ? 1 : 0;
    return m;
}

namespace {
std::map<std::string, std::string> config_kv(const CorpusConfig& c) {
    std::map<std::string, std::string> kv;
    kv["corpus.image_size"] = std::to_string(c.image_size);
    kv["corpus.n_observations"] = std::to_string(c.n_observations);
    kv["corpus.n_train"] = std::to_string(c.n_train);
    kv["corpus.n_val"] = std::to_string(c.n_val);
    kv["corpus.n_test"] = std::to_string(c.n_test);
    kv["corpus.noise_level"] = format_real(c.noise_level);
    kv["corpus.seed"] = std::to_string(c.seed);
    std::string pal;
    for (auto f : c.resolved_palette()) {
        if (!pal.empty()) pal += ",";
        pal += shape_name(f);
    }
    kv["corpus.shape_palette"] = pal;
    return kv;
}
}  // namespace

void write_corpus(const Corpus& corpus, const std::string& dir) {
    for (const char* split : {"train", "val", "test"}) {
        fs::create_directories(fs::path(dir) / split / "gt");
    }
    std::ofstream manifest(fs::path(dir) / "manifest.jsonl", std::ios::trunc);
    if (!manifest) throw MissingArtifact("cannot write manifest under " + dir);
    for (const auto& s : corpus.samples) {
        const fs::path split_dir = fs::path(dir) / split_name(s.split);
        write_pgm((split_dir / (s.id + ".pgm")).string(), s.image);
        for (size_t c = 0; c < s.gt_masks.size(); ++c)
            write_pgm((split_dir / "gt" / (s.id + "." + std::to_string(c) + ".pgm")).string(),
                      s.gt_masks[c]);
        nlohmann::json line = {
            {"id", s.id}, {"labels", s.labels}, {"split", split_name(s.split)}};
        manifest << line.dump() << "\n";
    }

    const auto kv = config_kv(corpus.config);
    nlohmann::json meta = {{"kind", "corpus"},
                           {"config_digest", digest_kv(kv)},
                           {"corpus_digest", corpus_digest(corpus)},
                           {"config", kv}};
    std::ofstream cj(fs::path(dir) / "corpus.json", std::ios::trunc);
    cj << meta.dump(2) << "\n";
}

Corpus read_corpus(const std::string& dir, bool with_gt) {
    std::ifstream cj(fs::path(dir) / "corpus.json");
    if (!cj) throw MissingArtifact("missing corpus.json under " + dir);
    nlohmann::json meta;
    cj >> meta;
    const auto kv = meta.at("config").get<std::map<std::string, std::string>>();

    Corpus corpus;
    corpus.config.image_size = std::stoi(kv.at("corpus.image_size"));
    corpus.config.n_observations = std::stoi(kv.at("corpus.n_observations"));
    corpus.config.n_train = std::stoi(kv.at("corpus.n_train"));
    corpus.config.n_val = std::stoi(kv.at("corpus.n_val"));
    corpus.config.n_test = std::stoi(kv.at("corpus.n_test"));
    corpus.config.noise_level = std::stod(kv.at("corpus.noise_level"));
    corpus.config.seed = std::stoull(kv.at("corpus.seed"));
    std::string pal = kv.at("corpus.shape_palette");
    size_t pos = 0;
    while (pos < pal.size()) {
        size_t comma = pal.find(',', pos);
        if (comma == std::string::npos) comma = pal.size();
        corpus.config.shape_palette.push_back(shape_from_name(pal.substr(pos, comma - pos)));
        pos = comma + 1;
    }

    std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
    if (!manifest) throw MissingArtifact("missing manifest.jsonl under " + dir);
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        ImageSample s;
        s.id = j.at("id").get<std::string>();
        s.labels = j.at("labels").get<std::vector<int>>();
        s.split = split_from_name(j.at("split").get<std::string>());
        const fs::path split_dir = fs::path(dir) / split_name(s.split);
        s.image = read_pgm((split_dir / (s.id + ".pgm")).string());
        if (with_gt) {
            for (int c = 0; c < corpus.config.n_observations; ++c)
                s.gt_masks.push_back(read_pgm_mask(
                    (split_dir / "gt" / (s.id + "." + std::to_string(c) + ".pgm")).string()));
        }
        corpus.samples.push_back(std::move(s));
    }
    return corpus;
}

}  // namespace doll
