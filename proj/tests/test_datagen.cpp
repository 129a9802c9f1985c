#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "doll/datagen.hpp"
#include "doll/formats.hpp"

#include <filesystem>

using namespace doll;

namespace {
CorpusConfig small_config() {
    CorpusConfig c;
    c.image_size = 32;
    c.n_observations = 4;
    c.n_train = 24;
    c.n_val = 8;
    c.n_test = 8;
    c.noise_level = 0.1;
    c.seed = 77;
    return c;
}
}  // namespace

TEST_CASE("config validation names the offending field") {
    CorpusConfig c = small_config();
    c.image_size = 8;
    CHECK_THROWS_WITH_AS(c.validate(), "corpus.image_size: must be >= 16", ConfigError);
    c = small_config();
    c.n_observations = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.noise_level = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.shape_palette = {ShapeFamily::ellipse};  // wrong length
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("same config twice gives identical corpus digests") {
    const Corpus a = generate_corpus(small_config());
    const Corpus b = generate_corpus(small_config());
    CHECK(corpus_digest(a) == corpus_digest(b));

    CorpusConfig other = small_config();
    other.seed = 78;
    CHECK(corpus_digest(generate_corpus(other)) != corpus_digest(a));
}

TEST_CASE("schema: C=4 gives 4-long labels and 4 gt planes per sample") {
    const Corpus corpus = generate_corpus(small_config());
    CHECK(corpus.samples.size() == 40);
    for (const auto& s : corpus.samples) {
        CHECK(s.labels.size() == 4);
        CHECK(s.gt_masks.size() == 4);
        CHECK(s.image.h == 32);
        CHECK(s.image.w == 32);
    }
}

TEST_CASE("label/mask consistency holds for every sample") {
    const Corpus corpus = generate_corpus(small_config());
    for (const auto& s : corpus.samples)
        for (size_t c = 0; c < s.gt_masks.size(); ++c) {
            if (s.labels[c])
                CHECK(s.gt_masks[c].count() > 0);
            else
                CHECK(s.gt_masks[c].count() == 0);
        }
}

TEST_CASE("splits are disjoint by id and ids are unique") {
    const Corpus corpus = generate_corpus(small_config());
    std::set<std::string> ids;
    for (const auto& s : corpus.samples) {
        CHECK(ids.insert(s.id).second);
        const std::string prefix = s.id.substr(0, 2);
        if (s.split == Split::train) CHECK(prefix == "tr");
        if (s.split == Split::val) CHECK(prefix == "va");
        if (s.split == Split::test) CHECK(prefix == "te");
    }
}

TEST_CASE("all-negative sample is pure background with empty gt planes") {
    // Hunt for a sample with all labels zero; base rates make one near-certain.
    CorpusConfig cfg = small_config();
    cfg.n_train = 200;
    const Corpus corpus = generate_corpus(cfg);
    bool found = false;
    for (const auto& s : corpus.samples) {
        if (std::any_of(s.labels.begin(), s.labels.end(), [](int l) { return l != 0; })) continue;
        found = true;
        for (const auto& m : s.gt_masks) CHECK(m.count() == 0);
    }
    CHECK(found);
}

TEST_CASE("noise level changes the image but never the gt masks") {
    CorpusConfig a = small_config();
    a.noise_level = 0.0;
    CorpusConfig b = small_config();
    b.noise_level = 0.3;
    const ImageSample sa = render_sample("tr-00003", a, Split::train);
    const ImageSample sb = render_sample("tr-00003", b, Split::train);
    CHECK(sa.labels == sb.labels);
    for (size_t c = 0; c < sa.gt_masks.size(); ++c) CHECK(sa.gt_masks[c].v == sb.gt_masks[c].v);
    CHECK(sa.image.v != sb.image.v);
}

TEST_CASE("image values stay in [0,1]") {
    CorpusConfig cfg = small_config();
    cfg.noise_level = 1.0;
    const Corpus corpus = generate_corpus(cfg);
    for (const auto& s : corpus.samples)
        for (real v : s.image.v) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
}

TEST_CASE("label marginals stay within [0.2, 0.8] per observation") {
    CorpusConfig cfg = small_config();
    cfg.n_train = 600;
    cfg.n_val = 100;
    cfg.n_test = 100;
    const Corpus corpus = generate_corpus(cfg);
    for (int c = 0; c < cfg.n_observations; ++c) {
        real mean = 0;
        for (const auto& s : corpus.samples) mean += s.labels[c];
        mean /= static_cast<real>(corpus.samples.size());
        CHECK(mean >= 0.2);
        CHECK(mean <= 0.8);
    }
}

TEST_CASE("sub-pixel shapes raise a placement error") {
    CorpusConfig cfg = small_config();
    cfg.image_size = 8;  // below the validated minimum on purpose
    bool placement_seen = false;
    for (int i = 0; i < 20 && !placement_seen; ++i) {
        try {
            render_sample("tr-" + std::to_string(10000 + i), cfg, Split::train);
        } catch (const PlacementError&) {
            placement_seen = true;
        }
    }
    CHECK(placement_seen);
}

TEST_CASE("positive observation yields one connected region for ellipse and bar") {
    // Flood-fill connectivity check over a handful of samples.
    CorpusConfig cfg = small_config();
    cfg.shape_palette = {ShapeFamily::ellipse, ShapeFamily::bar, ShapeFamily::ellipse,
                         ShapeFamily::bar};
    const Corpus corpus = generate_corpus(cfg);
    auto components = [](const Mask& m) {
        Mask seen(m.h, m.w);
        int comps = 0;
        std::vector<std::pair<int, int>> stack;
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x) {
                if (!m.at(y, x) || seen.at(y, x)) continue;
                ++comps;
                stack.push_back({y, x});
                seen.at(y, x) = 1;
                while (!stack.empty()) {
                    auto [cy, cx] = stack.back();
                    stack.pop_back();
                    for (auto [dy, dx] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
                        const int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || ny >= m.h || nx < 0 || nx >= m.w) continue;
                        if (m.at(ny, nx) && !seen.at(ny, nx)) {
                            seen.at(ny, nx) = 1;
                            stack.push_back({ny, nx});
                        }
                    }
                }
            }
        return comps;
    };
    int checked = 0;
    for (size_t i = 0; i < 10; ++i) {
        const auto& s = corpus.samples[i];
        for (int c = 0; c < 4; ++c)
            if (s.labels[c]) {
                CHECK(components(s.gt_masks[c]) == 1);
                ++checked;
            }
    }
    CHECK(checked > 0);
}

TEST_CASE("corpus round-trips through the on-disk layout") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "doll_test_corpus").string();
    fs::remove_all(dir);

    const Corpus corpus = generate_corpus(small_config());
    write_corpus(corpus, dir);
    CHECK(fs::exists(dir + "/manifest.jsonl"));
    CHECK(fs::exists(dir + "/train/tr-00000.pgm"));
    CHECK(fs::exists(dir + "/train/gt/tr-00000.0.pgm"));

    const Corpus loaded = read_corpus(dir, /*with_gt=*/true);
    CHECK(loaded.samples.size() == corpus.samples.size());
    CHECK(corpus_digest(loaded) == corpus_digest(corpus));

    const Corpus weak = read_corpus(dir, /*with_gt=*/false);
    CHECK_FALSE(weak.samples[0].has_gt());
    fs::remove_all(dir);
}

TEST_CASE("pgm quantization is idempotent") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "doll_test_img.pgm").string();
    const ImageSample s = render_sample("tr-00000", small_config(), Split::train);
    write_pgm(path, s.image);
    const Plane back = read_pgm(path);
    CHECK(quantize_u8(back) == quantize_u8(s.image));
    fs::remove(path);
}
