#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "doll/dollmask.hpp"
#include "doll/formats.hpp"

#include <filesystem>

#include <json.hpp>

using namespace doll;

namespace {

PipelineConfig default_cfg(int m) {
    PipelineConfig cfg;
    cfg.ensemble_size = m;
    return cfg;
}

// probs[model][sample][class] with one class; pred = prob > 0.5.
std::vector<std::vector<std::vector<real>>> probs_from_preds(
    const std::vector<std::vector<int>>& preds) {
    std::vector<std::vector<std::vector<real>>> probs(preds.size());
    for (size_t m = 0; m < preds.size(); ++m)
        for (int p : preds[m]) probs[m].push_back({p ? 0.9 : 0.1});
    return probs;
}

}  // namespace

TEST_CASE("boost weight closed forms") {
    // Zero point of the formula: e = (K-1)/K.
    CHECK(std::abs(boost_weight(2.0 / 3.0, 3)) <= 1e-12);
    // e = 0.1, K = 3: ln 9 + ln 2 = ln 18.
    CHECK(boost_weight(0.1, 3) == doctest::Approx(std::log(18.0)).epsilon(1e-12));
    // Strictly decreasing in e before clamping.
    real prev = boost_weight(0.01, 3);
    for (real e : {0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6}) {
        const real w = boost_weight(e, 3);
        CHECK(w < prev);
        prev = w;
    }
}

TEST_CASE("boost weight clamps pathological error rates with warnings") {
    std::vector<std::string> warnings;
    const real w0 = boost_weight(0.0, 3, &warnings);
    CHECK(w0 == doctest::Approx(std::log((1.0 - 1e-6) / 1e-6) + std::log(2.0)));
    CHECK(warnings.size() == 1);
    const real w1 = boost_weight(1.0, 3, &warnings);
    CHECK(w1 == 0.0);               // clamped error, then negative weight floored
    CHECK(warnings.size() == 3);    // e-clamp plus negative-W clamp
    CHECK(boost_weight(0.9, 3) == 0.0);
}

TEST_CASE("sequential reweighting matches the hand-computed 4-sample toy") {
    // Model 0 misclassifies only sample 3; model 1 also misclassifies only
    // sample 3. Labels all 1.
    const std::vector<std::vector<int>> labels = {{1}, {1}, {1}, {1}};
    const auto probs = probs_from_preds({{1, 1, 1, 0}, {1, 1, 1, 0}});

    BoostTrace trace;
    const BoostWeights w =
        compute_boost_weights(probs, labels, {"m0", "m1"}, default_cfg(2), &trace);

    // e0 = 1/4, W0 = ln 3 + ln 2 = ln 6.
    CHECK(w.at(0, 0) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
    // After update + renormalize: S3 = e^{W0} / (3 + e^{W0}) = 6/9 = 2/3.
    CHECK(trace.sample_weights[0][0][3] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(trace.sample_weights[0][0][0] == doctest::Approx(1.0 / 9.0).epsilon(1e-12));
    // Model 1 then faces e = 2/3, the zero point.
    CHECK(std::abs(w.at(1, 0)) <= 1e-12);
}

TEST_CASE("sample weights renormalize to 1 after every iteration") {
    Rng rng(17);
    const int M = 5, N = 40, C = 3;
    std::vector<std::vector<std::vector<real>>> probs(
        M, std::vector<std::vector<real>>(N, std::vector<real>(C)));
    std::vector<std::vector<int>> labels(N, std::vector<int>(C));
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) labels[n][c] = rng.bernoulli(0.5);
    for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) probs[m][n][c] = rng.uniform();

    BoostTrace trace;
    std::vector<std::string> order = {"a", "b", "c", "d", "e"};
    compute_boost_weights(probs, labels, order, default_cfg(M), &trace);
    for (const auto& per_class : trace.sample_weights)
        for (const auto& s : per_class) {
            real sum = 0.0;
            for (real v : s) sum += v;
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
}

TEST_CASE("tau filter keeps strictly-greater models only") {
    // 0-based indices; the 0.2 entry passes, the 0.1 entry is excluded by
    // strict inequality.
    CHECK(filter_models({0.05, 0.2, 0.1}, 0.1) == std::vector<int>{1});
    CHECK(filter_models({0.05, 0.1, 0.1}, 0.1).empty());
    CHECK(filter_models({0.3, 0.5, 0.9}, 0.0) == std::vector<int>{0, 1, 2});
}

TEST_CASE("aggregate is the weighted mean over the selected maps") {
    Plane eye(2, 2);
    eye.at(0, 0) = 1.0;
    eye.at(1, 1) = 1.0;

    SUBCASE("single model with weight 2 doubles the map") {
        const Plane out = aggregate({&eye}, {2.0});
        CHECK(out.at(0, 0) == 2.0);
        CHECK(out.at(0, 1) == 0.0);
        CHECK(out.at(1, 1) == 2.0);
    }
    SUBCASE("two equal maps with weights w1, w2 give ((w1+w2)/2) * map") {
        const Plane out = aggregate({&eye, &eye}, {3.0, 5.0});
        CHECK(out.at(0, 0) == doctest::Approx(4.0));
        CHECK(out.at(1, 1) == doctest::Approx(4.0));
        CHECK(out.at(1, 0) == 0.0);
    }
    SUBCASE("unit weights give the plain average (the ablation arm)") {
        Plane other(2, 2, 1.0);
        const Plane out = aggregate({&eye, &other}, {1.0, 1.0});
        CHECK(out.at(0, 0) == doctest::Approx(1.0));
        CHECK(out.at(0, 1) == doctest::Approx(0.5));
    }
    SUBCASE("empty selection signals no-evidence") {
        CHECK_THROWS_AS(aggregate({}, {}), NumericError);
    }
    SUBCASE("matches a per-pixel loop oracle on 4x4 planes") {
        Rng rng(23);
        std::vector<Plane> maps(3, Plane(4, 4));
        std::vector<real> weights = {0.7, 1.9, 0.2};
        for (auto& m : maps)
            for (real& v : m.v) v = rng.uniform(-1.0, 1.0);
        const Plane out = aggregate({&maps[0], &maps[1], &maps[2]}, weights);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                real expect = 0.0;
                for (int m = 0; m < 3; ++m) expect += weights[m] * maps[m].at(y, x);
                expect /= 3.0;
                CHECK(out.at(y, x) == doctest::Approx(expect).epsilon(1e-9));
            }
    }
}

TEST_CASE("nearest-rank percentile binarization") {
    SUBCASE("values 0..9 at the 80th percentile keep exactly {8, 9}") {
        Plane p(2, 5);
        for (int i = 0; i < 10; ++i) p.v[i] = i;
        CHECK(nearest_rank_threshold(p.v, 80.0) == 7.0);
        const Mask m = binarize(p, 80.0);
        CHECK(m.count() == 2);
        CHECK(m.v[8] == 1);
        CHECK(m.v[9] == 1);
    }
    SUBCASE("constant plane binarizes to all zeros") {
        const Mask m = binarize(Plane(4, 4, 3.25), 80.0);
        CHECK(m.count() == 0);
    }
    SUBCASE("positive count equals H*W minus the nearest-rank index on distinct values") {
        Rng rng(31);
        Plane p(6, 6);
        for (size_t i = 0; i < p.v.size(); ++i) p.v[i] = static_cast<real>(i) + rng.uniform();
        for (real pct : {10.0, 25.0, 50.0, 80.0, 97.0}) {
            const size_t rank =
                static_cast<size_t>(std::ceil(pct / 100.0 * static_cast<real>(p.v.size())));
            CHECK(binarize(p, pct).count() == p.v.size() - rank);
        }
    }
    SUBCASE("scaling the plane by a positive constant never moves the mask") {
        Rng rng(37);
        Plane p(5, 5);
        for (real& v : p.v) v = rng.uniform();
        const Mask base = binarize(p, 80.0);
        for (real k : {0.5, 4.0, 1024.0, 1.7}) {
            Plane scaled = p;
            for (real& v : scaled.v) v *= k;
            CHECK(binarize(scaled, 80.0).v == base.v);
        }
    }
    SUBCASE("non-finite planes are rejected") {
        Plane p(2, 2, 1.0);
        p.v[3] = std::numeric_limits<real>::quiet_NaN();
        CHECK_THROWS_AS(binarize(p, 80.0), NumericError);
    }
}

namespace {

std::vector<Classifier> tiny_ensemble(int n_classes, int image_size) {
    std::vector<Classifier> models;
    models.push_back(build_classifier("cnn-t", n_classes, 1, image_size, 3));
    models.push_back(build_classifier("cnn-s", n_classes, 1, image_size, 4));
    return models;
}

BoostWeights unit_weights(const std::vector<std::string>& order, int n_classes) {
    BoostWeights w;
    w.model_order = order;
    w.n_classes = n_classes;
    w.boost_k = 3;
    w.values.assign(order.size() * n_classes, 1.0);
    return w;
}

}  // namespace

TEST_CASE("generate_doll: plane geometry, determinism and the no-evidence path") {
    const int S = 16, C = 3;
    const auto models = tiny_ensemble(C, S);
    std::vector<const Classifier*> eptr;
    for (const auto& m : models) eptr.push_back(&m);
    BoostWeights w = unit_weights({"cnn-t", "cnn-s"}, C);
    w.at(0, 0) = 2.0;
    w.at(1, 2) = 0.5;

    Rng rng(41);
    Plane img(S, S);
    for (real& v : img.v) v = rng.uniform();

    PipelineConfig cfg = default_cfg(2);
    const DollMask mask = generate_doll(img, "img-1", eptr, w, cfg);
    CHECK(mask.planes.size() == static_cast<size_t>(C));
    CHECK(mask.observation_names.size() == static_cast<size_t>(C));
    CHECK(mask.source_image_id == "img-1");
    for (const Mask& p : mask.planes) {
        CHECK(p.h == S);
        CHECK(p.w == S);
        // 80th percentile keeps at most 20% plus one-pixel quantization slack.
        CHECK(static_cast<real>(p.count()) <=
              (100.0 - cfg.percentile) / 100.0 * p.size() + 1.0);
        for (uint8_t b : p.v) CHECK(b <= 1);
    }

    const DollMask mask2 = generate_doll(img, "img-1", eptr, w, cfg);
    for (size_t c = 0; c < mask.planes.size(); ++c) CHECK(mask.planes[c].v == mask2.planes[c].v);

    // tau above every probability: all planes empty (no evidence anywhere).
    PipelineConfig high_tau = cfg;
    high_tau.tau = 0.999;
    const DollMask empty = generate_doll(img, "img-1", eptr, w, high_tau);
    for (const Mask& p : empty.planes) CHECK(p.count() == 0);
}

TEST_CASE("doll output is invariant under positive scaling of the weights") {
    const int S = 16, C = 2;
    const auto models = tiny_ensemble(C, S);
    std::vector<const Classifier*> eptr;
    for (const auto& m : models) eptr.push_back(&m);
    BoostWeights w = unit_weights({"cnn-t", "cnn-s"}, C);
    w.at(0, 0) = 1.3;
    w.at(1, 0) = 0.4;
    w.at(0, 1) = 2.2;

    Rng rng(43);
    Plane img(S, S);
    for (real& v : img.v) v = rng.uniform();
    const PipelineConfig cfg = default_cfg(2);

    const DollMask base = generate_doll(img, "x", eptr, w, cfg);
    BoostWeights scaled = w;
    for (real& v : scaled.values) v *= 4.0;  // dyadic scale, exact in binary fp
    const DollMask same = generate_doll(img, "x", eptr, scaled, cfg);
    for (size_t c = 0; c < base.planes.size(); ++c) CHECK(base.planes[c].v == same.planes[c].v);
}

TEST_CASE("boosted/averaged variants share attributions and differ in weighting") {
    const int S = 16, C = 2;
    const auto models = tiny_ensemble(C, S);
    std::vector<const Classifier*> eptr;
    for (const auto& m : models) eptr.push_back(&m);
    BoostWeights w = unit_weights({"cnn-t", "cnn-s"}, C);
    w.at(0, 0) = 3.0;
    w.at(1, 0) = 0.1;

    Rng rng(47);
    Plane img(S, S);
    for (real& v : img.v) v = rng.uniform();
    const PipelineConfig cfg = default_cfg(2);

    const auto [boosted, averaged] = generate_doll_variants(img, "y", eptr, w, cfg);
    CHECK(boosted.aggregation != averaged.aggregation);
    const DollMask direct_avg = generate_doll(img, "y", eptr, w, cfg, Aggregation::averaged);
    for (size_t c = 0; c < averaged.planes.size(); ++c)
        CHECK(averaged.planes[c].v == direct_avg.planes[c].v);
}

TEST_CASE("DOLL1 codec round-trips byte-identically") {
    DollMask mask;
    mask.observation_names = {"obs0", "obs1"};
    mask.source_image_id = "tr-00042";
    mask.config_digest = "cafe";
    mask.model_order = {"cnn-t", "cnn-s"};
    mask.aggregation = "per class: mean over tau-filtered models m of W[m,c]*E[m,c]";
    Rng rng(53);
    for (int c = 0; c < 2; ++c) {
        Mask p(10, 10);  // width not a byte multiple: rows pad to 2 bytes
        for (auto& b : p.v) b = rng.bernoulli(0.3) ? 1 : 0;
        mask.planes.push_back(p);
    }

    const auto bytes = encode_doll(mask);
    const DollMask back = decode_doll(bytes);
    CHECK(back.source_image_id == mask.source_image_id);
    CHECK(back.model_order == mask.model_order);
    CHECK(back.observation_names == mask.observation_names);
    for (int c = 0; c < 2; ++c) CHECK(back.planes[c].v == mask.planes[c].v);
    CHECK(encode_doll(back) == bytes);
}

TEST_CASE("DOLL1 file size follows the format definition") {
    DollMask mask;
    mask.source_image_id = "z";
    mask.aggregation = "unit";
    for (int c = 0; c < 14; ++c) {
        mask.observation_names.push_back("obs" + std::to_string(c));
        mask.planes.emplace_back(64, 64);
    }
    const auto bytes = encode_doll(mask);
    // 16-byte fixed header, u32 manifest length + manifest, then 14 planes of
    // 64 rows x 8 bytes.
    nlohmann::json manifest = {{"observation_names", mask.observation_names},
                               {"source_image_id", mask.source_image_id},
                               {"config_digest", mask.config_digest},
                               {"model_order", mask.model_order},
                               {"aggregation", mask.aggregation}};
    const size_t manifest_len = manifest.dump().size();
    CHECK(bytes.size() == 16 + 4 + manifest_len + 14 * 64 * 8);
}

TEST_CASE("DOLL1 bit packing: bit 7 of each byte is the leftmost pixel") {
    DollMask mask;
    mask.observation_names = {"obs0"};
    mask.source_image_id = "bit";
    Mask p(1, 8);
    p.at(0, 0) = 1;  // leftmost only
    mask.planes.push_back(p);
    const auto bytes = encode_doll(mask);
    CHECK(bytes.back() == 0x80);
}

TEST_CASE("DOLL1 rejects corruption and returns nothing partial") {
    DollMask mask;
    mask.observation_names = {"obs0"};
    mask.source_image_id = "q";
    mask.planes.emplace_back(4, 4);
    auto bytes = encode_doll(mask);

    SUBCASE("corrupt magic") {
        bytes[1] = 'X';
        CHECK_THROWS_WITH_AS(decode_doll(bytes), "bad magic at offset 0 (expected DOLL)",
                             FormatError);
    }
    SUBCASE("bad version") {
        bytes[4] = 2;
        CHECK_THROWS_AS(decode_doll(bytes), FormatError);
    }
    SUBCASE("truncated payload mentions the offset") {
        bytes.pop_back();
        try {
            decode_doll(bytes);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("offset") != std::string::npos);
        }
    }
}

TEST_CASE("doll files round-trip through disk") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "doll_test_mask.doll").string();
    DollMask mask;
    mask.observation_names = {"obs0"};
    mask.source_image_id = "disk";
    Mask p(6, 6);
    p.at(2, 3) = 1;
    mask.planes.push_back(p);
    write_doll(mask, path);
    const DollMask back = read_doll(path);
    CHECK(back.planes[0].v == mask.planes[0].v);
    CHECK(read_file_bytes(path) == encode_doll(mask));
    fs::remove(path);
}

TEST_CASE("pipeline config invariants") {
    PipelineConfig cfg = default_cfg(2);
    cfg.tau = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = default_cfg(2);
    cfg.percentile = 100.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = default_cfg(2);
    cfg.ig_steps = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = default_cfg(2);
    cfg.boost_k = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
