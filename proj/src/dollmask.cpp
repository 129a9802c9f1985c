#include "doll/dollmask.hpp"

#include "doll/explain.hpp"
#include "doll/formats.hpp"

#include <algorithm>
#include <cstring>

#include <json.hpp>

namespace doll {

void PipelineConfig::validate() const {
    if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("pipeline.tau: must be in [0,1)");
    if (!(percentile > 0.0 && percentile < 100.0))
        throw ConfigError("pipeline.percentile: must be in (0,100)");
    if (ig_steps < 1) throw ConfigError("pipeline.T: must be >= 1");
    if (boost_k < 2) throw ConfigError("pipeline.K: must be >= 2");
    if (!(prediction_threshold > 0.0 && prediction_threshold < 1.0))
        throw ConfigError("pipeline.prediction_threshold: must be in (0,1)");
}

const char* aggregation_name(Aggregation a) {
    return a == Aggregation::boosted ? "boosted" : "averaged";
}

Aggregation aggregation_from_name(const std::string& name) {
    if (name == "boosted") return Aggregation::boosted;
    if (name == "averaged") return Aggregation::averaged;
    throw ConfigError("pipeline.aggregation: must be boosted or averaged");
}

real boost_weight(real error_rate, int k, std::vector<std::string>* warnings) {
    constexpr real kClamp = 1e-6;
    real e = error_rate;
    if (e < kClamp || e > 1.0 - kClamp) {
        e = std::clamp(e, kClamp, 1.0 - kClamp);
        if (warnings)
            warnings->push_back("error rate " + format_real(error_rate) + " clamped to " +
                                format_real(e));
    }
    real w = std::log((1.0 - e) / e) + std::log(static_cast<real>(k - 1));
    if (w < 0.0) {
        if (warnings)
            warnings->push_back("negative weight " + format_real(w) + " clamped to 0");
        w = 0.0;
    }
    return w;
}

BoostWeights compute_boost_weights(const std::vector<std::vector<std::vector<real>>>& probs,
                                   const std::vector<std::vector<int>>& labels,
                                   const std::vector<std::string>& model_order,
                                   const PipelineConfig& cfg, BoostTrace* trace) {
    cfg.validate();
    const int M = static_cast<int>(probs.size());
    const size_t N = labels.size();
    if (M == 0 || N == 0) throw ConfigError("compute_boost_weights: empty ensemble or sample set");
    if (model_order.size() != probs.size())
        throw ConfigError("compute_boost_weights: model_order size mismatch");
    const int C = static_cast<int>(labels[0].size());

    BoostWeights out;
    out.values.assign(static_cast<size_t>(M) * C, 0.0);
    out.model_order = model_order;
    out.n_classes = C;
    out.boost_k = cfg.boost_k;
    if (trace) trace->sample_weights.assign(C, {});

    for (int c = 0; c < C; ++c) {
        std::vector<real> s(N, 1.0 / static_cast<real>(N));
        for (int m = 0; m < M; ++m) {
            real err = 0.0, total = 0.0;
            for (size_t n = 0; n < N; ++n) {
                const int pred = probs[m][n][c] > cfg.prediction_threshold ? 1 : 0;
                if (pred != labels[n][c]) err += s[n];
                total += s[n];
            }
            const real w = boost_weight(err / total, cfg.boost_k, &out.warnings);
            out.at(m, c) = w;
            real sum = 0.0;
            for (size_t n = 0; n < N; ++n) {
                const int pred = probs[m][n][c] > cfg.prediction_threshold ? 1 : 0;
                if (pred != labels[n][c]) s[n] *= std::exp(w);
                sum += s[n];
            }
            for (real& v : s) v /= sum;
            if (trace) trace->sample_weights[c].push_back(s);
        }
    }
    return out;
}

std::vector<int> filter_models(const std::vector<real>& class_probs, real tau) {
    std::vector<int> out;
    for (size_t i = 0; i < class_probs.size(); ++i)
        if (class_probs[i] > tau) out.push_back(static_cast<int>(i));
    return out;
}

Plane aggregate(const std::vector<const Plane*>& maps, const std::vector<real>& weights) {
    if (maps.empty()) throw NumericError("aggregate: empty model selection (no evidence)");
    if (maps.size() != weights.size()) throw ConfigError("aggregate: weight count mismatch");
    Plane out(maps[0]->h, maps[0]->w);
    for (size_t m = 0; m < maps.size(); ++m) {
        if (maps[m]->h != out.h || maps[m]->w != out.w)
            throw ConfigError("aggregate: map shape mismatch");
        const real w = weights[m];
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += w * maps[m]->v[i];
    }
    const real inv = 1.0 / static_cast<real>(maps.size());
    for (real& v : out.v) v *= inv;
    return out;
}

real nearest_rank_threshold(const std::vector<real>& values, real percentile) {
    if (values.empty()) throw ConfigError("percentile of empty plane");
    std::vector<real> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const size_t n = sorted.size();
    size_t rank = static_cast<size_t>(std::ceil(percentile / 100.0 * static_cast<real>(n)));
    rank = std::clamp<size_t>(rank, 1, n);
    return sorted[rank - 1];
}

Mask binarize(const Plane& plane, real percentile) {
    for (real v : plane.v)
        if (!std::isfinite(v)) throw NumericError("binarize: non-finite plane value");
    const real thr = nearest_rank_threshold(plane.v, percentile);
    Mask m(plane.h, plane.w);
    for (size_t i = 0; i < plane.v.size(); ++i) m.v[i] = plane.v[i] > thr ? 1 : 0;
    return m;
}

namespace {

DollMask assemble(const Plane& image, const std::string& image_id,
                  const std::vector<const Classifier*>& ensemble, const BoostWeights& w,
                  const PipelineConfig& cfg, Aggregation mode, const std::string& config_digest,
                  const std::vector<std::vector<real>>& probs,
                  std::vector<std::vector<std::optional<AttributionMap>>>& attr_cache) {
    const int M = static_cast<int>(ensemble.size());
    const int C = w.n_classes;
    DollMask mask;
    mask.source_image_id = image_id;
    mask.config_digest = config_digest;
    mask.model_order = w.model_order;
    mask.aggregation = mode == Aggregation::boosted
                           ? "per class: mean over tau-filtered models m of W[m,c]*E[m,c]"
                           : "per class: mean over tau-filtered models m of E[m,c] (unit weights)";
    for (int c = 0; c < C; ++c) mask.observation_names.push_back("obs" + std::to_string(c));

    for (int c = 0; c < C; ++c) {
        std::vector<real> class_probs(M);
        for (int m = 0; m < M; ++m) class_probs[m] = probs[m][c];
        const std::vector<int> selected = filter_models(class_probs, cfg.tau);
        if (selected.empty()) {
            // No model sees evidence for this observation: empty plane.
            mask.planes.emplace_back(image.h, image.w);
            continue;
        }
        std::vector<const Plane*> maps;
        std::vector<real> weights;
        for (int m : selected) {
            if (!attr_cache[m][c]) {
                try {
                    attr_cache[m][c] =
                        integrated_gradients(*ensemble[m], image, c, cfg.ig_steps);
                } catch (const NumericError& e) {
                    throw NumericError("doll generation failed (image=" + image_id +
                                       ", c=" + std::to_string(c) + ", m=" + std::to_string(m) +
                                       "): " + e.what());
                }
            }
            maps.push_back(&attr_cache[m][c]->values);
            weights.push_back(mode == Aggregation::boosted ? w.at(m, c) : 1.0);
        }
        mask.planes.push_back(binarize(aggregate(maps, weights), cfg.percentile));
    }
    return mask;
}

std::vector<std::vector<real>> ensemble_probs(const Plane& image,
                                              const std::vector<const Classifier*>& ensemble) {
    std::vector<std::vector<real>> probs;
    probs.reserve(ensemble.size());
    for (const Classifier* m : ensemble) probs.push_back(m->predict(image));
    return probs;
}

}  // namespace

DollMask generate_doll(const Plane& image, const std::string& image_id,
                       const std::vector<const Classifier*>& ensemble, const BoostWeights& w,
                       const PipelineConfig& cfg, Aggregation mode,
                       const std::string& config_digest) {
    cfg.validate();
    if (static_cast<int>(ensemble.size()) != static_cast<int>(w.model_order.size()))
        throw ConfigError("generate_doll: ensemble size does not match weights");
    auto probs = ensemble_probs(image, ensemble);
    std::vector<std::vector<std::optional<AttributionMap>>> cache(
        ensemble.size(), std::vector<std::optional<AttributionMap>>(w.n_classes));
    return assemble(image, image_id, ensemble, w, cfg, mode, config_digest, probs, cache);
}

std::pair<DollMask, DollMask> generate_doll_variants(
    const Plane& image, const std::string& image_id,
    const std::vector<const Classifier*>& ensemble, const BoostWeights& w,
    const PipelineConfig& cfg, const std::string& config_digest) {
    cfg.validate();
    auto probs = ensemble_probs(image, ensemble);
    std::vector<std::vector<std::optional<AttributionMap>>> cache(
        ensemble.size(), std::vector<std::optional<AttributionMap>>(w.n_classes));
    DollMask boosted = assemble(image, image_id, ensemble, w, cfg, Aggregation::boosted,
                                config_digest, probs, cache);
    DollMask averaged = assemble(image, image_id, ensemble, w, cfg, Aggregation::averaged,
                                 config_digest, probs, cache);
    return {std::move(boosted), std::move(averaged)};
}

// --- DOLL1 codec -------------------------------------------------------------

static constexpr char kDollMagic[4] = {'D', 'O', 'L', 'L'};
static constexpr uint16_t kDollVersion = 1;

std::vector<uint8_t> encode_doll(const DollMask& mask) {
    if (mask.planes.empty()) throw FormatError("encode_doll: no planes");
    const int C = static_cast<int>(mask.planes.size());
    const int H = mask.planes[0].h, W = mask.planes[0].w;
    for (const Mask& p : mask.planes)
        if (p.h != H || p.w != W) throw FormatError("encode_doll: plane shape mismatch");

    nlohmann::json manifest = {{"observation_names", mask.observation_names},
                               {"source_image_id", mask.source_image_id},
                               {"config_digest", mask.config_digest},
                               {"model_order", mask.model_order},
                               {"aggregation", mask.aggregation}};
    const std::string mjson = manifest.dump();

    std::vector<uint8_t> out;
    out.insert(out.end(), kDollMagic, kDollMagic + 4);
    put_u16(out, kDollVersion);
    put_u16(out, static_cast<uint16_t>(C));
    put_u32(out, static_cast<uint32_t>(H));
    put_u32(out, static_cast<uint32_t>(W));
    put_u32(out, static_cast<uint32_t>(mjson.size()));
    out.insert(out.end(), mjson.begin(), mjson.end());

    const int row_bytes = (W + 7) / 8;
    for (const Mask& p : mask.planes) {
        for (int y = 0; y < H; ++y) {
            for (int bx = 0; bx < row_bytes; ++bx) {
                uint8_t byte = 0;
                for (int bit = 0; bit < 8; ++bit) {
                    const int x = bx * 8 + bit;
                    if (x < W && p.at(y, x)) byte |= static_cast<uint8_t>(0x80 >> bit);
                }
                out.push_back(byte);
            }
        }
    }
    return out;
}

DollMask decode_doll(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 16) throw FormatError("truncated header at offset 0 (need 16 bytes)");
    if (std::memcmp(bytes.data(), kDollMagic, 4) != 0)
        throw FormatError("bad magic at offset 0 (expected DOLL)");
    size_t off = 4;
    const uint16_t ver = get_u16(bytes, off);
    if (ver != kDollVersion)
        throw FormatError("unsupported version " + std::to_string(ver) + " at offset 4");
    const uint16_t C = get_u16(bytes, off);
    const uint32_t H = get_u32(bytes, off);
    const uint32_t W = get_u32(bytes, off);
    const uint32_t mlen = get_u32(bytes, off);
    if (off + mlen > bytes.size())
        throw FormatError("truncated manifest at offset " + std::to_string(off));

    DollMask mask;
    try {
        nlohmann::json manifest = nlohmann::json::parse(
            bytes.begin() + static_cast<long>(off), bytes.begin() + static_cast<long>(off + mlen));
        mask.observation_names = manifest.at("observation_names").get<std::vector<std::string>>();
        mask.source_image_id = manifest.at("source_image_id").get<std::string>();
        mask.config_digest = manifest.at("config_digest").get<std::string>();
        mask.model_order = manifest.at("model_order").get<std::vector<std::string>>();
        mask.aggregation = manifest.at("aggregation").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid manifest at offset " + std::to_string(off) + ": " + e.what());
    }
    off += mlen;

    const size_t row_bytes = (W + 7) / 8;
    const size_t need = static_cast<size_t>(C) * H * row_bytes;
    if (bytes.size() - off != need)
        throw FormatError("plane payload size mismatch at offset " + std::to_string(off) +
                          " (expected " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - off) + ")");
    for (int c = 0; c < C; ++c) {
        Mask p(static_cast<int>(H), static_cast<int>(W));
        for (uint32_t y = 0; y < H; ++y) {
            for (size_t bx = 0; bx < row_bytes; ++bx) {
                const uint8_t byte = bytes[off++];
                for (int bit = 0; bit < 8; ++bit) {
                    const uint32_t x = static_cast<uint32_t>(bx * 8 + bit);
                    if (x < W) p.at(static_cast<int>(y), static_cast<int>(x)) =
                        (byte >> (7 - bit)) & 1;
                }
            }
        }
        mask.planes.push_back(std::move(p));
    }
    return mask;
}

void write_doll(const DollMask& mask, const std::string& path) {
    write_file_bytes(path, encode_doll(mask));
}

DollMask read_doll(const std::string& path) {
    try {
        return decode_doll(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

}  // namespace doll
