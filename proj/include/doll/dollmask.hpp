#pragma once

#include "doll/core.hpp"
#include "doll/models.hpp"

#include <optional>
#include <string>
#include <vector>

namespace doll {

struct PipelineConfig {
    real tau = 0.1;
    real percentile = 80.0;
    int ig_steps = 5;
    int boost_k = 3;
    real prediction_threshold = 0.5;
    int ensemble_size = 0;  // M, fixed by the ensemble at hand

    void validate() const;
};

enum class Aggregation { boosted, averaged };

const char* aggregation_name(Aggregation a);
Aggregation aggregation_from_name(const std::string& name);

struct BoostWeights {
    std::vector<real> values;  // row-major M x C
    std::vector<std::string> model_order;
    int n_classes = 0;
    int boost_k = 0;
    std::vector<std::string> warnings;  // clamp events, one line each

    real at(int m, int c) const { return values[static_cast<size_t>(m) * n_classes + c]; }
    real& at(int m, int c) { return values[static_cast<size_t>(m) * n_classes + c]; }
};

/// Per-iteration sample-weight snapshots, one vector per (class, model) step,
/// taken after renormalization. Test instrumentation.
struct BoostTrace {
    std::vector<std::vector<std::vector<real>>> sample_weights;  // [class][model][sample]
};

/// Sequential reweighting pass over the already-trained ensemble, one pass per
/// observation in model_order. probs is [model][sample][class]; labels is
/// [sample][class]. Error rates are clamped away from {0,1} and negative
/// weights to zero; each clamp is recorded as a warning, never a crash.
BoostWeights compute_boost_weights(const std::vector<std::vector<std::vector<real>>>& probs,
                                   const std::vector<std::vector<int>>& labels,
                                   const std::vector<std::string>& model_order,
                                   const PipelineConfig& cfg, BoostTrace* trace = nullptr);

/// Closed-form weight for one error rate (the inner formula of the pass).
real boost_weight(real error_rate, int k, std::vector<std::string>* warnings = nullptr);

/// Indices of models whose probability for the class strictly exceeds tau.
std::vector<int> filter_models(const std::vector<real>& class_probs, real tau);

/// Weighted mean of the selected maps: sum(w_i * map_i) / count. Requires a
/// nonempty selection; the no-evidence case is the caller's to handle.
Plane aggregate(const std::vector<const Plane*>& maps, const std::vector<real>& weights);

/// Nearest-rank percentile of the plane's values.
real nearest_rank_threshold(const std::vector<real>& values, real percentile);

/// Pixel set iff strictly greater than the nearest-rank percentile threshold.
Mask binarize(const Plane& plane, real percentile);

struct DollMask {
    std::vector<Mask> planes;  // one per observation
    std::vector<std::string> observation_names;
    std::string source_image_id;
    std::string config_digest;
    std::vector<std::string> model_order;
    std::string aggregation;  // weighted-mean semantics, recorded per file
};

DollMask generate_doll(const Plane& image, const std::string& image_id,
                       const std::vector<const Classifier*>& ensemble, const BoostWeights& w,
                       const PipelineConfig& cfg, Aggregation mode = Aggregation::boosted,
                       const std::string& config_digest = "");

/// Both aggregation arms from one set of attribution maps (the ablation pair).
std::pair<DollMask, DollMask> generate_doll_variants(
    const Plane& image, const std::string& image_id,
    const std::vector<const Classifier*>& ensemble, const BoostWeights& w,
    const PipelineConfig& cfg, const std::string& config_digest = "");

// DOLL1 codec (little-endian): magic "DOLL", u16 version=1, u16 C, u32 H,
// u32 W, u32 manifest length, UTF-8 JSON manifest, then C planes bit-packed
// row-major with rows padded to whole bytes, bit 7 of each byte = leftmost.
std::vector<uint8_t> encode_doll(const DollMask& mask);
DollMask decode_doll(const std::vector<uint8_t>& bytes);
void write_doll(const DollMask& mask, const std::string& path);
DollMask read_doll(const std::string& path);

}  // namespace doll
