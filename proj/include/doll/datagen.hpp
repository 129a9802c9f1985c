#pragma once

#include "doll/core.hpp"

#include <optional>
#include <string>
#include <vector>

namespace doll {

enum class Split { train, val, test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

enum class ShapeFamily { ellipse, bar, blob };

const char* shape_name(ShapeFamily f);
ShapeFamily shape_from_name(const std::string& name);

struct CorpusConfig {
    int image_size = 64;
    int n_observations = 4;
    int n_train = 1200;
    int n_val = 300;
    int n_test = 500;
    std::vector<ShapeFamily> shape_palette;  // one family per observation; defaulted if empty
    real noise_level = 0.1;
    uint64_t seed = 1;

    std::vector<ShapeFamily> resolved_palette() const;
    void validate() const;  // throws ConfigError naming the offending field
};

struct ImageSample {
    std::string id;
    Plane image;                 // values in [0,1]
    std::vector<int> labels;     // length C, each 0/1
    std::vector<Mask> gt_masks;  // oracle only; empty when loaded without the sidecar
    Split split = Split::train;

    bool has_gt() const { return !gt_masks.empty(); }
};

struct Corpus {
    CorpusConfig config;
    std::vector<ImageSample> samples;  // train block, then val, then test

    std::vector<const ImageSample*> split_view(Split s) const;
};

ImageSample render_sample(const std::string& id, const CorpusConfig& config, Split split);

/// Deterministic function of the config: per-sample randomness derives from
/// (seed, id), so any parallel schedule yields the identical corpus.
Corpus generate_corpus(const CorpusConfig& config);

std::string corpus_digest(const Corpus& corpus);

// On-disk layout: <dir>/{train,val,test}/<id>.pgm, gt sidecar at
// <dir>/<split>/gt/<id>.<c>.pgm, manifest.jsonl at the root with one
// {id, labels, split} line per sample, corpus.json with config + digests.
void write_corpus(const Corpus& corpus, const std::string& dir);
Corpus read_corpus(const std::string& dir, bool with_gt);

// Binary PGM (P5, maxval 255).
void write_pgm(const std::string& path, const Plane& img);
void write_pgm(const std::string& path, const Mask& mask);
Plane read_pgm(const std::string& path);
Mask read_pgm_mask(const std::string& path);

/// Quantized pixel bytes as written to PGM; also the basis of the corpus digest.
std::vector<uint8_t> quantize_u8(const Plane& img);

}  // namespace doll
