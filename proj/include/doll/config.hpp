#pragma once

#include "doll/core.hpp"
#include "doll/datagen.hpp"
#include "doll/dollmask.hpp"
#include "doll/models.hpp"
#include "doll/training.hpp"

#include <map>
#include <string>
#include <vector>

namespace doll {

/// Everything one run needs, assembled from a flat dotted-key config file
/// (e.g. "pipeline.tau=0.1") plus command-line overrides.
struct RunConfig {
    std::string run_id = "run";
    int jobs = 0;  // 0 = leave the OpenMP default alone

    CorpusConfig corpus;              // pre-training corpus (weak labels only)
    CorpusConfig downstream;          // downstream corpus (gt masks are the labels)
    std::vector<std::string> archs = {"cnn-s", "cnn-m", "cnn-t", "cnn-w", "mlp"};
    int in_channels = 1;
    TrainConfig classifier_train;

    PipelineConfig pipeline;
    Aggregation aggregation = Aggregation::boosted;

    TrainConfig pretrain_train;       // end-to-end pre-training schedule
    std::string seg_arch = "ed16";

    FinetuneConfig finetune;
    std::string finetune_task = "region0";   // region0 | organs
    std::string finetune_init = "doll";      // doll | scratch | classifier-backbone
    int shots = 0;                            // 0 = full train split
    real eval_threshold = 0.5;

    /// Full resolved key set; also the digest basis.
    std::map<std::string, std::string> to_kv() const;
    std::string digest() const;
    void validate() const;

    /// gt plane indices for the named downstream task.
    std::vector<int> task_classes() const;
};

/// Parses "key=value" lines; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> parse_config_file(const std::string& path);

/// Builds a RunConfig from keys; unknown keys and malformed values raise
/// ConfigError naming the key.
RunConfig config_from_kv(const std::map<std::string, std::string>& kv);

}  // namespace doll
