#pragma once

#include "doll/config.hpp"
#include "doll/eval.hpp"
#include "doll/training.hpp"

#include <string>
#include <vector>

namespace doll {

/// One run's working directory plus its resolved config.
struct RunContext {
    RunConfig cfg;
    std::string run_dir;
    bool force = false;
};

std::string default_run_root();  // $DOLL_RUN_DIR or ./runs

// Artifact paths under the run directory.
std::string corpus_dir(const RunContext& ctx);
std::string downstream_dir(const RunContext& ctx);
std::string classifier_path(const RunContext& ctx, int index, const std::string& arch);
std::string auc_table_path(const RunContext& ctx);
std::string weights_path(const RunContext& ctx);
std::string doll_dir(const RunContext& ctx);
std::string pretrain_path(const RunContext& ctx);
std::string finetune_tag(const RunConfig& cfg);
std::string finetune_dir(const RunContext& ctx, const std::string& tag);

// Commands. Each returns false when its outputs already carry the current
// config digest (a no-op unless forced). Missing upstream artifacts raise
// MissingArtifact with the path.
bool cmd_gen_data(const RunContext& ctx);
bool cmd_train_classifiers(const RunContext& ctx);
bool cmd_boost_weights(const RunContext& ctx);
bool cmd_gen_doll(const RunContext& ctx);
bool cmd_pretrain(const RunContext& ctx);
bool cmd_finetune(const RunContext& ctx);
MetricsReport cmd_eval(const RunContext& ctx, const std::string& checkpoint_path);
void cmd_report(const RunContext& ctx, const std::string& run_root,
                const std::vector<std::string>& run_ids);

// Helpers shared with tests.
BoostWeights load_weights(const std::string& path);
void save_weights(const std::string& path, const BoostWeights& w,
                  const std::string& config_digest);
std::vector<const ImageSample*> few_shot_subset(const std::vector<const ImageSample*>& train,
                                                int shots, uint64_t seed);

}  // namespace doll
