#pragma once

#include "doll/core.hpp"
#include "doll/datagen.hpp"
#include "doll/dollmask.hpp"
#include "doll/eval.hpp"
#include "doll/models.hpp"

#include <string>
#include <vector>

namespace doll {

struct Checkpoint {
    SegModel model;
    int best_iteration = 0;
    std::string metric_name;
    real val_metric = 0.0;
    std::string config_digest;
};

struct HistoryPoint {
    int iteration = 0;
    std::string split;
    std::string metric;
    real value = 0.0;
};

struct FinetuneConfig {
    bool freeze_backbone = true;
    int iterations = 2000;
    real learning_rate = 0.05;
    int batch_size = 8;
    uint64_t seed = 11;
    int eval_every = 50;

    void validate() const;
};

/// Per-pixel per-class binary cross entropy between sigmoid(logits) and the
/// target planes, reported as the mean over C*H*W (probabilities clipped to
/// [eps, 1-eps], eps = 1e-7).
real bce_mean(const Tensor& logits, const std::vector<const Mask*>& targets);
/// Gradient of the mean loss at the logits: (sigmoid(z) - d) / (C*H*W).
Tensor bce_grad(const Tensor& logits, const std::vector<const Mask*>& targets);

struct PretrainResult {
    Checkpoint checkpoint;
    real probe_loss_first = 0.0;  // probe-batch loss after epoch 1
    real probe_loss_final = 0.0;  // probe-batch loss after the last epoch
    std::vector<HistoryPoint> history;
};

/// End-to-end pre-training of the full model (backbone and head) against the
/// per-image pseudo-label planes. `targets` pairs each corpus sample with its
/// mask; train and val splits must both be covered. Best checkpoint by
/// validation loss.
PretrainResult pretrain(SegModel model, const Corpus& corpus,
                        const std::vector<const DollMask*>& targets, const TrainConfig& cfg);

struct FinetuneResult {
    Checkpoint checkpoint;
    std::vector<HistoryPoint> history;  // validation mIoU every eval_every iterations
    // Digests of the model as it stands after the last iteration (the
    // checkpoint may be an earlier snapshot).
    std::string final_backbone_digest;
    std::string final_head_digest;
};

/// Supervised fine-tuning on gt masks. task_classes selects the gt planes
/// (one per output channel). With freeze_backbone only head parameters are
/// updated and the optimizer holds no backbone state. Best checkpoint by
/// validation mIoU.
FinetuneResult finetune(SegModel model, const std::vector<const ImageSample*>& train,
                        const std::vector<const ImageSample*>& val,
                        const std::vector<int>& task_classes, const FinetuneConfig& cfg);

void write_history_jsonl(const std::string& path, const std::vector<HistoryPoint>& history);
std::vector<HistoryPoint> read_history_jsonl(const std::string& path);

}  // namespace doll
