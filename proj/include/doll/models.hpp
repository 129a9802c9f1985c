#pragma once

#include "doll/core.hpp"
#include "doll/datagen.hpp"
#include "doll/nn.hpp"

#include <string>
#include <vector>

namespace doll {

struct TrainConfig {
    int epochs = 10;
    real learning_rate = 0.01;
    int batch_size = 32;
    uint64_t seed = 7;
    bool augment_flip = false;
    bool augment_crop = false;
    bool augment_rotate = false;

    void validate() const;
};

/// Replicates a grayscale plane into the requested channel count.
Tensor to_input_tensor(const Plane& image, int channels);

struct Classifier {
    std::string arch_id;
    int n_classes = 0;
    int in_channels = 1;
    int image_size = 0;
    Net net;

    std::vector<real> logits(const Tensor& x) const;
    /// Per-class sigmoid probabilities; throws on image shape mismatch.
    std::vector<real> predict(const Plane& image) const;
    /// Gradient of the per-class presence loss -log sigmoid(z_c) w.r.t. the
    /// input, evaluated at `image`; same shape as the model input.
    Tensor loss_gradient(const Plane& image, int c) const;
    Tensor loss_gradient_at(const Tensor& x, int c) const;
};

/// Known arch_ids: cnn-t, cnn-s, cnn-m, cnn-w, cnn-b, mlp.
Classifier build_classifier(const std::string& arch_id, int n_classes, int in_channels,
                            int image_size, uint64_t seed);

std::vector<std::string> classifier_zoo();

struct TrainedClassifier {
    Classifier model;
    std::vector<real> val_auc;  // one entry per class
};

TrainedClassifier train_classifier(const Corpus& corpus, const std::string& arch_id,
                                   const TrainConfig& cfg, int in_channels = 1);

/// Rank-based AUC with midrank tie handling; 0.5 when one class is absent.
real auc_score(const std::vector<real>& scores, const std::vector<int>& labels);

struct SegModel {
    std::string arch_id;
    int out_channels = 0;
    int in_channels = 1;
    size_t head_start = 0;  // index of the first head layer in net
    Net net;

    Tensor forward_logits(const Plane& image) const;
    Tensor forward_probs(const Plane& image) const;
    std::string backbone_digest() const { return net.digest_with_prefix("backbone."); }
    std::string head_digest() const { return net.digest_with_prefix("head."); }
    size_t backbone_param_count() const;
    size_t head_param_count() const;
};

/// Known arch_ids: ed16 (encoder-decoder, 16-wide stem). The backbone matches
/// classifier cnn-b so classification-pretrained weights can seed it.
SegModel build_segmodel(const std::string& arch_id, int out_channels, int in_channels,
                        uint64_t seed);

/// New head for a different task; backbone parameters are moved bit-identical.
SegModel replace_head(const SegModel& model, int out_channels, uint64_t seed);

// Checkpoint container bindings.
void save_classifier(const std::string& path, const Classifier& c,
                     const std::string& config_digest);
Classifier load_classifier(const std::string& path);
void save_segmodel(const std::string& path, const SegModel& m, const std::string& config_digest,
                   int best_iteration = -1, const std::string& metric_name = "",
                   real metric_value = 0.0);
SegModel load_segmodel(const std::string& path);

// Deterministic augmentation primitives (shared by classifier and seg training).
struct AugmentParams {
    bool flip = false;
    int dy = 0, dx = 0;
    int rot_quarters = 0;
};
AugmentParams sample_augment(const TrainConfig& cfg, Rng& rng, int max_shift);
Plane apply_augment(const Plane& img, const AugmentParams& p);
Mask apply_augment(const Mask& m, const AugmentParams& p);

}  // namespace doll
