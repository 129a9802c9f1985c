#include "doll/training.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace doll {

void FinetuneConfig::validate() const {
    if (iterations < 1) throw ConfigError("finetune.iterations: must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("finetune.lr: must be > 0");
    if (batch_size < 1) throw ConfigError("finetune.batch: must be >= 1");
    if (eval_every < 1) throw ConfigError("finetune.eval_every: must be >= 1");
}

real bce_mean(const Tensor& logits, const std::vector<const Mask*>& targets) {
    if (static_cast<int>(targets.size()) != logits.c)
        throw ConfigError("bce: target plane count does not match logit channels");
    constexpr real eps = 1e-7;
    real sum = 0.0;
    for (int c = 0; c < logits.c; ++c) {
        const Mask& d = *targets[c];
        if (d.h != logits.h || d.w != logits.w) throw ConfigError("bce: target shape mismatch");
        const real* z = logits.chan(c);
        for (size_t i = 0; i < d.v.size(); ++i) {
            const real p = std::clamp(sigmoid(z[i]), eps, 1.0 - eps);
            sum += d.v[i] ? -std::log(p) : -std::log(1.0 - p);
        }
    }
    return sum / static_cast<real>(logits.size());
}

Tensor bce_grad(const Tensor& logits, const std::vector<const Mask*>& targets) {
    Tensor g(logits.c, logits.h, logits.w);
    const real inv = 1.0 / static_cast<real>(logits.size());
    for (int c = 0; c < logits.c; ++c) {
        const Mask& d = *targets[c];
        const real* z = logits.chan(c);
        real* gc = g.chan(c);
        for (size_t i = 0; i < d.v.size(); ++i)
            gc[i] = (sigmoid(z[i]) - static_cast<real>(d.v[i])) * inv;
    }
    return g;
}

namespace {

std::vector<const Mask*> mask_ptrs(const DollMask& m) {
    std::vector<const Mask*> out;
    out.reserve(m.planes.size());
    for (const Mask& p : m.planes) out.push_back(&p);
    return out;
}

std::vector<const Mask*> gt_ptrs(const ImageSample& s, const std::vector<int>& task_classes) {
    std::vector<const Mask*> out;
    out.reserve(task_classes.size());
    for (int c : task_classes) out.push_back(&s.gt_masks[c]);
    return out;
}

real mean_loss(SegModel& model, const std::vector<const ImageSample*>& samples,
               const std::vector<const DollMask*>& targets) {
    real sum = 0.0;
    for (size_t i = 0; i < samples.size(); ++i)
        sum += bce_mean(model.forward_logits(samples[i]->image), mask_ptrs(*targets[i]));
    return sum / static_cast<real>(samples.size());
}

}  // namespace

PretrainResult pretrain(SegModel model, const Corpus& corpus,
                        const std::vector<const DollMask*>& targets, const TrainConfig& cfg) {
    cfg.validate();
    if (targets.size() != corpus.samples.size())
        throw ConfigError("pretrain: one mask per corpus sample required");
    if (!targets.empty() &&
        static_cast<int>(targets[0]->planes.size()) != model.out_channels)
        throw ConfigError("pretrain: mask plane count does not match model out_channels");

    std::vector<const ImageSample*> train, val;
    std::vector<const DollMask*> train_t, val_t;
    for (size_t i = 0; i < corpus.samples.size(); ++i) {
        if (corpus.samples[i].split == Split::train) {
            train.push_back(&corpus.samples[i]);
            train_t.push_back(targets[i]);
        } else if (corpus.samples[i].split == Split::val) {
            val.push_back(&corpus.samples[i]);
            val_t.push_back(targets[i]);
        }
    }
    if (train.empty() || val.empty()) throw ConfigError("pretrain: train and val splits required");

    SgdOptimizer opt(model.net.params(), cfg.learning_rate);
    Rng order_rng = Rng::derive(cfg.seed, "pretrain-order");
    Rng aug_rng = Rng::derive(cfg.seed, "pretrain-augment");
    const int max_shift = std::max(1, corpus.config.image_size / 16);

    const size_t probe_n = std::min<size_t>(train.size(), cfg.batch_size);
    std::vector<const ImageSample*> probe(train.begin(), train.begin() + probe_n);
    std::vector<const DollMask*> probe_t(train_t.begin(), train_t.begin() + probe_n);

    PretrainResult result;
    real best_val = 0.0;
    std::vector<size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        order_rng.shuffle(idx);
        for (size_t start = 0; start < idx.size(); start += cfg.batch_size) {
            const size_t end = std::min(idx.size(), start + cfg.batch_size);
            model.net.zero_grads();
            real batch_loss = 0.0;
            for (size_t k = start; k < end; ++k) {
                const ImageSample& s = *train[idx[k]];
                const AugmentParams aug = sample_augment(cfg, aug_rng, max_shift);
                const Plane img = apply_augment(s.image, aug);
                std::vector<Mask> planes;
                planes.reserve(train_t[idx[k]]->planes.size());
                for (const Mask& p : train_t[idx[k]]->planes)
                    planes.push_back(apply_augment(p, aug));
                std::vector<const Mask*> tptr;
                for (const Mask& p : planes) tptr.push_back(&p);

                std::vector<Tensor> acts;
                Tensor z = model.net.forward(to_input_tensor(img, model.in_channels), acts);
                batch_loss += bce_mean(z, tptr);
                model.net.backward(acts, bce_grad(z, tptr), /*accum_grads=*/true);
            }
            if (!std::isfinite(batch_loss))
                throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
            opt.step(1.0 / static_cast<real>(end - start));
        }

        const real val_loss = mean_loss(model, val, val_t);
        result.history.push_back({epoch, "val", "bce", val_loss});
        if (epoch == 1) result.probe_loss_first = mean_loss(model, probe, probe_t);
        if (epoch == 1 || val_loss < best_val) {
            best_val = val_loss;
            result.checkpoint.model = model;
            result.checkpoint.best_iteration = epoch;
        }
    }
    result.probe_loss_final = mean_loss(model, probe, probe_t);
    result.checkpoint.metric_name = "val_bce";
    result.checkpoint.val_metric = best_val;
    return result;
}

FinetuneResult finetune(SegModel model, const std::vector<const ImageSample*>& train,
                        const std::vector<const ImageSample*>& val,
                        const std::vector<int>& task_classes, const FinetuneConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw ConfigError("finetune: empty downstream train split");
    if (val.empty()) throw ConfigError("finetune: empty downstream val split");
    if (static_cast<int>(task_classes.size()) != model.out_channels)
        throw ConfigError("finetune: task class count does not match model out_channels");
    for (const ImageSample* s : train)
        if (!s->has_gt()) throw ConfigError("finetune: sample " + s->id + " lacks gt masks");

    // Frozen backbone: the optimizer is built over head blocks only, so no
    // backbone entry ever exists in its state. Backbone outputs for the
    // (small) train set are computed once and reused every iteration.
    auto blocks = cfg.freeze_backbone ? model.net.params_with_prefix("head.")
                                      : model.net.params();
    SgdOptimizer opt(blocks, cfg.learning_rate);
    Rng batch_rng = Rng::derive(cfg.seed, "finetune-batch");

    std::vector<Tensor> feat_cache;
    if (cfg.freeze_backbone) {
        feat_cache.reserve(train.size());
        for (const ImageSample* s : train)
            feat_cache.push_back(model.net.forward_prefix(
                to_input_tensor(s->image, model.in_channels), model.head_start));
    }

    FinetuneResult result;
    real best = -1.0;
    int best_iter = 0;

    auto evaluate = [&](int iteration) {
        const MetricsReport rep = evaluate_model(model, val, task_classes);
        result.history.push_back({iteration, "val", "miou", rep.miou});
        if (rep.miou > best) {
            best = rep.miou;
            best_iter = iteration;
            result.checkpoint.model = model;
        }
    };

    evaluate(0);
    for (int it = 1; it <= cfg.iterations; ++it) {
        model.net.zero_grads();
        real batch_loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const size_t pick = batch_rng.below(train.size());
            const ImageSample& s = *train[pick];
            const auto tptr = gt_ptrs(s, task_classes);
            std::vector<Tensor> acts;
            if (cfg.freeze_backbone) {
                Tensor z = model.net.forward_from(feat_cache[pick], model.head_start, acts);
                batch_loss += bce_mean(z, tptr);
                model.net.backward_from(acts, bce_grad(z, tptr), /*accum_grads=*/true,
                                        model.head_start);
            } else {
                Tensor z = model.net.forward(to_input_tensor(s.image, model.in_channels), acts);
                batch_loss += bce_mean(z, tptr);
                model.net.backward(acts, bce_grad(z, tptr), /*accum_grads=*/true);
            }
        }
        if (!std::isfinite(batch_loss))
            throw NumericError("finetune: non-finite loss at iteration " + std::to_string(it));
        opt.step(1.0 / static_cast<real>(cfg.batch_size));
        if (it % cfg.eval_every == 0 || it == cfg.iterations) evaluate(it);
    }

    result.checkpoint.best_iteration = best_iter;
    result.checkpoint.metric_name = "val_miou";
    result.checkpoint.val_metric = best;
    result.final_backbone_digest = model.backbone_digest();
    result.final_head_digest = model.head_digest();
    return result;
}

void write_history_jsonl(const std::string& path, const std::vector<HistoryPoint>& history) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw MissingArtifact("cannot write: " + path);
    for (const auto& h : history) {
        nlohmann::json j = {{"iteration", h.iteration},
                            {"split", h.split},
                            {"metric", h.metric},
                            {"value", h.value}};
        f << j.dump() << "\n";
    }
}

std::vector<HistoryPoint> read_history_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifact("cannot open: " + path);
    std::vector<HistoryPoint> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        out.push_back({j.at("iteration").get<int>(), j.at("split").get<std::string>(),
                       j.at("metric").get<std::string>(), j.at("value").get<real>()});
    }
    return out;
}

}  // namespace doll
