#include "doll/models.hpp"

#include "doll/formats.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace doll {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs: must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train.lr: must be > 0");
    if (batch_size < 1) throw ConfigError("train.batch: must be >= 1");
}

Tensor to_input_tensor(const Plane& image, int channels) {
    Tensor x(channels, image.h, image.w);
    for (int ci = 0; ci < channels; ++ci)
        std::copy(image.v.begin(), image.v.end(), x.chan(ci));
    return x;
}

std::vector<real> Classifier::logits(const Tensor& x) const {
    Tensor out = net.forward(x);
    return out.v;
}

std::vector<real> Classifier::predict(const Plane& image) const {
    if (image.h != image_size || image.w != image_size)
        throw ConfigError("predict: image shape " + std::to_string(image.h) + "x" +
                          std::to_string(image.w) + " does not match model input " +
                          std::to_string(image_size));
    std::vector<real> z = logits(to_input_tensor(image, in_channels));
    for (real& v : z) v = sigmoid(v);
    return z;
}

Tensor Classifier::loss_gradient_at(const Tensor& x, int c) const {
    if (c < 0 || c >= n_classes)
        throw ConfigError("loss_gradient: class index " + std::to_string(c) + " out of range");
    std::vector<Tensor> acts;
    Net& mut = const_cast<Net&>(net);
    Tensor out = mut.forward(x, acts);
    Tensor dout(out.c, out.h, out.w);
    // d/dz of -log sigmoid(z_c) is sigmoid(z_c) - 1.
    dout.v[c] = sigmoid(out.v[c]) - 1.0;
    Tensor din = mut.backward(acts, dout, /*accum_grads=*/false);
    for (real v : din.v)
        if (!std::isfinite(v)) throw NumericError("non-finite input gradient");
    return din;
}

Tensor Classifier::loss_gradient(const Plane& image, int c) const {
    return loss_gradient_at(to_input_tensor(image, in_channels), c);
}

namespace {

struct ConvSpec {
    int out_ch, stride;
};

void add_conv_stack(Net& net, const std::string& tag, int in_ch,
                    const std::vector<ConvSpec>& stack) {
    int ch = in_ch;
    for (size_t i = 0; i < stack.size(); ++i) {
        net.add(std::make_unique<Conv2d>(tag + ".conv" + std::to_string(i), ch, stack[i].out_ch,
                                         3, stack[i].stride));
        net.add(std::make_unique<ReLU>());
        ch = stack[i].out_ch;
    }
}

std::vector<ConvSpec> classifier_trunk(const std::string& arch_id) {
    if (arch_id == "cnn-t") return {{6, 2}, {12, 2}};
    if (arch_id == "cnn-s") return {{8, 2}, {16, 2}};
    if (arch_id == "cnn-m") return {{12, 2}, {24, 2}, {24, 1}};
    if (arch_id == "cnn-w") return {{16, 2}, {16, 2}};
    if (arch_id == "cnn-b") return {{16, 2}, {32, 2}, {32, 1}};
    throw ConfigError("unknown classifier arch_id: " + arch_id);
}

}  // namespace

std::vector<std::string> classifier_zoo() {
    return {"cnn-t", "cnn-s", "cnn-m", "cnn-w", "cnn-b", "mlp"};
}

Classifier build_classifier(const std::string& arch_id, int n_classes, int in_channels,
                            int image_size, uint64_t seed) {
    if (n_classes < 1) throw ConfigError("n_classes must be >= 1");
    if (in_channels != 1 && in_channels != 3) throw ConfigError("in_channels must be 1 or 3");
    Classifier c;
    c.arch_id = arch_id;
    c.n_classes = n_classes;
    c.in_channels = in_channels;
    c.image_size = image_size;

    if (arch_id == "mlp") {
        const int dim = in_channels * image_size * image_size;
        c.net.add(std::make_unique<Dense>("backbone.fc0", dim, 48));
        c.net.add(std::make_unique<ReLU>());
        c.net.add(std::make_unique<Dense>("head.fc", 48, n_classes));
    } else {
        const auto trunk = classifier_trunk(arch_id);
        add_conv_stack(c.net, "backbone", in_channels, trunk);
        c.net.add(std::make_unique<GlobalAvgPool>());
        c.net.add(std::make_unique<Dense>("head.fc", trunk.back().out_ch, n_classes));
    }
    Rng rng = Rng::derive(seed, "init/" + arch_id);
    c.net.init_params(rng);
    return c;
}

AugmentParams sample_augment(const TrainConfig& cfg, Rng& rng, int max_shift) {
    AugmentParams p;
    if (cfg.augment_flip) p.flip = rng.bernoulli(0.5);
    if (cfg.augment_crop) {
        p.dy = rng.range(-max_shift, max_shift);
        p.dx = rng.range(-max_shift, max_shift);
    }
    if (cfg.augment_rotate) p.rot_quarters = rng.range(0, 3);
    return p;
}

namespace {
template <typename T, typename V>
T transform_grid(const T& src, const AugmentParams& p, V fetch) {
    T out = src;
    const int h = src.h, w = src.w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int sy = y, sx = x;
            for (int r = 0; r < p.rot_quarters; ++r) {  // inverse of 90-degree CCW
                int ty = sx, tx = h - 1 - sy;
                sy = ty;
                sx = tx;
            }
            if (p.flip) sx = w - 1 - sx;
            sy = std::clamp(sy - p.dy, 0, h - 1);
            sx = std::clamp(sx - p.dx, 0, w - 1);
            out.v[static_cast<size_t>(y) * w + x] = fetch(sy, sx);
        }
    return out;
}
}  // namespace

Plane apply_augment(const Plane& img, const AugmentParams& p) {
    return transform_grid(img, p, [&](int y, int x) { return img.at(y, x); });
}

Mask apply_augment(const Mask& m, const AugmentParams& p) {
    return transform_grid(m, p, [&](int y, int x) { return m.at(y, x); });
}

real auc_score(const std::vector<real>& scores, const std::vector<int>& labels) {
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<real> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const real mid = 0.5 * (static_cast<real>(i) + static_cast<real>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    real sum_pos = 0.0;
    size_t n_pos = 0;
    for (size_t k = 0; k < n; ++k)
        if (labels[k]) {
            sum_pos += rank[k];
            ++n_pos;
        }
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return 0.5;
    return (sum_pos - 0.5 * n_pos * (n_pos + 1)) / (static_cast<real>(n_pos) * n_neg);
}

TrainedClassifier train_classifier(const Corpus& corpus, const std::string& arch_id,
                                   const TrainConfig& cfg, int in_channels) {
    cfg.validate();
    const auto train = corpus.split_view(Split::train);
    const auto val = corpus.split_view(Split::val);
    if (train.empty() || val.empty())
        throw ConfigError("train_classifier: corpus needs train and val splits");
    const int C = corpus.config.n_observations;

    Classifier model = build_classifier(arch_id, C, in_channels, corpus.config.image_size,
                                        cfg.seed);
    SgdOptimizer opt(model.net.params(), cfg.learning_rate);
    Rng order_rng = Rng::derive(cfg.seed, "order/" + arch_id);
    Rng aug_rng = Rng::derive(cfg.seed, "augment/" + arch_id);
    const int max_shift = std::max(1, corpus.config.image_size / 16);

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
                Tensor x = to_input_tensor(apply_augment(s.image, aug), in_channels);
                std::vector<Tensor> acts;
                Tensor z = model.net.forward(x, acts);
                Tensor dz(C, 1, 1);
                for (int c = 0; c < C; ++c) {
                    const real p = sigmoid(z.v[c]);
                    const real pc = std::clamp(p, 1e-7, 1.0 - 1e-7);
                    batch_loss += s.labels[c] ? -std::log(pc) : -std::log(1.0 - pc);
                    dz.v[c] = p - static_cast<real>(s.labels[c]);
                }
                model.net.backward(acts, dz, /*accum_grads=*/true);
            }
            if (!std::isfinite(batch_loss)) {
                char msg[128];
                std::snprintf(msg, sizeof(msg),
                              "classifier %s diverged at epoch %d (lr=%g): non-finite loss",
                              arch_id.c_str(), epoch, cfg.learning_rate);
                throw NumericError(msg);
            }
            opt.step(1.0 / static_cast<real>(end - start));
        }
    }

    TrainedClassifier out{std::move(model), {}};
    std::vector<std::vector<real>> probs(val.size());
    for (size_t i = 0; i < val.size(); ++i) probs[i] = out.model.predict(val[i]->image);
    for (int c = 0; c < C; ++c) {
        std::vector<real> scores(val.size());
        std::vector<int> labels(val.size());
        for (size_t i = 0; i < val.size(); ++i) {
            scores[i] = probs[i][c];
            labels[i] = val[i]->labels[c];
        }
        out.val_auc.push_back(auc_score(scores, labels));
    }
    return out;
}

// --- segmentation model ------------------------------------------------------

namespace {
void build_ed16_backbone(Net& net, int in_channels) {
    add_conv_stack(net, "backbone", in_channels, {{16, 2}, {32, 2}, {32, 1}});
}

void build_ed16_head(Net& net, int out_channels) {
    net.add(std::make_unique<Upsample2x>());
    net.add(std::make_unique<Conv2d>("head.conv0", 32, 16, 3, 1));
    net.add(std::make_unique<ReLU>());
    net.add(std::make_unique<Upsample2x>());
    net.add(std::make_unique<Conv2d>("head.conv1", 16, out_channels, 3, 1));
}
}  // namespace

SegModel build_segmodel(const std::string& arch_id, int out_channels, int in_channels,
                        uint64_t seed) {
    if (arch_id != "ed16") throw ConfigError("unknown segmodel arch_id: " + arch_id);
    if (out_channels < 1) throw ConfigError("segmodel out_channels must be >= 1");
    SegModel m;
    m.arch_id = arch_id;
    m.out_channels = out_channels;
    m.in_channels = in_channels;
    build_ed16_backbone(m.net, in_channels);
    m.head_start = m.net.n_layers();
    build_ed16_head(m.net, out_channels);
    Rng rng = Rng::derive(seed, "init/" + arch_id + "/" + std::to_string(out_channels));
    m.net.init_params(rng);
    return m;
}

SegModel replace_head(const SegModel& model, int out_channels, uint64_t seed) {
    SegModel fresh = build_segmodel(model.arch_id, out_channels, model.in_channels, seed);
    std::vector<NamedArray> backbone;
    for (const ParamBlock* p : model.net.params())
        if (p->name.rfind("backbone.", 0) == 0) backbone.push_back({p->name, p->shape, p->w});
    fresh.net.import_arrays(backbone);
    return fresh;
}

Tensor SegModel::forward_logits(const Plane& image) const {
    if (image.h % 4 != 0 || image.w % 4 != 0)
        throw ConfigError("segmodel input size must be a multiple of 4");
    return net.forward(to_input_tensor(image, in_channels));
}

Tensor SegModel::forward_probs(const Plane& image) const {
    Tensor z = forward_logits(image);
    for (real& v : z.v) v = sigmoid(v);
    return z;
}

size_t SegModel::backbone_param_count() const {
    size_t n = 0;
    for (const ParamBlock* p : net.params())
        if (p->name.rfind("backbone.", 0) == 0) n += p->size();
    return n;
}

size_t SegModel::head_param_count() const {
    size_t n = 0;
    for (const ParamBlock* p : net.params())
        if (p->name.rfind("head.", 0) == 0) n += p->size();
    return n;
}

// --- checkpoint bindings -----------------------------------------------------

namespace {
nlohmann::json tags_for(const Net& net) {
    nlohmann::json tags = nlohmann::json::object();
    for (const ParamBlock* p : net.params())
        tags[p->name] = p->name.rfind("backbone.", 0) == 0 ? "backbone" : "head";
    return tags;
}
}  // namespace

void save_classifier(const std::string& path, const Classifier& c,
                     const std::string& config_digest) {
    ArrayFile f;
    f.header = {{"kind", "classifier"},
                {"arch_id", c.arch_id},
                {"n_classes", c.n_classes},
                {"in_channels", c.in_channels},
                {"image_size", c.image_size},
                {"tags", tags_for(c.net)},
                {"config_digest", config_digest}};
    f.arrays = c.net.export_arrays();
    write_arrays(path, f);
}

Classifier load_classifier(const std::string& path) {
    ArrayFile f = read_arrays(path);
    if (f.header.at("kind") != "classifier")
        throw FormatError(path + ": kind is not 'classifier'");
    Classifier c = build_classifier(f.header.at("arch_id").get<std::string>(),
                                    f.header.at("n_classes").get<int>(),
                                    f.header.at("in_channels").get<int>(),
                                    f.header.at("image_size").get<int>(), /*seed=*/0);
    c.net.import_arrays(f.arrays);
    return c;
}

void save_segmodel(const std::string& path, const SegModel& m, const std::string& config_digest,
                   int best_iteration, const std::string& metric_name, real metric_value) {
    ArrayFile f;
    f.header = {{"kind", "segmodel"},
                {"arch_id", m.arch_id},
                {"out_channels", m.out_channels},
                {"in_channels", m.in_channels},
                {"tags", tags_for(m.net)},
                {"config_digest", config_digest}};
    if (best_iteration >= 0) {
        f.header["best_iteration"] = best_iteration;
        f.header["metric_name"] = metric_name;
        f.header["metric_value"] = metric_value;
    }
    f.arrays = m.net.export_arrays();
    write_arrays(path, f);
}

SegModel load_segmodel(const std::string& path) {
    ArrayFile f = read_arrays(path);
    if (f.header.at("kind") != "segmodel")
        throw FormatError(path + ": kind is not 'segmodel'");
    SegModel m = build_segmodel(f.header.at("arch_id").get<std::string>(),
                                f.header.at("out_channels").get<int>(),
                                f.header.at("in_channels").get<int>(), /*seed=*/0);
    m.net.import_arrays(f.arrays);
    return m;
}

}  // namespace doll
