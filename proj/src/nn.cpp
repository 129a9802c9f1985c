#include "doll/nn.hpp"

#include <algorithm>

namespace doll {

// --- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int k, int stride)
    : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride) {
    weight_.name = name + ".W";
    weight_.shape = {out_ch, in_ch, k, k};
    weight_.w.assign(static_cast<size_t>(out_ch) * in_ch * k * k, 0.0);
    weight_.g.assign(weight_.w.size(), 0.0);
    bias_.name = name + ".b";
    bias_.shape = {out_ch};
    bias_.w.assign(static_cast<size_t>(out_ch), 0.0);
    bias_.g.assign(bias_.w.size(), 0.0);
}

kernels::ConvShape Conv2d::shape_for(const Tensor& in) const {
    return kernels::ConvShape{in.c, in.h, in.w, out_ch_, k_, stride_, k_ / 2};
}

Tensor Conv2d::forward(const Tensor& in) const {
    if (in.c != in_ch_) throw NumericError("conv input channel mismatch");
    auto s = shape_for(in);
    Tensor out(out_ch_, s.oh(), s.ow());
    kernels::conv2d_forward(s, in.v.data(), weight_.w.data(), bias_.w.data(), out.v.data());
    return out;
}

Tensor Conv2d::backward(const Tensor& in, const Tensor&, const Tensor& dout, bool accum_grads) {
    auto s = shape_for(in);
    if (accum_grads) {
        std::vector<real> dw(weight_.w.size()), db(bias_.w.size());
        kernels::conv2d_backward_weights(s, dout.v.data(), in.v.data(), dw.data(), db.data());
        for (size_t i = 0; i < dw.size(); ++i) weight_.g[i] += dw[i];
        for (size_t i = 0; i < db.size(); ++i) bias_.g[i] += db[i];
    }
    Tensor din(in.c, in.h, in.w);
    kernels::conv2d_backward_input(s, dout.v.data(), weight_.w.data(), din.v.data());
    return din;
}

void Conv2d::init_params(Rng& rng) {
    const real std = std::sqrt(2.0 / (static_cast<real>(in_ch_) * k_ * k_));
    for (real& x : weight_.w) x = rng.normal(0.0, std);
    std::fill(bias_.w.begin(), bias_.w.end(), 0.0);
}

// --- ReLU -------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& in) const {
    Tensor out = in;
    for (real& x : out.v) x = x > 0.0 ? x : 0.0;
    return out;
}

Tensor ReLU::backward(const Tensor& in, const Tensor&, const Tensor& dout, bool) {
    Tensor din = dout;
    for (size_t i = 0; i < din.v.size(); ++i)
        if (in.v[i] <= 0.0) din.v[i] = 0.0;
    return din;
}

// --- Dense ------------------------------------------------------------------

Dense::Dense(std::string name, int in_dim, int out_dim) : in_dim_(in_dim), out_dim_(out_dim) {
    weight_.name = name + ".W";
    weight_.shape = {out_dim, in_dim};
    weight_.w.assign(static_cast<size_t>(out_dim) * in_dim, 0.0);
    weight_.g.assign(weight_.w.size(), 0.0);
    bias_.name = name + ".b";
    bias_.shape = {out_dim};
    bias_.w.assign(static_cast<size_t>(out_dim), 0.0);
    bias_.g.assign(bias_.w.size(), 0.0);
}

Tensor Dense::forward(const Tensor& in) const {
    if (static_cast<int>(in.size()) != in_dim_) throw NumericError("dense input size mismatch");
    Tensor out(out_dim_, 1, 1);
    kernels::dense_forward(out_dim_, in_dim_, weight_.w.data(), bias_.w.data(), in.v.data(),
                           out.v.data());
    return out;
}

Tensor Dense::backward(const Tensor& in, const Tensor&, const Tensor& dout, bool accum_grads) {
    if (accum_grads) {
        std::vector<real> dw(weight_.w.size()), db(bias_.w.size());
        kernels::dense_backward_weights(out_dim_, in_dim_, in.v.data(), dout.v.data(), dw.data(),
                                        db.data());
        for (size_t i = 0; i < dw.size(); ++i) weight_.g[i] += dw[i];
        for (size_t i = 0; i < db.size(); ++i) bias_.g[i] += db[i];
    }
    Tensor din(in.c, in.h, in.w);
    kernels::dense_backward_input(out_dim_, in_dim_, weight_.w.data(), dout.v.data(),
                                  din.v.data());
    return din;
}

void Dense::init_params(Rng& rng) {
    const real std = std::sqrt(2.0 / static_cast<real>(in_dim_));
    for (real& x : weight_.w) x = rng.normal(0.0, std);
    std::fill(bias_.w.begin(), bias_.w.end(), 0.0);
}

// --- GlobalAvgPool ----------------------------------------------------------

Tensor GlobalAvgPool::forward(const Tensor& in) const {
    Tensor out(in.c, 1, 1);
    const real inv = 1.0 / (static_cast<real>(in.h) * in.w);
    for (int ci = 0; ci < in.c; ++ci) {
        real acc = 0.0;
        const real* p = in.chan(ci);
        for (int j = 0; j < in.h * in.w; ++j) acc += p[j];
        out.v[ci] = acc * inv;
    }
    return out;
}

Tensor GlobalAvgPool::backward(const Tensor& in, const Tensor&, const Tensor& dout, bool) {
    Tensor din(in.c, in.h, in.w);
    const real inv = 1.0 / (static_cast<real>(in.h) * in.w);
    for (int ci = 0; ci < in.c; ++ci) {
        const real g = dout.v[ci] * inv;
        real* p = din.chan(ci);
        for (int j = 0; j < in.h * in.w; ++j) p[j] = g;
    }
    return din;
}

// --- Upsample2x -------------------------------------------------------------

Tensor Upsample2x::forward(const Tensor& in) const {
    Tensor out(in.c, in.h * 2, in.w * 2);
    for (int ci = 0; ci < in.c; ++ci)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x)
                out.at(ci, y, x) = in.at(ci, y / 2, x / 2);
    return out;
}

Tensor Upsample2x::backward(const Tensor& in, const Tensor&, const Tensor& dout, bool) {
    Tensor din(in.c, in.h, in.w);
    for (int ci = 0; ci < in.c; ++ci)
        for (int y = 0; y < dout.h; ++y)
            for (int x = 0; x < dout.w; ++x)
                din.at(ci, y / 2, x / 2) += dout.at(ci, y, x);
    return din;
}

// --- Net --------------------------------------------------------------------

Net::Net(const Net& other) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Net& Net::operator=(const Net& other) {
    if (this != &other) {
        layers_.clear();
        layers_.reserve(other.layers_.size());
        for (const auto& l : other.layers_) layers_.push_back(l->clone());
    }
    return *this;
}

Tensor Net::forward(const Tensor& x, std::vector<Tensor>& acts) const {
    acts.clear();
    acts.reserve(layers_.size() + 1);
    acts.push_back(x);
    for (const auto& l : layers_) acts.push_back(l->forward(acts.back()));
    return acts.back();
}

Tensor Net::forward(const Tensor& x) const {
    Tensor cur = x;
    for (const auto& l : layers_) cur = l->forward(cur);
    return cur;
}

Tensor Net::backward(const std::vector<Tensor>& acts, const Tensor& dout, bool accum_grads) {
    Tensor grad = dout;
    for (size_t i = layers_.size(); i > 0; --i)
        grad = layers_[i - 1]->backward(acts[i - 1], acts[i], grad, accum_grads);
    return grad;
}

Tensor Net::forward_prefix(const Tensor& x, size_t to) const {
    Tensor cur = x;
    for (size_t i = 0; i < to; ++i) cur = layers_[i]->forward(cur);
    return cur;
}

Tensor Net::forward_from(const Tensor& x, size_t from, std::vector<Tensor>& acts) const {
    acts.clear();
    acts.reserve(layers_.size() - from + 1);
    acts.push_back(x);
    for (size_t i = from; i < layers_.size(); ++i) acts.push_back(layers_[i]->forward(acts.back()));
    return acts.back();
}

Tensor Net::backward_from(const std::vector<Tensor>& acts, const Tensor& dout, bool accum_grads,
                          size_t from) {
    Tensor grad = dout;
    for (size_t i = layers_.size(); i > from; --i)
        grad = layers_[i - 1]->backward(acts[i - 1 - from], acts[i - from], grad, accum_grads);
    return grad;
}

std::vector<ParamBlock*> Net::params() {
    std::vector<ParamBlock*> out;
    for (auto& l : layers_)
        for (ParamBlock* p : l->params()) out.push_back(p);
    return out;
}

std::vector<const ParamBlock*> Net::params() const {
    std::vector<const ParamBlock*> out;
    for (const auto& l : layers_)
        for (ParamBlock* p : const_cast<Layer&>(*l).params()) out.push_back(p);
    return out;
}

std::vector<ParamBlock*> Net::params_with_prefix(const std::string& prefix) {
    std::vector<ParamBlock*> out;
    for (ParamBlock* p : params())
        if (p->name.rfind(prefix, 0) == 0) out.push_back(p);
    return out;
}

void Net::zero_grads() {
    for (ParamBlock* p : params()) std::fill(p->g.begin(), p->g.end(), 0.0);
}

void Net::init_params(Rng& rng) {
    for (auto& l : layers_) l->init_params(rng);
}

std::vector<NamedArray> Net::export_arrays() const {
    std::vector<NamedArray> out;
    for (const ParamBlock* p : params()) out.push_back({p->name, p->shape, p->w});
    return out;
}

void Net::import_arrays(const std::vector<NamedArray>& arrays) {
    auto blocks = params();
    for (const auto& a : arrays) {
        bool found = false;
        for (ParamBlock* p : blocks) {
            if (p->name == a.name) {
                if (p->shape != a.shape)
                    throw FormatError("shape mismatch for parameter " + a.name);
                p->w = a.data;
                found = true;
                break;
            }
        }
        if (!found) throw FormatError("unknown parameter " + a.name);
    }
}

std::string Net::digest() const { return params_digest(export_arrays()); }

std::string Net::digest_with_prefix(const std::string& prefix) const {
    std::vector<NamedArray> sel;
    for (const ParamBlock* p : params())
        if (p->name.rfind(prefix, 0) == 0) sel.push_back({p->name, p->shape, p->w});
    return params_digest(sel);
}

// --- SgdOptimizer -----------------------------------------------------------

SgdOptimizer::SgdOptimizer(std::vector<ParamBlock*> blocks, real lr, real momentum)
    : blocks_(std::move(blocks)), lr_(lr), momentum_(momentum) {
    velocity_.reserve(blocks_.size());
    for (ParamBlock* p : blocks_) velocity_.emplace_back(p->size(), 0.0);
}

void SgdOptimizer::step(real grad_scale) {
    for (size_t bi = 0; bi < blocks_.size(); ++bi) {
        ParamBlock* p = blocks_[bi];
        std::vector<real>& vel = velocity_[bi];
        for (size_t i = 0; i < p->size(); ++i) {
            const real g = p->g[i] * grad_scale;
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p->name);
            vel[i] = momentum_ * vel[i] + g;
            p->w[i] -= lr_ * vel[i];
        }
    }
}

}  // namespace doll
