#pragma once

#include "doll/core.hpp"
#include "doll/formats.hpp"
#include "doll/kernels.hpp"

#include <memory>
#include <string>
#include <vector>

namespace doll {

/// One named parameter array with its gradient accumulator.
struct ParamBlock {
    std::string name;  // "<tag>.<layer>.<W|b>", tag is "backbone" or "head"
    std::vector<int> shape;
    std::vector<real> w;
    std::vector<real> g;

    size_t size() const { return w.size(); }
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& in) const = 0;
    /// Returns d(loss)/d(in); when accum_grads, adds parameter gradients
    /// into the blocks' g buffers.
    virtual Tensor backward(const Tensor& in, const Tensor& out, const Tensor& dout,
                            bool accum_grads) = 0;
    virtual std::vector<ParamBlock*> params() { return {}; }
    virtual void init_params(Rng&) {}
    virtual std::unique_ptr<Layer> clone() const = 0;
};

class Conv2d final : public Layer {
public:
    Conv2d(std::string name, int in_ch, int out_ch, int k, int stride);
    Tensor forward(const Tensor& in) const override;
    Tensor backward(const Tensor& in, const Tensor& out, const Tensor& dout,
                    bool accum_grads) override;
    std::vector<ParamBlock*> params() override { return {&weight_, &bias_}; }
    void init_params(Rng& rng) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

private:
    kernels::ConvShape shape_for(const Tensor& in) const;
    int in_ch_, out_ch_, k_, stride_;
    ParamBlock weight_, bias_;
};

class ReLU final : public Layer {
public:
    Tensor forward(const Tensor& in) const override;
    Tensor backward(const Tensor& in, const Tensor& out, const Tensor& dout,
                    bool accum_grads) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
};

/// Fully connected layer; flattens its input tensor, emits out_dim x 1 x 1.
class Dense final : public Layer {
public:
    Dense(std::string name, int in_dim, int out_dim);
    Tensor forward(const Tensor& in) const override;
    Tensor backward(const Tensor& in, const Tensor& out, const Tensor& dout,
                    bool accum_grads) override;
    std::vector<ParamBlock*> params() override { return {&weight_, &bias_}; }
    void init_params(Rng& rng) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

private:
    int in_dim_, out_dim_;
    ParamBlock weight_, bias_;
};

class GlobalAvgPool final : public Layer {
public:
    Tensor forward(const Tensor& in) const override;
    Tensor backward(const Tensor& in, const Tensor& out, const Tensor& dout,
                    bool accum_grads) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
};

class Upsample2x final : public Layer {
public:
    Tensor forward(const Tensor& in) const override;
    Tensor backward(const Tensor& in, const Tensor& out, const Tensor& dout,
                    bool accum_grads) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Upsample2x>(*this); }
};

/// A feed-forward stack of layers with per-layer activation caching.
class Net {
public:
    Net() = default;
    Net(const Net& other);
    Net& operator=(const Net& other);
    Net(Net&&) = default;
    Net& operator=(Net&&) = default;

    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Tensor forward(const Tensor& x, std::vector<Tensor>& acts) const;
    Tensor forward(const Tensor& x) const;

    /// acts as produced by forward; dout is the gradient at the net output.
    Tensor backward(const std::vector<Tensor>& acts, const Tensor& dout, bool accum_grads);

    /// Runs layers [0, to) without caching activations.
    Tensor forward_prefix(const Tensor& x, size_t to) const;
    /// Runs layers [from, end); acts[0] is the range input.
    Tensor forward_from(const Tensor& x, size_t from, std::vector<Tensor>& acts) const;
    /// Backward through layers [from, end) given acts from forward_from;
    /// returns the gradient at the range input.
    Tensor backward_from(const std::vector<Tensor>& acts, const Tensor& dout, bool accum_grads,
                         size_t from);

    std::vector<ParamBlock*> params();
    std::vector<const ParamBlock*> params() const;
    std::vector<ParamBlock*> params_with_prefix(const std::string& prefix);
    void zero_grads();
    void init_params(Rng& rng);

    std::vector<NamedArray> export_arrays() const;
    /// Loads arrays by name; throws FormatError on unknown name/shape mismatch.
    void import_arrays(const std::vector<NamedArray>& arrays);
    std::string digest() const;
    std::string digest_with_prefix(const std::string& prefix) const;

    size_t n_layers() const { return layers_.size(); }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// SGD with classical momentum. Velocity slots exist only for the blocks the
/// optimizer was built over, so a frozen backbone never acquires state.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<ParamBlock*> blocks, real lr, real momentum = 0.9);
    void step(real grad_scale);
    const std::vector<ParamBlock*>& blocks() const { return blocks_; }

private:
    std::vector<ParamBlock*> blocks_;
    std::vector<std::vector<real>> velocity_;
    real lr_, momentum_;
};

inline real sigmoid(real z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace doll
