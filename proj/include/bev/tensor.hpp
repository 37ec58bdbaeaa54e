#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "bev/common.hpp"

namespace bev {

template <class S>
class Tape;

/// Dense row-major tensor. The payload is shared, so copies are cheap; ops
/// never mutate operand data. A tensor is either a constant or bound to one
/// tape node (bound == participates in gradients).
template <class S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<S>>(checked_numel(shape_), S(0))) {}

    Tensor(std::vector<int> shape, std::vector<S> values) : shape_(std::move(shape)) {
        BEV_CHECK(static_cast<long long>(values.size()) == checked_numel(shape_),
                  "tensor: ", values.size(), " values do not fill shape ", shape_str(shape_));
        data_ = std::make_shared<std::vector<S>>(std::move(values));
    }

    static Tensor full(std::vector<int> shape, S v) {
        Tensor t(std::move(shape));
        for (S& x : *t.data_) x = v;
        return t;
    }

    static Tensor scalar(S v) { return Tensor({}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    long long numel() const { return data_ ? static_cast<long long>(data_->size()) : 0; }
    bool defined() const { return static_cast<bool>(data_); }

    const S* data() const { return data_->data(); }
    S* data() { return data_->data(); }
    const std::vector<S>& vec() const { return *data_; }

    S value() const {
        BEV_CHECK(numel() == 1, "value(): tensor has ", numel(), " elements, expected 1");
        return (*data_)[0];
    }

    bool on_tape() const { return tape_ != nullptr; }
    Tape<S>* tape() const { return tape_; }
    int node() const { return node_; }

    /// Same payload and tape node under a different shape; the gradient
    /// buffer of a node is layout-free, so no new node is needed.
    Tensor reshaped_view(std::vector<int> shape) const {
        Tensor out = *this;
        out.shape_ = std::move(shape);
        return out;
    }

private:
    friend class Tape<S>;

    static long long checked_numel(const std::vector<int>& shape) {
        long long n = 1;
        for (int e : shape) {
            BEV_CHECK(e > 0, "tensor: non-positive extent in shape ", shape_str(shape));
            n *= e;
        }
        return n;
    }

    std::vector<int> shape_;
    std::shared_ptr<std::vector<S>> data_;
    Tape<S>* tape_ = nullptr;
    int node_ = -1;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Reverse-mode tape. Operations append nodes in execution order; backward
/// replays them once in reverse, accumulating gradients into per-node
/// buffers. Single-owner: one logical thread records and runs backward.
template <class S>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Binds a constant tensor to this tape as a differentiable leaf. The
    /// payload is shared with the input, not copied.
    Tensor<S> leaf(const Tensor<S>& t) {
        BEV_CHECK(t.defined(), "leaf: undefined tensor");
        BEV_CHECK(!t.on_tape(), "leaf: tensor is already bound to a tape");
        Tensor<S> bound = t;
        bound.tape_ = this;
        bound.node_ = add_node(t.numel(), {});
        return bound;
    }

    /// Records one operation: `out` becomes a tape node whose backward pass
    /// runs `pull(tape, node)` — read the node's gradient via grad_view(node)
    /// and accumulate into the inputs' grad_buf.
    Tensor<S> emit(Tensor<S> out, std::function<void(Tape&, int)> pull) {
        BEV_CHECK(!ran_, "tape: cannot record after backward");
        out.tape_ = this;
        out.node_ = add_node(out.numel(), std::move(pull));
        return out;
    }

    /// Gradient buffer for a node, allocated as zeros on first touch.
    std::vector<S>& grad_buf(int node) {
        auto& g = grads_[static_cast<size_t>(node)];
        if (g.empty()) g.assign(static_cast<size_t>(numel_[static_cast<size_t>(node)]), S(0));
        return g;
    }

    /// Read-only gradient view; empty vector means an all-zero gradient.
    const std::vector<S>& grad_view(int node) const { return grads_[static_cast<size_t>(node)]; }

    const std::vector<S>& grad_view(const Tensor<S>& t) const {
        BEV_CHECK(t.on_tape() && t.tape() == this, "grad: tensor is not bound to this tape");
        return grads_[static_cast<size_t>(t.node())];
    }

    /// Materialized gradient of a bound tensor (zeros if nothing flowed).
    std::vector<S> grad(const Tensor<S>& t) const {
        const auto& g = grad_view(t);
        if (!g.empty()) return g;
        return std::vector<S>(static_cast<size_t>(t.numel()), S(0));
    }

    /// Reverse accumulation from a scalar loss. One backward per tape.
    void backward(const Tensor<S>& loss) {
        BEV_CHECK(!ran_, "tape: backward already ran for this forward episode");
        BEV_CHECK(loss.on_tape() && loss.tape() == this, "backward: loss is not on this tape");
        BEV_CHECK(loss.numel() == 1, "backward: loss must be scalar, got shape ",
                  shape_str(loss.shape()));
        ran_ = true;
        grad_buf(loss.node())[0] = S(1);
        for (int i = static_cast<int>(pulls_.size()) - 1; i >= 0; --i) {
            if (grads_[static_cast<size_t>(i)].empty()) continue;  // nothing flowed here
            if (pulls_[static_cast<size_t>(i)]) pulls_[static_cast<size_t>(i)](*this, i);
        }
    }

    bool ran() const { return ran_; }
    int size() const { return static_cast<int>(pulls_.size()); }

private:
    int add_node(long long numel, std::function<void(Tape&, int)> pull) {
        numel_.push_back(numel);
        pulls_.push_back(std::move(pull));
        grads_.emplace_back();
        return static_cast<int>(pulls_.size()) - 1;
    }

    std::vector<long long> numel_;
    std::vector<std::function<void(Tape&, int)>> pulls_;
    std::vector<std::vector<S>> grads_;
    bool ran_ = false;
};

}  // namespace bev
