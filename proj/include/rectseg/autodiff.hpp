#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "rectseg/tensor.hpp"

namespace rectseg {

struct PatchGrid;
class Tape;

/// Handle into a Tape node. Valid only while the owning Tape is alive.
class Var {
public:
    Var() = default;
    const Tensor& value() const;
    const Tensor& grad() const;
    bool requires_grad() const;
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Per-channel normalization statistics for the mask decoder.
struct BatchNormStats {
    Tensor running_mean;
    Tensor running_var;
};

/// Reverse-mode autodiff over Tensor values.
///
/// Nodes are appended in topological order, so backward() is a single
/// reverse sweep. One tape per training step; gradients of the leaves are
/// read off afterwards. Op kernels are exposed as static functions so the
/// no-grad inference path shares the exact arithmetic.
class Tape {
public:
    Var input(Tensor value, bool requires_grad = false);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    /// m (r x c) with v (c) added to every row.
    Var add_rowvec(Var m, Var v);
    /// a (m x k) times b (n x k) transposed -> (m x n).
    Var matmul_nt(Var a, Var b);
    /// (r x c) -> (c), mean over rows.
    Var mean_rows(Var m);
    /// v / (|v| + eps). Maps the zero vector to zero.
    Var l2_normalize(Var v, double eps);
    /// Stack C vectors of dim D into (C x D).
    Var stack_rows(const std::vector<Var>& rows);
    /// (n x C) patch-major -> (C x h x w), n = h*w row-major.
    Var nc_to_chw(Var m, const PatchGrid& grid);
    /// Inverse of nc_to_chw.
    Var chw_to_nc(Var x);
    Var concat_channels(Var a, Var b);
    /// x (Cin x H x W), w (Cout x Cin x kh x kw), bias (Cout); zero padding.
    Var conv2d(Var x, Var w, Var b, int pad);
    /// Per-channel normalization over the spatial grid. In batch-stats mode
    /// the statistics come from x (optionally folded into running stats);
    /// otherwise the provided running stats are used.
    Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats* stats, bool use_batch_stats,
                  bool update_running, double momentum, double eps);
    /// Row-wise softmax of x / tau.
    Var softmax_rows(Var x, double tau);
    /// Forward: one-hot argmax per row (ties -> lowest index).
    /// Backward: gradient passes through unchanged.
    Var straight_through_onehot(Var soft);
    /// mask (n x C), z (n x D, constant) -> (C x D) mask-weighted row means.
    Var masked_pool(Var mask, const Tensor& z, double eps);
    /// a (K x D), b (C x D) -> (K x C) cosine similarities.
    Var cosine_rows(Var a, Var b, double eps);
    /// Softmax-anchored contrastive objective over rows `anchors` of the
    /// square similarity matrix s; returns a scalar.
    Var contrastive(Var s, const std::vector<int>& anchors, double tau);

    /// Seeds d(root)/d(root) = 1 and sweeps the tape in reverse.
    void backward(Var root);

    std::size_t node_count() const { return nodes_.size(); }

    // Shared arithmetic kernels (also used by the no-grad path).
    static Tensor k_matmul_nt(const Tensor& a, const Tensor& b);
    static Tensor k_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad);
    static Tensor k_softmax_rows(const Tensor& x, double tau);
    static Tensor k_onehot_rows(const Tensor& soft);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::vector<std::size_t> parents;
        // Accumulates into parents' grads given this node's grad.
        std::function<void(Tape&, std::size_t)> back;
    };

    friend class Var;

    std::size_t push(Tensor value, std::vector<std::size_t> parents,
                     std::function<void(Tape&, std::size_t)> back);
    Node& node(std::size_t id) { return nodes_[id]; }
    const Node& node(std::size_t id) const { return nodes_[id]; }
    Tensor& grad_of(std::size_t id);
    bool any_requires(const std::vector<std::size_t>& ids) const;

    std::vector<Node> nodes_;
};

}  // namespace rectseg
