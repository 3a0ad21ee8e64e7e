#pragma once

#include "rectseg/bias.hpp"

namespace rectseg {

/// 5x5 convolution over [rectified logits ; visual features] followed by
/// a per-channel normalization layer with running statistics. Output
/// spatial shape equals the input patch grid (zero padding of 2).
struct MaskDecoder {
    Tensor conv_w;  // (C x (D + C) x 5 x 5)
    Tensor conv_b;  // (C)
    Tensor gamma;   // (C)
    Tensor beta;    // (C)
    BatchNormStats stats;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
    bool training = false;

    static constexpr int kKernel = 5;
    static constexpr int kPad = 2;

    int classes() const { return static_cast<int>(conv_w.dim(0)); }
    int in_channels() const { return static_cast<int>(conv_w.dim(1)); }

    /// Identity center tap on the logit channels plus small noise, so an
    /// untrained decoder roughly passes the rectified logits through.
    static MaskDecoder init(int feature_dim, int classes, RandomStream& rng,
                            double noise_std = 0.01);
    /// Exact pass-through: center tap = 1 on logit channels, everything
    /// else zero, fresh unit normalization stats, eval mode.
    static MaskDecoder identity(int feature_dim, int classes);
};

/// M = M_q - M_b (default) or M_q + M_b (ablation).
LogitMap rectify_logits(const LogitMap& mq, const LogitMap& mb, BiasCombine mode);

/// M_o: concat(M, Z) -> 5x5 conv -> normalization -> flatten to n x C.
LogitMap decode(const LogitMap& m, const PatchFeatureMap& z, MaskDecoder& dec);
/// Tape-building variant. When `update_running` is set, training-mode
/// statistics are folded into dec.stats.
Var decode_var(Tape& tape, Var m, const PatchFeatureMap& z, Var conv_w, Var conv_b, Var gamma,
               Var beta, MaskDecoder& dec, bool update_running);

/// Gumbel-Softmax mask: softmax((M_o + G) / tau) per row; hard mode emits
/// one-hot rows with straight-through gradients.
SemanticMask gumbel_mask(const LogitMap& mo, double tau, bool hard, RandomStream& rng);
/// Explicit-noise variant (tests use zero noise).
SemanticMask gumbel_mask_with_noise(const LogitMap& mo, double tau, bool hard,
                                    const Tensor& noise);
Var gumbel_mask_var(Tape& tape, Var mo, double tau, bool hard, const Tensor& noise);

Tensor sample_gumbel_noise(std::size_t rows, std::size_t cols, RandomStream& rng);

/// Row-wise argmax with lowest-index tie-break.
std::vector<std::int32_t> argmax_rows(const Tensor& logits);

/// Patch labels -> pixel labels by nearest-neighbor replication.
std::vector<std::int32_t> upsample_nearest(const std::vector<std::int32_t>& patch_labels,
                                           const PatchGrid& grid, int height, int width);
/// Bilinear interpolation of the logit planes, then per-pixel argmax.
std::vector<std::int32_t> upsample_bilinear_argmax(const Tensor& logits, const PatchGrid& grid,
                                                   int height, int width);

/// Full deterministic inference: encode, query and bias logits, rectify,
/// decode (eval mode), per-patch argmax, upsample to pixels. No Gumbel
/// noise is drawn.
std::vector<std::int32_t> infer(const ImageRecord& image, const EncoderBundle& enc,
                                const QueryTextFeatures& wq, const ReferenceTextFeatures& wr,
                                const PositionalProjection& proj, const MaskDecoder& dec,
                                BiasCombine mode, UpsampleMode upsample);

}  // namespace rectseg
