#pragma once

#include "rectseg/backbone.hpp"

namespace rectseg {

/// Learnable prompt context shared across all classes: L word embeddings
/// prepended to each class name before the text encoder.
struct ReferencePrompt {
    Tensor context;  // (L x word_dim)

    int length() const { return static_cast<int>(context.dim(0)); }
    int word_dim() const { return static_cast<int>(context.dim(1)); }

    /// Zero-mean Gaussian init (std 0.02) from the given stream.
    static ReferencePrompt init(int length, int word_dim, RandomStream& rng, double std = 0.02);
    /// All-zero context (contributes nothing through the toy text path).
    static ReferencePrompt zeros(int length, int word_dim);
};

/// Class-conditioned text features from the learnable prompt (C x D).
/// Depends only on the prompt state and vocabulary, never on any image.
struct ReferenceTextFeatures {
    Tensor wr;
    std::uint64_t vocab_fp = 0;
};

/// One-layer 1x1 convolution mapping the frozen positional embedding to
/// the feature space; carries no class information.
struct PositionalProjection {
    Tensor weight;  // (D x pe_dim)
    Tensor bias;    // (D)

    /// Small random weights (std 0.01), zero bias: the bias logit map
    /// starts near zero so early training sits near the baseline.
    static PositionalProjection init(int feature_dim, int pe_dim, RandomStream& rng,
                                     double std = 0.01);
};

/// W_r rows via the encoder's differentiable text path. Throws when the
/// context length exceeds the 73-slot budget.
ReferenceTextFeatures encode_reference(const ReferencePrompt& prompt,
                                       const ClassVocabulary& vocab, const EncoderBundle& enc);
/// Tape-building variant; gradients flow to `context`.
Var encode_reference_var(Tape& tape, Var context, const ClassVocabulary& vocab,
                         const EncoderBundle& enc);

/// W_p[i] = weight . p[i] + bias per patch. `grid` pins the expected row
/// count of the positional embedding.
Tensor encode_positional(const Tensor& pe, const PositionalProjection& proj,
                         const PatchGrid& grid);
Var encode_positional_var(Tape& tape, const Tensor& pe, Var weight, Var bias,
                          const PatchGrid& grid);

/// M_b = W_p . W_r^T  (n x C).
LogitMap bias_logits(const Tensor& wp, const ReferenceTextFeatures& wr, const PatchGrid& grid);

/// Ablation helpers: replace every row by the row mean, which disables
/// the corresponding preference while keeping shapes intact.
Tensor pool_expand_class(const Tensor& wr);  // mean over classes
Tensor pool_expand_space(const Tensor& wp);  // mean over patches

void check_prompt_budget(int length);

}  // namespace rectseg
