#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rectseg/autodiff.hpp"
#include "rectseg/types.hpp"

namespace rectseg {

/// Patch-level visual features Z (n x D) with their grid.
struct PatchFeatureMap {
    Tensor z;
    PatchGrid grid;
};

/// Per-class text embeddings from the fixed query templates (C x D),
/// each row a unit-normalized mean over template embeddings.
struct QueryTextFeatures {
    Tensor wq;
    std::vector<std::string> templates;
    std::uint64_t vocab_fp = 0;
};

/// Frozen vision-language encoder pair. Implementations must be
/// deterministic given their inputs and must never mutate internal state
/// from encode calls; state_hash() makes the frozen contract checkable.
class EncoderBundle {
public:
    virtual ~EncoderBundle() = default;

    virtual int feature_dim() const = 0;     // D
    virtual int word_dim() const = 0;        // dimension of learnable word embeddings
    virtual int positional_dim() const = 0;  // dimension of the positional embedding
    virtual int patch_size() const = 0;
    /// Square input size the encoder expects; 0 means any size is accepted.
    virtual int preferred_input_size() const { return 0; }

    virtual PatchFeatureMap encode_image_patches(const ImageRecord& image) const = 0;
    virtual Tensor encode_image_global(const ImageRecord& image) const = 0;
    /// Plain-string text path (used for the fixed query templates).
    virtual Tensor encode_text(const std::string& text) const = 0;
    /// Differentiable text path: a learnable context block (L x word_dim)
    /// followed by the class-name embedding. Gradients flow to `context`.
    virtual Var encode_text_context(Tape& tape, Var context, int class_index) const = 0;
    /// Frozen positional embedding for a patch grid, class-token slot
    /// excluded: (n x positional_dim).
    virtual Tensor positional_embedding(const PatchGrid& grid) const = 0;

    virtual std::uint64_t state_hash() const = 0;
};

/// Ensemble the templates per class: row c is the unit-normalized mean of
/// encode_text(template with [CLS] replaced by names[c]). Throws if a
/// template lacks the [CLS] placeholder or a mean collapses to near zero.
QueryTextFeatures build_query_features(const ClassVocabulary& vocab,
                                       const std::vector<std::string>& templates,
                                       const EncoderBundle& enc);

/// M_q = Z . W_q^T  (n x C).
LogitMap query_logits(const PatchFeatureMap& z, const QueryTextFeatures& wq);

std::string apply_template(const std::string& tmpl, const std::string& class_name);

}  // namespace rectseg
