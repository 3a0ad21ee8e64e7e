#pragma once

#include "rectseg/hypothesis.hpp"

namespace rectseg {

constexpr double kPoolEps = 1e-6;
constexpr double kCosineEps = 1e-8;

/// Mask-weighted class averages of the patch features (C x D). Rows whose
/// mask is (near) empty are flagged rather than silently zeroed.
struct MaskedClassFeatures {
    Tensor zg;
    std::vector<bool> valid;
};

/// Cosine similarities between pooled class features and query rows.
struct SimilarityMatrix {
    Tensor s;  // entries in [-1, 1]
};

MaskedClassFeatures masked_pool(const PatchFeatureMap& z, const SemanticMask& mask);
std::vector<bool> mask_validity(const Tensor& mask_values, bool hard);

SimilarityMatrix cosine_similarities(const MaskedClassFeatures& zg, const QueryTextFeatures& wq);

/// L = -(1/|H|) sum_{k in H} log softmax(S[k,:] / tau)[k], log-sum-exp
/// stabilized. Throws on an empty hypothesis.
double contrastive_loss(const SimilarityMatrix& s, const LabelHypothesis& hyp, double tau);

}  // namespace rectseg
