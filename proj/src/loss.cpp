#include "rectseg/loss.hpp"

namespace rectseg {

std::vector<bool> mask_validity(const Tensor& mask_values, bool hard) {
    const std::size_t n = mask_values.dim(0), c = mask_values.dim(1);
    const double cutoff = hard ? 0.5 : kPoolEps;
    std::vector<bool> valid(c, false);
    for (std::size_t k = 0; k < c; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += mask_values.at(i, k);
        valid[k] = s > cutoff;
    }
    return valid;
}

MaskedClassFeatures masked_pool(const PatchFeatureMap& z, const SemanticMask& mask) {
    if (z.z.dim(0) != mask.values.dim(0) || !(z.grid == mask.grid))
        throw std::invalid_argument("masked_pool: shape mismatch z" + z.z.shape_str() + " mask" +
                                    mask.values.shape_str());
    Tape tape;
    Var pooled = tape.masked_pool(tape.input(mask.values), z.z, kPoolEps);
    MaskedClassFeatures out;
    out.zg = pooled.value();
    out.valid = mask_validity(mask.values, mask.hard);
    require_finite(out.zg, "masked class features");
    return out;
}

SimilarityMatrix cosine_similarities(const MaskedClassFeatures& zg, const QueryTextFeatures& wq) {
    Tape tape;
    Var s = tape.cosine_rows(tape.input(zg.zg), tape.input(wq.wq), kCosineEps);
    SimilarityMatrix out;
    out.s = s.value();
    require_finite(out.s, "similarity matrix");
    return out;
}

double contrastive_loss(const SimilarityMatrix& s, const LabelHypothesis& hyp, double tau) {
    Tape tape;
    Var loss = tape.contrastive(tape.input(s.s), hyp.classes, tau);
    return loss.value()[0];
}

}  // namespace rectseg
