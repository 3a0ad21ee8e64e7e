#pragma once

#include "rectseg/rectify.hpp"

namespace rectseg {

/// Everything learnable plus the frozen query head. Encoders are not part
/// of the model state; they are passed in and never updated.
struct ModelState {
    ClassVocabulary vocab;
    RunConfig cfg;
    QueryTextFeatures wq;         // template ensemble; fixed unless query_learnable
    ReferencePrompt prompt;       // reference context (class-preference side)
    ReferencePrompt query_prompt; // used only when cfg.query_learnable
    PositionalProjection proj;
    MaskDecoder decoder;

    /// Current query features: the fixed template ensemble, or the
    /// learnable prompt passed through the encoder's text path.
    QueryTextFeatures query_features(const EncoderBundle& enc) const;
};

ModelState init_model(const ClassVocabulary& vocab, const RunConfig& cfg,
                      const EncoderBundle& enc, RandomStream& init_rng);

/// Reference features with all-zero W_r: bias logits vanish and the
/// pipeline reduces to the plain query baseline.
ReferenceTextFeatures zero_reference(const ClassVocabulary& vocab, int feature_dim);

}  // namespace rectseg
