#pragma once

#include <string>
#include <vector>

#include "rectseg/backbone.hpp"
#include "rectseg/synth.hpp"

namespace rectseg {

/// Deterministic stand-in for a pretrained vision-language encoder.
///
/// It recovers planted classes from pixel colors (via the shared palette)
/// and emits per-class prototype features, with bias injected on purpose:
/// class_confusion mixes in a confused class's prototype, spatial_decay
/// shrinks feature norms away from the image center, and noise_scale adds
/// seeded per-patch noise. Everything is a pure function of (spec, input).
struct ToyEncoderSpec {
    int feature_dim = 32;
    int word_dim = 32;        // must equal feature_dim for the toy text path
    int positional_dim = 32;  // multiple of 4 (sinusoidal x/y pairs)
    int patch = 16;
    Tensor prototypes;       // (C x D)
    Tensor class_colors;     // (C x 3)
    Tensor class_confusion;  // (C x C), row c adds alpha * prototype[b]
    double spatial_decay = 0.0;  // feature norm scale: 1 - decay * center distance
    double noise_scale = 0.0;
    double text_jitter = 0.0;  // contribution of non-class words to encode_text
    std::uint64_t seed = 0;

    /// Orthonormal basis prototypes over the palette's classes.
    static ToyEncoderSpec basis(const ScenePalette& palette, int feature_dim);

    void validate() const;

    int num_classes() const { return static_cast<int>(prototypes.dim(0)); }
};

class ToyEncoder final : public EncoderBundle {
public:
    ToyEncoder(ToyEncoderSpec spec, const ClassVocabulary& vocab);

    int feature_dim() const override { return spec_.feature_dim; }
    int word_dim() const override { return spec_.word_dim; }
    int positional_dim() const override { return spec_.positional_dim; }
    int patch_size() const override { return spec_.patch; }

    PatchFeatureMap encode_image_patches(const ImageRecord& image) const override;
    Tensor encode_image_global(const ImageRecord& image) const override;
    Tensor encode_text(const std::string& text) const override;
    Var encode_text_context(Tape& tape, Var context, int class_index) const override;
    Tensor positional_embedding(const PatchGrid& grid) const override;
    std::uint64_t state_hash() const override;

    const ToyEncoderSpec& spec() const { return spec_; }

private:
    int dominant_patch_class(const ImageRecord& image, int py, int px) const;
    Tensor class_feature(int cls) const;  // prototype + confusion mix

    ToyEncoderSpec spec_;
    std::vector<std::string> names_;
};

}  // namespace rectseg
