#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rectseg/random.hpp"
#include "rectseg/tensor.hpp"

namespace rectseg {

/// Label value excluded from every metric.
constexpr std::int32_t kIgnoreLabel = 255;

/// Ordered class names; the index order is the canonical class-channel
/// order everywhere in the pipeline. The fingerprint travels with every
/// class-indexed array so mismatched orderings fail loudly.
class ClassVocabulary {
public:
    static ClassVocabulary from_names(std::vector<std::string> names);

    int size() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }
    const std::string& name(int c) const { return names_.at(static_cast<std::size_t>(c)); }
    std::uint64_t fingerprint() const { return fingerprint_; }
    /// -1 when absent.
    int index_of(const std::string& name) const;

private:
    std::vector<std::string> names_;
    std::uint64_t fingerprint_ = 0;
};

struct PatchGrid {
    int rows = 0;
    int cols = 0;
    int count() const { return rows * cols; }
    bool operator==(const PatchGrid& o) const { return rows == o.rows && cols == o.cols; }
};

/// One image: H x W x 3 pixels in [0,1] plus an optional ground-truth
/// index mask (kIgnoreLabel marks excluded pixels).
struct ImageRecord {
    std::string id;
    Tensor pixels;                      // (H x W x 3)
    std::vector<std::int32_t> gt_mask;  // H*W row-major, empty when absent

    int height() const { return static_cast<int>(pixels.dim(0)); }
    int width() const { return static_cast<int>(pixels.dim(1)); }
    bool has_gt() const { return !gt_mask.empty(); }
};

enum class BiasCombine { Subtract, Add };
enum class UpsampleMode { Nearest, BilinearLogits };

/// Hyper-parameters of one run. Defaults follow the standard recipe:
/// poly(0.9) SGD at lr 0.01, crop ratio 1/6, subtractive bias combine,
/// fixed query prompts.
struct RunConfig {
    double tau_contrastive = 0.07;
    double tau_gumbel = 1.0;
    double crop_ratio = 1.0 / 6.0;
    double freq_threshold = 0.0;
    int prompt_length = 73;  // learnable word embeddings per prompt
    double lr = 0.01;
    double weight_decay = 0.0005;
    double poly_power = 0.9;
    int max_iters = 300;
    int batch_size = 8;
    std::uint64_t seed = 0;
    BiasCombine bias_combine = BiasCombine::Subtract;
    bool query_learnable = false;
    bool gumbel_hard = true;
    UpsampleMode upsample = UpsampleMode::BilinearLogits;
    int train_crop = 0;        // square crop side; 0 = full image
    int checkpoint_every = 0;  // 0 = final checkpoint only
    int distance_bins = 10;
    int min_instance_pixels = 16;
    std::vector<std::string> templates = default_templates();

    static std::vector<std::string> default_templates() {
        return {"a photo of a [CLS]", "a good photo of a [CLS]", "a large photo of a [CLS]",
                "a bad photo of a [CLS]"};
    }

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

enum class LogitRole { Query, Bias, Rectified, Decoded };

/// Per-patch per-class scores (n x C).
struct LogitMap {
    Tensor values;  // (n x C)
    PatchGrid grid;
    LogitRole role = LogitRole::Query;
    std::uint64_t vocab_fp = 0;
};

/// Per-patch per-class assignment (n x C); one-hot rows when hard,
/// simplex rows when soft.
struct SemanticMask {
    Tensor values;  // (n x C)
    PatchGrid grid;
    bool hard = true;
    std::uint64_t vocab_fp = 0;
};

/// n x K -> h x w x K, row-major; throws on row-count mismatch.
Tensor reshape_patches(const Tensor& flat, const PatchGrid& grid);
/// h x w x K -> n x K, inverse of reshape_patches.
Tensor flatten_patches(const Tensor& grid_array);

/// Deterministic random stream for a seed; fork() derives substreams.
inline RandomStream seeded_rng(std::uint64_t seed) { return RandomStream(seed); }

/// Order-sensitive FNV-1a over a list of strings.
std::uint64_t fingerprint_strings(const std::vector<std::string>& items);

/// Order-sensitive hash of a tensor's shape and contents.
std::uint64_t fingerprint_tensor(const Tensor& t);

void require_finite(const Tensor& t, const std::string& what);

}  // namespace rectseg
