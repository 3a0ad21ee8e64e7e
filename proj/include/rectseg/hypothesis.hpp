#pragma once

#include <map>
#include <tuple>

#include "rectseg/backbone.hpp"

namespace rectseg {

struct CropBox {
    int y = 0, x = 0, h = 0, w = 0;
    bool operator<(const CropBox& o) const {
        return std::tie(y, x, h, w) < std::tie(o.y, o.x, o.h, o.w);
    }
    bool operator==(const CropBox& o) const {
        return y == o.y && x == o.x && h == o.h && w == o.w;
    }
};

/// Sliding-window layout: window = ceil(r * side), stride = half window
/// (at least 1), last row/column clamped so the borders are covered.
struct CropSpec {
    int window_h = 0, window_w = 0;
    int stride_h = 0, stride_w = 0;
    std::vector<CropBox> boxes;
};

/// Set of classes estimated present in one image plus per-class detection
/// fractions f(k) over the crops.
struct LabelHypothesis {
    std::vector<int> classes;  // sorted ascending
    Tensor freq;               // (C)

    bool contains(int k) const {
        for (int c : classes)
            if (c == k) return true;
        return false;
    }
};

CropSpec enumerate_crops(int height, int width, double ratio);

/// Extract a crop (pixels only), resized to the encoder's preferred input
/// size when it declares one.
ImageRecord extract_crop(const ImageRecord& image, const CropBox& box, int resize_to);

/// Highest cosine similarity between the crop's global feature and the
/// query rows; ties -> lowest class index.
int detect_per_crop(const ImageRecord& crop, const EncoderBundle& enc,
                    const QueryTextFeatures& wq);

/// f(k) = (#crops detecting k) / (#crops); classes = {k : f(k) > t}.
/// Falls back to the whole-image top-1 class when the set comes out
/// empty, so the hypothesis is never empty.
LabelHypothesis build_hypothesis(const ImageRecord& image, const EncoderBundle& enc,
                                 const QueryTextFeatures& wq, double ratio, double threshold);

/// Bilinear resize of the pixel planes (ground truth dropped).
Tensor resize_bilinear(const Tensor& pixels, int out_h, int out_w);

/// Hypotheses keyed by (image id, W_q fingerprint, r, t); single writer.
class HypothesisCache {
public:
    const LabelHypothesis& get_or_compute(const ImageRecord& image, const EncoderBundle& enc,
                                          const QueryTextFeatures& wq, double ratio,
                                          double threshold);
    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    /// Versioned binary persistence.
    void save(const std::string& path) const;
    void load(const std::string& path);

private:
    struct Key {
        std::string id;
        std::uint64_t wq_fp;
        double ratio;
        double threshold;
        bool operator<(const Key& o) const {
            return std::tie(id, wq_fp, ratio, threshold) <
                   std::tie(o.id, o.wq_fp, o.ratio, o.threshold);
        }
    };
    std::map<Key, LabelHypothesis> entries_;
};

std::uint64_t query_fingerprint(const QueryTextFeatures& wq);

}  // namespace rectseg
