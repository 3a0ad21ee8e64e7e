#include "rectseg/hypothesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace rectseg {

CropSpec enumerate_crops(int height, int width, double ratio) {
    if (ratio <= 0.0 || ratio > 1.0)
        throw std::invalid_argument("enumerate_crops: ratio must be in (0, 1]");
    CropSpec spec;
    spec.window_h = static_cast<int>(std::ceil(ratio * height));
    spec.window_w = static_cast<int>(std::ceil(ratio * width));
    if (spec.window_h < 1 || spec.window_w < 1)
        throw std::invalid_argument("enumerate_crops: window smaller than 1 pixel");
    if (spec.window_h > height) spec.window_h = height;
    if (spec.window_w > width) spec.window_w = width;
    spec.stride_h = std::max(1, spec.window_h / 2);
    spec.stride_w = std::max(1, spec.window_w / 2);

    auto positions = [](int extent, int window, int stride) {
        std::vector<int> xs;
        for (int p = 0; p + window <= extent; p += stride) xs.push_back(p);
        const int last = extent - window;  // clamp so the far border is covered
        if (xs.empty() || xs.back() != last) xs.push_back(last);
        return xs;
    };
    std::set<CropBox> seen;
    for (int y : positions(height, spec.window_h, spec.stride_h))
        for (int x : positions(width, spec.window_w, spec.stride_w)) {
            CropBox b{y, x, spec.window_h, spec.window_w};
            if (seen.insert(b).second) spec.boxes.push_back(b);
        }
    return spec;
}

Tensor resize_bilinear(const Tensor& pixels, int out_h, int out_w) {
    const int h = static_cast<int>(pixels.dim(0)), w = static_cast<int>(pixels.dim(1)),
              ch = static_cast<int>(pixels.dim(2));
    Tensor out({static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w),
                static_cast<std::size_t>(ch)});
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const double fy = (y + 0.5) * h / out_h - 0.5;
            const double fx = (x + 0.5) * w / out_w - 0.5;
            const int y0 = std::max(0, std::min(h - 1, static_cast<int>(std::floor(fy))));
            const int x0 = std::max(0, std::min(w - 1, static_cast<int>(std::floor(fx))));
            const int y1 = std::min(h - 1, y0 + 1);
            const int x1 = std::min(w - 1, x0 + 1);
            const double wy = std::max(0.0, std::min(1.0, fy - y0));
            const double wx = std::max(0.0, std::min(1.0, fx - x0));
            for (int k = 0; k < ch; ++k) {
                const double v = (1 - wy) * ((1 - wx) * pixels.at(y0, x0, k) +
                                             wx * pixels.at(y0, x1, k)) +
                                 wy * ((1 - wx) * pixels.at(y1, x0, k) +
                                       wx * pixels.at(y1, x1, k));
                out.at(y, x, k) = v;
            }
        }
    return out;
}

ImageRecord extract_crop(const ImageRecord& image, const CropBox& box, int resize_to) {
    Tensor crop({static_cast<std::size_t>(box.h), static_cast<std::size_t>(box.w), 3});
    for (int y = 0; y < box.h; ++y)
        for (int x = 0; x < box.w; ++x)
            for (int k = 0; k < 3; ++k)
                crop.at(y, x, k) = image.pixels.at(box.y + y, box.x + x, k);
    ImageRecord out;
    out.id = image.id + "#crop" + std::to_string(box.y) + "_" + std::to_string(box.x);
    out.pixels = resize_to > 0 ? resize_bilinear(crop, resize_to, resize_to) : std::move(crop);
    return out;
}

int detect_per_crop(const ImageRecord& crop, const EncoderBundle& enc,
                    const QueryTextFeatures& wq) {
    const Tensor g = enc.encode_image_global(crop);
    const double ng = l2_norm(g);
    const std::size_t c = wq.wq.dim(0), d = wq.wq.dim(1);
    int best = 0;
    double best_s = -1e300;
    for (std::size_t k = 0; k < c; ++k) {
        double dp = 0.0, nw = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dp += g[j] * wq.wq.at(k, j);
            nw += wq.wq.at(k, j) * wq.wq.at(k, j);
        }
        const double s = dp / (ng * std::sqrt(nw) + 1e-12);
        if (s > best_s) {  // strict: ties keep the lowest index
            best_s = s;
            best = static_cast<int>(k);
        }
    }
    return best;
}

LabelHypothesis build_hypothesis(const ImageRecord& image, const EncoderBundle& enc,
                                 const QueryTextFeatures& wq, double ratio, double threshold) {
    if (threshold < 0.0 || threshold >= 1.0)
        throw std::invalid_argument("build_hypothesis: threshold must be in [0, 1)");
    const CropSpec crops = enumerate_crops(image.height(), image.width(), ratio);
    const std::size_t c = wq.wq.dim(0);
    LabelHypothesis hyp;
    hyp.freq = Tensor({c});
    for (const CropBox& box : crops.boxes) {
        const ImageRecord crop = extract_crop(image, box, enc.preferred_input_size());
        hyp.freq[detect_per_crop(crop, enc, wq)] += 1.0;
    }
    for (std::size_t k = 0; k < c; ++k) hyp.freq[k] /= static_cast<double>(crops.boxes.size());
    for (std::size_t k = 0; k < c; ++k)
        if (hyp.freq[k] > threshold) hyp.classes.push_back(static_cast<int>(k));
    if (hyp.classes.empty()) {
        // Fallback: whole-image top-1 keeps the hypothesis nonempty.
        hyp.classes.push_back(detect_per_crop(image, enc, wq));
    }
    return hyp;
}

const LabelHypothesis& HypothesisCache::get_or_compute(const ImageRecord& image,
                                                       const EncoderBundle& enc,
                                                       const QueryTextFeatures& wq, double ratio,
                                                       double threshold) {
    Key key{image.id, query_fingerprint(wq), ratio, threshold};
    auto it = entries_.find(key);
    if (it == entries_.end())
        it = entries_.emplace(key, build_hypothesis(image, enc, wq, ratio, threshold)).first;
    return it->second;
}

namespace {
constexpr char kCacheMagic[8] = {'R', 'S', 'H', 'Y', 'P', '0', '0', '1'};
}

void HypothesisCache::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write hypothesis cache: " + path);
    f.write(kCacheMagic, sizeof(kCacheMagic));
    const std::uint64_t count = entries_.size();
    f.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& [key, hyp] : entries_) {
        const std::uint64_t idlen = key.id.size();
        f.write(reinterpret_cast<const char*>(&idlen), sizeof(idlen));
        f.write(key.id.data(), static_cast<std::streamsize>(idlen));
        f.write(reinterpret_cast<const char*>(&key.wq_fp), sizeof(key.wq_fp));
        f.write(reinterpret_cast<const char*>(&key.ratio), sizeof(key.ratio));
        f.write(reinterpret_cast<const char*>(&key.threshold), sizeof(key.threshold));
        const std::uint64_t c = hyp.freq.size();
        f.write(reinterpret_cast<const char*>(&c), sizeof(c));
        f.write(reinterpret_cast<const char*>(hyp.freq.data()),
                static_cast<std::streamsize>(c * sizeof(double)));
        const std::uint64_t nc = hyp.classes.size();
        f.write(reinterpret_cast<const char*>(&nc), sizeof(nc));
        for (int k : hyp.classes) {
            const std::int32_t ki = k;
            f.write(reinterpret_cast<const char*>(&ki), sizeof(ki));
        }
    }
}

void HypothesisCache::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read hypothesis cache: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0)
        throw std::runtime_error("hypothesis cache " + path + ": bad magic/version");
    std::uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof(count));
    entries_.clear();
    for (std::uint64_t i = 0; i < count; ++i) {
        Key key;
        std::uint64_t idlen = 0;
        f.read(reinterpret_cast<char*>(&idlen), sizeof(idlen));
        key.id.resize(idlen);
        f.read(key.id.data(), static_cast<std::streamsize>(idlen));
        f.read(reinterpret_cast<char*>(&key.wq_fp), sizeof(key.wq_fp));
        f.read(reinterpret_cast<char*>(&key.ratio), sizeof(key.ratio));
        f.read(reinterpret_cast<char*>(&key.threshold), sizeof(key.threshold));
        std::uint64_t c = 0;
        f.read(reinterpret_cast<char*>(&c), sizeof(c));
        LabelHypothesis hyp;
        hyp.freq = Tensor({static_cast<std::size_t>(c)});
        f.read(reinterpret_cast<char*>(hyp.freq.data()),
               static_cast<std::streamsize>(c * sizeof(double)));
        std::uint64_t nc = 0;
        f.read(reinterpret_cast<char*>(&nc), sizeof(nc));
        for (std::uint64_t k = 0; k < nc; ++k) {
            std::int32_t ki = 0;
            f.read(reinterpret_cast<char*>(&ki), sizeof(ki));
            hyp.classes.push_back(ki);
        }
        if (!f) throw std::runtime_error("hypothesis cache " + path + ": truncated");
        entries_.emplace(std::move(key), std::move(hyp));
    }
}

std::uint64_t query_fingerprint(const QueryTextFeatures& wq) {
    return fingerprint_tensor(wq.wq) ^ wq.vocab_fp;
}

}  // namespace rectseg
