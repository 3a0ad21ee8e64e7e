#include "rectseg/toy_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace rectseg {

ToyEncoderSpec ToyEncoderSpec::basis(const ScenePalette& palette, int feature_dim) {
    const int c = palette.size();
    if (feature_dim < c)
        throw std::invalid_argument("toy encoder needs feature_dim >= class count");
    ToyEncoderSpec s;
    s.feature_dim = feature_dim;
    s.word_dim = feature_dim;
    s.positional_dim = feature_dim;
    s.prototypes = Tensor({static_cast<std::size_t>(c), static_cast<std::size_t>(feature_dim)});
    for (int i = 0; i < c; ++i) s.prototypes.at(i, i) = 1.0;
    s.class_colors = palette.colors;
    s.class_confusion = Tensor({static_cast<std::size_t>(c), static_cast<std::size_t>(c)});
    return s;
}

void ToyEncoderSpec::validate() const {
    if (prototypes.rank() != 2) throw std::invalid_argument("toy spec: prototypes must be C x D");
    const int c = num_classes();
    if (c < 2) throw std::invalid_argument("toy spec: need at least 2 classes");
    if (prototypes.dim(1) != static_cast<std::size_t>(feature_dim))
        throw std::invalid_argument("toy spec: prototype dim != feature_dim");
    if (word_dim != feature_dim)
        throw std::invalid_argument("toy spec: word_dim must equal feature_dim");
    if (positional_dim % 4 != 0)
        throw std::invalid_argument("toy spec: positional_dim must be a multiple of 4");
    if (class_colors.rank() != 2 || class_colors.dim(0) != static_cast<std::size_t>(c) ||
        class_colors.dim(1) != 3)
        throw std::invalid_argument("toy spec: class_colors must be C x 3");
    if (class_confusion.rank() != 2 || class_confusion.dim(0) != static_cast<std::size_t>(c) ||
        class_confusion.dim(1) != static_cast<std::size_t>(c))
        throw std::invalid_argument("toy spec: class_confusion must be C x C");
    if (patch < 1) throw std::invalid_argument("toy spec: patch must be >= 1");
    // Mutually non-collinear prototypes.
    for (int a = 0; a < c; ++a)
        for (int b = a + 1; b < c; ++b) {
            double dp = 0.0, na = 0.0, nb = 0.0;
            for (int j = 0; j < feature_dim; ++j) {
                dp += prototypes.at(a, j) * prototypes.at(b, j);
                na += prototypes.at(a, j) * prototypes.at(a, j);
                nb += prototypes.at(b, j) * prototypes.at(b, j);
            }
            if (na < 1e-12 || nb < 1e-12 || std::abs(dp) / std::sqrt(na * nb) > 1.0 - 1e-9)
                throw std::invalid_argument("toy spec: prototypes " + std::to_string(a) + " and " +
                                            std::to_string(b) + " are collinear or zero");
        }
}

ToyEncoder::ToyEncoder(ToyEncoderSpec spec, const ClassVocabulary& vocab)
    : spec_(std::move(spec)), names_(vocab.names()) {
    spec_.validate();
    if (spec_.num_classes() != vocab.size())
        throw std::invalid_argument("toy encoder class count != vocabulary size");
}

Tensor ToyEncoder::class_feature(int cls) const {
    const int d = spec_.feature_dim;
    Tensor f({static_cast<std::size_t>(d)});
    for (int j = 0; j < d; ++j) f[j] = spec_.prototypes.at(cls, j);
    for (int b = 0; b < spec_.num_classes(); ++b) {
        const double alpha = spec_.class_confusion.at(cls, b);
        if (alpha == 0.0) continue;
        for (int j = 0; j < d; ++j) f[j] += alpha * spec_.prototypes.at(b, j);
    }
    return f;
}

int ToyEncoder::dominant_patch_class(const ImageRecord& image, int py, int px) const {
    ScenePalette pal;
    pal.colors = spec_.class_colors;
    std::vector<int> counts(spec_.num_classes(), 0);
    for (int y = py * spec_.patch; y < (py + 1) * spec_.patch; ++y)
        for (int x = px * spec_.patch; x < (px + 1) * spec_.patch; ++x)
            counts[pal.nearest_class(image.pixels.at(y, x, 0), image.pixels.at(y, x, 1),
                                     image.pixels.at(y, x, 2))]++;
    int best = 0;
    for (int c = 1; c < spec_.num_classes(); ++c)
        if (counts[c] > counts[best]) best = c;
    return best;
}

PatchFeatureMap ToyEncoder::encode_image_patches(const ImageRecord& image) const {
    const int h = image.height(), w = image.width(), p = spec_.patch;
    if (h < p || w < p)
        throw std::invalid_argument("image " + image.id + " smaller than patch size");
    if (h % p != 0 || w % p != 0)
        throw std::invalid_argument("toy encoder needs image sides divisible by patch size");
    PatchGrid grid{h / p, w / p};
    const int d = spec_.feature_dim;
    Tensor z({static_cast<std::size_t>(grid.count()), static_cast<std::size_t>(d)});
    const double half_diag = 0.5 * std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
    RandomStream image_noise =
        RandomStream(spec_.seed).fork("patch-noise").fork(RandomStream::hash_name(image.id));
    for (int py = 0; py < grid.rows; ++py)
        for (int px = 0; px < grid.cols; ++px) {
            const int cls = dominant_patch_class(image, py, px);
            Tensor f = class_feature(cls);
            const double cy = (py + 0.5) * p, cx = (px + 0.5) * p;
            const double dist = std::sqrt((cy - h / 2.0) * (cy - h / 2.0) +
                                          (cx - w / 2.0) * (cx - w / 2.0)) / half_diag;
            const double scale = std::max(0.05, 1.0 - spec_.spatial_decay * dist);
            RandomStream patch_rng = image_noise.fork(static_cast<std::uint64_t>(py) * grid.cols + px);
            const int row = py * grid.cols + px;
            for (int j = 0; j < d; ++j)
                z.at(row, j) = f[j] * scale + spec_.noise_scale * patch_rng.gaussian();
        }
    return PatchFeatureMap{std::move(z), grid};
}

Tensor ToyEncoder::encode_image_global(const ImageRecord& image) const {
    const int h = image.height(), w = image.width();
    ScenePalette pal;
    pal.colors = spec_.class_colors;
    std::vector<double> frac(spec_.num_classes(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            frac[pal.nearest_class(image.pixels.at(y, x, 0), image.pixels.at(y, x, 1),
                                   image.pixels.at(y, x, 2))] += 1.0;
    const double total = static_cast<double>(h) * w;
    Tensor g({static_cast<std::size_t>(spec_.feature_dim)});
    for (int c = 0; c < spec_.num_classes(); ++c) {
        if (frac[c] == 0.0) continue;
        Tensor f = class_feature(c);
        for (int j = 0; j < spec_.feature_dim; ++j) g[j] += (frac[c] / total) * f[j];
    }
    const double norm = l2_norm(g);
    if (norm > 1e-12) g *= 1.0 / norm;
    return g;
}

Tensor ToyEncoder::encode_text(const std::string& text) const {
    // Longest class name contained in the text marks the class.
    int cls = -1;
    std::size_t best_len = 0;
    for (std::size_t c = 0; c < names_.size(); ++c)
        if (text.find(names_[c]) != std::string::npos && names_[c].size() > best_len) {
            cls = static_cast<int>(c);
            best_len = names_[c].size();
        }
    if (cls < 0)
        throw std::invalid_argument("toy text encoder: no known class name in '" + text + "'");
    Tensor v({static_cast<std::size_t>(spec_.feature_dim)});
    for (int j = 0; j < spec_.feature_dim; ++j) v[j] = spec_.prototypes.at(cls, j);
    if (spec_.text_jitter != 0.0) {
        std::string rest = text;
        rest.erase(rest.find(names_[cls]), names_[cls].size());
        RandomStream text_rng = RandomStream(spec_.seed).fork("text");
        std::size_t pos = 0;
        while (pos < rest.size()) {
            while (pos < rest.size() && rest[pos] == ' ') ++pos;
            std::size_t end = rest.find(' ', pos);
            if (end == std::string::npos) end = rest.size();
            if (end > pos) {
                RandomStream word_rng =
                    text_rng.fork(RandomStream::hash_name(rest.substr(pos, end - pos)));
                Tensor u({static_cast<std::size_t>(spec_.feature_dim)});
                for (int j = 0; j < spec_.feature_dim; ++j) u[j] = word_rng.gaussian();
                const double un = l2_norm(u);
                if (un > 1e-12)
                    for (int j = 0; j < spec_.feature_dim; ++j)
                        v[j] += spec_.text_jitter * u[j] / un;
            }
            pos = end;
        }
    }
    const double norm = l2_norm(v);
    if (norm > 1e-12) v *= 1.0 / norm;
    return v;
}

Var ToyEncoder::encode_text_context(Tape& tape, Var context, int class_index) const {
    if (class_index < 0 || class_index >= spec_.num_classes())
        throw std::invalid_argument("encode_text_context: class index out of range");
    if (context.value().rank() != 2 ||
        context.value().dim(1) != static_cast<std::size_t>(spec_.word_dim))
        throw std::invalid_argument("encode_text_context: context must be L x word_dim");
    // Toy text path: normalized mean of the learnable context plus the
    // class-name prototype. Zero context contributes exactly nothing.
    Var mean = tape.mean_rows(context);
    Var unit = tape.l2_normalize(mean, 1e-8);
    Tensor proto({static_cast<std::size_t>(spec_.feature_dim)});
    for (int j = 0; j < spec_.feature_dim; ++j) proto[j] = spec_.prototypes.at(class_index, j);
    return tape.add(unit, tape.input(std::move(proto)));
}

Tensor ToyEncoder::positional_embedding(const PatchGrid& grid) const {
    const int n = grid.count(), dpe = spec_.positional_dim;
    Tensor p({static_cast<std::size_t>(n), static_cast<std::size_t>(dpe)});
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            const double y = grid.rows > 1 ? static_cast<double>(r) / (grid.rows - 1) : 0.5;
            const double x = grid.cols > 1 ? static_cast<double>(c) / (grid.cols - 1) : 0.5;
            const int row = r * grid.cols + c;
            for (int k = 0; k < dpe / 4; ++k) {
                const double freq = M_PI * std::pow(2.0, k % 6);
                p.at(row, 4 * k + 0) = std::sin(freq * x);
                p.at(row, 4 * k + 1) = std::cos(freq * x);
                p.at(row, 4 * k + 2) = std::sin(freq * y);
                p.at(row, 4 * k + 3) = std::cos(freq * y);
            }
        }
    return p;
}

std::uint64_t ToyEncoder::state_hash() const {
    std::uint64_t h = fingerprint_tensor(spec_.prototypes);
    h ^= RandomStream::mix(fingerprint_tensor(spec_.class_colors));
    h ^= RandomStream::mix(fingerprint_tensor(spec_.class_confusion));
    h ^= RandomStream::mix(static_cast<std::uint64_t>(spec_.feature_dim));
    h ^= RandomStream::mix(spec_.seed + 0x1234);
    auto mix_double = [](double v) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        return RandomStream::mix(bits);
    };
    h ^= mix_double(spec_.spatial_decay);
    h ^= mix_double(spec_.noise_scale);
    h ^= mix_double(spec_.text_jitter);
    return h;
}

}  // namespace rectseg
