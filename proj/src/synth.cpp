#include "rectseg/synth.hpp"

#include <algorithm>
#include <stdexcept>

namespace rectseg {

ScenePalette ScenePalette::standard(int num_classes) {
    if (num_classes < 2) throw std::invalid_argument("palette needs at least 2 classes");
    // Background gray, then a fixed cycle of saturated colors.
    static const double base[][3] = {
        {0.85, 0.15, 0.15}, {0.15, 0.25, 0.85}, {0.15, 0.75, 0.20}, {0.90, 0.80, 0.10},
        {0.70, 0.15, 0.80}, {0.10, 0.80, 0.80}, {0.95, 0.50, 0.10}, {0.55, 0.35, 0.10},
    };
    constexpr int kBase = 8;
    ScenePalette p;
    p.colors = Tensor({static_cast<std::size_t>(num_classes), 3});
    p.colors.at(0, 0) = p.colors.at(0, 1) = p.colors.at(0, 2) = 0.5;
    for (int c = 1; c < num_classes; ++c) {
        const int k = (c - 1) % kBase;
        const double shade = 1.0 - 0.35 * ((c - 1) / kBase);  // darken on palette wrap
        for (int j = 0; j < 3; ++j) p.colors.at(c, j) = base[k][j] * shade;
    }
    return p;
}

int ScenePalette::nearest_class(double r, double g, double b) const {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < size(); ++c) {
        const double dr = r - colors.at(c, 0), dg = g - colors.at(c, 1), db = b - colors.at(c, 2);
        const double d = dr * dr + dg * dg + db * db;
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

namespace {

void paint_rect(ImageRecord& img, const ScenePalette& pal, int cls, int y0, int x0, int h, int w) {
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) {
            for (int ch = 0; ch < 3; ++ch) img.pixels.at(y, x, ch) = pal.colors.at(cls, ch);
            img.gt_mask[static_cast<std::size_t>(y) * img.width() + x] = cls;
        }
}

void paint_ellipse(ImageRecord& img, const ScenePalette& pal, int cls, int y0, int x0, int h,
                   int w) {
    const double cy = y0 + h / 2.0, cx = x0 + w / 2.0;
    const double ry = h / 2.0, rx = w / 2.0;
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) {
            const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
            if (dy * dy + dx * dx > 1.0) continue;
            for (int ch = 0; ch < 3; ++ch) img.pixels.at(y, x, ch) = pal.colors.at(cls, ch);
            img.gt_mask[static_cast<std::size_t>(y) * img.width() + x] = cls;
        }
}

}  // namespace

ImageRecord make_scene(const ScenePalette& palette, const SceneSpec& spec, const std::string& id,
                       RandomStream& rng) {
    if (spec.image_size < spec.patch)
        throw std::invalid_argument("scene smaller than one patch");
    if (spec.patch_aligned && spec.image_size % spec.patch != 0)
        throw std::invalid_argument("patch-aligned scenes need image_size divisible by patch");
    std::vector<int> fg = spec.foreground_classes;
    if (fg.empty())
        for (int c = 1; c < palette.size(); ++c) fg.push_back(c);

    const int s = spec.image_size;
    ImageRecord img;
    img.id = id;
    img.pixels = Tensor({static_cast<std::size_t>(s), static_cast<std::size_t>(s), 3});
    img.gt_mask.assign(static_cast<std::size_t>(s) * s, 0);
    paint_rect(img, palette, 0, 0, 0, s, s);

    const int shapes =
        spec.min_shapes + static_cast<int>(rng.uniform_index(
                              static_cast<std::uint64_t>(spec.max_shapes - spec.min_shapes + 1)));
    for (int k = 0; k < shapes; ++k) {
        const int cls = fg[rng.uniform_index(fg.size())];
        int h = spec.min_extent +
                static_cast<int>(rng.uniform_index(
                    static_cast<std::uint64_t>(spec.max_extent - spec.min_extent + 1)));
        int w = spec.min_extent +
                static_cast<int>(rng.uniform_index(
                    static_cast<std::uint64_t>(spec.max_extent - spec.min_extent + 1)));
        if (spec.patch_aligned) {
            h = std::max(spec.patch, (h / spec.patch) * spec.patch);
            w = std::max(spec.patch, (w / spec.patch) * spec.patch);
        }
        h = std::min(h, s);
        w = std::min(w, s);
        int y0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(s - h + 1)));
        int x0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(s - w + 1)));
        if (spec.patch_aligned) {
            y0 = (y0 / spec.patch) * spec.patch;
            x0 = (x0 / spec.patch) * spec.patch;
        }
        if (!spec.patch_aligned && spec.ellipses && rng.bernoulli(0.5))
            paint_ellipse(img, palette, cls, y0, x0, h, w);
        else
            paint_rect(img, palette, cls, y0, x0, h, w);
    }
    return img;
}

std::vector<ImageRecord> make_scene_set(const ScenePalette& palette, const SceneSpec& spec,
                                        int count, const std::string& id_prefix,
                                        RandomStream& rng) {
    std::vector<ImageRecord> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i)
        out.push_back(make_scene(palette, spec, id_prefix + std::to_string(i), rng));
    return out;
}

}  // namespace rectseg
