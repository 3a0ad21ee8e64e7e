#pragma once

#include <string>
#include <vector>

#include "rectseg/random.hpp"
#include "rectseg/types.hpp"

namespace rectseg {

/// Class-index to RGB color table shared by the scene generator and the
/// toy encoder (which recovers planted classes from pixel colors).
struct ScenePalette {
    Tensor colors;  // (C x 3) in [0, 1]

    int size() const { return static_cast<int>(colors.dim(0)); }

    /// Gray background (class 0) plus well-separated saturated colors.
    static ScenePalette standard(int num_classes);

    /// Nearest palette entry by squared RGB distance; ties -> lowest index.
    int nearest_class(double r, double g, double b) const;
};

/// Generator settings for synthetic scenes: a background canvas with a
/// few foreground rectangles (optionally ellipses when not patch-aligned).
struct SceneSpec {
    int image_size = 96;  // square
    int patch = 16;
    int min_shapes = 1;
    int max_shapes = 3;
    int min_extent = 16;  // shape side, pixels
    int max_extent = 48;
    bool patch_aligned = true;  // snap rectangles to the patch grid
    bool ellipses = false;      // only honored when patch_aligned is false
    std::vector<int> foreground_classes;  // drawn shapes; background is class 0
};

/// One scene with pixel-accurate ground truth.
ImageRecord make_scene(const ScenePalette& palette, const SceneSpec& spec, const std::string& id,
                       RandomStream& rng);

std::vector<ImageRecord> make_scene_set(const ScenePalette& palette, const SceneSpec& spec,
                                        int count, const std::string& id_prefix,
                                        RandomStream& rng);

}  // namespace rectseg
