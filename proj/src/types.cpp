#include "rectseg/types.hpp"

#include <cstring>
#include <set>

namespace rectseg {

ClassVocabulary ClassVocabulary::from_names(std::vector<std::string> names) {
    if (names.size() < 2)
        throw std::invalid_argument("vocabulary needs at least 2 classes, got " +
                                    std::to_string(names.size()));
    std::set<std::string> seen;
    for (const auto& n : names) {
        if (n.empty()) throw std::invalid_argument("vocabulary contains an empty class name");
        if (!seen.insert(n).second)
            throw std::invalid_argument("duplicate class name in vocabulary: '" + n + "'");
    }
    ClassVocabulary v;
    v.names_ = std::move(names);
    v.fingerprint_ = fingerprint_strings(v.names_);
    return v;
}

int ClassVocabulary::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return static_cast<int>(i);
    return -1;
}

void RunConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (tau_contrastive <= 0.0) fail("tau_contrastive must be > 0");
    if (tau_gumbel <= 0.0) fail("tau_gumbel must be > 0");
    if (crop_ratio <= 0.0 || crop_ratio > 1.0) fail("crop_ratio must be in (0, 1]");
    if (freq_threshold < 0.0 || freq_threshold >= 1.0) fail("freq_threshold must be in [0, 1)");
    if (prompt_length < 1 || prompt_length > 73)
        fail("prompt_length must be in [1, 73] (77 token slots minus 2 for the class name and 2 "
             "for start/end markers)");
    if (lr <= 0.0) fail("lr must be > 0");
    if (weight_decay < 0.0) fail("weight_decay must be >= 0");
    if (poly_power <= 0.0) fail("poly_power must be > 0");
    if (max_iters < 1) fail("max_iters must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (train_crop < 0) fail("train_crop must be >= 0");
    if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
    if (distance_bins < 2) fail("distance_bins must be >= 2");
    if (min_instance_pixels < 1) fail("min_instance_pixels must be >= 1");
    if (templates.empty()) fail("templates must be non-empty");
}

Tensor reshape_patches(const Tensor& flat, const PatchGrid& grid) {
    if (flat.rank() != 2)
        throw std::invalid_argument("reshape_patches: expected n x K matrix, got " +
                                    flat.shape_str());
    if (flat.dim(0) != static_cast<std::size_t>(grid.count()))
        throw std::invalid_argument("reshape_patches: expected " + std::to_string(grid.count()) +
                                    " rows for a " + std::to_string(grid.rows) + "x" +
                                    std::to_string(grid.cols) + " grid, got " +
                                    std::to_string(flat.dim(0)));
    const std::size_t k = flat.dim(1);
    Tensor out({static_cast<std::size_t>(grid.rows), static_cast<std::size_t>(grid.cols), k});
    std::memcpy(out.data(), flat.data(), flat.size() * sizeof(double));
    return out;
}

Tensor flatten_patches(const Tensor& grid_array) {
    if (grid_array.rank() != 3)
        throw std::invalid_argument("flatten_patches: expected h x w x K array, got " +
                                    grid_array.shape_str());
    Tensor out({grid_array.dim(0) * grid_array.dim(1), grid_array.dim(2)});
    std::memcpy(out.data(), grid_array.data(), grid_array.size() * sizeof(double));
    return out;
}

std::uint64_t fingerprint_strings(const std::vector<std::string>& items) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    auto eat = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001B3ull;
        }
    };
    for (const auto& s : items) {
        const std::size_t len = s.size();
        eat(&len, sizeof(len));
        eat(s.data(), s.size());
    }
    return h;
}

std::uint64_t fingerprint_tensor(const Tensor& t) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    auto eat = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001B3ull;
        }
    };
    for (auto d : t.shape()) eat(&d, sizeof(d));
    eat(t.data(), t.size() * sizeof(double));
    return h;
}

void require_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite())
        throw std::runtime_error(what + ": non-finite values detected");
}

}  // namespace rectseg
