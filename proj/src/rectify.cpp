#include "rectseg/rectify.hpp"

#include <cmath>

namespace rectseg {

MaskDecoder MaskDecoder::init(int feature_dim, int classes, RandomStream& rng, double noise_std) {
    MaskDecoder d;
    const std::size_t c = classes, cin = feature_dim + classes;
    d.conv_w = Tensor({c, cin, kKernel, kKernel});
    for (std::size_t i = 0; i < d.conv_w.size(); ++i) d.conv_w[i] = noise_std * rng.gaussian();
    // Center tap passes each rectified-logit channel through.
    for (int k = 0; k < classes; ++k)
        d.conv_w[((static_cast<std::size_t>(k) * cin + feature_dim + k) * kKernel + kKernel / 2) *
                     kKernel +
                 kKernel / 2] += 1.0;
    d.conv_b = Tensor({c});
    d.gamma = Tensor::full({c}, 1.0);
    d.beta = Tensor({c});
    d.stats.running_mean = Tensor({c});
    d.stats.running_var = Tensor::full({c}, 1.0);
    return d;
}

MaskDecoder MaskDecoder::identity(int feature_dim, int classes) {
    RandomStream rng(0);
    MaskDecoder d = init(feature_dim, classes, rng, 0.0);
    d.training = false;
    return d;
}

LogitMap rectify_logits(const LogitMap& mq, const LogitMap& mb, BiasCombine mode) {
    if (!mq.values.same_shape(mb.values) || !(mq.grid == mb.grid))
        throw std::invalid_argument("rectify_logits: shape mismatch " + mq.values.shape_str() +
                                    " vs " + mb.values.shape_str());
    if (mq.vocab_fp != mb.vocab_fp)
        throw std::invalid_argument("rectify_logits: vocabulary fingerprint mismatch");
    LogitMap out;
    out.values = mode == BiasCombine::Subtract ? mq.values - mb.values : mq.values + mb.values;
    out.grid = mq.grid;
    out.role = LogitRole::Rectified;
    out.vocab_fp = mq.vocab_fp;
    require_finite(out.values, "rectified logits");
    return out;
}

Var decode_var(Tape& tape, Var m, const PatchFeatureMap& z, Var conv_w, Var conv_b, Var gamma,
               Var beta, MaskDecoder& dec, bool update_running) {
    if (z.grid.count() != static_cast<int>(m.value().dim(0)))
        throw std::invalid_argument("decode: logit rows != feature grid patches");
    Var m_chw = tape.nc_to_chw(m, z.grid);
    Var z_chw = tape.nc_to_chw(tape.input(z.z), z.grid);
    Var x = tape.concat_channels(m_chw, z_chw);
    Var y = tape.conv2d(x, conv_w, conv_b, MaskDecoder::kPad);
    Var normed = tape.batchnorm(y, gamma, beta, &dec.stats, dec.training, update_running,
                                dec.bn_momentum, dec.bn_eps);
    return tape.chw_to_nc(normed);
}

LogitMap decode(const LogitMap& m, const PatchFeatureMap& z, MaskDecoder& dec) {
    Tape tape;
    Var mv = tape.input(m.values);
    Var out = decode_var(tape, mv, z, tape.input(dec.conv_w), tape.input(dec.conv_b),
                         tape.input(dec.gamma), tape.input(dec.beta), dec, dec.training);
    LogitMap o;
    o.values = out.value();
    o.grid = m.grid;
    o.role = LogitRole::Decoded;
    o.vocab_fp = m.vocab_fp;
    require_finite(o.values, "decoded logits");
    return o;
}

Tensor sample_gumbel_noise(std::size_t rows, std::size_t cols, RandomStream& rng) {
    Tensor g({rows, cols});
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.gumbel();
    return g;
}

Var gumbel_mask_var(Tape& tape, Var mo, double tau, bool hard, const Tensor& noise) {
    if (tau <= 0.0) throw std::invalid_argument("gumbel_mask: tau must be > 0");
    if (!mo.value().same_shape(noise))
        throw std::invalid_argument("gumbel_mask: noise shape mismatch");
    Var soft = tape.softmax_rows(tape.add(mo, tape.input(noise)), tau);
    return hard ? tape.straight_through_onehot(soft) : soft;
}

SemanticMask gumbel_mask_with_noise(const LogitMap& mo, double tau, bool hard,
                                    const Tensor& noise) {
    Tape tape;
    Var out = gumbel_mask_var(tape, tape.input(mo.values), tau, hard, noise);
    SemanticMask m;
    m.values = out.value();
    m.grid = mo.grid;
    m.hard = hard;
    m.vocab_fp = mo.vocab_fp;
    return m;
}

SemanticMask gumbel_mask(const LogitMap& mo, double tau, bool hard, RandomStream& rng) {
    return gumbel_mask_with_noise(
        mo, tau, hard, sample_gumbel_noise(mo.values.dim(0), mo.values.dim(1), rng));
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<std::int32_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        out[i] = static_cast<std::int32_t>(best);
    }
    return out;
}

std::vector<std::int32_t> upsample_nearest(const std::vector<std::int32_t>& patch_labels,
                                           const PatchGrid& grid, int height, int width) {
    std::vector<std::int32_t> out(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
        const int py = std::min(grid.rows - 1, y * grid.rows / height);
        for (int x = 0; x < width; ++x) {
            const int px = std::min(grid.cols - 1, x * grid.cols / width);
            out[static_cast<std::size_t>(y) * width + x] = patch_labels[py * grid.cols + px];
        }
    }
    return out;
}

std::vector<std::int32_t> upsample_bilinear_argmax(const Tensor& logits, const PatchGrid& grid,
                                                   int height, int width) {
    const std::size_t c = logits.dim(1);
    std::vector<std::int32_t> out(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            // Map pixel center into patch-center coordinates.
            const double fy = (y + 0.5) * grid.rows / height - 0.5;
            const double fx = (x + 0.5) * grid.cols / width - 0.5;
            const int y0 = std::max(0, std::min(grid.rows - 1, static_cast<int>(std::floor(fy))));
            const int x0 = std::max(0, std::min(grid.cols - 1, static_cast<int>(std::floor(fx))));
            const int y1 = std::min(grid.rows - 1, y0 + 1);
            const int x1 = std::min(grid.cols - 1, x0 + 1);
            const double wy = std::max(0.0, std::min(1.0, fy - y0));
            const double wx = std::max(0.0, std::min(1.0, fx - x0));
            std::size_t best = 0;
            double best_v = -1e300;
            for (std::size_t k = 0; k < c; ++k) {
                const double v00 = logits.at(y0 * grid.cols + x0, k);
                const double v01 = logits.at(y0 * grid.cols + x1, k);
                const double v10 = logits.at(y1 * grid.cols + x0, k);
                const double v11 = logits.at(y1 * grid.cols + x1, k);
                const double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                 wy * ((1 - wx) * v10 + wx * v11);
                if (v > best_v) {
                    best_v = v;
                    best = k;
                }
            }
            out[static_cast<std::size_t>(y) * width + x] = static_cast<std::int32_t>(best);
        }
    return out;
}

std::vector<std::int32_t> infer(const ImageRecord& image, const EncoderBundle& enc,
                                const QueryTextFeatures& wq, const ReferenceTextFeatures& wr,
                                const PositionalProjection& proj, const MaskDecoder& dec,
                                BiasCombine mode, UpsampleMode upsample) {
    if (wq.vocab_fp != wr.vocab_fp)
        throw std::invalid_argument("infer: vocabulary fingerprint mismatch");
    PatchFeatureMap z = enc.encode_image_patches(image);
    LogitMap mq = query_logits(z, wq);
    Tensor pe = enc.positional_embedding(z.grid);
    Tensor wp = encode_positional(pe, proj, z.grid);
    LogitMap mb = bias_logits(wp, wr, z.grid);
    LogitMap m = rectify_logits(mq, mb, mode);
    MaskDecoder eval_dec = dec;  // inference never touches running stats
    eval_dec.training = false;
    LogitMap mo = decode(m, z, eval_dec);
    std::vector<std::int32_t> patch_labels = argmax_rows(mo.values);
    if (upsample == UpsampleMode::Nearest)
        return upsample_nearest(patch_labels, z.grid, image.height(), image.width());
    return upsample_bilinear_argmax(mo.values, z.grid, image.height(), image.width());
}

}  // namespace rectseg
