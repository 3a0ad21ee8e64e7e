#include "rectseg/bias.hpp"

namespace rectseg {

void check_prompt_budget(int length) {
    // 77 token slots total: 2 for the class name, 2 for start/end markers.
    if (length < 1 || length > 73)
        throw std::invalid_argument("prompt context length " + std::to_string(length) +
                                    " exceeds the 73-slot budget (77 - 4)");
}

ReferencePrompt ReferencePrompt::init(int length, int word_dim, RandomStream& rng, double std) {
    check_prompt_budget(length);
    ReferencePrompt p;
    p.context = Tensor({static_cast<std::size_t>(length), static_cast<std::size_t>(word_dim)});
    for (std::size_t i = 0; i < p.context.size(); ++i) p.context[i] = std * rng.gaussian();
    return p;
}

ReferencePrompt ReferencePrompt::zeros(int length, int word_dim) {
    check_prompt_budget(length);
    ReferencePrompt p;
    p.context = Tensor({static_cast<std::size_t>(length), static_cast<std::size_t>(word_dim)});
    return p;
}

PositionalProjection PositionalProjection::init(int feature_dim, int pe_dim, RandomStream& rng,
                                                double std) {
    PositionalProjection proj;
    proj.weight = Tensor({static_cast<std::size_t>(feature_dim), static_cast<std::size_t>(pe_dim)});
    proj.bias = Tensor({static_cast<std::size_t>(feature_dim)});
    for (std::size_t i = 0; i < proj.weight.size(); ++i) proj.weight[i] = std * rng.gaussian();
    return proj;
}

Var encode_reference_var(Tape& tape, Var context, const ClassVocabulary& vocab,
                         const EncoderBundle& enc) {
    check_prompt_budget(static_cast<int>(context.value().dim(0)));
    std::vector<Var> rows;
    rows.reserve(vocab.size());
    for (int c = 0; c < vocab.size(); ++c)
        rows.push_back(enc.encode_text_context(tape, context, c));
    return tape.stack_rows(rows);
}

ReferenceTextFeatures encode_reference(const ReferencePrompt& prompt,
                                       const ClassVocabulary& vocab, const EncoderBundle& enc) {
    Tape tape;
    Var ctx = tape.input(prompt.context);
    Var wr = encode_reference_var(tape, ctx, vocab, enc);
    ReferenceTextFeatures out;
    out.wr = wr.value();
    out.vocab_fp = vocab.fingerprint();
    require_finite(out.wr, "reference text features");
    return out;
}

Var encode_positional_var(Tape& tape, const Tensor& pe, Var weight, Var bias,
                          const PatchGrid& grid) {
    if (pe.rank() != 2 || pe.dim(0) != static_cast<std::size_t>(grid.count()))
        throw std::invalid_argument("positional embedding has " +
                                    std::to_string(pe.rank() == 2 ? pe.dim(0) : 0) +
                                    " rows, expected " + std::to_string(grid.count()));
    if (pe.dim(1) != weight.value().dim(1))
        throw std::invalid_argument("positional embedding dim " + std::to_string(pe.dim(1)) +
                                    " != projection input dim " +
                                    std::to_string(weight.value().dim(1)));
    Var p = tape.input(pe);
    return tape.add_rowvec(tape.matmul_nt(p, weight), bias);
}

Tensor encode_positional(const Tensor& pe, const PositionalProjection& proj,
                         const PatchGrid& grid) {
    Tape tape;
    Var wp = encode_positional_var(tape, pe, tape.input(proj.weight), tape.input(proj.bias), grid);
    Tensor out = wp.value();
    require_finite(out, "positional features");
    return out;
}

LogitMap bias_logits(const Tensor& wp, const ReferenceTextFeatures& wr, const PatchGrid& grid) {
    if (wp.rank() != 2 || wp.dim(0) != static_cast<std::size_t>(grid.count()))
        throw std::invalid_argument("bias_logits: W_p rows != patch count");
    LogitMap m;
    m.values = Tape::k_matmul_nt(wp, wr.wr);
    m.grid = grid;
    m.role = LogitRole::Bias;
    m.vocab_fp = wr.vocab_fp;
    require_finite(m.values, "bias logits");
    return m;
}

namespace {
Tensor pool_rows(const Tensor& m) {
    const std::size_t r = m.dim(0), c = m.dim(1);
    Tensor mean({c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) mean[j] += m.at(i, j);
    for (std::size_t j = 0; j < c; ++j) mean[j] /= static_cast<double>(r);
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = mean[j];
    return out;
}
}  // namespace

Tensor pool_expand_class(const Tensor& wr) { return pool_rows(wr); }
Tensor pool_expand_space(const Tensor& wp) { return pool_rows(wp); }

}  // namespace rectseg
