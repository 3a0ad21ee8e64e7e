#include "rectseg/backbone.hpp"

namespace rectseg {

std::string apply_template(const std::string& tmpl, const std::string& class_name) {
    const std::string placeholder = "[CLS]";
    const auto pos = tmpl.find(placeholder);
    if (pos == std::string::npos)
        throw std::invalid_argument("template is missing the [CLS] placeholder: '" + tmpl + "'");
    std::string out = tmpl;
    out.replace(pos, placeholder.size(), class_name);
    return out;
}

QueryTextFeatures build_query_features(const ClassVocabulary& vocab,
                                       const std::vector<std::string>& templates,
                                       const EncoderBundle& enc) {
    if (templates.empty()) throw std::invalid_argument("build_query_features: no templates");
    const int d = enc.feature_dim();
    QueryTextFeatures out;
    out.wq = Tensor({static_cast<std::size_t>(vocab.size()), static_cast<std::size_t>(d)});
    out.templates = templates;
    out.vocab_fp = vocab.fingerprint();
    for (int c = 0; c < vocab.size(); ++c) {
        Tensor mean({static_cast<std::size_t>(d)});
        for (const auto& t : templates) {
            Tensor e = enc.encode_text(apply_template(t, vocab.name(c)));
            if (e.dim(0) != static_cast<std::size_t>(d))
                throw std::runtime_error("encoder returned wrong text dim");
            mean += e;
        }
        mean *= 1.0 / static_cast<double>(templates.size());
        const double norm = l2_norm(mean);
        if (norm < 1e-8)
            throw std::runtime_error("template ensemble collapsed to a near-zero vector for "
                                     "class '" + vocab.name(c) + "' (norm " +
                                     std::to_string(norm) + ")");
        mean *= 1.0 / norm;
        for (int j = 0; j < d; ++j) out.wq.at(c, j) = mean[j];
    }
    require_finite(out.wq, "query text features");
    return out;
}

LogitMap query_logits(const PatchFeatureMap& z, const QueryTextFeatures& wq) {
    LogitMap m;
    m.values = Tape::k_matmul_nt(z.z, wq.wq);
    m.grid = z.grid;
    m.role = LogitRole::Query;
    m.vocab_fp = wq.vocab_fp;
    require_finite(m.values, "query logits");
    return m;
}

}  // namespace rectseg
