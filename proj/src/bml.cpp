#include "snse/bml.hpp"

#include <cmath>

#include "snse/errors.hpp"

namespace snse {

BmlMode bml_mode_from_name(const std::string& name) {
    if (name == "soft") return BmlMode::soft;
    if (name == "greedy") return BmlMode::greedy;
    throw ConfigError("unknown bml mode: " + name);
}

std::string bml_mode_name(BmlMode m) { return m == BmlMode::soft ? "soft" : "greedy"; }

Var rationale_head(Tape& t, Var E_R, ModelParams& p) {
    Var proj = t.add_rowwise(t.matmul(E_R, t.transpose(t.param(p.W_R))), t.param(p.b_R));
    return t.mean_rows(proj);
}

Var embed_rationale(Tape& t, const std::vector<int>& tokens, ModelParams& p,
                    const Vocab& vocab) {
    std::vector<int> ids = tokens;
    if (ids.empty()) ids = vocab.encode("Not");
    if (ids.empty()) ids = {Vocab::kUnk};
    Var E_R = t.embedding_lookup(t.param(p.embedding), ids);
    return rationale_head(t, E_R, p);
}

Tensor embed_rationale_value(const std::vector<int>& tokens, ModelParams& p,
                             const Vocab& vocab) {
    Tape t;
    return t.val(embed_rationale(t, tokens, p, vocab));
}

Var generated_embedding(Tape& t, Var logits, ModelParams& p, BmlMode mode) {
    if (mode == BmlMode::soft) {
        Var probs = t.softmax_rows(logits);
        Var expected = t.matmul(probs, t.param(p.embedding));
        return rationale_head(t, expected, p);
    }
    const Tensor& L = t.val(logits);
    std::vector<int> ids(static_cast<size_t>(L.rows()));
    for (int i = 0; i < L.rows(); ++i) {
        int best = 0;
        for (int j = 1; j < L.cols(); ++j)
            if (L.at(i, j) > L.at(i, best)) best = j;
        ids[static_cast<size_t>(i)] = best;
    }
    Var E_R = t.embedding_lookup(t.param(p.embedding), ids);
    return rationale_head(t, E_R, p);
}

Var similarity_delta(Tape& t, Var h_i, Var h_pos, Var h_neg) {
    return t.sub(t.cosine(h_i, h_neg), t.cosine(h_i, h_pos));
}

double similarity_delta(const Tensor& h_i, const Tensor& h_pos, const Tensor& h_neg) {
    return cosine_similarity(h_i, h_neg) - cosine_similarity(h_i, h_pos);
}

Var bml_loss(Tape& t, Var h_i, Var h_pos, const std::vector<Var>& h_negs, double alpha,
             double beta) {
    if (!(alpha >= 0.0 && alpha <= beta))
        throw ConfigError("bml_loss requires 0 <= alpha <= beta");
    if (h_negs.empty()) throw ConfigError("bml_loss: at least one soft negative required");
    Var acc = t.input(Tensor::scalar(0.0));
    for (Var h_neg : h_negs) {
        Var delta = similarity_delta(t, h_i, h_pos, h_neg);
        Var low = t.relu(t.add_const(delta, alpha));
        Var high = t.relu(t.add_const(t.scale(delta, -1.0), -beta));
        acc = t.add(acc, t.add(low, high));
    }
    return t.scale(acc, 1.0 / static_cast<double>(h_negs.size()));
}

double bml_loss_from_deltas(const std::vector<double>& deltas, double alpha, double beta) {
    if (!(alpha >= 0.0 && alpha <= beta))
        throw ConfigError("bml_loss requires 0 <= alpha <= beta");
    if (deltas.empty()) throw ConfigError("bml_loss: no deltas");
    double acc = 0.0;
    for (double d : deltas)
        acc += std::max(0.0, d + alpha) + std::max(0.0, -d - beta);
    return acc / static_cast<double>(deltas.size());
}

Var rg_objective(Tape& t, Var nll, Var bml, double lambda) {
    if (lambda < 0.0) throw ConfigError("rg_objective: lambda must be >= 0");
    return t.add(nll, t.scale(bml, lambda));
}

double rg_objective(double nll, double bml, double lambda) {
    if (lambda < 0.0) throw ConfigError("rg_objective: lambda must be >= 0");
    return nll + lambda * bml;
}

double ai_objective(double nll) { return nll; }

} // namespace snse
