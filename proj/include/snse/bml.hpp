#pragma once

#include <vector>

#include "snse/model.hpp"
#include "snse/tensor.hpp"
#include "snse/tokenizer.hpp"

namespace snse {

// How the generated-sample embedding h_i is obtained from decoder logits.
// soft: expected embedding under softmax(logits), differentiable end to end.
// greedy: embed the argmax tokens; gradients reach only the embedding table
// and the contrastive head.
enum class BmlMode { soft, greedy };

BmlMode bml_mode_from_name(const std::string& name);
std::string bml_mode_name(BmlMode m);

// h = mean(W_R E_R + b_R) over the embedding rows of `tokens`.
// An empty token list falls back to the "Not" placeholder sequence.
Var embed_rationale(Tape& t, const std::vector<int>& tokens, ModelParams& p,
                    const Vocab& vocab);
Tensor embed_rationale_value(const std::vector<int>& tokens, ModelParams& p,
                             const Vocab& vocab);

// Contrastive pooling head applied to an n x d embedding matrix.
Var rationale_head(Tape& t, Var E_R, ModelParams& p);

// h_i from N x V decoder logits, per the selected mode.
Var generated_embedding(Tape& t, Var logits, ModelParams& p, BmlMode mode);

// Delta = cos(h_i, h_neg) - cos(h_i, h_pos).
Var similarity_delta(Tape& t, Var h_i, Var h_pos, Var h_neg);
double similarity_delta(const Tensor& h_i, const Tensor& h_pos, const Tensor& h_neg);

// Bidirectional margin loss over one example's k soft negatives:
// (1/k) sum_j ReLU(Delta_j + alpha) + ReLU(-Delta_j - beta).
// Zero exactly when every Delta lies in [-beta, -alpha].
Var bml_loss(Tape& t, Var h_i, Var h_pos, const std::vector<Var>& h_negs, double alpha,
             double beta);
double bml_loss_from_deltas(const std::vector<double>& deltas, double alpha, double beta);

// Stage objectives.
Var rg_objective(Tape& t, Var nll, Var bml, double lambda);
double rg_objective(double nll, double bml, double lambda);
double ai_objective(double nll);

} // namespace snse
