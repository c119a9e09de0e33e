#pragma once

#include <string>
#include <utility>
#include <vector>

#include "snse/rng.hpp"
#include "snse/tensor.hpp"
#include "snse/tokenizer.hpp"

namespace snse {

struct ModelConfig {
    int d = 64;
    int d_v = 32;
    int n_blocks = 2;
    int ffn_hidden = 64;
    int vocab = 0;
    int max_len = 512;
    bool no_vision = false;
};

// Per-record image patch features (stand-in for a frozen vision backbone).
struct VisionFeatures {
    Tensor patches; // m x d_v
};

struct EncBlockParams {
    Tensor Wq, Wk, Wv, Wo; // d x d
    Tensor W1, b1, W2, b2; // ffn
};

struct DecBlockParams {
    Tensor Sq, Sk, Sv, So; // causal self-attention
    Tensor Cq, Ck, Cv, Co; // cross-attention over the encoder output
    Tensor W1, b1, W2, b2;
};

// All trainable weights of one stage's model.
struct ModelParams {
    ModelConfig cfg;
    Tensor embedding; // V x d
    std::vector<EncBlockParams> enc_blocks;
    Tensor W_h;             // d x d_v vision projection
    Tensor Wq_x, Wk_x, Wv_x; // single-head cross-modal attention
    Tensor W_l, W_v;        // gated fusion
    std::vector<DecBlockParams> dec_blocks;
    Tensor out_proj; // d x V
    Tensor W_R;      // d x d contrastive head
    Tensor b_R;      // d

    // Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] init from the run RNG.
    static ModelParams init(const ModelConfig& cfg, Rng& rng);

    // Deterministic (name, tensor) enumeration; drives SGD and checkpoints.
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;

    void zero_grads();
};

// Tape-based forward passes. All return handles on the caller's tape.
Var encode_text(Tape& t, const std::vector<int>& tokens, ModelParams& p);
Var project_vision(Tape& t, const VisionFeatures& v, ModelParams& p);
Var cross_attention(Tape& t, Var H_l, Var H_v, ModelParams& p);
Var gated_fusion(Tape& t, Var H_l, Var Hv_hat, ModelParams& p);

// Full encoder: text -> H_l, then vision alignment + gated fusion unless the
// model is vision-ablated (then H_Enc := H_l and `vision` is never read).
Var encode(Tape& t, const std::vector<int>& tokens, const VisionFeatures* vision,
           ModelParams& p);

// Teacher-forced decoder logits over [BOS, y_1 .. y_{N-1}], shape N x V.
Var decoder_logits(Tape& t, Var H_Enc, const std::vector<int>& target, ModelParams& p);

// Negative log-likelihood of `target` under teacher forcing (scalar).
Var decode_nll(Tape& t, Var H_Enc, const std::vector<int>& target, ModelParams& p);

// Greedy decoding from a fixed encoder output; stops at EOS or max_len.
std::vector<int> generate(const Tensor& H_Enc, ModelParams& p, int max_len);

// Convenience no-grad encoder returning the H_Enc value.
Tensor encode_value(const std::vector<int>& tokens, const VisionFeatures* vision,
                    ModelParams& p);

// Sinusoidal positional encoding, n x d.
Tensor positional_encoding(int n, int d);

// Checkpoint container: JSON with bit-exact hex-encoded tensor payloads.
void save_checkpoint(const std::string& path, const ModelParams& p, const Vocab& vocab);
std::pair<ModelParams, Vocab> load_checkpoint(const std::string& path);

} // namespace snse
