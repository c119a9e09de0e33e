#include "snse/model.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <set>

#include "json.hpp"

#include "snse/errors.hpp"

namespace snse {

namespace {

Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : t.data) x = rng.next_real(-bound, bound);
    return t;
}

} // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
    if (cfg.vocab < 4) throw ConfigError("model vocab must cover specials plus content");
    ModelParams p;
    p.cfg = cfg;
    const int d = cfg.d, dv = cfg.d_v, V = cfg.vocab, h = cfg.ffn_hidden;
    p.embedding = uniform_init({V, d}, d, rng);
    for (int b = 0; b < cfg.n_blocks; ++b) {
        EncBlockParams e;
        e.Wq = uniform_init({d, d}, d, rng);
        e.Wk = uniform_init({d, d}, d, rng);
        e.Wv = uniform_init({d, d}, d, rng);
        e.Wo = uniform_init({d, d}, d, rng);
        e.W1 = uniform_init({d, h}, d, rng);
        e.b1 = Tensor({h}, 0.0);
        e.W2 = uniform_init({h, d}, h, rng);
        e.b2 = Tensor({d}, 0.0);
        p.enc_blocks.push_back(std::move(e));
    }
    p.W_h = uniform_init({d, dv}, dv, rng);
    p.Wq_x = uniform_init({d, d}, d, rng);
    p.Wk_x = uniform_init({d, d}, d, rng);
    p.Wv_x = uniform_init({d, d}, d, rng);
    p.W_l = uniform_init({d, d}, d, rng);
    p.W_v = uniform_init({d, d}, d, rng);
    for (int b = 0; b < cfg.n_blocks; ++b) {
        DecBlockParams e;
        e.Sq = uniform_init({d, d}, d, rng);
        e.Sk = uniform_init({d, d}, d, rng);
        e.Sv = uniform_init({d, d}, d, rng);
        e.So = uniform_init({d, d}, d, rng);
        e.Cq = uniform_init({d, d}, d, rng);
        e.Ck = uniform_init({d, d}, d, rng);
        e.Cv = uniform_init({d, d}, d, rng);
        e.Co = uniform_init({d, d}, d, rng);
        e.W1 = uniform_init({d, h}, d, rng);
        e.b1 = Tensor({h}, 0.0);
        e.W2 = uniform_init({h, d}, h, rng);
        e.b2 = Tensor({d}, 0.0);
        p.dec_blocks.push_back(std::move(e));
    }
    p.out_proj = uniform_init({d, V}, d, rng);
    p.W_R = uniform_init({d, d}, d, rng);
    p.b_R = Tensor({d}, 0.0);
    return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("embedding", &embedding);
    for (size_t b = 0; b < enc_blocks.size(); ++b) {
        auto& e = enc_blocks[b];
        const std::string pre = "enc" + std::to_string(b) + ".";
        out.emplace_back(pre + "Wq", &e.Wq);
        out.emplace_back(pre + "Wk", &e.Wk);
        out.emplace_back(pre + "Wv", &e.Wv);
        out.emplace_back(pre + "Wo", &e.Wo);
        out.emplace_back(pre + "W1", &e.W1);
        out.emplace_back(pre + "b1", &e.b1);
        out.emplace_back(pre + "W2", &e.W2);
        out.emplace_back(pre + "b2", &e.b2);
    }
    out.emplace_back("W_h", &W_h);
    out.emplace_back("Wq_x", &Wq_x);
    out.emplace_back("Wk_x", &Wk_x);
    out.emplace_back("Wv_x", &Wv_x);
    out.emplace_back("W_l", &W_l);
    out.emplace_back("W_v", &W_v);
    for (size_t b = 0; b < dec_blocks.size(); ++b) {
        auto& e = dec_blocks[b];
        const std::string pre = "dec" + std::to_string(b) + ".";
        out.emplace_back(pre + "Sq", &e.Sq);
        out.emplace_back(pre + "Sk", &e.Sk);
        out.emplace_back(pre + "Sv", &e.Sv);
        out.emplace_back(pre + "So", &e.So);
        out.emplace_back(pre + "Cq", &e.Cq);
        out.emplace_back(pre + "Ck", &e.Ck);
        out.emplace_back(pre + "Cv", &e.Cv);
        out.emplace_back(pre + "Co", &e.Co);
        out.emplace_back(pre + "W1", &e.W1);
        out.emplace_back(pre + "b1", &e.b1);
        out.emplace_back(pre + "W2", &e.W2);
        out.emplace_back(pre + "b2", &e.b2);
    }
    out.emplace_back("out_proj", &out_proj);
    out.emplace_back("W_R", &W_R);
    out.emplace_back("b_R", &b_R);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
    auto mut = const_cast<ModelParams*>(this)->named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [n, t] : mut) out.emplace_back(n, t);
    return out;
}

void ModelParams::zero_grads() {
    for (auto& [n, t] : named_tensors()) t->zero_grad();
}

Tensor positional_encoding(int n, int d) {
    Tensor pe({n, d});
    for (int pos = 0; pos < n; ++pos) {
        for (int i = 0; i < d; ++i) {
            const double rate = std::pow(10000.0, -2.0 * (i / 2) / d);
            pe.at(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
        }
    }
    return pe;
}

namespace {

// Single-head scaled dot-product attention with output projection.
Var attention(Tape& t, Var X, Var Y, Tensor& Wq, Tensor& Wk, Tensor& Wv, Tensor& Wo,
              int d, const Tensor* mask) {
    Var Q = t.matmul(X, t.param(Wq));
    Var K = t.matmul(Y, t.param(Wk));
    Var V = t.matmul(Y, t.param(Wv));
    Var S = t.scale(t.matmul(Q, t.transpose(K)), 1.0 / std::sqrt(static_cast<double>(d)));
    if (mask) S = t.add(S, t.input(*mask));
    return t.matmul(t.matmul(t.softmax_rows(S), V), t.param(Wo));
}

Var ffn(Tape& t, Var X, Tensor& W1, Tensor& b1, Tensor& W2, Tensor& b2) {
    Var h = t.relu(t.add_rowwise(t.matmul(X, t.param(W1)), t.param(b1)));
    return t.add_rowwise(t.matmul(h, t.param(W2)), t.param(b2));
}

Tensor causal_mask(int n) {
    Tensor m({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) m.at(i, j) = -1e9;
    return m;
}

Var embed_sequence(Tape& t, const std::vector<int>& ids, ModelParams& p) {
    Var e = t.embedding_lookup(t.param(p.embedding), ids);
    return t.add(e, t.input(positional_encoding(static_cast<int>(ids.size()), p.cfg.d)));
}

} // namespace

Var encode_text(Tape& t, const std::vector<int>& tokens, ModelParams& p) {
    if (tokens.empty()) throw ContractError("encode_text: empty token sequence");
    std::vector<int> ids = tokens;
    if (static_cast<int>(ids.size()) > p.cfg.max_len) {
        // warn once per distinct (length, limit) pair; training repeats inputs
        static thread_local std::set<std::pair<size_t, int>> warned;
        if (warned.insert({ids.size(), p.cfg.max_len}).second)
            std::cerr << "[warn] TruncationApplied: input of " << ids.size()
                      << " tokens cut to " << p.cfg.max_len << "\n";
        ids.resize(static_cast<size_t>(p.cfg.max_len));
    }
    Var X = embed_sequence(t, ids, p);
    for (auto& b : p.enc_blocks) {
        X = t.add(X, attention(t, X, X, b.Wq, b.Wk, b.Wv, b.Wo, p.cfg.d, nullptr));
        X = t.add(X, ffn(t, X, b.W1, b.b1, b.W2, b.b2));
    }
    return X;
}

Var project_vision(Tape& t, const VisionFeatures& v, ModelParams& p) {
    if (v.patches.rank() != 2 || v.patches.cols() != p.cfg.d_v)
        throw ShapeError("project_vision: patches " + shape_str(v.patches) + " vs d_v=" +
                         std::to_string(p.cfg.d_v));
    return t.matmul(t.input(v.patches), t.transpose(t.param(p.W_h)));
}

Var cross_attention(Tape& t, Var H_l, Var H_v, ModelParams& p) {
    Var Q = t.matmul(H_l, t.param(p.Wq_x));
    Var K = t.matmul(H_v, t.param(p.Wk_x));
    Var V = t.matmul(H_v, t.param(p.Wv_x));
    Var S = t.scale(t.matmul(Q, t.transpose(K)), 1.0 / std::sqrt(static_cast<double>(p.cfg.d)));
    return t.matmul(t.softmax_rows(S), V);
}

Var gated_fusion(Tape& t, Var H_l, Var Hv_hat, ModelParams& p) {
    if (t.val(H_l).shape != t.val(Hv_hat).shape)
        throw ShapeError("gated_fusion: mismatched shapes");
    Var sig = t.sigmoid(t.add(t.matmul(H_l, t.param(p.W_l)), t.matmul(Hv_hat, t.param(p.W_v))));
    Var keep = t.add_const(t.scale(sig, -1.0), 1.0); // 1 - sigma
    return t.add(t.mul(keep, H_l), t.mul(sig, Hv_hat));
}

Var encode(Tape& t, const std::vector<int>& tokens, const VisionFeatures* vision,
           ModelParams& p) {
    Var H_l = encode_text(t, tokens, p);
    if (p.cfg.no_vision || vision == nullptr) return H_l;
    Var H_v = project_vision(t, *vision, p);
    Var Hv_hat = cross_attention(t, H_l, H_v, p);
    return gated_fusion(t, H_l, Hv_hat, p);
}

namespace {

// Decoder over an explicit input sequence (BOS-prefixed); returns N x V logits.
Var decoder_logits_from_input(Tape& t, Var H_Enc, const std::vector<int>& dec_input,
                              ModelParams& p) {
    const int n = static_cast<int>(dec_input.size());
    Tensor mask = causal_mask(n);
    Var X = embed_sequence(t, dec_input, p);
    for (auto& b : p.dec_blocks) {
        X = t.add(X, attention(t, X, X, b.Sq, b.Sk, b.Sv, b.So, p.cfg.d, &mask));
        X = t.add(X, attention(t, X, H_Enc, b.Cq, b.Ck, b.Cv, b.Co, p.cfg.d, nullptr));
        X = t.add(X, ffn(t, X, b.W1, b.b1, b.W2, b.b2));
    }
    return t.matmul(X, t.param(p.out_proj));
}

} // namespace

Var decoder_logits(Tape& t, Var H_Enc, const std::vector<int>& target, ModelParams& p) {
    if (target.empty()) throw ContractError("decoder_logits: empty target");
    std::vector<int> dec_input;
    dec_input.push_back(Vocab::kBos);
    dec_input.insert(dec_input.end(), target.begin(), target.end() - 1);
    return decoder_logits_from_input(t, H_Enc, dec_input, p);
}

Var decode_nll(Tape& t, Var H_Enc, const std::vector<int>& target, ModelParams& p) {
    Var logits = decoder_logits(t, H_Enc, target, p);
    return t.gather_nll(t.log_softmax_rows(logits), target);
}

std::vector<int> generate(const Tensor& H_Enc, ModelParams& p, int max_len) {
    if (max_len < 1) throw ConfigError("generate: max_len must be >= 1");
    std::vector<int> out;
    std::vector<int> dec_input = {Vocab::kBos};
    for (int step = 0; step < max_len; ++step) {
        Tape t;
        Var enc = t.input(H_Enc);
        Var logits = decoder_logits_from_input(t, enc, dec_input, p);
        const Tensor& L = t.val(logits);
        const int last = L.rows() - 1;
        int best = 0;
        for (int j = 1; j < L.cols(); ++j)
            if (L.at(last, j) > L.at(last, best)) best = j;
        if (best == Vocab::kEos) break;
        out.push_back(best);
        dec_input.push_back(best);
    }
    return out;
}

Tensor encode_value(const std::vector<int>& tokens, const VisionFeatures* vision,
                    ModelParams& p) {
    Tape t;
    return t.val(encode(t, tokens, vision, p));
}

// ---------------------------------------------------------------- checkpoint

namespace {

std::string hex_encode(const std::vector<double>& v) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(v.size() * 16);
    for (double x : v) {
        const uint64_t bits = std::bit_cast<uint64_t>(x);
        for (int shift = 60; shift >= 0; shift -= 4)
            s.push_back(digits[(bits >> shift) & 0xf]);
    }
    return s;
}

std::vector<double> hex_decode(const std::string& s) {
    if (s.size() % 16 != 0) throw CheckpointError("corrupt tensor payload");
    std::vector<double> v(s.size() / 16);
    for (size_t i = 0; i < v.size(); ++i) {
        uint64_t bits = 0;
        for (size_t j = 0; j < 16; ++j) {
            const char c = s[i * 16 + j];
            uint64_t nib;
            if (c >= '0' && c <= '9') nib = static_cast<uint64_t>(c - '0');
            else if (c >= 'a' && c <= 'f') nib = static_cast<uint64_t>(c - 'a' + 10);
            else throw CheckpointError("corrupt tensor payload");
            bits = (bits << 4) | nib;
        }
        v[i] = std::bit_cast<double>(bits);
    }
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const ModelParams& p, const Vocab& vocab) {
    nlohmann::json j;
    j["version"] = 1;
    j["config"] = {{"d", p.cfg.d},       {"d_v", p.cfg.d_v},
                   {"n_blocks", p.cfg.n_blocks}, {"ffn_hidden", p.cfg.ffn_hidden},
                   {"vocab", p.cfg.vocab},       {"max_len", p.cfg.max_len},
                   {"no_vision", p.cfg.no_vision}};
    j["vocab"] = vocab.tokens;
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, t] : p.named_tensors())
        tensors[name] = {{"shape", t->shape}, {"hex", hex_encode(t->data)}};
    j["tensors"] = std::move(tensors);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    out << j.dump() << '\n';
}

std::pair<ModelParams, Vocab> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw CheckpointError("malformed checkpoint " + path + ": " + e.what());
    }
    if (j.value("version", 0) != 1) throw CheckpointError("unsupported checkpoint version");
    ModelConfig cfg;
    const auto& c = j.at("config");
    cfg.d = c.at("d");
    cfg.d_v = c.at("d_v");
    cfg.n_blocks = c.at("n_blocks");
    cfg.ffn_hidden = c.at("ffn_hidden");
    cfg.vocab = c.at("vocab");
    cfg.max_len = c.at("max_len");
    cfg.no_vision = c.at("no_vision");
    Rng dummy(0);
    ModelParams p = ModelParams::init(cfg, dummy);
    for (auto& [name, t] : p.named_tensors()) {
        if (!j.at("tensors").contains(name))
            throw CheckpointError("checkpoint missing tensor " + name);
        const auto& entry = j.at("tensors").at(name);
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        if (shape != t->shape) throw CheckpointError("shape mismatch for tensor " + name);
        const size_t expected = t->numel();
        auto data = hex_decode(entry.at("hex").get<std::string>());
        if (data.size() != expected) throw CheckpointError("size mismatch for " + name);
        t->data = std::move(data);
    }
    Vocab v;
    v.tokens = j.at("vocab").get<std::vector<std::string>>();
    for (int i = 0; i < v.size(); ++i) v.index[v.tokens[static_cast<size_t>(i)]] = i;
    return {std::move(p), std::move(v)};
}

} // namespace snse
