#include "snse/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "snse/errors.hpp"

namespace snse {

using nlohmann::json;

// ------------------------------------------------------------------ config

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("bad boolean for " + key + ": " + v);
}

} // namespace

TrainConfig TrainConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "alpha") cfg.alpha = std::stod(val);
            else if (key == "beta") cfg.beta = std::stod(val);
            else if (key == "lambda") cfg.lambda = std::stod(val);
            else if (key == "lr") cfg.lr = std::stod(val);
            else if (key == "momentum") cfg.momentum = std::stod(val);
            else if (key == "epochs") cfg.epochs = std::stoi(val);
            else if (key == "seed") cfg.seed = std::stoull(val);
            else if (key == "max_len_rationale") cfg.max_len_rationale = std::stoi(val);
            else if (key == "max_len_answer") cfg.max_len_answer = std::stoi(val);
            else if (key == "disable_number") cfg.disable_number = parse_bool(val, key);
            else if (key == "disable_orientation") cfg.disable_orientation = parse_bool(val, key);
            else if (key == "disable_unit") cfg.disable_unit = parse_bool(val, key);
            else if (key == "disable_option") cfg.disable_option = parse_bool(val, key);
            else if (key == "fixed_negatives") cfg.fixed_negatives = parse_bool(val, key);
            else if (key == "no_vision") cfg.no_vision = parse_bool(val, key);
            else if (key == "bml_mode") cfg.bml_mode = val;
            else if (key == "mods_per_sample") cfg.mods_per_sample = (val == "all") ? 0 : std::stoi(val);
            else if (key == "stop_grad_negatives") cfg.stop_grad_negatives = parse_bool(val, key);
            else if (key == "answer_stage_uses_gold") cfg.answer_stage_uses_gold = parse_bool(val, key);
            else if (key == "eval_every") cfg.eval_every = std::stoi(val);
            else if (key == "d") cfg.d = std::stoi(val);
            else if (key == "d_v") cfg.d_v = std::stoi(val);
            else if (key == "n_blocks") cfg.n_blocks = std::stoi(val);
            else if (key == "ffn_hidden") cfg.ffn_hidden = std::stoi(val);
            else if (key == "max_gen_rationale") cfg.max_gen_rationale = std::stoi(val);
            else if (key == "max_gen_answer") cfg.max_gen_answer = std::stoi(val);
            else throw ConfigError("unknown config key: " + key);
        } catch (const std::invalid_argument&) {
            throw ConfigError("config line " + std::to_string(lineno) + ": bad value for " + key);
        }
    }
    bml_mode_from_name(cfg.bml_mode); // validate early
    return cfg;
}

SamplerConfig TrainConfig::sampler_config() const {
    SamplerConfig s;
    s.seed = seed;
    s.fixed_negatives = fixed_negatives;
    s.mods_per_sample = mods_per_sample;
    s.disable_number = disable_number;
    s.disable_orientation = disable_orientation;
    s.disable_unit = disable_unit;
    s.disable_option = disable_option;
    return s;
}

// ------------------------------------------------------------------ corpus

namespace {

json record_to_json(const Record& r) {
    json v;
    v["m"] = r.vision.patches.rank() == 2 ? r.vision.patches.rows() : 0;
    v["d_v"] = r.vision.patches.rank() == 2 ? r.vision.patches.cols() : 0;
    v["data"] = r.vision.patches.data;
    json j;
    j["id"] = r.id;
    j["question"] = r.question;
    j["context"] = r.context;
    j["options"] = r.options;
    j["answer_index"] = r.answer_index;
    j["lecture"] = r.lecture;
    j["explanation"] = r.explanation;
    j["category"] = r.category;
    j["split"] = r.split;
    j["vision"] = v;
    return j;
}

Record record_from_json(const json& j, int lineno) {
    auto need = [&](const char* key) -> const json& {
        auto it = j.find(key);
        if (it == j.end())
            throw SchemaError("line " + std::to_string(lineno) + ": missing field " + key);
        return *it;
    };
    Record r;
    try {
        r.id = need("id").get<std::string>();
        r.question = need("question").get<std::string>();
        r.context = need("context").get<std::string>();
        r.options = need("options").get<std::vector<std::string>>();
        r.answer_index = need("answer_index").get<int>();
        r.lecture = need("lecture").get<std::string>();
        r.explanation = need("explanation").get<std::string>();
        r.category = need("category").get<std::string>();
        r.split = need("split").get<std::string>();
        const json& v = need("vision");
        const int m = v.at("m").get<int>();
        const int d_v = v.at("d_v").get<int>();
        std::vector<double> data = v.at("data").get<std::vector<double>>();
        if (static_cast<size_t>(m) * static_cast<size_t>(d_v) != data.size())
            throw SchemaError(r.id + ": vision data size " + std::to_string(data.size()) +
                              " != m*d_v");
        r.vision.patches = Tensor({m, d_v}, std::move(data));
    } catch (const json::exception& e) {
        throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (r.options.empty()) throw SchemaError(r.id + ": options must be non-empty");
    if (r.answer_index < 0 || r.answer_index >= static_cast<int>(r.options.size()))
        throw SchemaError(r.id + ": answer_index " + std::to_string(r.answer_index) +
                          " out of range for " + std::to_string(r.options.size()) + " options");
    if (r.split != "train" && r.split != "val" && r.split != "test")
        throw SchemaError(r.id + ": bad split " + r.split);
    return r;
}

} // namespace

std::vector<Record> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open corpus file: " + path);
    std::vector<Record> out;
    std::set<std::string> ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
        }
        Record r = record_from_json(j, lineno);
        if (!ids.insert(r.id).second) throw SchemaError(r.id + ": duplicate id");
        out.push_back(std::move(r));
    }
    return out;
}

void save_corpus(const std::string& path, const std::vector<Record>& corpus) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open for write: " + path);
    for (const Record& r : corpus) out << record_to_json(r).dump() << "\n";
}

namespace {

constexpr int kSynthPatches = 4;
constexpr int kSynthDv = 32;

// Patch features carrying a small class signal plus per-record noise. The
// fact id is linearly decodable from any row, which keeps the toy task
// learnable while still requiring the vision pathway.
Tensor synth_patches(int fact, Rng& rng) {
    Tensor t({kSynthPatches, kSynthDv});
    for (int r = 0; r < kSynthPatches; ++r)
        for (int j = 0; j < kSynthDv; ++j)
            t.at(r, j) = (j % 4 == fact ? 1.5 : -0.5) + rng.next_real(-0.2, 0.2);
    return t;
}

const char* kDirections[4] = {"north", "south", "east", "west"};

} // namespace

std::vector<Record> synth_corpus(int n, uint64_t seed) {
    if (n < 1) throw ConfigError("synth_corpus: n must be >= 1");
    Rng rng(seed);
    std::vector<Record> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Record r;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "synth-%04d", i);
        r.id = buf;
        const int rem = i % 10;
        r.split = rem < 7 ? "train" : (rem < 9 ? "val" : "test");
        const int tmpl = i % 4;
        const int cycle = i / 4;
        int fact = 0;
        switch (tmpl) {
        case 0: {
            r.category = "magnets";
            fact = cycle % 2;
            r.question = "Will these two magnets attract or repel each other?";
            r.context = "The image shows two magnets placed end to end.";
            r.options = {"attract", "repel"};
            r.answer_index = fact;
            r.lecture = "Magnets have 2 poles. Whether magnets attract or repel depends on "
                        "the positions of their poles.";
            r.explanation =
                fact == 0
                    ? "The north pole of one magnet is closest to the south pole of the other "
                      "magnet. These magnets will attract each other."
                    : "The north pole of one magnet is closest to the north pole of the other "
                      "magnet. These magnets will repel each other.";
            break;
        }
        case 1: {
            r.category = "weather";
            fact = cycle % 2;
            r.question = "Is the weather in the picture hot or cold?";
            r.context = "The image shows an outdoor thermometer.";
            r.options = {"hot", "cold"};
            r.answer_index = fact;
            r.lecture = "Air temperature can be measured in °C or °F. The temperature on a "
                        "hot day is higher than on a cold day.";
            r.explanation = fact == 0
                                ? "The thermometer shows 36°C. The temperature is higher than "
                                  "usual. The weather is hot."
                                : "The thermometer shows 4°C. The temperature is lower than "
                                  "usual. The weather is cold.";
            break;
        }
        case 2: {
            r.category = "maps";
            fact = cycle % 4;
            r.question = "Which direction is the island from the mainland?";
            r.context = "The image shows a map with a compass rose.";
            r.options = {"north", "south", "east", "west"};
            r.answer_index = fact;
            r.lecture = "A compass rose shows 4 directions. Maps use north, south, east, "
                        "and west.";
            r.explanation =
                std::string("The island is ") + kDirections[fact] + " of the mainland.";
            break;
        }
        default: {
            r.category = "counting";
            fact = cycle % 2;
            r.question = "How many marbles are on the left side of the tray?";
            r.context = "The image shows a tray of marbles.";
            r.options = {"3", "8"};
            r.answer_index = fact;
            r.lecture = "Counting tells you how many objects there are in a group.";
            r.explanation = std::string("There are ") + (fact == 0 ? "3" : "8") +
                            " marbles on the left side of the tray.";
            break;
        }
        }
        r.vision.patches = synth_patches(fact, rng);
        out.push_back(std::move(r));
    }
    return out;
}

Vocab build_vocab(const std::vector<Record>& corpus) {
    std::vector<std::string> texts;
    for (const Record& r : corpus) {
        texts.push_back(r.question);
        texts.push_back(r.context);
        for (const auto& o : r.options) texts.push_back(o);
        texts.push_back(r.lecture);
        texts.push_back(r.explanation);
    }
    texts.push_back("Question: Context: Options: Solution: The answer is Not .");
    texts.push_back("( a ) ( b ) ( c ) ( d ) ( e ) ( f ) ( g ) ( h )");
    return Vocab::build(texts);
}

// ------------------------------------------------------------------ prompts

std::string build_rationale_prompt(const Record& rec) {
    std::string s = "Question: " + rec.question;
    if (!rec.context.empty()) s += " Context: " + rec.context;
    s += " Options:";
    for (size_t i = 0; i < rec.options.size(); ++i) {
        s += " (";
        s += static_cast<char>('A' + i);
        s += ") " + rec.options[i];
    }
    return s;
}

std::string build_answer_prompt(const Record& rec, const std::string& rationale) {
    return build_rationale_prompt(rec) + " Solution: " + rationale;
}

std::string answer_target(const Record& rec) {
    std::string s = "The answer is (";
    s += static_cast<char>('A' + rec.answer_index);
    s += ").";
    return s;
}

AnswerParse extract_answer(const std::string& generated,
                           const std::vector<std::string>& options) {
    std::string low;
    low.reserve(generated.size());
    for (char c : generated) low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));

    for (size_t i = 0; i < low.size(); ++i) {
        if (low[i] != '(') continue;
        size_t j = i + 1;
        while (j < low.size() && low[j] == ' ') ++j;
        if (j >= low.size() || low[j] < 'a' || low[j] > 'z') continue;
        const int idx = low[j] - 'a';
        size_t k = j + 1;
        while (k < low.size() && low[k] == ' ') ++k;
        if (k >= low.size() || low[k] != ')') continue;
        if (idx < static_cast<int>(options.size())) return {idx, true};
    }
    for (size_t i = 0; i < options.size(); ++i) {
        std::string opt;
        for (char c : options[i])
            opt.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        if (!opt.empty() && low.find(opt) != std::string::npos)
            return {static_cast<int>(i), true};
    }
    return {0, false};
}

// ------------------------------------------------------------------ metrics

double rouge_l(const std::string& candidate, const std::string& reference) {
    const std::vector<std::string> c = tokenize(candidate);
    const std::vector<std::string> r = tokenize(reference);
    if (r.empty()) {
        std::cerr << "[warn] rouge_l: empty reference, returning 0\n";
        return 0.0;
    }
    if (c.empty()) return 0.0;
    const size_t n = c.size(), m = r.size();
    std::vector<size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j)
            cur[j] = c[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[m]);
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(n);
    const double rr = lcs / static_cast<double>(m);
    return 2.0 * p * rr / (p + rr);
}

std::vector<const Record*> split_of(const std::vector<Record>& corpus,
                                    const std::string& split) {
    std::vector<const Record*> out;
    for (const Record& r : corpus)
        if (r.split == split) out.push_back(&r);
    return out;
}

// ------------------------------------------------------------------ training

namespace {

struct Sgd {
    double lr;
    double momentum;
    std::vector<std::vector<double>> velocity;

    void step(ModelParams& p) {
        auto named = p.named_tensors();
        if (velocity.empty())
            for (auto& [name, t] : named) velocity.emplace_back(t->numel(), 0.0);
        for (size_t i = 0; i < named.size(); ++i) {
            Tensor* t = named[i].second;
            t->ensure_grad();
            auto& v = velocity[i];
            for (size_t j = 0; j < t->data.size(); ++j) {
                v[j] = momentum * v[j] + t->grad[j];
                t->data[j] -= lr * v[j];
            }
        }
    }
};

void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
    for (size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.next_below(i)]);
}

ModelConfig model_config(const TrainConfig& cfg, int vocab_size, int max_len) {
    ModelConfig mc;
    mc.d = cfg.d;
    mc.d_v = cfg.d_v;
    mc.n_blocks = cfg.n_blocks;
    mc.ffn_hidden = cfg.ffn_hidden;
    mc.vocab = vocab_size;
    mc.max_len = max_len;
    mc.no_vision = cfg.no_vision;
    return mc;
}

RationaleSource rationale_source(const Record& r) {
    return {r.id, r.lecture, r.explanation, r.options, r.answer_index};
}

} // namespace

TrainResult train_rationale_stage(const std::vector<Record>& corpus, const TrainConfig& cfg) {
    auto train = split_of(corpus, "train");
    auto val = split_of(corpus, "val");
    if (train.empty() || val.empty())
        throw ConfigError("train_rationale_stage: train and val splits must be non-empty");

    TrainResult res;
    res.vocab = build_vocab(corpus);
    Rng rng(cfg.seed);
    ModelParams params =
        ModelParams::init(model_config(cfg, res.vocab.size(), cfg.max_len_rationale), rng);
    Sgd sgd{cfg.lr, cfg.momentum, {}};
    const BmlMode mode = bml_mode_from_name(cfg.bml_mode);
    const Lexicons lex = Lexicons::defaults();
    const SamplerConfig scfg = cfg.sampler_config();

    ModelParams best = params;
    double best_rouge = -1.0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng order_rng(derive_seed(cfg.seed, "epoch_order|" + std::to_string(epoch)));
        shuffle_indices(order, order_rng);

        double sum_nll = 0, sum_bml = 0, sum_delta = 0;
        long n_delta = 0;
        int step = 0;
        for (size_t oi : order) {
            const Record& rec = *train[oi];
            const std::string gold = gold_rationale(rec.lecture, rec.explanation);
            const std::vector<int> prompt = res.vocab.encode(build_rationale_prompt(rec));
            std::vector<int> target = res.vocab.encode(gold);
            target.push_back(Vocab::kEos);

            std::vector<SoftNegative> negs;
            if (cfg.lambda > 0.0) {
                negs = sample_soft_negatives(rationale_source(rec), lex, scfg, epoch);
                for (const auto& neg : negs) ++res.negative_method_counts[method_name(neg.method)];
            }

            Tape t;
            Var enc = encode(t, prompt, &rec.vision, params);
            Var logits = decoder_logits(t, enc, target, params);
            // mean per-token NLL keeps step sizes comparable across lengths
            Var nll = t.scale(t.gather_nll(t.log_softmax_rows(logits), target),
                              1.0 / static_cast<double>(target.size()));
            Var loss = nll;
            double bml_v = 0.0;
            if (cfg.lambda > 0.0 && !negs.empty()) {
                Var h_i = generated_embedding(t, logits, params, mode);
                Var h_pos = embed_rationale(t, res.vocab.encode(gold), params, res.vocab);
                std::vector<Var> h_negs;
                for (const auto& neg : negs) {
                    if (cfg.stop_grad_negatives)
                        h_negs.push_back(t.input(
                            embed_rationale_value(res.vocab.encode(neg.text), params, res.vocab)));
                    else
                        h_negs.push_back(
                            embed_rationale(t, res.vocab.encode(neg.text), params, res.vocab));
                }
                Var bml = bml_loss(t, h_i, h_pos, h_negs, cfg.alpha, cfg.beta);
                bml_v = t.val(bml).item();
                for (Var h_neg : h_negs) {
                    sum_delta += similarity_delta(t.val(h_i), t.val(h_pos), t.val(h_neg));
                    ++n_delta;
                }
                loss = rg_objective(t, nll, bml, cfg.lambda);
            }
            const double loss_v = t.val(loss).item();
            if (!std::isfinite(loss_v))
                throw TrainingDiverged("rationale stage: non-finite loss at epoch " +
                                       std::to_string(epoch + 1) + " step " +
                                       std::to_string(step + 1));
            sum_nll += t.val(nll).item();
            sum_bml += bml_v;
            params.zero_grads();
            t.backward(loss);
            sgd.step(params);
            ++step;
        }

        EpochLog log;
        log.epoch = epoch + 1;
        log.nll = sum_nll / static_cast<double>(train.size());
        log.bml = sum_bml / static_cast<double>(train.size());
        log.mean_delta = n_delta > 0 ? sum_delta / static_cast<double>(n_delta) : 0.0;

        const bool eval_now = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        if (eval_now) {
            double sum_rouge = 0;
            for (const Record* v : val) {
                Tensor H = encode_value(res.vocab.encode(build_rationale_prompt(*v)),
                                        &v->vision, params);
                const std::vector<int> ids = generate(H, params, cfg.max_gen_rationale);
                sum_rouge += rouge_l(res.vocab.decode(ids),
                                     gold_rationale(v->lecture, v->explanation));
            }
            log.rouge_l = sum_rouge / static_cast<double>(val.size());
            if (log.rouge_l > best_rouge) { // ties keep the earliest epoch
                best_rouge = log.rouge_l;
                best = params;
                res.best_epoch = epoch + 1;
            }
        }
        res.log.push_back(log);
    }
    res.params = std::move(best);
    res.best_metric = best_rouge;
    return res;
}

TrainResult train_answer_stage(const std::vector<Record>& corpus,
                               const std::map<std::string, std::string>* rationales,
                               const TrainConfig& cfg) {
    auto train = split_of(corpus, "train");
    auto val = split_of(corpus, "val");
    if (train.empty() || val.empty())
        throw ConfigError("train_answer_stage: train and val splits must be non-empty");

    TrainResult res;
    res.vocab = build_vocab(corpus);
    Rng rng(cfg.seed);
    ModelParams params =
        ModelParams::init(model_config(cfg, res.vocab.size(), cfg.max_len_answer), rng);
    Sgd sgd{cfg.lr, cfg.momentum, {}};

    bool warned_missing = false;
    auto rationale_for = [&](const Record& r) -> std::string {
        if (rationales != nullptr) {
            auto it = rationales->find(r.id);
            if (it != rationales->end()) return it->second;
            if (!warned_missing) {
                std::cerr << "[warn] no rationale for record " << r.id
                          << "; falling back to gold\n";
                warned_missing = true;
            }
        }
        return gold_rationale(r.lecture, r.explanation);
    };

    ModelParams best = params;
    double best_acc = -1.0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng order_rng(derive_seed(cfg.seed, "epoch_order|" + std::to_string(epoch)));
        shuffle_indices(order, order_rng);

        double sum_nll = 0;
        int step = 0;
        for (size_t oi : order) {
            const Record& rec = *train[oi];
            const std::vector<int> prompt =
                res.vocab.encode(build_answer_prompt(rec, rationale_for(rec)));
            std::vector<int> target = res.vocab.encode(answer_target(rec));
            target.push_back(Vocab::kEos);

            Tape t;
            Var enc = encode(t, prompt, &rec.vision, params);
            Var nll = t.scale(decode_nll(t, enc, target, params),
                              1.0 / static_cast<double>(target.size()));
            const double loss_v = t.val(nll).item();
            if (!std::isfinite(loss_v))
                throw TrainingDiverged("answer stage: non-finite loss at epoch " +
                                       std::to_string(epoch + 1) + " step " +
                                       std::to_string(step + 1));
            sum_nll += loss_v;
            params.zero_grads();
            t.backward(nll);
            sgd.step(params);
            ++step;
        }

        EpochLog log;
        log.epoch = epoch + 1;
        log.nll = sum_nll / static_cast<double>(train.size());

        const bool eval_now = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        if (eval_now) {
            int correct = 0;
            for (const Record* v : val) {
                Tensor H = encode_value(
                    res.vocab.encode(build_answer_prompt(*v, rationale_for(*v))), &v->vision,
                    params);
                const std::vector<int> ids = generate(H, params, cfg.max_gen_answer);
                const AnswerParse a = extract_answer(res.vocab.decode(ids), v->options);
                if (a.index == v->answer_index) ++correct;
            }
            log.accuracy = static_cast<double>(correct) / static_cast<double>(val.size());
            if (log.accuracy > best_acc) {
                best_acc = log.accuracy;
                best = params;
                res.best_epoch = epoch + 1;
            }
        }
        res.log.push_back(log);
    }
    res.params = std::move(best);
    res.best_metric = best_acc;
    return res;
}

// ------------------------------------------------------------------ inference

TwoStageOutput infer_two_stage(const Record& rec, ModelParams& f, const Vocab& f_vocab,
                               ModelParams& g, const Vocab& g_vocab,
                               const TrainConfig& cfg) {
    Tensor H_f = encode_value(f_vocab.encode(build_rationale_prompt(rec)), &rec.vision, f);
    const std::string rationale =
        f_vocab.decode(generate(H_f, f, cfg.max_gen_rationale));
    Tensor H_g =
        encode_value(g_vocab.encode(build_answer_prompt(rec, rationale)), &rec.vision, g);
    const AnswerParse a =
        extract_answer(g_vocab.decode(generate(H_g, g, cfg.max_gen_answer)), rec.options);
    return {rationale, a.index, a.parsed};
}

EvalResult evaluate(const std::vector<Record>& records, ModelParams& f,
                    const Vocab& f_vocab, ModelParams& g, const Vocab& g_vocab,
                    const TrainConfig& cfg) {
    EvalResult res;
    std::map<std::string, std::pair<int, int>> per_cat; // correct, total
    double sum_rouge = 0;
    for (const Record& r : records) {
        const TwoStageOutput out = infer_two_stage(r, f, f_vocab, g, g_vocab, cfg);
        const bool correct = out.answer_index == r.answer_index;
        sum_rouge += rouge_l(out.rationale, gold_rationale(r.lecture, r.explanation));
        auto& [c, t] = per_cat[r.category];
        c += correct ? 1 : 0;
        ++t;
        res.accuracy += correct ? 1.0 : 0.0;
        ++res.n;
    }
    if (res.n > 0) {
        res.accuracy /= static_cast<double>(res.n);
        res.mean_rouge_l = sum_rouge / static_cast<double>(res.n);
    }
    for (const auto& [cat, ct] : per_cat)
        res.per_category_accuracy[cat] =
            static_cast<double>(ct.first) / static_cast<double>(ct.second);
    return res;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open metrics file for write: " + path);
    out << "epoch,nll,bml,mean_delta,rouge_l,accuracy\n";
    char buf[64];
    auto fmt = [&](double v) -> std::string {
        if (std::isnan(v)) return "";
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return buf;
    };
    for (const EpochLog& e : log)
        out << e.epoch << ',' << fmt(e.nll) << ',' << fmt(e.bml) << ',' << fmt(e.mean_delta)
            << ',' << fmt(e.rouge_l) << ',' << fmt(e.accuracy) << "\n";
}

} // namespace snse
