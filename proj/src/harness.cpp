#include "snse/harness.hpp"

#include <cstdio>
#include <fstream>

#include "snse/bml.hpp"
#include "snse/errors.hpp"

namespace snse {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

SweepSpec SweepSpec::paper_preset(const TrainConfig& base) {
    SweepSpec s;
    s.lambda_set = {0.0, 0.01, 0.1, 1.0};
    s.alpha_set = {0.0, 0.1, 0.2, 0.3};
    s.beta_set = {0.1, 0.3, 0.5, 2.0};
    s.base = base;
    return s;
}

RunOutcome run_two_stage(const std::vector<Record>& corpus, const TrainConfig& cfg) {
    TrainResult f = train_rationale_stage(corpus, cfg);
    TrainResult g = train_answer_stage(corpus, nullptr, cfg);
    RunOutcome out;
    out.val_rouge_l = f.best_metric;
    out.method_counts = f.negative_method_counts;
    auto test = split_of(corpus, "test");
    std::vector<Record> test_records;
    for (const Record* r : test) test_records.push_back(*r);
    EvalResult ev = evaluate(test_records, f.params, f.vocab, g.params, g.vocab, cfg);
    out.test_accuracy = ev.accuracy;
    out.test_rouge_l = ev.mean_rouge_l;
    return out;
}

std::vector<SweepCell> grid_sweep(const SweepSpec& spec, const std::vector<Record>& corpus) {
    if (spec.lambda_set.empty() || spec.alpha_set.empty() || spec.beta_set.empty())
        throw ConfigError("grid_sweep: empty grid");
    if (spec.repetitions < 1) throw ConfigError("grid_sweep: repetitions must be >= 1");
    std::vector<SweepCell> cells;
    for (double lambda : spec.lambda_set)
        for (double alpha : spec.alpha_set)
            for (double beta : spec.beta_set)
                for (int rep = 0; rep < spec.repetitions; ++rep) {
                    SweepCell cell;
                    cell.lambda = lambda;
                    cell.alpha = alpha;
                    cell.beta = beta;
                    cell.repetition = rep;
                    cell.config = spec.base;
                    cell.config.lambda = lambda;
                    cell.config.alpha = alpha;
                    cell.config.beta = beta;
                    cell.config.seed = spec.base.seed + static_cast<uint64_t>(rep);
                    if (alpha > beta && beta != 2.0) {
                        cell.skipped = true;
                        cell.skip_reason = "alpha > beta";
                    } else {
                        const RunOutcome out = run_two_stage(corpus, cell.config);
                        cell.val_rouge_l = out.val_rouge_l;
                        cell.test_accuracy = out.test_accuracy;
                    }
                    cells.push_back(std::move(cell));
                }
    return cells;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepCell>& cells) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open sweep file for write: " + path);
    out << "lambda,alpha,beta,repetition,seed,skipped,skip_reason,val_rouge_l,test_accuracy\n";
    for (const SweepCell& c : cells) {
        out << fmt(c.lambda) << ',' << fmt(c.alpha) << ',' << fmt(c.beta) << ','
            << c.repetition << ',' << c.config.seed << ',' << (c.skipped ? 1 : 0) << ','
            << c.skip_reason << ',';
        if (c.skipped)
            out << ",\n";
        else
            out << fmt(c.val_rouge_l) << ',' << fmt(c.test_accuracy) << "\n";
    }
}

std::vector<AblationRow> run_ablations(const std::vector<Record>& corpus,
                                       const TrainConfig& base, int table) {
    if (table != 0 && table != 2 && table != 3 && table != 6)
        throw ConfigError("run_ablations: table must be 0, 2, 3 or 6");

    std::vector<std::pair<std::string, TrainConfig>> variants;
    auto add = [&](const std::string& name, auto mutate) {
        TrainConfig c = base;
        mutate(c);
        variants.emplace_back(name, c);
    };
    add("full", [](TrainConfig&) {});
    if (table == 0 || table == 2) {
        add("w/o number", [](TrainConfig& c) { c.disable_number = true; });
        add("w/o orientation", [](TrainConfig& c) { c.disable_orientation = true; });
        add("w/o unit", [](TrainConfig& c) { c.disable_unit = true; });
        add("w/o option", [](TrainConfig& c) { c.disable_option = true; });
        add("w/o random", [](TrainConfig& c) { c.fixed_negatives = true; });
    }
    if (table == 0 || table == 3) {
        add("mods 1", [](TrainConfig& c) { c.mods_per_sample = 1; });
        add("mods 2", [](TrainConfig& c) { c.mods_per_sample = 2; });
        add("mods 3", [](TrainConfig& c) { c.mods_per_sample = 3; });
        add("mods all", [](TrainConfig& c) { c.mods_per_sample = 0; });
    }
    if (table == 0 || table == 6)
        add("w/o vision", [](TrainConfig& c) { c.no_vision = true; });

    std::vector<AblationRow> rows;
    double full_acc = 0;
    for (const auto& [name, cfg] : variants) {
        const RunOutcome out = run_two_stage(corpus, cfg);
        AblationRow row;
        row.name = name;
        row.config = cfg;
        row.test_accuracy = out.test_accuracy;
        row.val_rouge_l = out.val_rouge_l;
        row.method_counts = out.method_counts;
        if (name == "full") full_acc = out.test_accuracy;
        row.delta_vs_full = out.test_accuracy - full_acc;
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open ablation file for write: " + path);
    out << "name,seed,test_accuracy,delta_vs_full,val_rouge_l,"
           "negation,number,orientation,unit,option\n";
    for (const AblationRow& r : rows) {
        auto count = [&](const char* m) {
            auto it = r.method_counts.find(m);
            return it == r.method_counts.end() ? 0L : it->second;
        };
        out << r.name << ',' << r.config.seed << ',' << fmt(r.test_accuracy) << ','
            << fmt(r.delta_vs_full) << ',' << fmt(r.val_rouge_l) << ',' << count("negation")
            << ',' << count("number") << ',' << count("orientation") << ',' << count("unit")
            << ',' << count("option") << "\n";
    }
}

std::vector<LatentRow> export_latents(const std::vector<Record>& corpus, int n,
                                      uint64_t sample_seed, ModelParams& f,
                                      const Vocab& vocab, const SamplerConfig& scfg,
                                      int max_gen) {
    if (n < 1) throw ConfigError("export_latents: n must be >= 1");
    if (corpus.empty()) throw ConfigError("export_latents: empty corpus");
    std::vector<size_t> idx(corpus.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(sample_seed);
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.next_below(i)]);
    if (static_cast<size_t>(n) < idx.size()) idx.resize(static_cast<size_t>(n));

    const Lexicons lex = Lexicons::defaults();
    std::vector<LatentRow> rows;
    for (size_t i : idx) {
        const Record& rec = corpus[i];
        const std::string gold = gold_rationale(rec.lecture, rec.explanation);

        Tensor H = encode_value(vocab.encode(build_rationale_prompt(rec)), &rec.vision, f);
        const std::vector<int> gen_ids = generate(H, f, max_gen);
        rows.push_back({rec.id, "generated", "-",
                        embed_rationale_value(gen_ids, f, vocab).data});
        rows.push_back({rec.id, "positive", "-",
                        embed_rationale_value(vocab.encode(gold), f, vocab).data});

        RationaleSource src{rec.id, rec.lecture, rec.explanation, rec.options,
                            rec.answer_index};
        for (const SoftNegative& neg : sample_soft_negatives(src, lex, scfg, 0))
            rows.push_back({rec.id, "softneg", method_name(neg.method),
                            embed_rationale_value(vocab.encode(neg.text), f, vocab).data});
    }
    return rows;
}

void write_latents_tsv(const std::string& path, const std::vector<LatentRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open latents file for write: " + path);
    if (rows.empty()) throw ConfigError("write_latents_tsv: no rows");
    const size_t d = rows.front().h.size();
    out << "id\trole\tmethod";
    for (size_t j = 0; j < d; ++j) out << "\th_" << j;
    out << "\n";
    for (const LatentRow& r : rows) {
        out << r.id << '\t' << r.role << '\t' << r.method;
        for (double v : r.h) out << '\t' << fmt(v);
        out << "\n";
    }
}

} // namespace snse
