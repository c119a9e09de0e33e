#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "snse/errors.hpp"
#include "snse/harness.hpp"
#include "snse/pipeline.hpp"

using namespace snse;
using nlohmann::json;

namespace {

TrainConfig load_config(const std::string& path) {
    return path.empty() ? TrainConfig{} : TrainConfig::from_file(path);
}

void ensure_dir(const std::string& dir) { std::filesystem::create_directories(dir); }

json config_json(const TrainConfig& c) {
    json j;
    j["alpha"] = c.alpha;
    j["beta"] = c.beta;
    j["lambda"] = c.lambda;
    j["lr"] = c.lr;
    j["momentum"] = c.momentum;
    j["epochs"] = c.epochs;
    j["seed"] = c.seed;
    j["bml_mode"] = c.bml_mode;
    j["mods_per_sample"] = c.mods_per_sample;
    j["fixed_negatives"] = c.fixed_negatives;
    j["no_vision"] = c.no_vision;
    j["disable_number"] = c.disable_number;
    j["disable_orientation"] = c.disable_orientation;
    j["disable_unit"] = c.disable_unit;
    j["disable_option"] = c.disable_option;
    j["d"] = c.d;
    j["d_v"] = c.d_v;
    j["n_blocks"] = c.n_blocks;
    j["ffn_hidden"] = c.ffn_hidden;
    return j;
}

void write_summary(const std::string& path, const TrainResult& res, const TrainConfig& cfg,
                   const std::string& stage) {
    json j;
    j["stage"] = stage;
    j["best_epoch"] = res.best_epoch;
    j["best_metric"] = res.best_metric;
    j["epochs_run"] = res.log.size();
    j["negative_method_counts"] = res.negative_method_counts;
    j["config"] = config_json(cfg);
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

std::map<std::string, std::string> load_rationales(const std::string& path) {
    std::map<std::string, std::string> out;
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open rationales file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
        }
        out[j.at("id").get<std::string>()] = j.at("rationale").get<std::string>();
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage multimodal QA with soft-negative contrastive training"};
    app.require_subcommand(1);

    std::string config_path, corpus_path, out_path, out_dir;
    std::string f_ckpt, g_ckpt, rationales_path;
    int n = 50;
    uint64_t seed = 42;
    int epoch = 0;
    int table = 0;
    std::string preset = "paper";

    auto* synth = app.add_subcommand("synth-corpus", "Generate a synthetic corpus");
    synth->add_option("--n", n, "number of records");
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--out", out_path, "output JSONL path")->required();

    auto* gen = app.add_subcommand("gen-negatives", "Emit soft negatives for a corpus");
    gen->add_option("--in", corpus_path, "corpus JSONL")->required();
    gen->add_option("--out", out_path, "output JSONL path")->required();
    gen->add_option("--config", config_path, "training config (sampler flags)");
    gen->add_option("--epoch", epoch, "epoch index for the sampling streams");

    auto* tr = app.add_subcommand("train-rationale", "Train the rationale model f");
    tr->add_option("--config", config_path, "config file");
    tr->add_option("--corpus", corpus_path, "corpus JSONL")->required();
    tr->add_option("--out", out_dir, "output directory")->required();

    auto* ta = app.add_subcommand("train-answer", "Train the answer model g");
    ta->add_option("--config", config_path, "config file");
    ta->add_option("--corpus", corpus_path, "corpus JSONL")->required();
    ta->add_option("--out", out_dir, "output directory")->required();
    ta->add_option("--rationales", rationales_path,
                   "JSONL of {id, rationale}; omitted records use gold");

    auto* inf = app.add_subcommand("infer", "Two-stage inference over a corpus");
    inf->add_option("--config", config_path, "config file");
    inf->add_option("--corpus", corpus_path, "corpus JSONL")->required();
    inf->add_option("--f", f_ckpt, "rationale-stage checkpoint")->required();
    inf->add_option("--g", g_ckpt, "answer-stage checkpoint")->required();
    inf->add_option("--out", out_path, "output JSONL path")->required();

    std::string eval_split = "test";
    auto* ev = app.add_subcommand("eval", "Evaluate a trained pair of checkpoints");
    ev->add_option("--config", config_path, "config file");
    ev->add_option("--corpus", corpus_path, "corpus JSONL")->required();
    ev->add_option("--f", f_ckpt, "rationale-stage checkpoint")->required();
    ev->add_option("--g", g_ckpt, "answer-stage checkpoint")->required();
    ev->add_option("--split", eval_split, "split to evaluate (train|val|test|all)");
    ev->add_option("--out", out_path, "summary JSON path");

    auto* sw = app.add_subcommand("sweep", "Hyperparameter grid sweep");
    sw->add_option("--preset", preset, "grid preset (paper)");
    sw->add_option("--config", config_path, "base config file");
    sw->add_option("--corpus", corpus_path, "corpus JSONL")->required();
    sw->add_option("--out", out_path, "result CSV path")->required();

    auto* ab = app.add_subcommand("ablate", "Ablation matrix");
    ab->add_option("--table", table, "0 (all), 2, 3 or 6");
    ab->add_option("--config", config_path, "base config file");
    ab->add_option("--corpus", corpus_path, "corpus JSONL")->required();
    ab->add_option("--out", out_path, "result CSV path")->required();

    auto* ex = app.add_subcommand("export-latents", "Export contrastive-head features");
    ex->add_option("--n", n, "number of sampled records");
    ex->add_option("--seed", seed, "sampling seed");
    ex->add_option("--config", config_path, "config file (sampler flags, gen length)");
    ex->add_option("--corpus", corpus_path, "corpus JSONL")->required();
    ex->add_option("--f", f_ckpt, "rationale-stage checkpoint")->required();
    ex->add_option("--out", out_path, "output TSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            save_corpus(out_path, synth_corpus(n, seed));
            std::cout << "wrote " << n << " records to " << out_path << "\n";
        } else if (*gen) {
            const TrainConfig cfg = load_config(config_path);
            const auto corpus = load_corpus(corpus_path);
            const Lexicons lex = Lexicons::defaults();
            std::ofstream out(out_path);
            if (!out) throw ConfigError("cannot open for write: " + out_path);
            long total = 0;
            for (const Record& r : corpus) {
                RationaleSource src{r.id, r.lecture, r.explanation, r.options,
                                    r.answer_index};
                for (const SoftNegative& neg :
                     sample_soft_negatives(src, lex, cfg.sampler_config(), epoch)) {
                    json j;
                    j["record_id"] = r.id;
                    j["method"] = method_name(neg.method);
                    j["text"] = neg.text;
                    j["spans"] = neg.spans;
                    j["source_field"] = neg.source_field;
                    out << j.dump() << "\n";
                    ++total;
                }
            }
            std::cout << "wrote " << total << " negatives to " << out_path << "\n";
        } else if (*tr) {
            const TrainConfig cfg = load_config(config_path);
            ensure_dir(out_dir);
            TrainResult res = train_rationale_stage(load_corpus(corpus_path), cfg);
            save_checkpoint(out_dir + "/checkpoint.json", res.params, res.vocab);
            write_metrics_csv(out_dir + "/metrics.csv", res.log);
            write_summary(out_dir + "/summary.json", res, cfg, "rationale");
            std::cout << "best val ROUGE-L " << res.best_metric << " at epoch "
                      << res.best_epoch << "\n";
        } else if (*ta) {
            const TrainConfig cfg = load_config(config_path);
            ensure_dir(out_dir);
            std::map<std::string, std::string> rat;
            const auto corpus = load_corpus(corpus_path);
            TrainResult res;
            if (rationales_path.empty()) {
                res = train_answer_stage(corpus, nullptr, cfg);
            } else {
                rat = load_rationales(rationales_path);
                res = train_answer_stage(corpus, &rat, cfg);
            }
            save_checkpoint(out_dir + "/checkpoint.json", res.params, res.vocab);
            write_metrics_csv(out_dir + "/metrics.csv", res.log);
            write_summary(out_dir + "/summary.json", res, cfg, "answer");
            std::cout << "best val accuracy " << res.best_metric << " at epoch "
                      << res.best_epoch << "\n";
        } else if (*inf) {
            const TrainConfig cfg = load_config(config_path);
            auto [f, f_vocab] = load_checkpoint(f_ckpt);
            auto [g, g_vocab] = load_checkpoint(g_ckpt);
            std::ofstream out(out_path);
            if (!out) throw ConfigError("cannot open for write: " + out_path);
            for (const Record& r : load_corpus(corpus_path)) {
                const TwoStageOutput o = infer_two_stage(r, f, f_vocab, g, g_vocab, cfg);
                json j;
                j["id"] = r.id;
                j["rationale"] = o.rationale;
                j["answer_index"] = o.answer_index;
                j["parsed"] = o.parsed;
                out << j.dump() << "\n";
            }
            std::cout << "wrote predictions to " << out_path << "\n";
        } else if (*ev) {
            const TrainConfig cfg = load_config(config_path);
            auto [f, f_vocab] = load_checkpoint(f_ckpt);
            auto [g, g_vocab] = load_checkpoint(g_ckpt);
            const auto corpus = load_corpus(corpus_path);
            std::vector<Record> subset;
            for (const Record& r : corpus)
                if (eval_split == "all" || r.split == eval_split) subset.push_back(r);
            if (subset.empty()) throw ConfigError("eval: no records in split " + eval_split);
            const EvalResult res = evaluate(subset, f, f_vocab, g, g_vocab, cfg);
            json j;
            j["split"] = eval_split;
            j["n"] = res.n;
            j["accuracy"] = res.accuracy;
            j["mean_rouge_l"] = res.mean_rouge_l;
            j["per_category_accuracy"] = res.per_category_accuracy;
            std::cout << j.dump(2) << "\n";
            if (!out_path.empty()) {
                std::ofstream out(out_path);
                out << j.dump(2) << "\n";
            }
        } else if (*sw) {
            if (preset != "paper") throw ConfigError("unknown sweep preset: " + preset);
            const SweepSpec spec = SweepSpec::paper_preset(load_config(config_path));
            write_sweep_csv(out_path, grid_sweep(spec, load_corpus(corpus_path)));
            std::cout << "wrote sweep results to " << out_path << "\n";
        } else if (*ab) {
            const auto rows =
                run_ablations(load_corpus(corpus_path), load_config(config_path), table);
            write_ablation_csv(out_path, rows);
            std::cout << "wrote ablation results to " << out_path << "\n";
        } else if (*ex) {
            const TrainConfig cfg = load_config(config_path);
            auto [f, vocab] = load_checkpoint(f_ckpt);
            const auto rows = export_latents(load_corpus(corpus_path), n, seed, f, vocab,
                                             cfg.sampler_config(), cfg.max_gen_rationale);
            write_latents_tsv(out_path, rows);
            std::cout << "wrote " << rows.size() << " latent rows to " << out_path << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
