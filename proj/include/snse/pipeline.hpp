#pragma once

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "snse/bml.hpp"
#include "snse/model.hpp"
#include "snse/sampler.hpp"

namespace snse {

// One multiple-choice QA example.
struct Record {
    std::string id;
    std::string question;
    std::string context;
    std::vector<std::string> options;
    int answer_index = 0;
    std::string lecture;
    std::string explanation;
    VisionFeatures vision;
    std::string category; // coarse subject tag (template name for synthetic data)
    std::string split;    // train | val | test
};

struct TrainConfig {
    double alpha = 0.1;
    double beta = 0.3;
    double lambda = 0.1;
    // far larger than a production LM would use; right for a model this small
    double lr = 1e-3;
    double momentum = 0.0;
    int epochs = 100;
    uint64_t seed = 42;
    int max_len_rationale = 512;
    int max_len_answer = 64;
    bool disable_number = false;
    bool disable_orientation = false;
    bool disable_unit = false;
    bool disable_option = false;
    bool fixed_negatives = false;
    bool no_vision = false;
    std::string bml_mode = "soft";
    int mods_per_sample = 1; // 0 = all sites
    bool stop_grad_negatives = false;
    bool answer_stage_uses_gold = true; // train g on gold rationales
    int eval_every = 10;
    // toy model dimensions
    int d = 64;
    int d_v = 32;
    int n_blocks = 2;
    int ffn_hidden = 64;
    int max_gen_rationale = 48;
    int max_gen_answer = 12;

    static TrainConfig from_file(const std::string& path); // flat key=value
    SamplerConfig sampler_config() const;
};

// ------------------------------------------------------------------ corpus

std::vector<Record> load_corpus(const std::string& path);
void save_corpus(const std::string& path, const std::vector<Record>& corpus);

// Deterministic templated corpus whose vision features encode the
// answer-relevant fact, so the task needs the vision pathway.
std::vector<Record> synth_corpus(int n, uint64_t seed);

Vocab build_vocab(const std::vector<Record>& corpus);

// ------------------------------------------------------------------ prompts

std::string build_rationale_prompt(const Record& rec);
std::string build_answer_prompt(const Record& rec, const std::string& rationale);
std::string answer_target(const Record& rec);

struct AnswerParse {
    int index = 0;
    bool parsed = false;
};
AnswerParse extract_answer(const std::string& generated,
                           const std::vector<std::string>& options);

// ------------------------------------------------------------------ metrics

// LCS-based F score over word tokens; 0 for an empty reference.
double rouge_l(const std::string& candidate, const std::string& reference);

// ------------------------------------------------------------------ training

struct EpochLog {
    int epoch = 0;
    double nll = 0.0;
    double bml = 0.0;
    double mean_delta = 0.0;
    double rouge_l = std::numeric_limits<double>::quiet_NaN();  // eval epochs only
    double accuracy = std::numeric_limits<double>::quiet_NaN(); // eval epochs only
};

struct TrainResult {
    ModelParams params; // best checkpoint per the stage's selection metric
    Vocab vocab;
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_metric = 0.0;
    std::map<std::string, long> negative_method_counts;
};

TrainResult train_rationale_stage(const std::vector<Record>& corpus, const TrainConfig& cfg);

// `rationales` maps record id -> generated rationale; records without an
// entry fall back to the gold rationale (with a warning). Pass nullptr to
// train on gold rationales throughout.
TrainResult train_answer_stage(const std::vector<Record>& corpus,
                               const std::map<std::string, std::string>* rationales,
                               const TrainConfig& cfg);

// ------------------------------------------------------------------ inference

struct TwoStageOutput {
    std::string rationale;
    int answer_index = 0;
    bool parsed = false;
};

TwoStageOutput infer_two_stage(const Record& rec, ModelParams& f, const Vocab& f_vocab,
                               ModelParams& g, const Vocab& g_vocab,
                               const TrainConfig& cfg);

struct EvalResult {
    double accuracy = 0.0;
    double mean_rouge_l = 0.0;
    std::map<std::string, double> per_category_accuracy;
    int n = 0;
};

EvalResult evaluate(const std::vector<Record>& records, ModelParams& f,
                    const Vocab& f_vocab, ModelParams& g, const Vocab& g_vocab,
                    const TrainConfig& cfg);

void write_metrics_csv(const std::string& path, const std::vector<EpochLog>& log);

std::vector<const Record*> split_of(const std::vector<Record>& corpus,
                                    const std::string& split);

} // namespace snse
