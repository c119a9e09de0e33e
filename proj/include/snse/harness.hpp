#pragma once

#include <map>
#include <string>
#include <vector>

#include "snse/pipeline.hpp"

namespace snse {

struct SweepSpec {
    std::vector<double> lambda_set;
    std::vector<double> alpha_set;
    std::vector<double> beta_set;
    TrainConfig base;
    int repetitions = 1;

    // lambda {0, 0.01, 0.1, 1}, alpha {0, 0.1, 0.2, 0.3}, beta {0.1, 0.3, 0.5, 2}.
    // beta = 2 is a wildcard that turns the upper margin off, so alpha > beta
    // is allowed there.
    static SweepSpec paper_preset(const TrainConfig& base);
};

struct SweepCell {
    double lambda = 0, alpha = 0, beta = 0;
    int repetition = 0;
    TrainConfig config; // exact config of the run, for reproducibility
    bool skipped = false;
    std::string skip_reason;
    double val_rouge_l = 0;
    double test_accuracy = 0;
};

std::vector<SweepCell> grid_sweep(const SweepSpec& spec, const std::vector<Record>& corpus);
void write_sweep_csv(const std::string& path, const std::vector<SweepCell>& cells);

// One complete two-stage run plus test-split evaluation.
struct RunOutcome {
    double val_rouge_l = 0;   // best rationale-stage validation score
    double test_accuracy = 0; // two-stage accuracy on the test split
    double test_rouge_l = 0;
    std::map<std::string, long> method_counts;
};
RunOutcome run_two_stage(const std::vector<Record>& corpus, const TrainConfig& cfg);

struct AblationRow {
    std::string name;
    TrainConfig config;
    double test_accuracy = 0;
    double val_rouge_l = 0;
    double delta_vs_full = 0;
    std::map<std::string, long> method_counts;
};

// table: 0 = all rows, 2 = transform knockouts + fixed negatives,
// 3 = modification counts, 6 = vision knockout. Row "full" is always first.
std::vector<AblationRow> run_ablations(const std::vector<Record>& corpus,
                                       const TrainConfig& base, int table = 0);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

struct LatentRow {
    std::string id;
    std::string role;   // generated | positive | softneg
    std::string method; // transform name for softneg rows, "-" otherwise
    std::vector<double> h;
};

// h vectors (contrastive-head embeddings) for n sampled records: the
// generated rationale, the gold positive, and every soft negative.
std::vector<LatentRow> export_latents(const std::vector<Record>& corpus, int n,
                                      uint64_t sample_seed, ModelParams& f,
                                      const Vocab& vocab, const SamplerConfig& scfg,
                                      int max_gen);
void write_latents_tsv(const std::string& path, const std::vector<LatentRow>& rows);

} // namespace snse
