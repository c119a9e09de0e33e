#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "snse/errors.hpp"
#include "snse/pipeline.hpp"
#include "snse/rng.hpp"

using namespace snse;

namespace {

std::string temp_path(const std::string& name) {
    return std::string("/tmp/snse_test_") + name;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Independent LCS oracle: plain recursion with memoization, written against
// the textbook recurrence rather than the rolling-array DP in rouge_l.
size_t lcs_recursive(const std::vector<std::string>& a, const std::vector<std::string>& b,
                     size_t i, size_t j, std::vector<std::vector<long>>& memo) {
    if (i == a.size() || j == b.size()) return 0;
    long& m = memo[i][j];
    if (m >= 0) return static_cast<size_t>(m);
    size_t r;
    if (a[i] == b[j])
        r = 1 + lcs_recursive(a, b, i + 1, j + 1, memo);
    else
        r = std::max(lcs_recursive(a, b, i + 1, j, memo), lcs_recursive(a, b, i, j + 1, memo));
    m = static_cast<long>(r);
    return r;
}

double rouge_oracle(const std::string& cand, const std::string& ref) {
    auto a = tokenize(cand);
    auto b = tokenize(ref);
    if (a.empty() || b.empty()) return 0.0;
    std::vector<std::vector<long>> memo(a.size(), std::vector<long>(b.size(), -1));
    const double lcs = static_cast<double>(lcs_recursive(a, b, 0, 0, memo));
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(a.size());
    const double r = lcs / static_cast<double>(b.size());
    return 2.0 * p * r / (p + r);
}

std::string random_words(Rng& rng, int max_len) {
    static const char* words[] = {"a", "b", "c", "d", "e", "f", "g", "h"};
    const int n = rng.next_int(0, max_len);
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (!out.empty()) out += ' ';
        out += words[rng.next_below(8)];
    }
    return out;
}

bool contains_word(const std::string& text, const std::string& word) {
    for (const auto& tok : tokenize(text))
        if (tok == word) return true;
    return false;
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.d = 16;
    cfg.d_v = 32;
    cfg.n_blocks = 1;
    cfg.ffn_hidden = 16;
    cfg.lr = 0.02;
    cfg.eval_every = 5;
    return cfg;
}

} // namespace

TEST_CASE("corpus load/save round trip and validation") {
    const std::string path = temp_path("corpus.jsonl");

    SUBCASE("empty file gives empty corpus") {
        write_file(path, "");
        CHECK(load_corpus(path).empty());
    }
    SUBCASE("malformed json reports the line") {
        write_file(path, "{\"id\": \"a\"}\nnot json\n");
        CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("line 1"), SchemaError);
        write_file(path, "not json\n");
        CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("line 1"), ParseError);
    }
    SUBCASE("answer_index out of range is rejected") {
        auto corpus = synth_corpus(1, 7);
        corpus[0].answer_index = static_cast<int>(corpus[0].options.size());
        save_corpus(path, corpus);
        CHECK_THROWS_AS(load_corpus(path), SchemaError);
    }
    SUBCASE("duplicate ids are rejected") {
        auto corpus = synth_corpus(2, 7);
        corpus[1].id = corpus[0].id;
        save_corpus(path, corpus);
        CHECK_THROWS_AS(load_corpus(path), SchemaError);
    }
    SUBCASE("synthetic fixture round trips exactly") {
        auto corpus = synth_corpus(50, 42);
        save_corpus(path, corpus);
        auto loaded = load_corpus(path);
        REQUIRE(loaded.size() == corpus.size());
        bool train = false, val = false, test = false;
        for (size_t i = 0; i < loaded.size(); ++i) {
            CHECK(loaded[i].id == corpus[i].id);
            CHECK(loaded[i].explanation == corpus[i].explanation);
            CHECK(loaded[i].answer_index == corpus[i].answer_index);
            CHECK(loaded[i].vision.patches.data == corpus[i].vision.patches.data);
            train |= loaded[i].split == "train";
            val |= loaded[i].split == "val";
            test |= loaded[i].split == "test";
        }
        CHECK(train);
        CHECK(val);
        CHECK(test);
    }
    std::remove(path.c_str());
}

TEST_CASE("synth_corpus") {
    CHECK_THROWS_AS(synth_corpus(0, 1), ConfigError);

    SUBCASE("same (n, seed) is byte-identical") {
        const std::string p1 = temp_path("synth1.jsonl"), p2 = temp_path("synth2.jsonl");
        save_corpus(p1, synth_corpus(30, 42));
        save_corpus(p2, synth_corpus(30, 42));
        CHECK(read_file(p1) == read_file(p2));
        save_corpus(p2, synth_corpus(30, 43));
        CHECK(read_file(p1) != read_file(p2));
        std::remove(p1.c_str());
        std::remove(p2.c_str());
    }
    SUBCASE("records satisfy the invariants") {
        auto corpus = synth_corpus(40, 5);
        std::set<std::string> ids;
        for (const auto& r : corpus) {
            CHECK(ids.insert(r.id).second);
            CHECK(r.answer_index >= 0);
            CHECK(r.answer_index < static_cast<int>(r.options.size()));
            CHECK(!r.question.empty());
            CHECK(r.vision.patches.rows() == 4);
            CHECK(r.vision.patches.cols() == 32);
        }
    }
    SUBCASE("every rationale has a transformable site") {
        const Lexicons lex = Lexicons::defaults();
        for (const auto& r : synth_corpus(40, 6)) {
            const std::string rat = gold_rationale(r.lecture, r.explanation);
            bool has_digit = false;
            for (char c : rat) has_digit |= c >= '0' && c <= '9';
            bool has_orientation = false;
            for (const auto& [from, to] : lex.orientation)
                has_orientation |= contains_word(rat, from);
            bool has_option = false;
            for (const auto& o : r.options) has_option |= rat.find(o) != std::string::npos;
            CHECK((has_digit || has_orientation || has_option));
        }
    }
    SUBCASE("vision features disambiguate text-identical variants") {
        auto corpus = synth_corpus(16, 9);
        // records 0 and 4: same template, same question, different answer
        CHECK(corpus[0].question == corpus[4].question);
        CHECK(corpus[0].answer_index != corpus[4].answer_index);
        CHECK(corpus[0].vision.patches.data != corpus[4].vision.patches.data);
    }
}

TEST_CASE("prompt construction") {
    auto corpus = synth_corpus(4, 1);
    Record r = corpus[0];

    SUBCASE("layout") {
        const std::string p = build_rationale_prompt(r);
        CHECK(p.find("Question: " + r.question) == 0);
        CHECK(p.find("Context: " + r.context) != std::string::npos);
        CHECK(p.find("(A) " + r.options[0]) != std::string::npos);
        CHECK(p.find("(B) " + r.options[1]) != std::string::npos);
    }
    SUBCASE("empty context omits the segment") {
        r.context = "";
        CHECK(build_rationale_prompt(r).find("Context:") == std::string::npos);
    }
    SUBCASE("answer prompt puts the rationale strictly after the options") {
        const std::string p = build_answer_prompt(r, "because magnets");
        const size_t opts = p.find("Options:");
        const size_t sol = p.find(" Solution: because magnets");
        REQUIRE(opts != std::string::npos);
        REQUIRE(sol != std::string::npos);
        CHECK(sol > opts);
        CHECK(build_answer_prompt(r, "") == build_rationale_prompt(r) + " Solution: ");
    }
    SUBCASE("answer target round trips through extract_answer") {
        for (const auto& rec : corpus) {
            const AnswerParse a = extract_answer(answer_target(rec), rec.options);
            CHECK(a.parsed);
            CHECK(a.index == rec.answer_index);
        }
    }
}

TEST_CASE("extract_answer") {
    const std::vector<std::string> two = {"attract", "repel"};
    CHECK(extract_answer("The answer is (B).", two).index == 1);
    CHECK(extract_answer("The answer is (B).", two).parsed);
    CHECK(extract_answer("the answer is ( a ) .", two).index == 0);

    SUBCASE("invalid letter falls through") {
        const AnswerParse a = extract_answer("The answer is (Z).", two);
        CHECK(a.index == 0);
        CHECK(!a.parsed);
    }
    SUBCASE("option text without a letter") {
        const AnswerParse a = extract_answer("they will repel each other", two);
        CHECK(a.index == 1);
        CHECK(a.parsed);
    }
    SUBCASE("no signal at all") {
        const AnswerParse a = extract_answer("no idea", two);
        CHECK(a.index == 0);
        CHECK(!a.parsed);
    }
}

TEST_CASE("rouge_l") {
    CHECK(rouge_l("a b c", "a b c") == doctest::Approx(1.0));
    CHECK(rouge_l("a b c d", "a c") == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(rouge_l("x y", "a b") == 0.0);
    CHECK(rouge_l("", "a b") == 0.0);
    CHECK(rouge_l("a b", "") == 0.0);

    SUBCASE("matches the recursive oracle on random pairs") {
        Rng rng(11);
        for (int i = 0; i < 300; ++i) {
            const std::string c = random_words(rng, 12), r = random_words(rng, 12);
            const double got = r.empty() ? 0.0 : rouge_l(c, r);
            CHECK(got == doctest::Approx(rouge_oracle(c, r)).epsilon(1e-15));
            CHECK(got >= 0.0);
            CHECK(got <= 1.0);
        }
    }
}

TEST_CASE("config file parsing") {
    const std::string path = temp_path("config.txt");
    write_file(path,
               "# comment\n"
               "alpha = 0.2\n"
               "beta=0.5\n"
               "mods_per_sample = all\n"
               "fixed_negatives = true\n"
               "epochs = 7\n");
    TrainConfig cfg = TrainConfig::from_file(path);
    CHECK(cfg.alpha == 0.2);
    CHECK(cfg.beta == 0.5);
    CHECK(cfg.mods_per_sample == 0);
    CHECK(cfg.fixed_negatives);
    CHECK(cfg.epochs == 7);
    CHECK(cfg.lambda == 0.1); // untouched default

    write_file(path, "bogus_key = 1\n");
    CHECK_THROWS_AS(TrainConfig::from_file(path), ConfigError);
    write_file(path, "alpha 0.1\n");
    CHECK_THROWS_AS(TrainConfig::from_file(path), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_file(temp_path("nonexistent.txt")), ConfigError);
    std::remove(path.c_str());
}

TEST_CASE("rationale stage: lambda=0 is plain NLL training") {
    auto corpus = synth_corpus(10, 42);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 5;
    cfg.lambda = 0.0;
    TrainResult res = train_rationale_stage(corpus, cfg);
    REQUIRE(res.log.size() == 5);
    for (const auto& e : res.log) {
        CHECK(e.bml == 0.0);
        CHECK(e.mean_delta == 0.0);
    }
    CHECK(res.negative_method_counts.empty());
    CHECK(res.log.back().nll < res.log.front().nll);
}

TEST_CASE("rationale stage: training reduces NLL and tracks the best rouge") {
    auto corpus = synth_corpus(10, 42);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 20;
    TrainResult res = train_rationale_stage(corpus, cfg);
    REQUIRE(res.log.size() == 20);
    int drops = 0;
    for (size_t i = 1; i < res.log.size(); ++i)
        if (res.log[i].nll < res.log[i - 1].nll) ++drops;
    CHECK(drops >= 15);
    CHECK(res.best_epoch >= 1);
    CHECK(res.best_metric >= 0.0);
    // all five methods fire somewhere on this corpus
    CHECK(res.negative_method_counts.size() == 5);
    // eval epochs carry a rouge value, others do not
    CHECK(std::isnan(res.log[0].rouge_l));
    CHECK(!std::isnan(res.log[4].rouge_l));
}

TEST_CASE("rationale stage: disabled transforms never appear in the log") {
    auto corpus = synth_corpus(10, 42);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 2;
    cfg.disable_option = true;
    cfg.disable_number = true;
    TrainResult res = train_rationale_stage(corpus, cfg);
    CHECK(res.negative_method_counts.count("option") == 0);
    CHECK(res.negative_method_counts.count("number") == 0);
    CHECK(res.negative_method_counts.count("negation") == 1);
}

TEST_CASE("answer stage overfits a single record to the exact target") {
    auto corpus = synth_corpus(1, 42);
    corpus[0].split = "train";
    Record valrec = corpus[0];
    valrec.id = "synth-val";
    valrec.split = "val";
    corpus.push_back(valrec);

    TrainConfig cfg = tiny_config();
    cfg.epochs = 250;
    cfg.lr = 0.1;
    cfg.eval_every = 50;
    TrainResult res = train_answer_stage(corpus, nullptr, cfg);
    CHECK(res.best_metric == 1.0);

    const Record& r = corpus[0];
    Tensor H = encode_value(
        res.vocab.encode(build_answer_prompt(r, gold_rationale(r.lecture, r.explanation))),
        &r.vision, res.params);
    const std::vector<int> ids = generate(H, res.params, cfg.max_gen_answer);
    std::vector<int> want = res.vocab.encode(answer_target(r));
    CHECK(ids == want);
}

TEST_CASE("training is bit-deterministic in config and seed") {
    auto corpus = synth_corpus(10, 42);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 3;
    TrainResult a = train_rationale_stage(corpus, cfg);
    TrainResult b = train_rationale_stage(corpus, cfg);
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].nll == b.log[i].nll);
        CHECK(a.log[i].bml == b.log[i].bml);
        CHECK(a.log[i].mean_delta == b.log[i].mean_delta);
    }
    auto na = a.params.named_tensors();
    auto nb = b.params.named_tensors();
    REQUIRE(na.size() == nb.size());
    for (size_t i = 0; i < na.size(); ++i) CHECK(na[i].second->data == nb[i].second->data);

    const std::string p1 = temp_path("metrics1.csv"), p2 = temp_path("metrics2.csv");
    write_metrics_csv(p1, a.log);
    write_metrics_csv(p2, b.log);
    CHECK(read_file(p1) == read_file(p2));
    CHECK(read_file(p1).rfind("epoch,nll,bml,mean_delta,rouge_l,accuracy\n", 0) == 0);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("infer_two_stage composes the stage ops") {
    auto corpus = synth_corpus(10, 42);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 2;
    TrainResult f = train_rationale_stage(corpus, cfg);
    TrainResult g = train_answer_stage(corpus, nullptr, cfg);

    const Record& r = corpus[0];
    TwoStageOutput out = infer_two_stage(r, f.params, f.vocab, g.params, g.vocab, cfg);
    // manual composition
    Tensor H_f = encode_value(f.vocab.encode(build_rationale_prompt(r)), &r.vision, f.params);
    const std::string rat = f.vocab.decode(generate(H_f, f.params, cfg.max_gen_rationale));
    CHECK(out.rationale == rat);
    Tensor H_g = encode_value(g.vocab.encode(build_answer_prompt(r, rat)), &r.vision, g.params);
    const AnswerParse a =
        extract_answer(g.vocab.decode(generate(H_g, g.params, cfg.max_gen_answer)), r.options);
    CHECK(out.answer_index == a.index);

    TwoStageOutput again = infer_two_stage(r, f.params, f.vocab, g.params, g.vocab, cfg);
    CHECK(again.rationale == out.rationale);
    CHECK(again.answer_index == out.answer_index);

    EvalResult ev = evaluate(corpus, f.params, f.vocab, g.params, g.vocab, cfg);
    CHECK(ev.n == 10);
    CHECK(ev.accuracy >= 0.0);
    CHECK(ev.accuracy <= 1.0);
    CHECK(!ev.per_category_accuracy.empty());
}
