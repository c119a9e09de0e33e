#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "snse/rng.hpp"

namespace snse {

enum class TransformMethod { negation, number, orientation, unit, option };

std::string method_name(TransformMethod m);
TransformMethod method_from_name(const std::string& name);

// A mutated rationale. `spans` are character offsets into `text`; outside the
// spans the text equals the original rationale. One span per modification
// site (one by default).
struct SoftNegative {
    TransformMethod method;
    std::string text;
    std::vector<std::pair<int, int>> spans;
    std::string source_field; // "lecture" or "explanation"
};

struct UnitForms {
    std::string singular;
    std::string plural; // may equal singular (e.g. "°c")
};

struct Lexicons {
    std::map<std::string, std::string> orientation; // symmetric word <-> word
    std::map<std::string, std::vector<UnitForms>> unit_categories;
    std::set<std::string> negation_aux;
    std::set<std::string> negation_verbs; // do-support candidates, stem form

    static Lexicons defaults();
    // Throws ConfigError on an asymmetric orientation table or overlapping
    // unit categories.
    void validate() const;
};

struct SamplerConfig {
    uint64_t seed = 42;
    bool fixed_negatives = false;
    int mods_per_sample = 1; // 0 means "all available sites"
    bool disable_number = false;
    bool disable_orientation = false;
    bool disable_unit = false;
    bool disable_option = false;
};

// What the sampler needs from a Record; the full rationale is
// lecture + " " + explanation.
struct RationaleSource {
    std::string record_id;
    std::string lecture;
    std::string explanation;
    std::vector<std::string> options;
    int correct_index = 0;
};

// One edit of a single field. `spans` index into `text`.
struct FieldEdit {
    std::string text;
    std::vector<std::pair<int, int>> spans;
};

// The five transforms. Each returns nullopt when the text has no applicable
// site. `mods` caps the number of independent modification sites (0 = all).
std::optional<FieldEdit> transform_negation(const std::string& text, const Lexicons& lex);
std::optional<FieldEdit> transform_number(const std::string& text, Rng& rng, int mods = 1);
std::optional<FieldEdit> transform_orientation(const std::string& text, const Lexicons& lex,
                                               Rng& rng, int mods = 1);
std::optional<FieldEdit> transform_unit(const std::string& text, const Lexicons& lex,
                                        Rng& rng, int mods = 1);
std::optional<FieldEdit> transform_option(const std::string& text,
                                          const std::vector<std::string>& options,
                                          int correct_index, Rng& rng, int mods = 1);

// Full policy: per enabled method, try the explanation first, then the
// lecture, then fall back to a negation transform; an empty rationale is
// replaced by "Not". Per-(record, epoch, method) RNG streams derive from
// config.seed, so generation order never matters. Duplicated outputs are
// dropped, so the result may be shorter than the number of enabled methods.
std::vector<SoftNegative> sample_soft_negatives(const RationaleSource& src,
                                                const Lexicons& lex,
                                                const SamplerConfig& config, int epoch);

// Full rationale string the negatives are diffed against ("Not" if empty).
std::string gold_rationale(const std::string& lecture, const std::string& explanation);

} // namespace snse
