#include "snse/sampler.hpp"

#include <algorithm>
#include <cctype>

#include "snse/errors.hpp"

namespace snse {

std::string method_name(TransformMethod m) {
    switch (m) {
        case TransformMethod::negation: return "negation";
        case TransformMethod::number: return "number";
        case TransformMethod::orientation: return "orientation";
        case TransformMethod::unit: return "unit";
        case TransformMethod::option: return "option";
    }
    return "?";
}

TransformMethod method_from_name(const std::string& name) {
    if (name == "negation") return TransformMethod::negation;
    if (name == "number") return TransformMethod::number;
    if (name == "orientation") return TransformMethod::orientation;
    if (name == "unit") return TransformMethod::unit;
    if (name == "option") return TransformMethod::option;
    throw ConfigError("unknown transform method: " + name);
}

namespace {

bool is_word_char(unsigned char c) {
    return std::isalnum(c) != 0 || c >= 0x80;
}

std::string to_lower(const std::string& s) {
    std::string out = s;
    for (char& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// Word-boundary occurrences of `word` (already lowercase) in `text`.
// A degree-sign-led unit like "°c" may directly follow a digit ("36°c").
std::vector<size_t> word_occurrences(const std::string& text, const std::string& word) {
    std::vector<size_t> out;
    const std::string low = to_lower(text);
    size_t pos = 0;
    while ((pos = low.find(word, pos)) != std::string::npos) {
        const size_t end = pos + word.size();
        bool ok_before = pos == 0 || !is_word_char(static_cast<unsigned char>(low[pos - 1]));
        if (!ok_before && static_cast<unsigned char>(word[0]) >= 0x80 &&
            std::isdigit(static_cast<unsigned char>(low[pos - 1])))
            ok_before = true;
        const bool ok_after =
            end == low.size() || !is_word_char(static_cast<unsigned char>(low[end]));
        if (ok_before && ok_after) out.push_back(pos);
        pos += 1;
    }
    return out;
}

std::string preserve_case(const std::string& original, std::string repl) {
    for (char c : original) {
        if (c >= 'a' && c <= 'z') break;
        if (c >= 'A' && c <= 'Z') {
            for (char& r : repl) {
                if (r >= 'a' && r <= 'z') {
                    r = static_cast<char>(r - 'a' + 'A');
                    break;
                }
                if (r >= 'A' && r <= 'Z') break;
            }
            break;
        }
    }
    return repl;
}

struct RawEdit {
    size_t start;
    size_t len;
    std::string repl;
};

FieldEdit apply_edits(const std::string& orig, std::vector<RawEdit> edits) {
    std::sort(edits.begin(), edits.end(),
              [](const RawEdit& a, const RawEdit& b) { return a.start < b.start; });
    FieldEdit out;
    size_t pos = 0;
    for (const auto& e : edits) {
        out.text += orig.substr(pos, e.start - pos);
        out.spans.emplace_back(static_cast<int>(out.text.size()),
                               static_cast<int>(out.text.size() + e.repl.size()));
        out.text += e.repl;
        pos = e.start + e.len;
    }
    out.text += orig.substr(pos);
    return out;
}

// Picks min(k, n) distinct site indices (all of them when k == 0), sorted.
std::vector<size_t> choose_sites(size_t n, int k, Rng& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    const size_t want = (k <= 0 || static_cast<size_t>(k) >= n) ? n : static_cast<size_t>(k);
    for (size_t i = 0; i < want; ++i) {
        const size_t j = i + static_cast<size_t>(rng.next_below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(want);
    std::sort(idx.begin(), idx.end());
    return idx;
}

struct WordSpan {
    size_t start, end;
    std::string lower;
};

std::vector<WordSpan> scan_words(const std::string& text) {
    std::vector<WordSpan> out;
    size_t i = 0;
    while (i < text.size()) {
        if (!is_word_char(static_cast<unsigned char>(text[i]))) {
            ++i;
            continue;
        }
        size_t j = i;
        while (j < text.size() && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
        out.push_back({i, j, to_lower(text.substr(i, j - i))});
        i = j;
    }
    return out;
}

} // namespace

Lexicons Lexicons::defaults() {
    Lexicons lex;
    const std::vector<std::pair<std::string, std::string>> pairs = {
        {"north", "south"}, {"east", "west"},   {"left", "right"},
        {"up", "down"},     {"above", "below"}, {"top", "bottom"},
        {"front", "back"},  {"inside", "outside"}, {"higher", "lower"},
    };
    for (const auto& [a, b] : pairs) {
        lex.orientation[a] = b;
        lex.orientation[b] = a;
    }
    lex.unit_categories["temperature"] = {{"°c", "°c"}, {"°f", "°f"}, {"kelvin", "kelvin"}};
    lex.unit_categories["length"] = {{"millimeter", "millimeters"}, {"centimeter", "centimeters"},
                                     {"meter", "meters"},           {"kilometer", "kilometers"},
                                     {"inch", "inches"},            {"foot", "feet"},
                                     {"yard", "yards"},             {"mile", "miles"}};
    lex.unit_categories["mass"] = {{"gram", "grams"}, {"kilogram", "kilograms"},
                                   {"ounce", "ounces"}, {"pound", "pounds"}};
    lex.unit_categories["volume"] = {{"milliliter", "milliliters"}, {"liter", "liters"},
                                     {"cup", "cups"}, {"gallon", "gallons"}};
    lex.unit_categories["time"] = {{"second", "seconds"}, {"minute", "minutes"},
                                   {"hour", "hours"},     {"day", "days"},
                                   {"year", "years"}};
    lex.negation_aux = {"am", "is", "are", "was", "were", "will", "would", "can", "could",
                        "shall", "should", "may", "might", "must", "do", "does", "did",
                        "has", "have", "had"};
    lex.negation_verbs = {"get",  "attract", "repel",  "move", "point", "turn",  "contain",
                          "show", "make",    "take",   "use",  "need",  "go",    "come",
                          "look", "mean",    "weigh",  "measure", "hold", "live", "eat",
                          "grow", "float",   "sink",   "melt", "freeze", "push", "pull"};
    return lex;
}

void Lexicons::validate() const {
    for (const auto& [a, b] : orientation) {
        auto it = orientation.find(b);
        if (it == orientation.end() || it->second != a)
            throw ConfigError("orientation table not symmetric at '" + a + "'");
    }
    std::set<std::string> seen;
    for (const auto& [cat, units] : unit_categories)
        for (const auto& u : units) {
            if (!seen.insert(u.singular).second)
                throw ConfigError("unit '" + u.singular + "' appears in two categories");
            if (u.plural != u.singular && !seen.insert(u.plural).second)
                throw ConfigError("unit '" + u.plural + "' appears in two categories");
        }
}

std::optional<FieldEdit> transform_negation(const std::string& text, const Lexicons& lex) {
    if (trim(text).empty()) return std::nullopt;
    const auto words = scan_words(text);
    if (words.empty()) return std::nullopt;
    for (size_t i = 0; i < words.size(); ++i) {
        const auto& w = words[i];
        if (lex.negation_aux.count(w.lower)) {
            if (i + 1 < words.size() && words[i + 1].lower == "not") {
                // toggle off: drop everything between the auxiliary and "not"
                return apply_edits(text, {{w.end, words[i + 1].end - w.end, ""}});
            }
            return apply_edits(text, {{w.end, 0, " not"}});
        }
        std::string stem = w.lower;
        const bool third = stem.size() > 1 && stem.back() == 's' &&
                           lex.negation_verbs.count(stem.substr(0, stem.size() - 1));
        if (third) stem = stem.substr(0, stem.size() - 1);
        if (lex.negation_verbs.count(stem)) {
            const std::string aux = third ? "does not " : "do not ";
            const std::string orig = text.substr(w.start, w.end - w.start);
            std::string repl = preserve_case(orig, aux + stem);
            return apply_edits(text, {{w.start, w.end - w.start, repl}});
        }
    }
    // Last resort keeps the fallback total: insert "not" after the first word.
    // This also yields the documented degenerate "Not" -> "Not not".
    return apply_edits(text, {{words[0].end, 0, " not"}});
}

std::optional<FieldEdit> transform_number(const std::string& text, Rng& rng, int mods) {
    std::vector<std::pair<size_t, size_t>> runs;
    size_t i = 0;
    while (i < text.size()) {
        if (std::isdigit(static_cast<unsigned char>(text[i]))) {
            size_t j = i;
            while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
            runs.emplace_back(i, j);
            i = j;
        } else {
            ++i;
        }
    }
    if (runs.empty()) return std::nullopt;
    std::vector<RawEdit> edits;
    for (size_t site : choose_sites(runs.size(), mods, rng)) {
        const auto [s, e] = runs[site];
        const std::string orig = text.substr(s, e - s);
        std::string repl;
        do {
            repl.clear();
            for (size_t k = 0; k < orig.size(); ++k) {
                const int lo = (k == 0 && orig.size() > 1) ? 1 : 0;
                repl.push_back(static_cast<char>('0' + rng.next_int(lo, 9)));
            }
        } while (repl == orig);
        edits.push_back({s, e - s, repl});
    }
    return apply_edits(text, std::move(edits));
}

std::optional<FieldEdit> transform_orientation(const std::string& text, const Lexicons& lex,
                                               Rng& rng, int mods) {
    struct Site {
        size_t start, end;
        std::string opposite;
    };
    std::vector<Site> sites;
    for (const auto& w : scan_words(text)) {
        auto it = lex.orientation.find(w.lower);
        if (it != lex.orientation.end()) sites.push_back({w.start, w.end, it->second});
    }
    if (sites.empty()) return std::nullopt;
    std::vector<RawEdit> edits;
    for (size_t si : choose_sites(sites.size(), mods, rng)) {
        const auto& s = sites[si];
        const std::string orig = text.substr(s.start, s.end - s.start);
        edits.push_back({s.start, s.end - s.start, preserve_case(orig, s.opposite)});
    }
    return apply_edits(text, std::move(edits));
}

std::optional<FieldEdit> transform_unit(const std::string& text, const Lexicons& lex,
                                        Rng& rng, int mods) {
    struct Site {
        size_t start, end;
        const std::vector<UnitForms>* category;
        size_t unit_index;
        bool plural;
    };
    std::vector<Site> sites;
    for (const auto& [cat, units] : lex.unit_categories) {
        for (size_t u = 0; u < units.size(); ++u) {
            for (bool plural : {false, true}) {
                const std::string& form = plural ? units[u].plural : units[u].singular;
                if (plural && units[u].plural == units[u].singular) continue;
                for (size_t pos : word_occurrences(text, form))
                    sites.push_back({pos, pos + form.size(), &units, u, plural});
            }
        }
    }
    if (sites.empty()) return std::nullopt;
    std::sort(sites.begin(), sites.end(),
              [](const Site& a, const Site& b) { return a.start < b.start; });
    std::vector<RawEdit> edits;
    for (size_t si : choose_sites(sites.size(), mods, rng)) {
        const auto& s = sites[si];
        const auto& cat = *s.category;
        size_t pick = s.unit_index;
        if (cat.size() < 2) continue; // single-unit category cannot change
        while (pick == s.unit_index)
            pick = static_cast<size_t>(rng.next_below(cat.size()));
        const std::string& repl = s.plural ? cat[pick].plural : cat[pick].singular;
        const std::string orig = text.substr(s.start, s.end - s.start);
        edits.push_back({s.start, s.end - s.start, preserve_case(orig, repl)});
    }
    if (edits.empty()) return std::nullopt;
    return apply_edits(text, std::move(edits));
}

std::optional<FieldEdit> transform_option(const std::string& text,
                                          const std::vector<std::string>& options,
                                          int correct_index, Rng& rng, int mods) {
    if (options.size() < 2) return std::nullopt;
    if (correct_index < 0 || correct_index >= static_cast<int>(options.size()))
        throw ConfigError("transform_option: correct_index out of range");
    const std::string correct = options[static_cast<size_t>(correct_index)];
    if (trim(correct).empty()) return std::nullopt;
    const auto occurrences = word_occurrences(text, to_lower(correct));
    if (occurrences.empty()) return std::nullopt;
    std::vector<RawEdit> edits;
    for (size_t si : choose_sites(occurrences.size(), mods, rng)) {
        size_t pick = static_cast<size_t>(correct_index);
        while (pick == static_cast<size_t>(correct_index))
            pick = static_cast<size_t>(rng.next_below(options.size()));
        const size_t start = occurrences[si];
        const std::string orig = text.substr(start, correct.size());
        edits.push_back({start, correct.size(), preserve_case(orig, options[pick])});
    }
    return apply_edits(text, std::move(edits));
}

std::string gold_rationale(const std::string& lecture, const std::string& explanation) {
    const std::string lec = trim(lecture), exp = trim(explanation);
    if (lec.empty() && exp.empty()) return "Not";
    if (lec.empty()) return exp;
    if (exp.empty()) return lec;
    return lec + " " + exp;
}

std::vector<SoftNegative> sample_soft_negatives(const RationaleSource& src,
                                                const Lexicons& lex,
                                                const SamplerConfig& config, int epoch) {
    std::string lecture = trim(src.lecture);
    std::string explanation = trim(src.explanation);
    if (lecture.empty() && explanation.empty()) explanation = "Not";
    const std::string original = gold_rationale(lecture, explanation);
    const int eff_epoch = config.fixed_negatives ? 0 : epoch;
    const int mods = config.mods_per_sample;

    struct Attempt {
        std::string field;
        const std::string* text;
    };
    std::vector<Attempt> fields;
    if (!explanation.empty()) fields.push_back({"explanation", &explanation});
    if (!lecture.empty()) fields.push_back({"lecture", &lecture});

    auto try_method = [&](TransformMethod m, Rng& rng, const std::string& field_text)
        -> std::optional<FieldEdit> {
        switch (m) {
            case TransformMethod::negation: return transform_negation(field_text, lex);
            case TransformMethod::number: return transform_number(field_text, rng, mods);
            case TransformMethod::orientation:
                return transform_orientation(field_text, lex, rng, mods);
            case TransformMethod::unit: return transform_unit(field_text, lex, rng, mods);
            case TransformMethod::option:
                return transform_option(field_text, src.options, src.correct_index, rng, mods);
        }
        return std::nullopt;
    };

    std::vector<SoftNegative> out;
    const TransformMethod all[] = {TransformMethod::negation, TransformMethod::number,
                                   TransformMethod::orientation, TransformMethod::unit,
                                   TransformMethod::option};
    for (TransformMethod m : all) {
        if ((m == TransformMethod::number && config.disable_number) ||
            (m == TransformMethod::orientation && config.disable_orientation) ||
            (m == TransformMethod::unit && config.disable_unit) ||
            (m == TransformMethod::option && config.disable_option))
            continue;
        const std::string key = src.record_id + "|" + std::to_string(eff_epoch) + "|" +
                                method_name(m);
        Rng rng(derive_seed(config.seed, key));

        std::optional<FieldEdit> edit;
        std::string field_used;
        for (const auto& f : fields) {
            edit = try_method(m, rng, *f.text);
            if (edit) {
                field_used = f.field;
                break;
            }
        }
        if (!edit) {
            // fallback: substitute an affirmation-negation transform
            for (const auto& f : fields) {
                edit = transform_negation(*f.text, lex);
                if (edit) {
                    field_used = f.field;
                    break;
                }
            }
        }
        if (!edit) continue;

        SoftNegative neg;
        neg.method = m;
        neg.source_field = field_used;
        if (field_used == "explanation") {
            if (lecture.empty()) {
                neg.text = edit->text;
                neg.spans = edit->spans;
            } else {
                neg.text = lecture + " " + edit->text;
                const int off = static_cast<int>(lecture.size()) + 1;
                for (auto [s, e] : edit->spans) neg.spans.emplace_back(s + off, e + off);
            }
        } else {
            neg.text = explanation.empty() ? edit->text : edit->text + " " + explanation;
            neg.spans = edit->spans;
        }
        if (neg.text == original) continue;
        bool dup = false;
        for (const auto& prev : out)
            if (prev.text == neg.text) dup = true;
        if (!dup) out.push_back(std::move(neg));
    }
    return out;
}

} // namespace snse
