#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace snse {

// Word-level tokenizer: lowercase, split on whitespace, punctuation becomes
// single-character tokens. Non-ASCII bytes (e.g. the degree sign) are treated
// as word characters so "36°c" stays one token. Kept deliberately simple so
// golden outputs are stable.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&]() {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char c : text) {
        if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
        const bool wordch = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80;
        if (wordch) {
            cur.push_back(static_cast<char>(c));
        } else {
            flush();
            if (!std::isspace(c) && c != 0) out.push_back(std::string(1, static_cast<char>(c)));
        }
    }
    flush();
    return out;
}

inline std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out += ' ';
        out += t;
    }
    return out;
}

struct Vocab {
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kUnk = 2;

    std::vector<std::string> tokens; // id -> token
    std::map<std::string, int> index;

    int size() const { return static_cast<int>(tokens.size()); }

    int id(const std::string& tok) const {
        auto it = index.find(tok);
        return it == index.end() ? kUnk : it->second;
    }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        for (const auto& t : tokenize(text)) ids.push_back(id(t));
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::vector<std::string> ts;
        for (int i : ids)
            ts.push_back(i >= 0 && i < size() ? tokens[static_cast<size_t>(i)] : "<unk>");
        return detokenize(ts);
    }

    // Sorted token order keeps ids independent of corpus record order.
    static Vocab build(const std::vector<std::string>& texts) {
        std::set<std::string> seen;
        for (const auto& t : texts)
            for (const auto& tok : tokenize(t)) seen.insert(tok);
        Vocab v;
        v.tokens = {"<bos>", "<eos>", "<unk>"};
        for (const auto& t : seen) v.tokens.push_back(t);
        for (int i = 0; i < v.size(); ++i) v.index[v.tokens[static_cast<size_t>(i)]] = i;
        return v;
    }
};

} // namespace snse
