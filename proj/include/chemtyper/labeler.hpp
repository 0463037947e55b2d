#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "chemtyper/common.hpp"
#include "chemtyper/ontology.hpp"

namespace chemtyper {

// Distant supervision over raw text: chemistry-aware tokenization, greedy
// longest-match dictionary tagging, and the two-pass agreement metric.

class AlignmentError : public std::runtime_error {
public:
    explicit AlignmentError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Token {
    std::string text;
    std::size_t begin = 0;  // char offsets into the sentence text
    std::size_t end = 0;
};

struct MentionSpan {
    std::size_t token_start = 0;
    std::size_t token_end = 0;  // exclusive
    std::string surface;
    std::set<std::string> labels;  // type path strings

    bool operator==(const MentionSpan& o) const {
        return token_start == o.token_start && token_end == o.token_end && surface == o.surface &&
               labels == o.labels;
    }
};

struct AnnotatedSentence {
    std::string doc_id;
    std::string text;
    std::vector<Token> tokens;
    std::vector<MentionSpan> mentions;
};

namespace detail {

inline bool is_punct(char c) {
    return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

inline char matching_open(char c) {
    switch (c) {
        case ')': return '(';
        case ']': return '[';
        case '}': return '{';
    }
    return '\0';
}

inline char matching_close(char c) {
    switch (c) {
        case '(': return ')';
        case '[': return ']';
        case '{': return '}';
    }
    return '\0';
}

}  // namespace detail

/// Whitespace split, then strip surrounding punctuation into single-char
/// tokens -- except brackets whose matching counterpart lies inside the same
/// chunk, which keeps chemistry names like "2-bromo-5-(trifluoromethyl)"
/// whole. Internal punctuation is never split.
inline std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= n) break;
        std::size_t j = i;
        while (j < n && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        // chunk is [i, j)
        std::size_t s = i, e = j;
        std::vector<Token> trailing;
        while (s < e && detail::is_punct(text[s])) {
            const char open = text[s];
            const char close = detail::matching_close(open);
            if (close != '\0' &&
                text.substr(s + 1, e - s - 1).find(close) != std::string_view::npos) {
                break;  // opener bonded to a closer inside the chunk
            }
            out.push_back(Token{std::string(1, text[s]), s, s + 1});
            ++s;
        }
        while (e > s && detail::is_punct(text[e - 1])) {
            const char close = text[e - 1];
            const char open = detail::matching_open(close);
            if (open != '\0' && text.substr(s, e - 1 - s).find(open) != std::string_view::npos) {
                break;  // closer bonded to an opener inside the chunk
            }
            trailing.push_back(Token{std::string(1, text[e - 1]), e - 1, e});
            --e;
        }
        if (s < e) out.push_back(Token{std::string(text.substr(s, e - s)), s, e});
        for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) out.push_back(*it);
        i = j;
    }
    return out;
}

/// Newline always ends a sentence; '.', '!' or '?' followed by whitespace
/// also does (the terminator stays with its sentence).
inline std::vector<std::string> split_sentences(std::string_view doc) {
    std::vector<std::string> out;
    std::string cur;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const char c = doc[i];
        if (c == '\n') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
            continue;
        }
        cur.push_back(c);
        if ((c == '.' || c == '!' || c == '?') &&
            (i + 1 == doc.size() || std::isspace(static_cast<unsigned char>(doc[i + 1])))) {
            if (i + 1 < doc.size() && doc[i + 1] != '\n') ++i;  // consume the space
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    // drop whitespace-only sentences
    std::vector<std::string> kept;
    for (std::string& s : out) {
        if (!normalize_text(s).empty()) kept.push_back(std::move(s));
    }
    return kept;
}

// Greedy left-to-right longest-match tagger over normalized token n-grams.
class DictionaryTagger {
public:
    explicit DictionaryTagger(TypedEntityDictionary dict) : dict_(std::move(dict)) {
        for (const auto& [key, _] : dict_.entries) {
            std::size_t words = key.empty() ? 0 : 1;
            for (char c : key) words += c == ' ';
            max_words_ = std::max(max_words_, words);
        }
    }

    AnnotatedSentence tag(const std::string& doc_id, const std::string& text) const {
        AnnotatedSentence s;
        s.doc_id = doc_id;
        s.text = text;
        s.tokens = tokenize(text);
        const std::size_t n = s.tokens.size();
        std::vector<std::string> norm(n);
        for (std::size_t i = 0; i < n; ++i) norm[i] = normalize_text(s.tokens[i].text);

        std::size_t i = 0;
        while (i < n) {
            bool matched = false;
            const std::size_t longest = std::min(max_words_, n - i);
            for (std::size_t len = longest; len >= 1 && !matched; --len) {
                std::string key = norm[i];
                for (std::size_t k = 1; k < len; ++k) key += " " + norm[i + k];
                const std::set<std::string>* labels = dict_.find(key);
                if (labels) {
                    MentionSpan m;
                    m.token_start = i;
                    m.token_end = i + len;
                    m.surface = text.substr(s.tokens[i].begin,
                                            s.tokens[i + len - 1].end - s.tokens[i].begin);
                    m.labels = *labels;
                    s.mentions.push_back(std::move(m));
                    i += len;
                    matched = true;
                }
            }
            if (!matched) ++i;
        }
        return s;
    }

private:
    TypedEntityDictionary dict_;
    std::size_t max_words_ = 1;
};

/// Micro F1 between two annotation passes over the same documents, with
/// pass_b as gold. A mention matches when document, sentence position, span
/// and full label set are all equal.
inline double pass_agreement_f1(const std::vector<AnnotatedSentence>& pass_a,
                                const std::vector<AnnotatedSentence>& pass_b) {
    auto group = [](const std::vector<AnnotatedSentence>& pass) {
        std::map<std::string, std::vector<const AnnotatedSentence*>> by_doc;
        for (const AnnotatedSentence& s : pass) by_doc[s.doc_id].push_back(&s);
        return by_doc;
    };
    auto docs_a = group(pass_a);
    auto docs_b = group(pass_b);
    {
        std::set<std::string> ka, kb;
        for (const auto& [k, _] : docs_a) ka.insert(k);
        for (const auto& [k, _] : docs_b) kb.insert(k);
        if (ka != kb) throw AlignmentError("pass_agreement_f1: document sets differ");
    }

    auto mention_keys = [](const std::map<std::string, std::vector<const AnnotatedSentence*>>& docs) {
        std::set<std::string> keys;
        for (const auto& [doc, sents] : docs) {
            for (std::size_t si = 0; si < sents.size(); ++si) {
                for (const MentionSpan& m : sents[si]->mentions) {
                    std::string key = doc + "\x1f" + std::to_string(si) + "\x1f" +
                                      std::to_string(m.token_start) + "\x1f" +
                                      std::to_string(m.token_end);
                    for (const std::string& l : m.labels) key += "\x1f" + l;
                    keys.insert(std::move(key));
                }
            }
        }
        return keys;
    };
    const std::set<std::string> a = mention_keys(docs_a);
    const std::set<std::string> b = mention_keys(docs_b);
    if (a.empty() && b.empty()) return 1.0;
    std::size_t tp = 0;
    for (const std::string& k : a) tp += b.count(k);
    const double precision = a.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(a.size());
    const double recall = b.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(b.size());
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// JSONL sentence format, the contract consumed by the typer's data loader:
// {doc_id, text, tokens: [[surface, start, end]],
//  mentions: [{start_tok, end_tok, surface, labels: [type strings]}]}
// ---------------------------------------------------------------------------

inline nlohmann::json sentence_to_json(const AnnotatedSentence& s) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const Token& t : s.tokens) tokens.push_back({t.text, t.begin, t.end});
    nlohmann::json mentions = nlohmann::json::array();
    for (const MentionSpan& m : s.mentions) {
        mentions.push_back({{"start_tok", m.token_start},
                            {"end_tok", m.token_end},
                            {"surface", m.surface},
                            {"labels", m.labels}});
    }
    return {{"doc_id", s.doc_id}, {"text", s.text}, {"tokens", tokens}, {"mentions", mentions}};
}

inline AnnotatedSentence sentence_from_json(const nlohmann::json& j) {
    AnnotatedSentence s;
    s.doc_id = j.at("doc_id").get<std::string>();
    s.text = j.at("text").get<std::string>();
    for (const auto& t : j.at("tokens")) {
        s.tokens.push_back(Token{t.at(0).get<std::string>(), t.at(1).get<std::size_t>(),
                                 t.at(2).get<std::size_t>()});
    }
    for (const auto& m : j.at("mentions")) {
        MentionSpan span;
        span.token_start = m.at("start_tok").get<std::size_t>();
        span.token_end = m.at("end_tok").get<std::size_t>();
        span.surface = m.at("surface").get<std::string>();
        span.labels = m.at("labels").get<std::set<std::string>>();
        s.mentions.push_back(std::move(span));
    }
    return s;
}

inline void write_sentences_jsonl(std::ostream& out, const std::vector<AnnotatedSentence>& ss) {
    for (const AnnotatedSentence& s : ss) out << sentence_to_json(s).dump() << '\n';
}

inline std::vector<AnnotatedSentence> read_sentences_jsonl(std::istream& in) {
    std::vector<AnnotatedSentence> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(sentence_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("sentence JSONL line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace chemtyper
