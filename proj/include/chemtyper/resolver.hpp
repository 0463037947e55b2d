#pragma once

#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chemtyper/common.hpp"
#include "chemtyper/smiles.hpp"

namespace chemtyper {

// Resolves a chemical mention to its external multimodal definition
// (structure + description). Fixture-first: tests and the acceptance
// pipeline never touch the network; a PubChem-style HTTP backend is an
// optional mode behind configuration.

struct ChemRecord {
    std::string canonical_name;
    std::string smiles;
    std::string description;

    bool operator==(const ChemRecord& o) const {
        return canonical_name == o.canonical_name && smiles == o.smiles &&
               description == o.description;
    }
};

// Two-case union: Linked(record) | Unlinkable.
struct ResolveResult {
    std::optional<ChemRecord> record;

    bool linked() const { return record.has_value(); }
    static ResolveResult linked_to(ChemRecord r) { return ResolveResult{std::move(r)}; }
    static ResolveResult unlinkable() { return ResolveResult{std::nullopt}; }
};

struct IngestReport {
    std::size_t accepted = 0;
    std::size_t bad_smiles = 0;
    std::size_t empty_description = 0;
    std::size_t duplicates = 0;
    std::size_t malformed = 0;

    nlohmann::json to_json() const {
        return {{"accepted", accepted},
                {"bad_smiles", bad_smiles},
                {"empty_description", empty_description},
                {"duplicates", duplicates},
                {"malformed", malformed}};
    }
};

// Immutable after ingest. Canonical names win over synonyms; within each
// map, first record in store order wins on collision, except that a
// duplicate canonical_name replaces the earlier record (last wins).
class FixtureStore {
public:
    static FixtureStore ingest_jsonl(std::istream& in, IngestReport& report) {
        FixtureStore store;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw FormatError(std::string("fixture JSONL: ") + e.what());
            }
            if (!j.contains("canonical_name") || !j.contains("smiles") ||
                !j.contains("description")) {
                ++report.malformed;
                continue;
            }
            ChemRecord rec{j.at("canonical_name").get<std::string>(),
                           j.at("smiles").get<std::string>(),
                           j.at("description").get<std::string>()};
            if (rec.description.empty()) {
                ++report.empty_description;
                continue;
            }
            try {
                parse_smiles(rec.smiles);
            } catch (const SmilesError&) {
                ++report.bad_smiles;
                continue;
            }
            std::vector<std::string> synonyms;
            if (j.contains("synonyms")) synonyms = j.at("synonyms").get<std::vector<std::string>>();
            store.add(std::move(rec), synonyms, report);
        }
        return store;
    }

    static FixtureStore ingest_file(const std::string& path, IngestReport& report) {
        std::ifstream in(path);
        if (!in) throw IOError("cannot read fixture file " + path);
        return ingest_jsonl(in, report);
    }

    std::size_t size() const { return records_.size(); }

    const ChemRecord* lookup(const std::string& normalized) const {
        auto it = canonical_.find(normalized);
        if (it != canonical_.end()) return &records_[it->second];
        it = synonym_.find(normalized);
        if (it != synonym_.end()) return &records_[it->second];
        return nullptr;
    }

    const std::vector<ChemRecord>& records() const { return records_; }

private:
    void add(ChemRecord rec, const std::vector<std::string>& synonyms, IngestReport& report) {
        const std::string key = normalize_text(rec.canonical_name);
        auto it = canonical_.find(key);
        std::size_t idx;
        if (it != canonical_.end()) {
            ++report.duplicates;
            idx = it->second;
            records_[idx] = std::move(rec);  // last wins
        } else {
            idx = records_.size();
            records_.push_back(std::move(rec));
            canonical_[key] = idx;
        }
        ++report.accepted;
        for (const std::string& syn : synonyms) {
            synonym_.emplace(normalize_text(syn), idx);  // first in store order wins
        }
    }

    std::vector<ChemRecord> records_;
    std::map<std::string, std::size_t> canonical_;
    std::map<std::string, std::size_t> synonym_;
};

struct LiveConfig {
    std::string base_url;        // e.g. http://localhost:8080
    std::string path_prefix = "/record/";
    int timeout_ms = 1000;
    int retries = 1;
};

struct ResolverStats {
    std::size_t linked = 0;
    std::size_t unlinkable = 0;

    std::size_t total() const { return linked + unlinkable; }
    double unlinkable_rate() const {
        return total() == 0 ? 0.0 : static_cast<double>(unlinkable) / static_cast<double>(total());
    }
    nlohmann::json to_json() const {
        return {{"linked", linked},
                {"unlinkable", unlinkable},
                {"total", total()},
                {"unlinkable_rate", unlinkable_rate()}};
    }
};

// Cached mention -> definition resolution. Safe for concurrent readers with
// single-writer insertion; results are referentially transparent within a
// process run.
class Resolver {
public:
    enum class Mode { fixture, live };

    explicit Resolver(FixtureStore store) : store_(std::move(store)), mode_(Mode::fixture) {}

    Resolver(FixtureStore store, LiveConfig live)
        : store_(std::move(store)), mode_(Mode::live), live_(std::move(live)) {}

    ResolveResult resolve(const std::string& mention) const {
        const std::string key = normalize_text(mention);
        {
            std::shared_lock lock(mu_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        ResolveResult result = resolve_uncached(key);
        std::unique_lock lock(mu_);
        auto [it, inserted] = cache_.emplace(key, std::move(result));
        if (inserted) {
            if (it->second.linked())
                ++stats_.linked;
            else
                ++stats_.unlinkable;
        }
        return it->second;
    }

    /// Counts over unique resolved mentions so far.
    ResolverStats stats() const {
        std::shared_lock lock(mu_);
        return stats_;
    }

    /// Resolve a batch and tally per-occurrence counts (the corpus-level
    /// linked/unlinkable report).
    ResolverStats tally(const std::vector<std::string>& mentions) const {
        ResolverStats out;
        for (const std::string& m : mentions) {
            if (resolve(m).linked())
                ++out.linked;
            else
                ++out.unlinkable;
        }
        return out;
    }

    /// Merge an on-disk JSON cache {mention: record-or-null}.
    void load_cache(const std::string& path) {
        std::ifstream in(path);
        if (!in) return;  // optional file
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("resolver cache " + path + ": " + e.what());
        }
        std::unique_lock lock(mu_);
        for (const auto& [key, value] : j.items()) {
            ResolveResult r = value.is_null()
                                  ? ResolveResult::unlinkable()
                                  : ResolveResult::linked_to(ChemRecord{
                                        value.at("canonical_name").get<std::string>(),
                                        value.at("smiles").get<std::string>(),
                                        value.at("description").get<std::string>()});
            auto [it, inserted] = cache_.emplace(key, std::move(r));
            if (inserted) {
                if (it->second.linked())
                    ++stats_.linked;
                else
                    ++stats_.unlinkable;
            }
        }
    }

    void save_cache(const std::string& path) const {
        nlohmann::json j = nlohmann::json::object();
        {
            std::shared_lock lock(mu_);
            for (const auto& [key, r] : cache_) {
                if (r.linked()) {
                    j[key] = {{"canonical_name", r.record->canonical_name},
                              {"smiles", r.record->smiles},
                              {"description", r.record->description}};
                } else {
                    j[key] = nullptr;
                }
            }
        }
        std::ofstream out(path);
        if (!out) throw IOError("cannot write resolver cache " + path);
        out << j.dump() << '\n';
    }

private:
    ResolveResult resolve_uncached(const std::string& key) const;

    FixtureStore store_;
    Mode mode_;
    LiveConfig live_;
    mutable std::shared_mutex mu_;
    mutable std::map<std::string, ResolveResult> cache_;
    mutable ResolverStats stats_;
};

}  // namespace chemtyper

// The live backend pulls in cpp-httplib; kept in a separate header section so
// fixture-only binaries still pay the include cost only once here.
#include <httplib.h>

namespace chemtyper {

namespace detail {

inline std::string url_encode(const std::string& s) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xF]);
        }
    }
    return out;
}

}  // namespace detail

inline ResolveResult Resolver::resolve_uncached(const std::string& key) const {
    const ChemRecord* hit = store_.lookup(key);
    if (hit) return ResolveResult::linked_to(*hit);
    if (mode_ != Mode::live) return ResolveResult::unlinkable();

    // Live lookup; every failure degrades to Unlinkable so the typer can
    // always run offline.
    for (int attempt = 0; attempt <= live_.retries; ++attempt) {
        httplib::Client client(live_.base_url);
        client.set_connection_timeout(0, live_.timeout_ms * 1000);
        client.set_read_timeout(0, live_.timeout_ms * 1000);
        auto res = client.Get(live_.path_prefix + detail::url_encode(key));
        if (!res || res->status != 200) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(res->body);
            ChemRecord rec{j.at("canonical_name").get<std::string>(),
                           j.at("smiles").get<std::string>(),
                           j.at("description").get<std::string>()};
            if (rec.description.empty()) break;
            parse_smiles(rec.smiles);
            return ResolveResult::linked_to(std::move(rec));
        } catch (const std::exception&) {
            break;  // malformed response; do not retry
        }
    }
    std::cerr << "[resolver] warning: live lookup failed for '" << key
              << "', treating as UNLINKABLE\n";
    return ResolveResult::unlinkable();
}

}  // namespace chemtyper
