#include <catch2/catch_amalgamated.hpp>

#include <sstream>
#include <thread>

#include "chemtyper/resolver.hpp"

using namespace chemtyper;

namespace {

// A record in the shape of the multimodal definition of ethyl acetate.
const char* kFixtureJsonl = R"({"canonical_name": "Ethyl Acetate", "synonyms": ["EtOAc", "ethyl ester of acetic acid"], "smiles": "CCOC(C)=O", "description": "Ethyl Acetate is a clear colorless liquid with a fruity odor, widely used as a polar aprotic solvent."}
{"canonical_name": "Methanol", "synonyms": ["MeOH"], "smiles": "CO", "description": "Methanol is the simplest alcohol, a light volatile flammable liquid."}
{"canonical_name": "Benzoic Acid", "synonyms": [], "smiles": "OC(=O)c1ccccc1", "description": "Benzoic acid is a white crystalline aromatic carboxylic acid."}
)";

FixtureStore make_store(IngestReport* report_out = nullptr) {
    std::istringstream in(kFixtureJsonl);
    IngestReport report;
    FixtureStore store = FixtureStore::ingest_jsonl(in, report);
    if (report_out) *report_out = report;
    return store;
}

}  // namespace

TEST_CASE("fixture ingest", "[resolver]") {
    SECTION("three valid records load") {
        IngestReport report;
        FixtureStore store = make_store(&report);
        REQUIRE(store.size() == 3);
        REQUIRE(report.accepted == 3);
        REQUIRE(report.bad_smiles == 0);
    }
    SECTION("unparseable SMILES is skipped and counted") {
        std::istringstream in(
            R"({"canonical_name": "Bad", "synonyms": [], "smiles": "C1CC", "description": "broken ring"}
{"canonical_name": "Good", "synonyms": [], "smiles": "CC", "description": "ethane"}
)");
        IngestReport report;
        FixtureStore store = FixtureStore::ingest_jsonl(in, report);
        REQUIRE(store.size() == 1);
        REQUIRE(report.bad_smiles == 1);
        REQUIRE(report.accepted == 1);
    }
    SECTION("empty description is rejected") {
        std::istringstream in(
            R"({"canonical_name": "NoDesc", "synonyms": [], "smiles": "CC", "description": ""}
)");
        IngestReport report;
        FixtureStore store = FixtureStore::ingest_jsonl(in, report);
        REQUIRE(store.size() == 0);
        REQUIRE(report.empty_description == 1);
    }
    SECTION("duplicate canonical name: last wins, duplicate counted") {
        std::istringstream in(
            R"({"canonical_name": "X", "synonyms": [], "smiles": "CC", "description": "first"}
{"canonical_name": "X", "synonyms": [], "smiles": "CCC", "description": "second"}
)");
        IngestReport report;
        FixtureStore store = FixtureStore::ingest_jsonl(in, report);
        REQUIRE(store.size() == 1);
        REQUIRE(report.duplicates == 1);
        REQUIRE(store.lookup("x")->description == "second");
    }
    SECTION("unreadable file raises IOError") {
        IngestReport report;
        REQUIRE_THROWS_AS(FixtureStore::ingest_file("/nonexistent/fixtures.jsonl", report),
                          IOError);
    }
    SECTION("malformed JSON raises FormatError") {
        std::istringstream in("{not json\n");
        IngestReport report;
        REQUIRE_THROWS_AS(FixtureStore::ingest_jsonl(in, report), FormatError);
    }
}

TEST_CASE("resolution", "[resolver]") {
    Resolver resolver(make_store());

    SECTION("canonical name resolves, case and spacing insensitive") {
        ResolveResult r = resolver.resolve("ethyl   ACETATE");
        REQUIRE(r.linked());
        REQUIRE(r.record->canonical_name == "Ethyl Acetate");
        REQUIRE(r.record->description.find("Ethyl Acetate") != std::string::npos);
    }
    SECTION("synonym lookup comes after canonical lookup") {
        REQUIRE(resolver.resolve("EtOAc").record->canonical_name == "Ethyl Acetate");
        REQUIRE(resolver.resolve("MeOH").record->canonical_name == "Methanol");
    }
    SECTION("miss is Unlinkable") {
        REQUIRE_FALSE(resolver.resolve("unobtainium-polymer X").linked());
    }
    SECTION("repeat resolution returns identical content (cache hit)") {
        ResolveResult a = resolver.resolve("benzoic acid");
        ResolveResult b = resolver.resolve("Benzoic Acid");
        REQUIRE(a.linked());
        REQUIRE(b.linked());
        REQUIRE(*a.record == *b.record);
    }
    SECTION("stats count unique linked/unlinkable mentions") {
        resolver.resolve("methanol");
        resolver.resolve("methanol");
        resolver.resolve("nothing-here");
        ResolverStats s = resolver.stats();
        REQUIRE(s.linked == 1);
        REQUIRE(s.unlinkable == 1);
    }
    SECTION("per-corpus tally counts occurrences") {
        ResolverStats s = resolver.tally({"methanol", "methanol", "mystery-1", "mystery-2"});
        REQUIRE(s.linked == 2);
        REQUIRE(s.unlinkable == 2);
        REQUIRE(s.unlinkable_rate() == Catch::Approx(0.5));
    }
    SECTION("concurrent readers are safe") {
        std::vector<std::thread> workers;
        std::atomic<int> linked{0};
        for (int t = 0; t < 4; ++t) {
            workers.emplace_back([&] {
                for (int i = 0; i < 50; ++i) {
                    if (resolver.resolve(i % 2 ? "methanol" : "missing-compound").linked())
                        ++linked;
                }
            });
        }
        for (auto& w : workers) w.join();
        REQUIRE(linked == 100);
    }
}

TEST_CASE("on-disk cache round trip", "[resolver]") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "chemtyper_resolver_cache.json").string();
    {
        Resolver resolver(make_store());
        resolver.resolve("methanol");
        resolver.resolve("unknown-thing");
        resolver.save_cache(path);
    }
    {
        Resolver resolver{FixtureStore{}};  // empty store: only the cache can answer
        resolver.load_cache(path);
        REQUIRE(resolver.resolve("methanol").linked());
        REQUIRE_FALSE(resolver.resolve("unknown-thing").linked());
    }
    fs::remove(path);
}

TEST_CASE("live mode against a local backend", "[resolver][live]") {
    httplib::Server server;
    server.Get("/record/aspirin", [](const httplib::Request&, httplib::Response& res) {
        nlohmann::json j = {{"canonical_name", "Aspirin"},
                            {"smiles", "CC(=O)Oc1ccccc1C(=O)O"},
                            {"description", "Aspirin is an orally administered analgesic."}};
        res.set_content(j.dump(), "application/json");
    });
    server.Get("/record/garbage", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("not json at all", "application/json");
    });
    const int port = 18473;
    std::thread serve([&] { server.listen("127.0.0.1", port); });
    server.wait_until_ready();

    LiveConfig live;
    live.base_url = "http://127.0.0.1:" + std::to_string(port);
    live.retries = 0;
    Resolver resolver(make_store(), live);

    SECTION("fixture hit never touches the network") {
        REQUIRE(resolver.resolve("methanol").linked());
    }
    SECTION("live hit is validated and linked") {
        ResolveResult r = resolver.resolve("aspirin");
        REQUIRE(r.linked());
        REQUIRE(r.record->canonical_name == "Aspirin");
    }
    SECTION("malformed live response degrades to Unlinkable") {
        REQUIRE_FALSE(resolver.resolve("garbage").linked());
    }
    SECTION("missing record degrades to Unlinkable") {
        REQUIRE_FALSE(resolver.resolve("never-heard-of-it").linked());
    }

    server.stop();
    serve.join();

    SECTION("dead backend degrades to Unlinkable, never crashes") {
        LiveConfig dead;
        dead.base_url = "http://127.0.0.1:1";  // nothing listens here
        dead.timeout_ms = 50;
        dead.retries = 1;
        Resolver r(FixtureStore{}, dead);
        REQUIRE_FALSE(r.resolve("anything").linked());
    }
}
