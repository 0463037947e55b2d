#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "chemtyper/ontology.hpp"

using namespace chemtyper;

namespace {

const std::string kFixtureDir = std::string(CHEMTYPER_DATA_DIR) + "/ontology_fixture";

CategoryGraph load_fixture_graph() {
    std::ifstream in(kFixtureDir + "/category_graph.json");
    REQUIRE(in.good());
    nlohmann::json j;
    in >> j;
    return CategoryGraph::from_json(j);
}

std::set<std::string> load_fixture_dict() {
    std::ifstream in(kFixtureDir + "/coverage_dict.txt");
    REQUIRE(in.good());
    return load_term_list(in);
}

SynonymTable load_fixture_synonyms() {
    std::ifstream in(kFixtureDir + "/synonyms.tsv");
    REQUIRE(in.good());
    return load_synonyms(in);
}

const CategoryNode* child(const CategoryNode& n, const std::string& name) {
    for (const CategoryNode& c : n.children)
        if (c.name == name) return &c;
    return nullptr;
}

std::vector<std::string> child_names(const CategoryNode& n) {
    std::vector<std::string> out;
    for (const CategoryNode& c : n.children) out.push_back(c.name);
    return out;
}

CategoryNode built_fixture_tree() {
    CategoryGraph g = load_fixture_graph();
    CategoryNode tree = build_tree(g, "Chemistry", load_fixture_dict(), 3, 0.2);
    populate_entities(tree, g, load_fixture_synonyms());
    derive_other_nodes(tree);
    return tree;
}

}  // namespace

TEST_CASE("depth cap: chain keeps exactly max_depth levels below root", "[ontology]") {
    CategoryGraph g;
    g.add_edge("root", "A");
    g.add_edge("A", "B");
    g.add_edge("B", "C");
    g.add_edge("C", "D");
    std::set<std::string> dict = {"root", "a", "b", "c", "d"};
    CategoryNode tree = build_tree(g, "root", dict, 3, 0.2, /*add_other_nodes=*/false);
    REQUIRE(tree.name == "root");
    const CategoryNode* a = child(tree, "A");
    REQUIRE(a != nullptr);
    const CategoryNode* b = child(*a, "B");
    REQUIRE(b != nullptr);
    const CategoryNode* c = child(*b, "C");
    REQUIRE(c != nullptr);
    REQUIRE(c->children.empty());  // D is at depth 4, beyond the cap
}

TEST_CASE("coverage pruning", "[ontology]") {
    CategoryGraph g;
    g.add_edge("Chemistry", "Quantum Flavor");
    g.add_edge("Chemistry", "Organic Compounds");
    std::set<std::string> dict = {"chemistry", "organic", "compounds"};
    CategoryNode tree = build_tree(g, "Chemistry", dict, 3, 0.2, false);
    REQUIRE(child(tree, "Quantum Flavor") == nullptr);  // 0/2 unigrams covered
    REQUIRE(child(tree, "Organic Compounds") != nullptr);
}

TEST_CASE("missing root raises MissingRootError", "[ontology]") {
    CategoryGraph g;
    g.add_edge("A", "B");
    REQUIRE_THROWS_AS(build_tree(g, "Nope", {}, 3, 0.2), MissingRootError);
}

TEST_CASE("fixture graph builds the hand-derived tree", "[ontology]") {
    CategoryGraph g = load_fixture_graph();
    CategoryNode tree = build_tree(g, "Chemistry", load_fixture_dict(), 3, 0.2);

    REQUIRE(child_names(tree) == std::vector<std::string>{"Organic Chemistry",
                                                          "Inorganic Chemistry",
                                                          "Chemical Reactions",
                                                          "Other Chemistry"});
    const CategoryNode& oc = *child(tree, "Organic Chemistry");
    REQUIRE(child_names(oc) == std::vector<std::string>{"Organic Compounds", "Organic Reactions",
                                                        "Other Organic Chemistry"});
    const CategoryNode& compounds = *child(oc, "Organic Compounds");
    REQUIRE(child_names(compounds) ==
            std::vector<std::string>{"Hydrocarbons", "Alcohols", "Carboxylic Acids", "Polymers",
                                     "Amines", "Aromatic Compounds", "Other Organic Compounds"});
    // depth cap: Alkanes/Alkenes/Alkynes sit at depth 4 and are gone
    REQUIRE(child(compounds, "Hydrocarbons")->children.empty());
    // cycle edge Organic Reactions -> Organic Chemistry must not recurse
    const CategoryNode& oreact = *child(oc, "Organic Reactions");
    REQUIRE(child_names(oreact) ==
            std::vector<std::string>{"Coupling Reactions", "Other Organic Reactions"});
    // diamond: Carboxylic Acids was first reached under Organic Compounds
    const CategoryNode& ic = *child(tree, "Inorganic Chemistry");
    REQUIRE(child(ic, "Carboxylic Acids") == nullptr);
    REQUIRE(child_names(ic) ==
            std::vector<std::string>{"Salts", "Metal Oxides", "Other Inorganic Chemistry"});
    // coverage-pruned branches are absent entirely
    REQUIRE(child(tree, "Quantum Flavor Dynamics") == nullptr);
    REQUIRE(child(tree, "Sports Cars") == nullptr);
    REQUIRE(child(oc, "Celebrity Gossip Weekly") == nullptr);
    REQUIRE(child(ic, "Noble Gas Trivia") == nullptr);
    // second diamond edge: Coupling Reactions already taken by Organic Reactions
    const CategoryNode& creact = *child(tree, "Chemical Reactions");
    REQUIRE(child_names(creact) ==
            std::vector<std::string>{"Decomposition Reactions", "Other Chemical Reactions"});
    REQUIRE(child(creact, "Decomposition Reactions")->children.empty());
}

TEST_CASE("populate + derive fills entity bags per the set-difference rule", "[ontology]") {
    CategoryNode tree = built_fixture_tree();
    const CategoryNode& oc = *child(tree, "Organic Chemistry");
    const CategoryNode& compounds = *child(oc, "Organic Compounds");

    SECTION("synonym expansion covers all surface forms") {
        const CategoryNode& alcohols = *child(compounds, "Alcohols");
        REQUIRE(alcohols.entities ==
                std::set<std::string>{"ethanol", "ethyl alcohol", "etoh", "methanol"});
    }
    SECTION("shared page title lands in both leaf bags") {
        REQUIRE(child(compounds, "Hydrocarbons")->entities.count("benzene") == 1);
        REQUIRE(child(compounds, "Aromatic Compounds")->entities.count("benzene") == 1);
    }
    SECTION("Other bags are the parent-minus-siblings difference") {
        REQUIRE(child(compounds, "Other Organic Compounds")->entities ==
                std::set<std::string>{"urea"});
        REQUIRE(child(oc, "Other Organic Chemistry")->entities ==
                std::set<std::string>{"retrosynthesis"});
        const CategoryNode& ic = *child(tree, "Inorganic Chemistry");
        REQUIRE(child(*child(ic, "Salts"), "Other Salts")->entities ==
                std::set<std::string>{"sodium chloride", "table salt"});
        // fully-covered parent leaves an empty (still legal) Other leaf
        REQUIRE(child(ic, "Other Inorganic Chemistry")->entities.empty());
        REQUIRE(child(tree, "Other Chemistry")->entities ==
                std::set<std::string>{"chemistry basics"});
    }
    SECTION("Other-node disjointness holds tree-wide") {
        std::function<void(const CategoryNode&)> walk = [&](const CategoryNode& node) {
            std::set<std::string> sibling_union;
            const CategoryNode* other = nullptr;
            for (const CategoryNode& c : node.children) {
                if (c.is_other)
                    other = &c;
                else
                    sibling_union.insert(c.entities.begin(), c.entities.end());
            }
            if (other) {
                for (const std::string& e : other->entities) REQUIRE(sibling_union.count(e) == 0);
            }
            for (const CategoryNode& c : node.children) walk(c);
        };
        walk(tree);
    }
    SECTION("pages of pruned or over-depth categories never surface") {
        std::set<std::string> all;
        std::function<void(const CategoryNode&)> walk = [&](const CategoryNode& n) {
            all.insert(n.entities.begin(), n.entities.end());
            for (const CategoryNode& c : n.children) walk(c);
        };
        walk(tree);
        for (const char* gone : {"propane", "ethyl acetate", "pyrolysis", "star news"})
            REQUIRE(all.count(gone) == 0);
    }
    SECTION("derive before populate is an ordering error") {
        CategoryGraph g = load_fixture_graph();
        CategoryNode fresh = build_tree(g, "Chemistry", load_fixture_dict(), 3, 0.2);
        REQUIRE_THROWS_AS(derive_other_nodes(fresh), OrderingError);
    }
}

TEST_CASE("flatten enumerates leaves and inverts bags", "[ontology]") {
    CategoryNode tree = built_fixture_tree();
    auto [space, dict] = flatten(tree);

    REQUIRE(space.size() == 18);
    REQUIRE(space.types[0].str() ==
            "Chemistry/Organic Chemistry/Organic Compounds/Hydrocarbons");
    REQUIRE(space.types[17].str() == "Chemistry/Other Chemistry");
    for (int i = 0; i < space.size(); ++i)
        REQUIRE(space.id(space.types[static_cast<std::size_t>(i)].str()) == i);

    // multi-label entity: benzene belongs to two leaves
    const std::set<std::string>* benzene = dict.find("benzene");
    REQUIRE(benzene != nullptr);
    REQUIRE(benzene->size() == 2);

    // no type path exceeds max_depth + 1 names
    for (const FineGrainedType& t : space.types) REQUIRE(t.path.size() <= 4);

    SECTION("determinism: rebuilding yields an identical label order") {
        CategoryNode again = built_fixture_tree();
        auto [space2, dict2] = flatten(again);
        REQUIRE(space2.types.size() == space.types.size());
        for (std::size_t i = 0; i < space.types.size(); ++i)
            REQUIRE(space2.types[i] == space.types[i]);
        REQUIRE(dict2.entries == dict.entries);
    }
    SECTION("dictionary JSON round trip") {
        nlohmann::json j = dictionary_to_json(space, dict);
        auto [space2, dict2] = dictionary_from_json(j);
        REQUIRE(space2.size() == space.size());
        REQUIRE(dict2.entries == dict.entries);
    }
}

TEST_CASE("coverage pruning is monotone in the threshold", "[ontology]") {
    // On a diamond-free graph, raising the threshold can only remove nodes.
    // (With diamond edges, pruning one parent can re-route the shared node
    // through a shorter path and pull deeper descendants inside the depth
    // cap, so the global property is stated for the tree-shaped reduction.)
    CategoryGraph full = load_fixture_graph();
    CategoryGraph g;
    std::set<std::string> reached;
    for (const auto& [parent, kids] : full.children) {
        for (const std::string& child : kids) {
            if (child == "Chemistry") continue;             // cycle edge
            if (reached.count(child)) continue;             // diamond edges
            reached.insert(child);
            g.add_edge(parent, child);
        }
    }
    const std::set<std::string> dict = load_fixture_dict();
    auto names_at = [&](double threshold) {
        CategoryNode tree = build_tree(g, "Chemistry", dict, 3, threshold, false);
        std::set<std::string> names;
        std::function<void(const CategoryNode&)> walk = [&](const CategoryNode& n) {
            names.insert(n.name);
            for (const CategoryNode& c : n.children) walk(c);
        };
        walk(tree);
        return names;
    };
    std::set<std::string> prev;
    bool first = true;
    for (double t : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
        std::set<std::string> cur = names_at(t);
        if (!first) {
            for (const std::string& n : cur) REQUIRE(prev.count(n) == 1);  // cur subset of prev
        }
        prev = std::move(cur);
        first = false;
    }
    // extreme: threshold 1.0 keeps only fully-covered children
    REQUIRE(names_at(1.0).count("Organic Chemistry") == 0);
}

TEST_CASE("five-node paper-style path is representable", "[ontology]") {
    FineGrainedType t = FineGrainedType::parse(
        "Chemistry/Organic Chemistry/Organic Compounds/Hydrocarbons/Other Hydrocarbons");
    REQUIRE(t.path.size() == 5);
    REQUIRE(t.path.front() == "Chemistry");
    REQUIRE(t.path.back() == "Other Hydrocarbons");
}

TEST_CASE("ontology tree JSON round trip", "[ontology]") {
    CategoryNode tree = built_fixture_tree();
    CategoryNode back = CategoryNode::from_json(tree.to_json());
    auto [s1, d1] = flatten(tree);
    auto [s2, d2] = flatten(back);
    REQUIRE(s1.types.size() == s2.types.size());
    REQUIRE(d1.entries == d2.entries);
}
