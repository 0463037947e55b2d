#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <set>

#include "chemtyper/smiles.hpp"

using namespace chemtyper;

namespace {

int count_order(const MoleculeGraph& g, BondOrder o) {
    int n = 0;
    for (const Bond& b : g.bonds())
        if (b.order == o) ++n;
    return n;
}

}  // namespace

TEST_CASE("grammar examples", "[smiles]") {
    SECTION("CCO: ethanol chain") {
        MoleculeGraph g = parse_smiles("CCO");
        REQUIRE(g.atom_count() == 3);
        REQUIRE(g.bond_count() == 2);
        REQUIRE(g.atoms()[0].element == "C");
        REQUIRE(g.atoms()[1].element == "C");
        REQUIRE(g.atoms()[2].element == "O");
        REQUIRE(count_order(g, BondOrder::single) == 2);
        REQUIRE(g.neighbors(1).size() == 2);  // middle of the chain
    }
    SECTION("C1CC1: cyclopropane triangle") {
        MoleculeGraph g = parse_smiles("C1CC1");
        REQUIRE(g.atom_count() == 3);
        REQUIRE(g.bond_count() == 3);
        for (int i = 0; i < 3; ++i) REQUIRE(g.neighbors(i).size() == 2);
        REQUIRE(count_order(g, BondOrder::single) == 3);
    }
    SECTION("CCOC(C)=O: ethyl acetate") {
        MoleculeGraph g = parse_smiles("CCOC(C)=O");
        REQUIRE(g.atom_count() == 6);
        REQUIRE(g.bond_count() == 5);
        REQUIRE(count_order(g, BondOrder::double_bond) == 1);
        // the double bond is C=O
        for (const Bond& b : g.bonds()) {
            if (b.order == BondOrder::double_bond) {
                std::set<std::string> ends = {g.atoms()[b.a].element, g.atoms()[b.b].element};
                REQUIRE(ends == std::set<std::string>{"C", "O"});
            }
        }
    }
    SECTION("benzene: aromatic ring") {
        MoleculeGraph g = parse_smiles("c1ccccc1");
        REQUIRE(g.atom_count() == 6);
        REQUIRE(g.bond_count() == 6);
        REQUIRE(count_order(g, BondOrder::aromatic) == 6);
        for (const Atom& a : g.atoms()) {
            REQUIRE(a.element == "C");
            REQUIRE(a.aromatic);
        }
    }
    SECTION("bracket atoms: charge and explicit hydrogens") {
        MoleculeGraph g = parse_smiles("[NH4+].[O-]S(=O)(=O)[O-]");
        REQUIRE(g.atoms()[0].element == "N");
        REQUIRE(g.atoms()[0].formal_charge == 1);
        REQUIRE(g.atoms()[0].explicit_h == 4);
        REQUIRE(g.atoms()[1].formal_charge == -1);
        // dot keeps components disconnected
        REQUIRE(g.neighbors(0).empty());
    }
    SECTION("two-letter elements and %nn ring closures") {
        MoleculeGraph g = parse_smiles("ClC%12CC%12Br");
        REQUIRE(g.atoms()[0].element == "Cl");
        REQUIRE(g.atoms().back().element == "Br");
        REQUIRE(g.bond_count() == 5);
        MoleculeGraph se = parse_smiles("[Se]=O");
        REQUIRE(se.atoms()[0].element == "Se");
    }
    SECTION("explicit bond orders") {
        MoleculeGraph g = parse_smiles("C#CC=CC-C");
        REQUIRE(count_order(g, BondOrder::triple) == 1);
        REQUIRE(count_order(g, BondOrder::double_bond) == 1);
        REQUIRE(count_order(g, BondOrder::single) == 3);
    }
}

TEST_CASE("named parse errors", "[smiles]") {
    SECTION("unmatched ring closure") {
        REQUIRE_THROWS_AS(parse_smiles("C1CC"), RingClosureError);
        REQUIRE_THROWS_AS(parse_smiles("C11"), RingClosureError);
        REQUIRE_THROWS_AS(parse_smiles("C%1"), RingClosureError);
    }
    SECTION("unbalanced parentheses") {
        REQUIRE_THROWS_AS(parse_smiles("C(C"), BranchError);
        REQUIRE_THROWS_AS(parse_smiles("CC)C"), BranchError);
        REQUIRE_THROWS_AS(parse_smiles("(CC)"), BranchError);
    }
    SECTION("unknown element symbol") {
        REQUIRE_THROWS_AS(parse_smiles("CXC"), ElementError);
        REQUIRE_THROWS_AS(parse_smiles("[Xx]"), ElementError);
        REQUIRE_THROWS_AS(parse_smiles("Cq"), ElementError);
        REQUIRE_THROWS_AS(parse_smiles("[C@H]"), ElementError);  // stereo unsupported
    }
    SECTION("trailing or dangling bond symbol") {
        REQUIRE_THROWS_AS(parse_smiles("CC="), DanglingBondError);
        REQUIRE_THROWS_AS(parse_smiles("=CC"), DanglingBondError);
        REQUIRE_THROWS_AS(parse_smiles("C=.C"), DanglingBondError);
        REQUIRE_THROWS_AS(parse_smiles("C(=)C"), DanglingBondError);
    }
    SECTION("every error is a SmilesError, never a crash") {
        for (const char* bad :
             {"", "C1CC", "C(C", "CC)", "Zz", "C=", "=C", "C..C", "[C", "[]", "%", "C%2C"}) {
            try {
                parse_smiles(bad);
            } catch (const SmilesError&) {
                // expected shape of failure
            }
        }
    }
}

TEST_CASE("atom and bond counting identities", "[smiles]") {
    // bonds == (atom tokens - 1) - dots + ring closures, absent duplicate bonds
    struct Case {
        const char* s;
        std::size_t atoms, bonds;
    };
    for (const Case& c : {Case{"CCO", 3, 2}, Case{"C1CC1", 3, 3}, Case{"CC(C)(C)C", 5, 4},
                          Case{"CC.OC", 4, 2}, Case{"c1ccc2ccccc2c1", 10, 11},
                          Case{"[Na+].[Cl-]", 2, 0}}) {
        MoleculeGraph g = parse_smiles(c.s);
        INFO(c.s);
        REQUIRE(g.atom_count() == c.atoms);
        REQUIRE(g.bond_count() == c.bonds);
    }
}

TEST_CASE("adjacency is symmetric and bounded", "[smiles]") {
    for (const char* s :
         {"CCO", "C1CC1", "CCOC(C)=O", "c1ccccc1", "CC(=O)Nc1ccc(O)cc1", "[NH4+].[O-]"}) {
        MoleculeGraph g = parse_smiles(s);
        for (std::size_t i = 0; i < g.atom_count(); ++i) {
            for (const Neighbor& nb : g.neighbors(static_cast<int>(i))) {
                REQUIRE(nb.atom >= 0);
                REQUIRE(nb.atom < static_cast<int>(g.atom_count()));
                bool back = false;
                for (const Neighbor& nb2 : g.neighbors(nb.atom))
                    back = back || nb2.atom == static_cast<int>(i);
                REQUIRE(back);
            }
        }
    }
}

TEST_CASE("parse-serialize-parse fixpoint", "[smiles]") {
    for (const char* s : {"CCO", "C1CC1", "CCOC(C)=O", "c1ccccc1", "Cc1ccccc1C",
                          "CC(=O)Nc1ccc(O)cc1", "C1CC2CCC1CC2", "[NH4+].[O-]S(=O)(=O)[O-]",
                          "c1ccc2ccccc2c1", "[nH]1cccc1", "N#Cc1ccccc1"}) {
        MoleculeGraph g = parse_smiles(s);
        const std::string emitted = to_smiles(g);
        INFO(std::string(s) + " -> " + emitted);
        MoleculeGraph g2 = parse_smiles(emitted);
        REQUIRE(graph_signature(g) == graph_signature(g2));
        REQUIRE(g.atom_count() == g2.atom_count());
        REQUIRE(g.bond_count() == g2.bond_count());
    }
}

TEST_CASE("vocabulary indexing", "[smiles]") {
    SECTION("CCO with a two-entry vocab") {
        AtomVocab v;
        v.index[{"C", false}] = 0;
        v.index[{"O", false}] = 1;
        v.unknown = 2;
        v.next = 3;
        IndexedMolecule m = vocab_index(parse_smiles("CCO"), v, BondVocab::standard());
        REQUIRE(m.atom_ids == std::vector<int>{0, 0, 1});
    }
    SECTION("aromatic carbons get the aromatic index") {
        AtomVocab v = AtomVocab::organic_default();
        IndexedMolecule m = vocab_index(parse_smiles("c1ccccc1"), v, BondVocab::standard());
        const int aromatic_c = v.id(Atom{"C", true, 0, std::nullopt});
        REQUIRE(aromatic_c != v.unknown);
        for (int id : m.atom_ids) REQUIRE(id == aromatic_c);
        const int plain_c = v.id(Atom{"C", false, 0, std::nullopt});
        REQUIRE(plain_c != aromatic_c);
    }
    SECTION("unseen bracket atom falls back to unknown") {
        AtomVocab v = AtomVocab::organic_default();
        IndexedMolecule m = vocab_index(parse_smiles("[Se]"), v, BondVocab::standard());
        REQUIRE(m.atom_ids == std::vector<int>{v.unknown});
    }
    SECTION("vocab round trips through JSON") {
        AtomVocab v = AtomVocab::organic_default();
        v.extend_from(parse_smiles("[Se]=[Te]"));
        AtomVocab v2 = AtomVocab::from_json(v.to_json());
        REQUIRE(v2.index == v.index);
        REQUIRE(v2.size() == v.size());
    }
}

TEST_CASE("bundled molecule fixture parses clean", "[smiles]") {
    std::ifstream in(std::string(CHEMTYPER_DATA_DIR) + "/molecules_200.smi");
    REQUIRE(in.good());
    std::string line;
    std::size_t count = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        INFO(line);
        MoleculeGraph g = parse_smiles(line);
        REQUIRE(g.atom_count() >= 1);
        MoleculeGraph g2 = parse_smiles(to_smiles(g));
        REQUIRE(graph_signature(g) == graph_signature(g2));
        ++count;
    }
    REQUIRE(count == 200);
}
