#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "chemtyper/common.hpp"

namespace chemtyper {

// Molecular graphs parsed from a SMILES subset: organic-subset atoms,
// aromatic lowercase atoms, bracket atoms with charge and explicit H,
// bond symbols - = # :, branches, ring closures 1-9 and %nn, and '.' for
// disconnected components. No stereochemistry, no isotopes, no valence
// checking.

class SmilesError : public std::runtime_error {
public:
    explicit SmilesError(const std::string& msg) : std::runtime_error(msg) {}
};
class RingClosureError : public SmilesError {
public:
    explicit RingClosureError(const std::string& msg) : SmilesError(msg) {}
};
class BranchError : public SmilesError {
public:
    explicit BranchError(const std::string& msg) : SmilesError(msg) {}
};
class ElementError : public SmilesError {
public:
    explicit ElementError(const std::string& msg) : SmilesError(msg) {}
};
class DanglingBondError : public SmilesError {
public:
    explicit DanglingBondError(const std::string& msg) : SmilesError(msg) {}
};

enum class BondOrder { single, double_bond, triple, aromatic };

inline const char* bond_order_name(BondOrder o) {
    switch (o) {
        case BondOrder::single: return "single";
        case BondOrder::double_bond: return "double";
        case BondOrder::triple: return "triple";
        case BondOrder::aromatic: return "aromatic";
    }
    return "?";
}

struct Atom {
    std::string element;
    bool aromatic = false;
    int formal_charge = 0;
    std::optional<int> explicit_h;
};

struct Bond {
    int a = -1;
    int b = -1;
    BondOrder order = BondOrder::single;
};

struct Neighbor {
    int atom;
    int bond;
};

class MoleculeGraph {
public:
    const std::vector<Atom>& atoms() const { return atoms_; }
    const std::vector<Bond>& bonds() const { return bonds_; }
    const std::vector<Neighbor>& neighbors(int atom) const { return adj_.at(static_cast<std::size_t>(atom)); }
    std::size_t atom_count() const { return atoms_.size(); }
    std::size_t bond_count() const { return bonds_.size(); }

    int add_atom(Atom a) {
        atoms_.push_back(std::move(a));
        adj_.emplace_back();
        return static_cast<int>(atoms_.size()) - 1;
    }

    int add_bond(int a, int b, BondOrder order) {
        if (a == b) throw RingClosureError("bond endpoints must be distinct");
        if (a < 0 || b < 0 || a >= static_cast<int>(atoms_.size()) ||
            b >= static_cast<int>(atoms_.size()))
            throw ContractError("bond endpoint out of range");
        if (has_bond(a, b)) {
            throw RingClosureError("duplicate bond between atoms " + std::to_string(a) + " and " +
                                   std::to_string(b));
        }
        const int idx = static_cast<int>(bonds_.size());
        bonds_.push_back(Bond{a, b, order});
        adj_[static_cast<std::size_t>(a)].push_back(Neighbor{b, idx});
        adj_[static_cast<std::size_t>(b)].push_back(Neighbor{a, idx});
        return idx;
    }

    bool has_bond(int a, int b) const {
        for (const Neighbor& n : adj_[static_cast<std::size_t>(a)])
            if (n.atom == b) return true;
        return false;
    }

    nlohmann::json to_json() const {
        nlohmann::json ja = nlohmann::json::array();
        for (const Atom& a : atoms_) {
            ja.push_back({{"element", a.element}, {"aromatic", a.aromatic}, {"charge", a.formal_charge}});
        }
        nlohmann::json jb = nlohmann::json::array();
        for (const Bond& b : bonds_) jb.push_back({b.a, b.b, bond_order_name(b.order)});
        return {{"atoms", ja}, {"bonds", jb}};
    }

private:
    std::vector<Atom> atoms_;
    std::vector<Bond> bonds_;
    std::vector<std::vector<Neighbor>> adj_;
};

namespace detail {

inline const std::set<std::string>& periodic_table() {
    static const std::set<std::string> table = {
        "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si",
        "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni",
        "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo",
        "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba",
        "La", "Ce", "Pr", "Nd", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu",
        "Hf", "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At",
        "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U"};
    return table;
}

// Aromatic forms allowed in brackets; bare lowercase is restricted to bcnops.
inline bool aromatic_symbol_ok(const std::string& lower) {
    static const std::set<std::string> ok = {"b", "c", "n", "o", "p", "s", "se", "as"};
    return ok.count(lower) != 0;
}

struct PendingRing {
    int atom;
    std::optional<BondOrder> order;
};

}  // namespace detail

/// Parse a SMILES string into a MoleculeGraph. Atom order follows
/// left-to-right appearance; an unspecified bond between two aromatic atoms
/// is aromatic, otherwise single.
inline MoleculeGraph parse_smiles(std::string_view input) {
    if (input.empty()) throw SmilesError("empty SMILES string");
    MoleculeGraph g;
    int prev = -1;
    std::optional<BondOrder> pending;
    std::vector<int> branch_stack;
    std::map<int, detail::PendingRing> open_rings;

    auto connect = [&](int from, int to, std::optional<BondOrder> order) {
        BondOrder o;
        if (order) {
            o = *order;
        } else if (g.atoms()[static_cast<std::size_t>(from)].aromatic &&
                   g.atoms()[static_cast<std::size_t>(to)].aromatic) {
            o = BondOrder::aromatic;
        } else {
            o = BondOrder::single;
        }
        g.add_bond(from, to, o);
    };

    auto place_atom = [&](Atom atom) {
        const int idx = g.add_atom(std::move(atom));
        if (prev >= 0) {
            connect(prev, idx, pending);
        } else if (pending) {
            throw DanglingBondError("bond symbol before first atom of a component");
        }
        pending.reset();
        prev = idx;
    };

    auto close_ring = [&](int number) {
        auto it = open_rings.find(number);
        if (prev < 0) throw RingClosureError("ring closure digit before any atom");
        if (it == open_rings.end()) {
            open_rings[number] = detail::PendingRing{prev, pending};
            pending.reset();
            return;
        }
        detail::PendingRing open = it->second;
        open_rings.erase(it);
        if (open.atom == prev)
            throw RingClosureError("ring closure " + std::to_string(number) + " bonds an atom to itself");
        std::optional<BondOrder> order;
        if (open.order && pending && *open.order != *pending) {
            throw RingClosureError("conflicting bond orders on ring closure " + std::to_string(number));
        }
        order = open.order ? open.order : pending;
        connect(open.atom, prev, order);
        pending.reset();
    };

    std::size_t i = 0;
    const std::size_t n = input.size();
    while (i < n) {
        const char c = input[i];
        if (c == '-') {
            if (pending) throw DanglingBondError("consecutive bond symbols");
            pending = BondOrder::single;
            ++i;
        } else if (c == '=') {
            if (pending) throw DanglingBondError("consecutive bond symbols");
            pending = BondOrder::double_bond;
            ++i;
        } else if (c == '#') {
            if (pending) throw DanglingBondError("consecutive bond symbols");
            pending = BondOrder::triple;
            ++i;
        } else if (c == ':') {
            if (pending) throw DanglingBondError("consecutive bond symbols");
            pending = BondOrder::aromatic;
            ++i;
        } else if (c == '(') {
            if (prev < 0) throw BranchError("branch opened before any atom");
            if (pending) throw DanglingBondError("bond symbol before branch open");
            branch_stack.push_back(prev);
            ++i;
        } else if (c == ')') {
            if (branch_stack.empty()) throw BranchError("unmatched ')'");
            if (pending) throw DanglingBondError("dangling bond before ')'");
            prev = branch_stack.back();
            branch_stack.pop_back();
            ++i;
        } else if (c == '.') {
            if (pending) throw DanglingBondError("dangling bond before '.'");
            if (prev < 0) throw SmilesError("'.' before any atom");
            prev = -1;
            ++i;
        } else if (c >= '1' && c <= '9') {
            close_ring(c - '0');
            ++i;
        } else if (c == '%') {
            if (i + 2 >= n || !std::isdigit(static_cast<unsigned char>(input[i + 1])) ||
                !std::isdigit(static_cast<unsigned char>(input[i + 2]))) {
                throw RingClosureError("'%' must be followed by two digits");
            }
            close_ring((input[i + 1] - '0') * 10 + (input[i + 2] - '0'));
            i += 3;
        } else if (c == '[') {
            std::size_t j = i + 1;
            Atom atom;
            if (j < n && std::isdigit(static_cast<unsigned char>(input[j])))
                throw ElementError("isotope specifications are not supported");
            if (j >= n) throw ElementError("unterminated bracket atom");
            if (std::isupper(static_cast<unsigned char>(input[j]))) {
                std::string sym(1, input[j]);
                ++j;
                if (j < n && std::islower(static_cast<unsigned char>(input[j])) && input[j] != 'h') {
                    // two-letter symbol only if it is a known element
                    std::string two = sym + input[j];
                    if (detail::periodic_table().count(two)) {
                        sym = two;
                        ++j;
                    }
                }
                if (!detail::periodic_table().count(sym))
                    throw ElementError("unknown element symbol '" + sym + "'");
                atom.element = sym;
            } else if (std::islower(static_cast<unsigned char>(input[j]))) {
                std::string sym(1, input[j]);
                ++j;
                if (j < n && std::islower(static_cast<unsigned char>(input[j]))) {
                    std::string two = sym + input[j];
                    if (detail::aromatic_symbol_ok(two)) {
                        sym = two;
                        ++j;
                    }
                }
                if (!detail::aromatic_symbol_ok(sym))
                    throw ElementError("'" + sym + "' cannot be aromatic");
                atom.aromatic = true;
                atom.element = sym;
                atom.element[0] = static_cast<char>(std::toupper(atom.element[0]));
            } else {
                throw ElementError(std::string("unexpected character '") + input[j] + "' in bracket atom");
            }
            // optional explicit hydrogens
            if (j < n && input[j] == 'H') {
                ++j;
                int count = 1;
                if (j < n && std::isdigit(static_cast<unsigned char>(input[j]))) {
                    count = input[j] - '0';
                    ++j;
                }
                atom.explicit_h = count;
            }
            // optional charge
            if (j < n && (input[j] == '+' || input[j] == '-')) {
                const char sign_char = input[j];
                const int sign = sign_char == '+' ? 1 : -1;
                int magnitude = 1;
                ++j;
                if (j < n && std::isdigit(static_cast<unsigned char>(input[j]))) {
                    magnitude = input[j] - '0';
                    ++j;
                } else {
                    while (j < n && input[j] == sign_char) {
                        ++magnitude;
                        ++j;
                    }
                }
                atom.formal_charge = sign * magnitude;
            }
            if (j >= n || input[j] != ']') {
                throw ElementError("unterminated or malformed bracket atom");
            }
            place_atom(std::move(atom));
            i = j + 1;
        } else if (std::isupper(static_cast<unsigned char>(c))) {
            std::string sym(1, c);
            std::size_t adv = 1;
            if (i + 1 < n && std::islower(static_cast<unsigned char>(input[i + 1]))) {
                const std::string two = sym + input[i + 1];
                if (two == "Cl" || two == "Br") {
                    sym = two;
                    adv = 2;
                }
            }
            static const std::set<std::string> organic = {"B", "C", "N", "O", "P",
                                                          "S", "F", "Cl", "Br", "I"};
            if (!organic.count(sym)) {
                throw ElementError("unknown element symbol '" + sym +
                                   "' (non organic-subset atoms must be bracketed)");
            }
            place_atom(Atom{sym, false, 0, std::nullopt});
            i += adv;
        } else if (std::islower(static_cast<unsigned char>(c))) {
            static const std::string ok = "bcnops";
            if (ok.find(c) == std::string::npos)
                throw ElementError(std::string("unknown aromatic atom '") + c + "'");
            Atom atom;
            atom.aromatic = true;
            atom.element = std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
            place_atom(std::move(atom));
            ++i;
        } else {
            throw ElementError(std::string("unexpected character '") + c + "' in SMILES");
        }
    }

    if (pending) throw DanglingBondError("trailing bond symbol");
    if (!branch_stack.empty()) throw BranchError("unclosed '('");
    if (!open_rings.empty()) {
        throw RingClosureError("unmatched ring closure digit " +
                               std::to_string(open_rings.begin()->first));
    }
    if (g.atom_count() == 0) throw SmilesError("no atoms parsed");
    return g;
}

/// Deterministic SMILES writer: DFS from the lowest-index atom of each
/// component, neighbors in index order, ring-closure digits for non-tree
/// edges. Not canonical across isomorphisms, but parse(to_smiles(g)) is
/// always isomorphic to g.
inline std::string to_smiles(const MoleculeGraph& g) {
    const std::size_t n = g.atom_count();
    std::string out;

    auto atom_token = [&](int idx) {
        const Atom& a = g.atoms()[static_cast<std::size_t>(idx)];
        static const std::set<std::string> organic = {"B", "C", "N", "O", "P",
                                                      "S", "F", "Cl", "Br", "I"};
        std::string sym = a.element;
        if (a.aromatic) {
            for (char& ch : sym) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        }
        const bool plain = organic.count(a.element) && a.formal_charge == 0 && !a.explicit_h &&
                           (!a.aromatic || a.element.size() == 1);
        if (plain) return sym;
        std::string t = "[" + sym;
        if (a.explicit_h && *a.explicit_h > 0) {
            t += 'H';
            if (*a.explicit_h > 1) t += std::to_string(*a.explicit_h);
        }
        if (a.formal_charge > 0) {
            t += '+';
            if (a.formal_charge > 1) t += std::to_string(a.formal_charge);
        } else if (a.formal_charge < 0) {
            t += '-';
            if (a.formal_charge < -1) t += std::to_string(-a.formal_charge);
        }
        t += ']';
        return t;
    };

    auto bond_token = [&](int from, int to, BondOrder o) -> std::string {
        const bool both_aromatic = g.atoms()[static_cast<std::size_t>(from)].aromatic &&
                                   g.atoms()[static_cast<std::size_t>(to)].aromatic;
        switch (o) {
            case BondOrder::single: return both_aromatic ? "-" : "";
            case BondOrder::double_bond: return "=";
            case BondOrder::triple: return "#";
            case BondOrder::aromatic: return both_aromatic ? "" : ":";
        }
        return "";
    };

    // Pass 1: classify every bond as DFS-tree edge or ring (back) edge,
    // with the same traversal order as the emitter below.
    std::vector<bool> seen(n, false);
    std::vector<bool> is_tree(g.bond_count(), false);
    std::function<void(int)> classify = [&](int atom) {
        seen[static_cast<std::size_t>(atom)] = true;
        for (const Neighbor& nb : g.neighbors(atom)) {
            if (!seen[static_cast<std::size_t>(nb.atom)]) {
                is_tree[static_cast<std::size_t>(nb.bond)] = true;
                classify(nb.atom);
            }
        }
    };
    for (std::size_t start = 0; start < n; ++start)
        if (!seen[start]) classify(static_cast<int>(start));

    // Pass 2: emit. Each ring bond prints a digit at both endpoints; the
    // number is allocated at the first endpoint reached and freed at the
    // second, so digits can be reused.
    int next_ring_number = 1;
    std::set<int> free_numbers;
    auto take_number = [&]() {
        if (!free_numbers.empty()) {
            const int k = *free_numbers.begin();
            free_numbers.erase(free_numbers.begin());
            return k;
        }
        return next_ring_number++;
    };
    auto number_token = [](int k) {
        if (k >= 100) throw ContractError("to_smiles: more than 99 rings open at once");
        return k < 10 ? std::to_string(k) : "%" + std::to_string(k);
    };

    std::map<int, int> ring_number;  // bond index -> open number
    std::fill(seen.begin(), seen.end(), false);
    std::function<void(int)> emit = [&](int atom) {
        seen[static_cast<std::size_t>(atom)] = true;
        out += atom_token(atom);
        for (const Neighbor& nb : g.neighbors(atom)) {
            if (is_tree[static_cast<std::size_t>(nb.bond)]) continue;
            auto it = ring_number.find(nb.bond);
            if (it == ring_number.end()) {
                const int number = take_number();
                ring_number[nb.bond] = number;
                out += bond_token(atom, nb.atom, g.bonds()[static_cast<std::size_t>(nb.bond)].order);
                out += number_token(number);
            } else {
                out += number_token(it->second);
                free_numbers.insert(it->second);
                ring_number.erase(it);
            }
        }
        std::vector<Neighbor> children;
        for (const Neighbor& nb : g.neighbors(atom)) {
            if (is_tree[static_cast<std::size_t>(nb.bond)] && !seen[static_cast<std::size_t>(nb.atom)])
                children.push_back(nb);
        }
        for (std::size_t k = 0; k < children.size(); ++k) {
            const Neighbor& nb = children[k];
            const bool last = k + 1 == children.size();
            const std::string bt =
                bond_token(atom, nb.atom, g.bonds()[static_cast<std::size_t>(nb.bond)].order);
            if (!last) out += '(';
            out += bt;
            emit(nb.atom);
            if (!last) out += ')';
        }
    };

    bool first_component = true;
    for (std::size_t start = 0; start < n; ++start) {
        if (seen[start]) continue;
        if (!first_component) out += '.';
        first_component = false;
        emit(static_cast<int>(start));
    }
    return out;
}

/// Isomorphism-invariant local signature used by the parse-serialize-parse
/// fixpoint check: (element, aromatic, charge, degree, sorted bond orders).
inline std::vector<std::string> graph_signature(const MoleculeGraph& g) {
    std::vector<std::string> sig;
    sig.reserve(g.atom_count());
    for (std::size_t i = 0; i < g.atom_count(); ++i) {
        const Atom& a = g.atoms()[i];
        std::vector<std::string> orders;
        for (const Neighbor& nb : g.neighbors(static_cast<int>(i)))
            orders.push_back(bond_order_name(g.bonds()[static_cast<std::size_t>(nb.bond)].order));
        std::sort(orders.begin(), orders.end());
        std::string s = a.element + "|" + (a.aromatic ? "ar" : "al") + "|" +
                        std::to_string(a.formal_charge) + "|" + std::to_string(orders.size());
        for (const std::string& o : orders) s += "|" + o;
        sig.push_back(std::move(s));
    }
    std::sort(sig.begin(), sig.end());
    return sig;
}

// ---------------------------------------------------------------------------
// Type vocabularies for the graph encoder.
// ---------------------------------------------------------------------------

/// (element, aromatic) -> index with a reserved unknown index; lookups are
/// total.
struct AtomVocab {
    std::map<std::pair<std::string, bool>, int> index;
    int unknown = 0;
    int next = 1;

    static AtomVocab organic_default() {
        AtomVocab v;
        for (const char* e : {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"})
            v.add(e, false);
        for (const char* e : {"B", "C", "N", "O", "P", "S"}) v.add(e, true);
        return v;
    }

    int add(const std::string& element, bool aromatic) {
        auto key = std::make_pair(element, aromatic);
        auto it = index.find(key);
        if (it != index.end()) return it->second;
        index[key] = next;
        return next++;
    }

    void extend_from(const MoleculeGraph& g) {
        for (const Atom& a : g.atoms()) add(a.element, a.aromatic);
    }

    int id(const Atom& a) const {
        auto it = index.find(std::make_pair(a.element, a.aromatic));
        return it == index.end() ? unknown : it->second;
    }

    /// Table row count (unknown slot included).
    int size() const { return next; }

    nlohmann::json to_json() const {
        nlohmann::json entries = nlohmann::json::array();
        for (const auto& [key, id] : index) entries.push_back({key.first, key.second, id});
        return {{"unknown", unknown}, {"next", next}, {"entries", entries}};
    }

    static AtomVocab from_json(const nlohmann::json& j) {
        AtomVocab v;
        v.unknown = j.at("unknown").get<int>();
        v.next = j.at("next").get<int>();
        for (const auto& e : j.at("entries"))
            v.index[{e.at(0).get<std::string>(), e.at(1).get<bool>()}] = e.at(2).get<int>();
        return v;
    }
};

/// BondOrder -> index with a reserved unknown index.
struct BondVocab {
    std::map<std::string, int> index;
    int unknown = 0;

    static BondVocab standard() {
        BondVocab v;
        v.index = {{"single", 1}, {"double", 2}, {"triple", 3}, {"aromatic", 4}};
        return v;
    }

    int id(BondOrder o) const {
        auto it = index.find(bond_order_name(o));
        return it == index.end() ? unknown : it->second;
    }

    int size() const {
        int mx = unknown;
        for (const auto& [_, v] : index) mx = std::max(mx, v);
        return mx + 1;
    }

    nlohmann::json to_json() const { return {{"unknown", unknown}, {"index", index}}; }

    static BondVocab from_json(const nlohmann::json& j) {
        BondVocab v;
        v.unknown = j.at("unknown").get<int>();
        v.index = j.at("index").get<std::map<std::string, int>>();
        return v;
    }
};

/// A molecule graph annotated with vocabulary indices for every atom and bond.
struct IndexedMolecule {
    MoleculeGraph graph;
    std::vector<int> atom_ids;
    std::vector<int> bond_ids;
};

inline IndexedMolecule vocab_index(MoleculeGraph graph, const AtomVocab& atoms,
                                   const BondVocab& bonds) {
    IndexedMolecule out;
    out.atom_ids.reserve(graph.atom_count());
    out.bond_ids.reserve(graph.bond_count());
    for (const Atom& a : graph.atoms()) out.atom_ids.push_back(atoms.id(a));
    for (const Bond& b : graph.bonds()) out.bond_ids.push_back(bonds.id(b.order));
    out.graph = std::move(graph);
    return out;
}

}  // namespace chemtyper
