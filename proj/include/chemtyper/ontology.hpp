#pragma once

#include <algorithm>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chemtyper/common.hpp"

namespace chemtyper {

// Fine-grained type ontology: a category tree cut out of a (cyclic, diamond
// bearing) category graph by depth-capped DFS with dictionary-coverage
// pruning. Root-to-leaf paths are the types; "Other <parent>" leaves hold
// the set difference between a parent's entities and its named children's.

class MissingRootError : public std::runtime_error {
public:
    explicit MissingRootError(const std::string& msg) : std::runtime_error(msg) {}
};

class OrderingError : public std::logic_error {
public:
    explicit OrderingError(const std::string& msg) : std::logic_error(msg) {}
};

// Input category graph: ordered parent->child edges plus page titles per
// category. Loaded from JSON {edges: [[parent, child]], pages: {cat: [t]}}
// so the module never touches a live wiki dump.
struct CategoryGraph {
    std::map<std::string, std::vector<std::string>> children;
    std::map<std::string, std::vector<std::string>> pages;
    std::set<std::string> nodes;

    void add_edge(const std::string& parent, const std::string& child) {
        children[parent].push_back(child);
        nodes.insert(parent);
        nodes.insert(child);
    }

    void add_page(const std::string& category, const std::string& title) {
        pages[category].push_back(title);
        nodes.insert(category);
    }

    bool has(const std::string& name) const { return nodes.count(name) != 0; }

    const std::vector<std::string>& children_of(const std::string& name) const {
        static const std::vector<std::string> empty;
        auto it = children.find(name);
        return it == children.end() ? empty : it->second;
    }

    const std::vector<std::string>& pages_of(const std::string& name) const {
        static const std::vector<std::string> empty;
        auto it = pages.find(name);
        return it == pages.end() ? empty : it->second;
    }

    static CategoryGraph from_json(const nlohmann::json& j) {
        CategoryGraph g;
        if (!j.contains("edges")) throw FormatError("category graph: missing \"edges\"");
        for (const auto& e : j.at("edges")) {
            if (!e.is_array() || e.size() != 2)
                throw FormatError("category graph: edge must be [parent, child]");
            g.add_edge(e.at(0).get<std::string>(), e.at(1).get<std::string>());
        }
        if (j.contains("pages")) {
            for (const auto& [cat, titles] : j.at("pages").items()) {
                for (const auto& t : titles) g.add_page(cat, t.get<std::string>());
            }
        }
        return g;
    }
};

struct CategoryNode {
    std::string name;
    bool is_other = false;
    bool populated = false;
    std::vector<CategoryNode> children;
    std::set<std::string> entities;  // normalized surface strings

    nlohmann::json to_json() const {
        nlohmann::json kids = nlohmann::json::array();
        for (const CategoryNode& c : children) kids.push_back(c.to_json());
        return {{"name", name},
                {"is_other", is_other},
                {"entities", entities},
                {"children", kids}};
    }

    static CategoryNode from_json(const nlohmann::json& j) {
        CategoryNode n;
        n.name = j.at("name").get<std::string>();
        n.is_other = j.at("is_other").get<bool>();
        n.entities = j.at("entities").get<std::set<std::string>>();
        n.populated = true;
        for (const auto& c : j.at("children")) n.children.push_back(from_json(c));
        return n;
    }
};

struct FineGrainedType {
    std::vector<std::string> path;

    std::string str() const {
        std::string out;
        for (std::size_t i = 0; i < path.size(); ++i) {
            if (i) out += '/';
            out += path[i];
        }
        return out;
    }

    static FineGrainedType parse(const std::string& s) {
        FineGrainedType t;
        std::string cur;
        for (char c : s) {
            if (c == '/') {
                t.path.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        t.path.push_back(cur);
        return t;
    }

    bool operator==(const FineGrainedType& o) const { return path == o.path; }
    bool operator<(const FineGrainedType& o) const { return path < o.path; }
};

// Ordered set of all leaf types; index order is the classifier output order.
struct LabelSpace {
    std::vector<FineGrainedType> types;
    std::map<std::string, int> index;

    int size() const { return static_cast<int>(types.size()); }

    int id(const std::string& type_str) const {
        auto it = index.find(type_str);
        if (it == index.end()) throw ContractError("unknown type: " + type_str);
        return it->second;
    }

    bool has(const std::string& type_str) const { return index.count(type_str) != 0; }

    void add(FineGrainedType t) {
        index[t.str()] = static_cast<int>(types.size());
        types.push_back(std::move(t));
    }
};

// entity surface string (normalized) -> set of leaf type strings
struct TypedEntityDictionary {
    std::map<std::string, std::set<std::string>> entries;

    std::size_t size() const { return entries.size(); }

    const std::set<std::string>* find(const std::string& normalized) const {
        auto it = entries.find(normalized);
        return it == entries.end() ? nullptr : &it->second;
    }
};

using SynonymTable = std::map<std::string, std::vector<std::string>>;

namespace detail {

// Unique lowercase alphabetic 1-grams of a category name.
inline void collect_unigrams(const std::string& name, std::set<std::string>& out) {
    std::string cur;
    for (unsigned char ch : name) {
        if (std::isalpha(ch)) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!cur.empty()) {
            out.insert(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.insert(cur);
}

inline double coverage(const CategoryGraph& graph, const std::string& category,
                       const std::set<std::string>& dict_terms) {
    std::set<std::string> grams;
    collect_unigrams(category, grams);
    for (const std::string& child : graph.children_of(category)) collect_unigrams(child, grams);
    if (grams.empty()) return 1.0;
    std::size_t hit = 0;
    for (const std::string& g : grams) hit += dict_terms.count(g);
    return static_cast<double>(hit) / static_cast<double>(grams.size());
}

}  // namespace detail

/// DFS from `root` over the category graph, keeping nodes at depth
/// <= max_depth (root is depth 0). A sub-category is skipped when fewer than
/// `coverage_threshold` of the unique lowercase 1-grams in its name plus its
/// direct children's names are dictionary terms, or when it was already
/// reached (breaks cycles; first-encountered parent wins diamonds). Every
/// kept node with named children gains one "Other <name>" child.
inline CategoryNode build_tree(const CategoryGraph& graph, const std::string& root,
                               const std::set<std::string>& dictionary, int max_depth,
                               double coverage_threshold, bool add_other_nodes = true) {
    if (max_depth < 1) throw ContractError("build_tree: max_depth must be >= 1");
    if (coverage_threshold < 0.0 || coverage_threshold > 1.0)
        throw ContractError("build_tree: coverage_threshold must be in [0,1]");
    if (!graph.has(root)) throw MissingRootError("root category not in graph: " + root);

    std::set<std::string> dict_terms;
    for (const std::string& t : dictionary) dict_terms.insert(normalize_text(t));

    std::set<std::string> visited;
    visited.insert(root);

    std::function<CategoryNode(const std::string&, int)> expand =
        [&](const std::string& name, int depth) {
            CategoryNode node;
            node.name = name;
            if (depth < max_depth) {
                for (const std::string& child : graph.children_of(name)) {
                    if (visited.count(child)) continue;  // cycle or diamond
                    if (detail::coverage(graph, child, dict_terms) < coverage_threshold) continue;
                    visited.insert(child);
                    node.children.push_back(expand(child, depth + 1));
                }
            }
            if (add_other_nodes && !node.children.empty()) {
                CategoryNode other;
                other.name = "Other " + name;
                other.is_other = true;
                node.children.push_back(std::move(other));
            }
            return node;
        };

    return expand(root, 0);
}

/// Fill every non-Other node's entity bag with the page titles of the node
/// itself and all kept descendants, expanded with synonyms, normalized.
inline void populate_entities(CategoryNode& tree, const CategoryGraph& graph,
                              const SynonymTable& synonyms) {
    auto insert_with_synonyms = [&](CategoryNode& node, const std::string& title) {
        node.entities.insert(normalize_text(title));
        auto it = synonyms.find(title);
        if (it == synonyms.end()) it = synonyms.find(normalize_text(title));
        if (it != synonyms.end()) {
            for (const std::string& syn : it->second) node.entities.insert(normalize_text(syn));
        }
    };

    std::function<void(CategoryNode&)> walk = [&](CategoryNode& node) {
        if (node.is_other) return;
        for (const std::string& title : graph.pages_of(node.name))
            insert_with_synonyms(node, title);
        for (CategoryNode& child : node.children) {
            walk(child);
            if (!child.is_other) {
                node.entities.insert(child.entities.begin(), child.entities.end());
            }
        }
        node.populated = true;
    };
    walk(tree);
}

/// For every "Other" node: entities = parent's bag minus the union of its
/// named siblings' bags.
inline void derive_other_nodes(CategoryNode& tree) {
    std::function<void(CategoryNode&)> walk = [&](CategoryNode& node) {
        for (CategoryNode& child : node.children) {
            if (!child.is_other) {
                walk(child);
                continue;
            }
            if (!node.populated) {
                throw OrderingError("derive_other_nodes: parent '" + node.name +
                                    "' not populated before its Other child");
            }
            std::set<std::string> sibling_union;
            for (const CategoryNode& sib : node.children) {
                if (!sib.is_other)
                    sibling_union.insert(sib.entities.begin(), sib.entities.end());
            }
            child.entities.clear();
            for (const std::string& e : node.entities) {
                if (!sibling_union.count(e)) child.entities.insert(e);
            }
            child.populated = true;
        }
    };
    walk(tree);
}

/// Enumerate leaf paths in depth-first order and invert the leaf bags into
/// a typed entity dictionary.
inline std::pair<LabelSpace, TypedEntityDictionary> flatten(const CategoryNode& tree) {
    LabelSpace space;
    TypedEntityDictionary dict;
    std::vector<std::string> path;
    std::function<void(const CategoryNode&)> walk = [&](const CategoryNode& node) {
        path.push_back(node.name);
        if (node.children.empty()) {
            FineGrainedType t{path};
            const std::string key = t.str();
            space.add(std::move(t));
            for (const std::string& e : node.entities) dict.entries[e].insert(key);
        } else {
            for (const CategoryNode& child : node.children) walk(child);
        }
        path.pop_back();
    };
    walk(tree);
    return {std::move(space), std::move(dict)};
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Dictionary artifact: {"types": [...], "entities": {entity: [types]}}.
inline nlohmann::json dictionary_to_json(const LabelSpace& space,
                                         const TypedEntityDictionary& dict) {
    nlohmann::json types = nlohmann::json::array();
    for (const FineGrainedType& t : space.types) types.push_back(t.str());
    nlohmann::json entities = nlohmann::json::object();
    for (const auto& [entity, labels] : dict.entries) entities[entity] = labels;
    return {{"types", types}, {"entities", entities}};
}

inline std::pair<LabelSpace, TypedEntityDictionary> dictionary_from_json(const nlohmann::json& j) {
    LabelSpace space;
    for (const auto& t : j.at("types"))
        space.add(FineGrainedType::parse(t.get<std::string>()));
    TypedEntityDictionary dict;
    for (const auto& [entity, labels] : j.at("entities").items())
        dict.entries[entity] = labels.get<std::set<std::string>>();
    return {std::move(space), std::move(dict)};
}

/// One term per line, lowercased.
inline std::set<std::string> load_term_list(std::istream& in) {
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = normalize_text(line);
        if (!t.empty()) out.insert(t);
    }
    return out;
}

/// TSV: canonical <tab> synonym <tab> synonym ...
inline SynonymTable load_synonyms(std::istream& in) {
    SynonymTable out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::string cur;
        for (char c : line) {
            if (c == '\t') {
                cols.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        cols.push_back(cur);
        if (cols.size() < 2) continue;
        std::vector<std::string> syns(cols.begin() + 1, cols.end());
        out[cols[0]] = std::move(syns);
    }
    return out;
}

}  // namespace chemtyper
