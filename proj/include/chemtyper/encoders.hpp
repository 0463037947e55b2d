#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "chemtyper/common.hpp"
#include "chemtyper/labeler.hpp"
#include "chemtyper/optim.hpp"
#include "chemtyper/smiles.hpp"
#include "chemtyper/tensor.hpp"

namespace chemtyper {

// Representation learning: a small trainable transformer text encoder with
// mention markers and a masked-context variant, a GIN-with-edge-features
// graph encoder, and the single-layer cross-modal attention fusion.

// ---------------------------------------------------------------------------
// Text vocabulary. Plain-text file format: one token per line, index = line
// number. Lookups lowercase their argument; chemical names are case noisy.
// ---------------------------------------------------------------------------
class TextVocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;
    static constexpr int kMask = 4;
    static constexpr int kMarker = 5;  // the "*" mention marker

    TextVocab() {
        for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "*"}) push(s);
    }

    static TextVocab build(const std::vector<AnnotatedSentence>& corpus) {
        TextVocab v;
        std::set<std::string> seen;
        for (const AnnotatedSentence& s : corpus) {
            for (const Token& t : s.tokens) {
                const std::string key = normalize_text(t.text);
                if (!key.empty() && seen.insert(key).second) v.push(key);
            }
        }
        return v;
    }

    int id(std::string_view token) const {
        auto it = index_.find(normalize_text(token));
        return it == index_.end() ? kUnk : it->second;
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    void save(std::ostream& out) const {
        for (const std::string& t : tokens_) out << t << '\n';
    }

    static TextVocab load(std::istream& in) {
        TextVocab v;
        v.tokens_.clear();
        v.index_.clear();
        std::string line;
        while (std::getline(in, line)) v.push(line);
        if (v.size() <= kMarker) throw FormatError("text vocabulary file too short");
        return v;
    }

private:
    void push(std::string token) {
        index_[token] = static_cast<int>(tokens_.size());
        tokens_.push_back(std::move(token));
    }

    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

struct EncoderConfig {
    int d = 64;           // hidden width
    int text_layers = 2;  // transformer layers in the text encoder
    int heads = 4;
    int gin_layers = 3;   // L
    double epsilon = 0.0; // GIN self-weight epsilon
    int max_len = 128;    // token budget including [CLS]/[SEP]
    double init_std = 0.02;

    void validate() const {
        if (d <= 0 || text_layers <= 0 || heads <= 0 || gin_layers <= 0 || max_len < 8)
            throw ContractError("encoder config: all sizes must be positive, max_len >= 8");
        if (d % heads != 0) throw ContractError("encoder config: d must be divisible by heads");
    }
};

/// Token ids of one encoder input; first is always [CLS], last [SEP].
struct TokenizedText {
    std::vector<int> ids;
    std::size_t length() const { return ids.size(); }
};

struct EncodedMention {
    Tensor m;       // opening-marker embedding, d
    Tensor m_mask;  // [MASK] embedding from the masked variant, d
    Tensor m_local; // concat(m, m_mask), 2d
};

struct EncodedDescription {
    Tensor tokens;  // b x d
    Tensor d_cls;   // d
};

struct GraphEncoding {
    Tensor nodes;  // a x d, final GIN layer
    Tensor f_g;    // mean-pooled node vector, d
};

struct DefinitionFeatures {
    Tensor f_cm;   // cross-modal mean-pooled vector, d
    Tensor f_g;    // graph mean-pool, d
    Tensor d_cls;  // description [CLS], d
    Tensor f;      // concat(f_cm, f_g, d_cls), 3d
};

namespace detail {

/// Sinusoidal position table, max_len x d (constant, not trained).
inline Tensor sinusoidal_positions(int max_len, int d) {
    std::vector<double> data(static_cast<std::size_t>(max_len) * static_cast<std::size_t>(d));
    for (int pos = 0; pos < max_len; ++pos) {
        for (int i = 0; i < d; ++i) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / static_cast<double>(d));
            data[static_cast<std::size_t>(pos) * static_cast<std::size_t>(d) +
                 static_cast<std::size_t>(i)] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor::from_data(std::move(data),
                             {static_cast<std::size_t>(max_len), static_cast<std::size_t>(d)});
}

}  // namespace detail

// One post-LN transformer encoder layer: multi-head self-attention and a
// Tanh feed-forward of width 4d, each wrapped in residual + layer norm.
class TransformerLayer {
public:
    TransformerLayer() = default;

    TransformerLayer(ParamStore& store, const std::string& prefix, int d, int heads,
                     RandomSource& rng, double init_std)
        : d_(d), heads_(heads) {
        wq_ = store.create(prefix + ".attn.wq", dims(d, d), rng, init_std);
        wk_ = store.create(prefix + ".attn.wk", dims(d, d), rng, init_std);
        wv_ = store.create(prefix + ".attn.wv", dims(d, d), rng, init_std);
        wo_ = store.create(prefix + ".attn.wo", dims(d, d), rng, init_std);
        bq_ = store.create_zeros(prefix + ".attn.bq", dims(d));
        bk_ = store.create_zeros(prefix + ".attn.bk", dims(d));
        bv_ = store.create_zeros(prefix + ".attn.bv", dims(d));
        bo_ = store.create_zeros(prefix + ".attn.bo", dims(d));
        ln1_g_ = store.create_full(prefix + ".ln1.gain", dims(d), 1.0);
        ln1_b_ = store.create_zeros(prefix + ".ln1.bias", dims(d));
        ff_w1_ = store.create(prefix + ".ff.w1", dims(d, 4 * d), rng, init_std);
        ff_b1_ = store.create_zeros(prefix + ".ff.b1", dims(4 * d));
        ff_w2_ = store.create(prefix + ".ff.w2", dims(4 * d, d), rng, init_std);
        ff_b2_ = store.create_zeros(prefix + ".ff.b2", dims(d));
        ln2_g_ = store.create_full(prefix + ".ln2.gain", dims(d), 1.0);
        ln2_b_ = store.create_zeros(prefix + ".ln2.bias", dims(d));
    }

    Tensor forward(const Tensor& x) const {
        Tensor h = layer_norm(add(x, attention(x)), ln1_g_, ln1_b_);
        Tensor ff = add_rowvec(
            matmul(tanh(add_rowvec(matmul(h, ff_w1_), ff_b1_)), ff_w2_), ff_b2_);
        return layer_norm(add(h, ff), ln2_g_, ln2_b_);
    }

private:
    Tensor attention(const Tensor& x) const {
        const int dk = d_ / heads_;
        Tensor q = add_rowvec(matmul(x, wq_), bq_);
        Tensor k = add_rowvec(matmul(x, wk_), bk_);
        Tensor v = add_rowvec(matmul(x, wv_), bv_);
        std::vector<Tensor> head_outputs;
        head_outputs.reserve(static_cast<std::size_t>(heads_));
        for (int h = 0; h < heads_; ++h) {
            const std::size_t c0 = static_cast<std::size_t>(h * dk);
            const std::size_t c1 = static_cast<std::size_t>((h + 1) * dk);
            Tensor qh = slice_cols(q, c0, c1);
            Tensor kh = slice_cols(k, c0, c1);
            Tensor vh = slice_cols(v, c0, c1);
            Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dk)));
            head_outputs.push_back(matmul(softmax_rows(scores), vh));
        }
        return add_rowvec(matmul(concat(head_outputs), wo_), bo_);
    }

    static std::vector<std::size_t> dims(int a) { return {static_cast<std::size_t>(a)}; }
    static std::vector<std::size_t> dims(int a, int b) {
        return {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
    }

    int d_ = 0;
    int heads_ = 0;
    Tensor wq_, wk_, wv_, wo_, bq_, bk_, bv_, bo_;
    Tensor ln1_g_, ln1_b_, ff_w1_, ff_b1_, ff_w2_, ff_b2_, ln2_g_, ln2_b_;
};

// ---------------------------------------------------------------------------
// Text encoder
// ---------------------------------------------------------------------------
class TextEncoder {
public:
    TextEncoder() = default;

    TextEncoder(ParamStore& store, const std::string& prefix, int vocab_size,
                const EncoderConfig& cfg, RandomSource& rng)
        : cfg_(cfg) {
        cfg_.validate();
        tok_emb_ = store.create(prefix + ".tok_emb",
                                {static_cast<std::size_t>(vocab_size),
                                 static_cast<std::size_t>(cfg.d)},
                                rng, cfg.init_std);
        positions_ = detail::sinusoidal_positions(cfg.max_len, cfg.d);
        layers_.reserve(static_cast<std::size_t>(cfg.text_layers));
        for (int l = 0; l < cfg.text_layers; ++l) {
            layers_.emplace_back(store, prefix + ".layer" + std::to_string(l), cfg.d, cfg.heads,
                                 rng, cfg.init_std);
        }
    }

    /// Contextual embeddings for a [CLS] ... [SEP] id sequence: z x d.
    Tensor encode(const TokenizedText& text) const {
        if (text.ids.empty() || text.ids.front() != TextVocab::kCls ||
            text.ids.back() != TextVocab::kSep) {
            throw ContractError("text encoder: input must be [CLS] ... [SEP]");
        }
        if (text.ids.size() > static_cast<std::size_t>(cfg_.max_len))
            throw ContractError("text encoder: input exceeds max length");
        std::vector<int> pos(text.ids.size());
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
        Tensor x = add(embedding(tok_emb_, text.ids), embedding(positions_, pos));
        for (const TransformerLayer& layer : layers_) x = layer.forward(x);
        return x;
    }

    /// Marked + masked encodings of a mention in its sentence.
    /// Marked:  [CLS] pre * mention * post [SEP], m = opening-marker row.
    /// Masked:  [CLS] pre [MASK] post [SEP],      m_mask = [MASK] row.
    /// Over-long sentences are truncated from the right, never through the
    /// mention; a mention falling outside the window is a contract error.
    EncodedMention encode_context(const AnnotatedSentence& sentence, const MentionSpan& mention,
                                  const TextVocab& vocab) const {
        if (mention.token_start >= mention.token_end ||
            mention.token_end > sentence.tokens.size()) {
            throw ContractError("encode_context: invalid mention span");
        }
        std::vector<int> pre, inside, post;
        for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
            const int id = vocab.id(sentence.tokens[i].text);
            if (i < mention.token_start)
                pre.push_back(id);
            else if (i < mention.token_end)
                inside.push_back(id);
            else
                post.push_back(id);
        }

        const std::size_t budget = static_cast<std::size_t>(cfg_.max_len);
        // marked variant: [CLS] pre * inside * post [SEP]
        const std::size_t marked_fixed = 2 + pre.size() + 2 + inside.size();
        if (marked_fixed > budget) {
            throw ContractError("encode_context: mention outside retained window");
        }
        TokenizedText marked;
        marked.ids.push_back(TextVocab::kCls);
        marked.ids.insert(marked.ids.end(), pre.begin(), pre.end());
        const std::size_t marker_pos = marked.ids.size();
        marked.ids.push_back(TextVocab::kMarker);
        marked.ids.insert(marked.ids.end(), inside.begin(), inside.end());
        marked.ids.push_back(TextVocab::kMarker);
        for (std::size_t i = 0; i < post.size() && marked.ids.size() + 1 < budget; ++i)
            marked.ids.push_back(post[i]);
        marked.ids.push_back(TextVocab::kSep);

        // masked variant: [CLS] pre [MASK] post [SEP]
        TokenizedText masked;
        masked.ids.push_back(TextVocab::kCls);
        masked.ids.insert(masked.ids.end(), pre.begin(), pre.end());
        const std::size_t mask_pos = masked.ids.size();
        masked.ids.push_back(TextVocab::kMask);
        for (std::size_t i = 0; i < post.size() && masked.ids.size() + 1 < budget; ++i)
            masked.ids.push_back(post[i]);
        masked.ids.push_back(TextVocab::kSep);

        Tensor enc_marked = encode(marked);
        Tensor enc_masked = encode(masked);
        EncodedMention out;
        out.m = row(enc_marked, marker_pos);
        out.m_mask = row(enc_masked, mask_pos);
        out.m_local = concat(out.m, out.m_mask);
        return out;
    }

    /// Description embedding: [CLS] tokens [SEP], truncated from the right.
    EncodedDescription encode_description(const std::string& description,
                                          const TextVocab& vocab) const {
        TokenizedText text;
        text.ids.push_back(TextVocab::kCls);
        const std::vector<Token> toks = tokenize(description);
        for (std::size_t i = 0;
             i < toks.size() && text.ids.size() + 1 < static_cast<std::size_t>(cfg_.max_len); ++i)
            text.ids.push_back(vocab.id(toks[i].text));
        text.ids.push_back(TextVocab::kSep);
        EncodedDescription out;
        out.tokens = encode(text);
        out.d_cls = row(out.tokens, 0);
        return out;
    }

    const EncoderConfig& config() const { return cfg_; }

private:
    EncoderConfig cfg_;
    Tensor tok_emb_;
    Tensor positions_;
    std::vector<TransformerLayer> layers_;
};

// ---------------------------------------------------------------------------
// GIN graph encoder with edge features:
//   n_i^{l+1} = FFNN^{l+1}( (1+eps) n_i^l + sum_{j in N(i)} (n_j^l + e_{j,i}) )
// FFNN is d -> 2d with Tanh then 2d -> d, per layer. Edge embeddings are
// bond-type rows held constant across layers.
// ---------------------------------------------------------------------------
class GraphEncoder {
public:
    GraphEncoder() = default;

    GraphEncoder(ParamStore& store, const std::string& prefix, int atom_vocab_size,
                 int bond_vocab_size, const EncoderConfig& cfg, RandomSource& rng)
        : cfg_(cfg), bond_vocab_size_(bond_vocab_size) {
        const auto d = static_cast<std::size_t>(cfg.d);
        atom_emb_ = store.create(prefix + ".atom_emb",
                                 {static_cast<std::size_t>(atom_vocab_size), d}, rng, cfg.init_std);
        bond_emb_ = store.create(prefix + ".bond_emb",
                                 {static_cast<std::size_t>(bond_vocab_size), d}, rng, cfg.init_std);
        for (int l = 0; l < cfg.gin_layers; ++l) {
            const std::string p = prefix + ".layer" + std::to_string(l);
            w1_.push_back(store.create(p + ".w1", {d, 2 * d}, rng, cfg.init_std));
            b1_.push_back(store.create_zeros(p + ".b1", {2 * d}));
            w2_.push_back(store.create(p + ".w2", {2 * d, d}, rng, cfg.init_std));
            b2_.push_back(store.create_zeros(p + ".b2", {d}));
        }
    }

    GraphEncoding encode(const IndexedMolecule& mol) const {
        const std::size_t a = mol.graph.atom_count();
        if (a == 0) throw ContractError("graph encoder: empty graph");

        // Constant structure matrices: adjacency (a x a) and per-node bond
        // type counts (a x |bond vocab|). Neighbor sums become matmuls so
        // gradients flow into the atom and bond embedding tables.
        std::vector<double> adj(a * a, 0.0);
        std::vector<double> bond_counts(a * static_cast<std::size_t>(bond_vocab_size_), 0.0);
        for (std::size_t i = 0; i < a; ++i) {
            for (const Neighbor& nb : mol.graph.neighbors(static_cast<int>(i))) {
                adj[i * a + static_cast<std::size_t>(nb.atom)] = 1.0;
                const int bid = mol.bond_ids[static_cast<std::size_t>(nb.bond)];
                bond_counts[i * static_cast<std::size_t>(bond_vocab_size_) +
                            static_cast<std::size_t>(bid)] += 1.0;
            }
        }
        Tensor adjacency = Tensor::from_data(std::move(adj), {a, a});
        Tensor incidence =
            Tensor::from_data(std::move(bond_counts), {a, static_cast<std::size_t>(bond_vocab_size_)});

        Tensor h = embedding(atom_emb_, mol.atom_ids);
        Tensor edge_sum = matmul(incidence, bond_emb_);
        for (int l = 0; l < cfg_.gin_layers; ++l) {
            Tensor agg = add(add(scale(h, 1.0 + cfg_.epsilon), matmul(adjacency, h)), edge_sum);
            const auto lu = static_cast<std::size_t>(l);
            Tensor hidden = tanh(add_rowvec(matmul(agg, w1_[lu]), b1_[lu]));
            h = add_rowvec(matmul(hidden, w2_[lu]), b2_[lu]);
        }
        GraphEncoding out;
        out.nodes = h;
        out.f_g = mean_axis(h, 0);
        return out;
    }

private:
    EncoderConfig cfg_;
    int bond_vocab_size_ = 0;
    Tensor atom_emb_, bond_emb_;
    std::vector<Tensor> w1_, b1_, w2_, b2_;
};

// ---------------------------------------------------------------------------
// Cross-modal fusion: one transformer layer over the vertical stack of node
// and description-token embeddings, no positional terms (nodes carry no
// order), mean-pooled into f_cm.
// ---------------------------------------------------------------------------
class CrossModalFusion {
public:
    CrossModalFusion() = default;

    CrossModalFusion(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                     RandomSource& rng)
        : layer_(store, prefix, cfg.d, cfg.heads, rng, cfg.init_std) {}

    Tensor fuse(const Tensor& nodes, const Tensor& description_tokens) const {
        if (nodes.rank() != 2 || description_tokens.rank() != 2 ||
            nodes.cols() != description_tokens.cols()) {
            throw ContractError("cross-modal fusion: modality width mismatch");
        }
        Tensor stacked = concat_rows(nodes, description_tokens);
        return mean_axis(layer_.forward(stacked), 0);
    }

    DefinitionFeatures features(const GraphEncoding& graph, const EncodedDescription& desc) const {
        DefinitionFeatures out;
        out.f_cm = fuse(graph.nodes, desc.tokens);
        out.f_g = graph.f_g;
        out.d_cls = desc.d_cls;
        out.f = concat(concat(out.f_cm, out.f_g), out.d_cls);
        return out;
    }

private:
    TransformerLayer layer_;
};

}  // namespace chemtyper
