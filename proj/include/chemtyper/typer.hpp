#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chemtyper/common.hpp"
#include "chemtyper/encoders.hpp"
#include "chemtyper/labeler.hpp"
#include "chemtyper/metrics.hpp"
#include "chemtyper/ontology.hpp"
#include "chemtyper/optim.hpp"
#include "chemtyper/resolver.hpp"
#include "chemtyper/smiles.hpp"
#include "chemtyper/tensor.hpp"

namespace chemtyper {

// The end task: p = sigmoid(FFNN([m_L; f])) over the label space, trained
// with the (negated) multi-label soft margin loss, with the ablation
// variants and learned missing-modality vectors for UNLINKABLE mentions.

struct AblationConfig {
    bool use_graph = true;
    bool use_description = true;
    bool use_cross_modal = true;
    bool use_context_only = true;

    void validate() const {
        if (use_cross_modal && !(use_graph && use_description)) {
            throw ContractError(
                "ablation: cross-modal attention requires both graph and description");
        }
    }

    static AblationConfig from_name(const std::string& name) {
        AblationConfig c;
        if (name == "full") return c;
        if (name == "no-graph") {
            c.use_graph = false;
            c.use_cross_modal = false;
            return c;
        }
        if (name == "no-desc") {
            c.use_description = false;
            c.use_cross_modal = false;
            return c;
        }
        if (name == "no-xmodal") {
            c.use_cross_modal = false;
            return c;
        }
        if (name == "no-context-only") {
            c.use_context_only = false;
            return c;
        }
        throw ContractError("unknown ablation: " + name +
                            " (expected full|no-graph|no-desc|no-xmodal|no-context-only)");
    }

    std::string name() const {
        if (!use_graph && !use_description) return "context-only";
        if (!use_graph) return "no-graph";
        if (!use_description) return "no-desc";
        if (!use_cross_modal) return "no-xmodal";
        if (!use_context_only) return "no-context-only";
        return "full";
    }

    /// Head input width in units of d: m or m_L plus the retained
    /// definition features. Full model: 5d.
    int width_multiplier() const {
        return (use_context_only ? 2 : 1) + (use_cross_modal ? 1 : 0) + (use_graph ? 1 : 0) +
               (use_description ? 1 : 0);
    }
};

struct Prediction {
    std::vector<double> probs;  // sigmoid(logits), length C
    std::set<int> predicted;    // never empty (top-1 fallback)
};

struct TrainingExample {
    AnnotatedSentence sentence;
    MentionSpan mention;
    ResolveResult resolution;
    std::vector<double> gold;  // binary, length C

    std::set<int> gold_set() const {
        std::set<int> out;
        for (std::size_t i = 0; i < gold.size(); ++i)
            if (gold[i] == 1.0) out.insert(static_cast<int>(i));
        return out;
    }
};

struct TyperConfig {
    EncoderConfig encoder;
    AblationConfig ablation;
    double threshold = 0.5;
    std::uint64_t seed = 0;
};

class TyperModel {
public:
    TyperModel(const TyperConfig& cfg, TextVocab text_vocab, AtomVocab atom_vocab,
               BondVocab bond_vocab, LabelSpace labels)
        : cfg_(cfg),
          text_vocab_(std::move(text_vocab)),
          atom_vocab_(std::move(atom_vocab)),
          bond_vocab_(std::move(bond_vocab)),
          labels_(std::move(labels)) {
        cfg_.encoder.validate();
        cfg_.ablation.validate();
        if (labels_.size() == 0) throw ContractError("typer: empty label space");

        RandomSource rng(cfg_.seed);
        const int d = cfg_.encoder.d;
        text_ = TextEncoder(store_, "text", text_vocab_.size(), cfg_.encoder, rng);
        if (cfg_.ablation.use_graph) {
            graph_ = GraphEncoder(store_, "graph", atom_vocab_.size(), bond_vocab_.size(),
                                  cfg_.encoder, rng);
            miss_g_ = store_.create("missing.f_g", {static_cast<std::size_t>(d)}, rng,
                                    cfg_.encoder.init_std);
        }
        if (cfg_.ablation.use_description) {
            miss_cls_ = store_.create("missing.d_cls", {static_cast<std::size_t>(d)}, rng,
                                      cfg_.encoder.init_std);
        }
        if (cfg_.ablation.use_cross_modal) {
            fusion_ = CrossModalFusion(store_, "fusion", cfg_.encoder, rng);
            miss_cm_ = store_.create("missing.f_cm", {static_cast<std::size_t>(d)}, rng,
                                     cfg_.encoder.init_std);
        }

        head_width_ = cfg_.ablation.width_multiplier() * d;
        const int expected = expected_head_width(d, cfg_.ablation);
        if (head_width_ != expected) {
            throw ContractError("typer: head width " + std::to_string(head_width_) +
                                " does not match ablation ledger " + std::to_string(expected));
        }
        head_w1_ = store_.create("head.w1",
                                 {static_cast<std::size_t>(head_width_), static_cast<std::size_t>(d)},
                                 rng, cfg_.encoder.init_std);
        head_b1_ = store_.create_zeros("head.b1", {static_cast<std::size_t>(d)});
        head_w2_ = store_.create("head.w2",
                                 {static_cast<std::size_t>(d), static_cast<std::size_t>(labels_.size())},
                                 rng, cfg_.encoder.init_std);
        head_b2_ = store_.create_zeros("head.b2", {static_cast<std::size_t>(labels_.size())});
    }

    /// The ablation width ledger, pinned independently of the feature
    /// assembly: {full: 5d, no-graph: 3d, no-desc: 3d, no-xmodal: 4d,
    /// no-context-only: 4d, context-only double ablation: 2d}.
    static int expected_head_width(int d, const AblationConfig& ab) {
        ab.validate();
        const std::string n = ab.name();
        if (n == "full") return 5 * d;
        if (n == "no-graph") return 3 * d;
        if (n == "no-desc") return 3 * d;
        if (n == "no-xmodal") return 4 * d;
        if (n == "no-context-only") return 4 * d;
        if (n == "context-only") return ab.use_context_only ? 2 * d : d;
        return ab.width_multiplier() * d;
    }

    /// Pre-sigmoid logits (length C), on the tape.
    Tensor forward(const AnnotatedSentence& sentence, const MentionSpan& mention,
                   const ResolveResult& resolution) const {
        EncodedMention em = text_.encode_context(sentence, mention, text_vocab_);
        std::vector<Tensor> features;
        features.push_back(cfg_.ablation.use_context_only ? em.m_local : em.m);

        const bool wants_definition =
            cfg_.ablation.use_graph || cfg_.ablation.use_description;
        if (wants_definition) {
            if (resolution.linked()) {
                GraphEncoding graph;
                EncodedDescription desc;
                if (cfg_.ablation.use_graph) {
                    IndexedMolecule mol = vocab_index(parse_smiles(resolution.record->smiles),
                                                      atom_vocab_, bond_vocab_);
                    graph = graph_.encode(mol);
                }
                if (cfg_.ablation.use_description)
                    desc = text_.encode_description(resolution.record->description, text_vocab_);
                if (cfg_.ablation.use_cross_modal)
                    features.push_back(fusion_.fuse(graph.nodes, desc.tokens));
                if (cfg_.ablation.use_graph) features.push_back(graph.f_g);
                if (cfg_.ablation.use_description) features.push_back(desc.d_cls);
            } else {
                // UNLINKABLE: learned stand-ins for each dropped feature
                if (cfg_.ablation.use_cross_modal) features.push_back(miss_cm_);
                if (cfg_.ablation.use_graph) features.push_back(miss_g_);
                if (cfg_.ablation.use_description) features.push_back(miss_cls_);
            }
        }

        Tensor u = concat(features);
        if (u.numel() != static_cast<std::size_t>(head_width_))
            throw ContractError("typer: feature width mismatch at forward");
        Tensor u_row = as_row(u);
        Tensor hidden = tanh(add_rowvec(matmul(u_row, head_w1_), head_b1_));
        Tensor logits_row = add_rowvec(matmul(hidden, head_w2_), head_b2_);
        return row(logits_row, 0);
    }

    /// Eq. 8 with the standard negation, log-sum-exp stabilized.
    static Tensor loss(const Tensor& logits, const std::vector<double>& gold) {
        return multilabel_soft_margin_loss(logits, gold);
    }

    Prediction predict(const AnnotatedSentence& sentence, const MentionSpan& mention,
                       const ResolveResult& resolution) const {
        Tensor logits = forward(sentence, mention, resolution);
        std::vector<double> probs;
        probs.reserve(logits.numel());
        for (double x : logits.data()) probs.push_back(detail::stable_sigmoid(x));
        return decide(probs, cfg_.threshold);
    }

    /// Threshold then top-1 fallback; the returned set is never empty.
    static Prediction decide(const std::vector<double>& probs, double threshold) {
        if (probs.empty()) throw ContractError("decide: empty probability vector");
        Prediction p;
        p.probs = probs;
        for (std::size_t i = 0; i < p.probs.size(); ++i) {
            if (p.probs[i] > threshold) p.predicted.insert(static_cast<int>(i));
        }
        if (p.predicted.empty()) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < p.probs.size(); ++i)
                if (p.probs[i] > p.probs[best]) best = i;
            p.predicted.insert(static_cast<int>(best));
        }
        return p;
    }

    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }
    const TyperConfig& config() const { return cfg_; }
    const LabelSpace& labels() const { return labels_; }
    const TextVocab& text_vocab() const { return text_vocab_; }
    const AtomVocab& atom_vocab() const { return atom_vocab_; }
    const BondVocab& bond_vocab() const { return bond_vocab_; }
    int head_input_width() const { return head_width_; }
    void set_threshold(double t) { cfg_.threshold = t; }

    nlohmann::json checkpoint_header() const {
        nlohmann::json labels = nlohmann::json::array();
        for (const FineGrainedType& t : labels_.types) labels.push_back(t.str());
        return {{"d", cfg_.encoder.d},
                {"text_layers", cfg_.encoder.text_layers},
                {"heads", cfg_.encoder.heads},
                {"gin_layers", cfg_.encoder.gin_layers},
                {"epsilon", cfg_.encoder.epsilon},
                {"max_len", cfg_.encoder.max_len},
                {"init_std", cfg_.encoder.init_std},
                {"threshold", cfg_.threshold},
                {"ablation", cfg_.ablation.name()},
                {"seed", cfg_.seed},
                {"text_vocab_size", text_vocab_.size()},
                {"labels", labels},
                {"atom_vocab", atom_vocab_.to_json()},
                {"bond_vocab", bond_vocab_.to_json()}};
    }

    void save(const std::string& path) const { store_.save(path, checkpoint_header()); }

    /// Rebuild a model from a checkpoint plus the plain-text vocabulary file
    /// written next to it.
    static TyperModel from_checkpoint(const nlohmann::json& ckpt, TextVocab text_vocab) {
        const nlohmann::json& h = ckpt.at("config");
        TyperConfig cfg;
        cfg.encoder.d = h.at("d").get<int>();
        cfg.encoder.text_layers = h.at("text_layers").get<int>();
        cfg.encoder.heads = h.at("heads").get<int>();
        cfg.encoder.gin_layers = h.at("gin_layers").get<int>();
        cfg.encoder.epsilon = h.at("epsilon").get<double>();
        cfg.encoder.max_len = h.at("max_len").get<int>();
        cfg.encoder.init_std = h.at("init_std").get<double>();
        cfg.threshold = h.at("threshold").get<double>();
        cfg.ablation = AblationConfig::from_name(h.at("ablation").get<std::string>());
        cfg.seed = h.at("seed").get<std::uint64_t>();
        if (text_vocab.size() != h.at("text_vocab_size").get<int>()) {
            throw FormatError("checkpoint: vocabulary file size does not match header");
        }
        LabelSpace space;
        for (const auto& t : h.at("labels"))
            space.add(FineGrainedType::parse(t.get<std::string>()));
        TyperModel model(cfg, std::move(text_vocab), AtomVocab::from_json(h.at("atom_vocab")),
                         BondVocab::from_json(h.at("bond_vocab")), std::move(space));
        model.store_.load_values(ckpt);
        return model;
    }

private:
    // 1 x n view of a vector for the head matmuls.
    static Tensor as_row(const Tensor& v) {
        Tensor out = Tensor::make_result(v.data(), {1, v.numel()}, {v}, nullptr);
        if (out.requires_grad()) {
            Tensor::Node* rn = out.raw();
            Tensor::Node* vn = v.raw();
            out.raw()->backward_fn = [rn, vn] {
                for (std::size_t i = 0; i < rn->grad.size(); ++i) vn->grad[i] += rn->grad[i];
            };
        }
        return out;
    }

    TyperConfig cfg_;
    TextVocab text_vocab_;
    AtomVocab atom_vocab_;
    BondVocab bond_vocab_;
    LabelSpace labels_;
    ParamStore store_;
    TextEncoder text_;
    GraphEncoder graph_;
    CrossModalFusion fusion_;
    Tensor miss_cm_, miss_g_, miss_cls_;
    Tensor head_w1_, head_b1_, head_w2_, head_b2_;
    int head_width_ = 0;
};

/// Mentions of labeled sentences to training examples; resolves each mention
/// and maps label strings through the label space.
inline std::vector<TrainingExample> build_examples(const std::vector<AnnotatedSentence>& sentences,
                                                   const LabelSpace& space,
                                                   const Resolver& resolver) {
    std::vector<TrainingExample> out;
    for (const AnnotatedSentence& s : sentences) {
        for (const MentionSpan& m : s.mentions) {
            TrainingExample ex;
            ex.sentence = s;
            ex.mention = m;
            ex.resolution = resolver.resolve(m.surface);
            ex.gold.assign(static_cast<std::size_t>(space.size()), 0.0);
            for (const std::string& label : m.labels)
                ex.gold[static_cast<std::size_t>(space.id(label))] = 1.0;
            out.push_back(std::move(ex));
        }
    }
    return out;
}

struct TrainOptions {
    double lr = 1e-3;
    int batch = 16;
    int epochs = 50;
    OptimizerMode mode = OptimizerMode::adam;
    std::uint64_t seed = 0;
    std::string out_dir;  // when set: checkpoint.json, text_vocab.txt, log.csv
    bool quiet = false;
};

struct TrainLogRow {
    int epoch = 0;
    double train_loss = 0.0;
    double dev_micro_f1 = 0.0;
    double dev_accuracy = 0.0;
};

namespace detail {

inline std::string csv_double(double x) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10) << x;
    return os.str();
}

}  // namespace detail

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
    std::string out = "epoch,train_loss,dev_micro_f1,dev_accuracy\n";
    for (const TrainLogRow& r : rows) {
        out += std::to_string(r.epoch) + "," + detail::csv_double(r.train_loss) + "," +
               detail::csv_double(r.dev_micro_f1) + "," + detail::csv_double(r.dev_accuracy) + "\n";
    }
    return out;
}

inline std::vector<std::set<int>> predict_all(const TyperModel& model,
                                              const std::vector<TrainingExample>& examples) {
    std::vector<std::set<int>> out;
    out.reserve(examples.size());
    for (const TrainingExample& ex : examples)
        out.push_back(model.predict(ex.sentence, ex.mention, ex.resolution).predicted);
    return out;
}

/// Mini-batch training with deterministic shuffling; per-epoch dev Micro-F1
/// and checkpoints when out_dir is set.
inline std::vector<TrainLogRow> train(TyperModel& model,
                                      const std::vector<TrainingExample>& train_set,
                                      const std::vector<TrainingExample>& dev_set,
                                      const TrainOptions& opt) {
    if (train_set.empty()) throw ContractError("train: empty dataset");
    if (opt.batch <= 0 || opt.epochs < 0) throw ContractError("train: bad batch/epochs");

    namespace fs = std::filesystem;
    if (!opt.out_dir.empty()) {
        fs::create_directories(opt.out_dir);
        std::ofstream vf(opt.out_dir + "/text_vocab.txt");
        model.text_vocab().save(vf);
    }

    RandomSource shuffle_rng(opt.seed ^ 0x5ca1ab1eULL);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<TrainLogRow> log;
    std::vector<std::set<int>> dev_gold;
    dev_gold.reserve(dev_set.size());
    for (const TrainingExample& ex : dev_set) dev_gold.push_back(ex.gold_set());

    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opt.batch));
            Tensor batch_loss;
            for (std::size_t k = start; k < stop; ++k) {
                const TrainingExample& ex = train_set[order[k]];
                Tensor l = TyperModel::loss(model.forward(ex.sentence, ex.mention, ex.resolution),
                                            ex.gold);
                batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
            }
            epoch_loss += batch_loss.item();
            Tensor mean_loss = scale(batch_loss, 1.0 / static_cast<double>(stop - start));
            backward(mean_loss);
            model.store().step(opt.lr, opt.mode);
        }
        TrainLogRow rowlog;
        rowlog.epoch = epoch;
        rowlog.train_loss = epoch_loss / static_cast<double>(train_set.size());
        if (!dev_set.empty()) {
            const std::vector<std::set<int>> dev_pred = predict_all(model, dev_set);
            rowlog.dev_micro_f1 = micro_f1(dev_pred, dev_gold);
            rowlog.dev_accuracy = sample_accuracy(dev_pred, dev_gold);
        }
        log.push_back(rowlog);
        if (!opt.quiet) {
            std::cerr << "[train] epoch " << rowlog.epoch << " loss " << rowlog.train_loss
                      << " dev_f1 " << rowlog.dev_micro_f1 << "\n";
        }
        if (!opt.out_dir.empty()) {
            model.save(opt.out_dir + "/checkpoint.json");
            std::ofstream lf(opt.out_dir + "/log.csv");
            lf << train_log_csv(log);
        }
    }
    return log;
}

}  // namespace chemtyper
