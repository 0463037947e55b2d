#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chemtyper/common.hpp"
#include "chemtyper/tensor.hpp"

namespace chemtyper {

enum class OptimizerMode { adam, sgd };

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named trainable tensors plus per-parameter Adam state. Iteration follows
// registration order so optimizer sweeps and checkpoints are deterministic.
class ParamStore {
public:
    Tensor create(const std::string& name, std::vector<std::size_t> shape, RandomSource& rng,
                  double stddev) {
        Tensor t = Tensor::param(std::move(shape), rng, stddev);
        register_tensor(name, t);
        return t;
    }

    Tensor create_zeros(const std::string& name, std::vector<std::size_t> shape) {
        Tensor t = Tensor::param_zeros(std::move(shape));
        register_tensor(name, t);
        return t;
    }

    Tensor create_full(const std::string& name, std::vector<std::size_t> shape, double value) {
        Tensor t = Tensor::param_full(std::move(shape), value);
        register_tensor(name, t);
        return t;
    }

    void register_tensor(const std::string& name, const Tensor& t) {
        if (index_.count(name)) throw ContractError("ParamStore: duplicate parameter " + name);
        if (!t.requires_grad())
            throw ContractError("ParamStore: parameter " + name + " must require gradients");
        index_[name] = slots_.size();
        slots_.push_back(Slot{name, t, std::vector<double>(t.numel(), 0.0),
                              std::vector<double>(t.numel(), 0.0)});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParamStore: unknown parameter " + name);
        return slots_[it->second].tensor;
    }

    std::size_t size() const { return slots_.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Slot& s : slots_) n += s.tensor.numel();
        return n;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(slots_.size());
        for (const Slot& s : slots_) out.push_back(s.name);
        return out;
    }

    void zero_grad() {
        for (Slot& s : slots_) s.tensor.zero_grad();
    }

    /// One optimizer step over every registered parameter; gradients are
    /// zeroed afterwards. SGD mode is the hand-checkable p -= lr * g rule.
    void step(double lr, OptimizerMode mode = OptimizerMode::adam,
              const AdamConfig& adam = AdamConfig{}) {
        if (mode == OptimizerMode::adam) ++step_count_;
        for (Slot& s : slots_) {
            if (!s.tensor.has_grad())
                throw ContractError("ParamStore: parameter " + s.name + " has no gradient");
            auto& p = s.tensor.data();
            auto& g = s.tensor.grad();
            if (mode == OptimizerMode::sgd) {
                for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
            } else {
                const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(step_count_));
                const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(step_count_));
                for (std::size_t i = 0; i < p.size(); ++i) {
                    s.m[i] = adam.beta1 * s.m[i] + (1.0 - adam.beta1) * g[i];
                    s.v[i] = adam.beta2 * s.v[i] + (1.0 - adam.beta2) * g[i] * g[i];
                    const double mhat = s.m[i] / bc1;
                    const double vhat = s.v[i] / bc2;
                    p[i] -= lr * mhat / (std::sqrt(vhat) + adam.eps);
                }
            }
        }
        zero_grad();
    }

    /// Checkpoint: {"config": <header>, "params": {name: {shape, data}}}.
    /// nlohmann/json emits shortest round-trip doubles, so save/load is
    /// value-exact.
    nlohmann::json to_json(const nlohmann::json& config_header) const {
        nlohmann::json params = nlohmann::json::object();
        for (const Slot& s : slots_) {
            params[s.name] = {{"shape", s.tensor.shape()}, {"data", s.tensor.data()}};
        }
        return {{"config", config_header}, {"params", params}};
    }

    void save(const std::string& path, const nlohmann::json& config_header) const {
        std::ofstream out(path);
        if (!out) throw IOError("cannot write checkpoint " + path);
        out << to_json(config_header).dump();
        out << '\n';
    }

    /// Loads values into already-registered parameters (shapes must match)
    /// and returns the stored config header.
    nlohmann::json load_values(const nlohmann::json& checkpoint) {
        if (!checkpoint.contains("params"))
            throw FormatError("checkpoint: missing \"params\" object");
        const auto& params = checkpoint.at("params");
        for (Slot& s : slots_) {
            if (!params.contains(s.name))
                throw FormatError("checkpoint: missing parameter " + s.name);
            const auto& entry = params.at(s.name);
            const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            if (shape != s.tensor.shape()) {
                throw FormatError("checkpoint: shape mismatch for " + s.name + ": stored " +
                                  Tensor::shape_str(shape) + " vs model " +
                                  Tensor::shape_str(s.tensor.shape()));
            }
            s.tensor.data() = entry.at("data").get<std::vector<double>>();
        }
        return checkpoint.value("config", nlohmann::json::object());
    }

    static nlohmann::json read_checkpoint(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IOError("cannot read checkpoint " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("checkpoint " + path + ": " + e.what());
        }
        return j;
    }

    nlohmann::json load(const std::string& path) { return load_values(read_checkpoint(path)); }

private:
    struct Slot {
        std::string name;
        Tensor tensor;
        std::vector<double> m;  // Adam first moment
        std::vector<double> v;  // Adam second moment
    };

    std::vector<Slot> slots_;
    std::map<std::string, std::size_t> index_;
    long step_count_ = 0;
};

}  // namespace chemtyper
