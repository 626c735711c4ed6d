#include "cstvae/mlp.hpp"

#include "cstvae/errors.hpp"
#include "cstvae/training.hpp"

namespace cstvae {

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
    if (contains(name)) throw ConfigError("ParamRegistry: duplicate parameter '" + name + "'");
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
}

Tensor ParamRegistry::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("ParamRegistry: unknown parameter '" + name + "'");
    return items_[it->second].second;
}

void ParamRegistry::zero_grads() {
    for (auto& [name, t] : items_) t.zero_grad();
}

namespace {

Tensor apply_act(const Tensor& x, Act a) {
    switch (a) {
        case Act::None:
            return x;
        case Act::Relu:
            return relu(x);
        case Act::Tanh:
            return tanh(x);
        case Act::Sigmoid:
            return sigmoid(x);
    }
    throw ContractError("Mlp: unknown activation");
}

}  // namespace

Tensor Mlp::forward(const Tensor& x) const {
    if (empty()) throw ContractError("Mlp::forward: empty network");
    if (x.rank() != 2 || x.shape()[1] != cfg.in) {
        throw DimensionError("Mlp::forward: input " + shape_str(x.shape()) + " does not match fan-in " +
                             std::to_string(cfg.in));
    }
    const i64 batch = x.shape()[0];
    Tensor h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        h = add(matmul(h, weights[l]), broadcast_rows(biases[l], batch));
        h = apply_act(h, l + 1 == weights.size() ? cfg.out_act : cfg.hidden_act);
    }
    return h;
}

Mlp make_mlp(const MlpConfig& cfg, Rng& rng, ParamRegistry& reg, const std::string& prefix) {
    if (cfg.in <= 0 || cfg.out <= 0) throw ConfigError("make_mlp: non-positive layer width");
    for (i64 hdim : cfg.hidden) {
        if (hdim <= 0) throw ConfigError("make_mlp: non-positive hidden width");
    }
    Mlp mlp;
    mlp.cfg = cfg;
    std::vector<i64> dims;
    dims.push_back(cfg.in);
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(cfg.out);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const i64 fan_in = dims[l], fan_out = dims[l + 1];
        Tensor w = Tensor::param({fan_in, fan_out}, glorot_init(fan_in, fan_out, rng));
        Tensor b = Tensor::param({fan_out}, std::vector<double>(static_cast<std::size_t>(fan_out), 0.0));
        mlp.weights.push_back(reg.add(prefix + ".w" + std::to_string(l), w));
        mlp.biases.push_back(reg.add(prefix + ".b" + std::to_string(l), b));
    }
    return mlp;
}

}  // namespace cstvae
