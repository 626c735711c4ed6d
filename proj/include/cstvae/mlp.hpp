#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cstvae/rng.hpp"
#include "cstvae/tensor.hpp"

namespace cstvae {

// Ordered parameter table. Registration order is the optimizer's iteration
// order and the checkpoint layout, so it must be deterministic.
class ParamRegistry {
  public:
    Tensor add(const std::string& name, Tensor t);
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return items_; }
    Tensor find(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t size() const { return items_.size(); }
    void zero_grads();

  private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class Act { None, Relu, Tanh, Sigmoid };

struct MlpConfig {
    i64 in = 0;
    std::vector<i64> hidden;
    i64 out = 0;
    Act hidden_act = Act::Relu;
    Act out_act = Act::None;
};

// Fully connected stack; weights Glorot-uniform, biases zero.
struct Mlp {
    MlpConfig cfg;
    std::vector<Tensor> weights;  // [fan_in x fan_out] each
    std::vector<Tensor> biases;   // [fan_out] each

    bool empty() const { return weights.empty(); }
    Tensor forward(const Tensor& x) const;  // x: [B x in]
};

Mlp make_mlp(const MlpConfig& cfg, Rng& rng, ParamRegistry& reg, const std::string& prefix);

}  // namespace cstvae
