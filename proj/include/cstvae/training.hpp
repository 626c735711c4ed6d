#pragma once

#include <memory>
#include <optional>
#include <string>

#include "cstvae/cstvae.hpp"
#include "cstvae/datasets.hpp"
#include "cstvae/rng.hpp"

namespace cstvae {

// Entries uniform in +/- sqrt(6 / (fan_in + fan_out)).
std::vector<double> glorot_init(i64 fan_in, i64 fan_out, Rng& rng);

struct AdagradState {
    double learning_rate = 0.01;
    double epsilon = 1e-8;
    std::vector<std::vector<double>> accum;  // parallel to registry order

    void init_for(const ParamRegistry& reg);
};

// Per coordinate: g = grad + decay_rate * value; acc += g^2;
// value -= lr * g / (sqrt(acc) + eps). Zeroes the gradients afterwards.
// Throws DivergenceError naming the parameter on a non-finite gradient.
void adagrad_step(ParamRegistry& reg, AdagradState& st, double weight_decay_rate);

enum class ModelKind { Vae, Stvae, Cstvae };
std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

struct ModelConfig {
    ModelKind kind = ModelKind::Stvae;
    i64 image_h = 28;
    i64 image_w = 28;
    int n_layers = 2;       // cstvae only
    i64 z_content = 50;     // per layer
    i64 content_hidden = 256;
    i64 pose_hidden = 32;
    bool freeze_pose = false;  // stvae only: pose pinned to identity
    LikelihoodModel likelihood{};
    bool analytic_kl = true;
    double logvar_clamp = 10.0;

    i64 pixels() const { return image_h * image_w; }
    i64 feature_dim() const;
    StvaeConfig layer_config() const;
};

// One generative model instance: a vanilla VAE (content nets only), an
// ST-VAE, or a per-layer-untied CST-VAE stack.
class Model {
  public:
    Model(const ModelConfig& cfg, Rng& init_rng);

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }
    const std::vector<StvaeParams>& layer_params() const { return layers_; }

    struct Output {
        Tensor elbo;      // [B]
        Tensor loglik;    // [B]
        Tensor kl_total;  // [B]
    };
    // Draws noise from rng in a fixed order (per layer: pose then content;
    // nothing for inactive pose). May throw SingularTransformError.
    Output elbo(Tape& tape, const Tensor& x, Rng& rng) const;

    // Posterior content means with zero noise, row-major [set.n x feature_dim].
    // For the layered model the per-layer means are concatenated front-first.
    std::vector<double> content_means(const LabeledImageSet& set, i64 batch_size = 256) const;

  private:
    ModelConfig cfg_;
    ParamRegistry reg_;
    std::vector<StvaeParams> layers_;
};

struct TrainConfig {
    ModelConfig model;
    i64 minibatch = 100;
    double learning_rate = 0.01;
    // Per-minibatch weight-decay gradient is decay * value with
    // decay = minibatch / train_size unless overridden here (>= 0).
    double weight_decay_lambda = -1.0;
    i64 max_steps = 250000;
    std::uint64_t seed = 0;
    i64 eval_every = 1000;
    i64 eval_subsample = 2000;
    i64 checkpoint_every = 5000;
    double max_skip_fraction = 0.001;  // singular-transform skips before aborting
    std::string out_dir;
    std::string resume_from;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct TrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    double final_train_elbo = 0.0;
    double final_test_elbo = 0.0;
    i64 steps = 0;
    i64 skips = 0;
};

// Metrics CSV columns: step,split,elbo_per_example,kl_total,loglik,skips.
TrainResult train(const TrainConfig& cfg, const DatasetBundle& data);

void save_checkpoint(const std::string& path_prefix, const Model& model, const AdagradState& opt,
                     i64 step, const std::string& rng_state, i64 skips, const TrainConfig& cfg);

struct Checkpoint {
    TrainConfig config;
    std::shared_ptr<Model> model;
    AdagradState opt;
    i64 step = 0;
    std::string rng_state;
    i64 skips = 0;
};

Checkpoint load_checkpoint(const std::string& path_prefix);

}  // namespace cstvae
