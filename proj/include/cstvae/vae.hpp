#pragma once

#include <vector>

#include "cstvae/tensor.hpp"

namespace cstvae {

// Diagonal Gaussian posterior parameters, one row per example.
struct GaussianLatent {
    Tensor mu;      // [B x d]
    Tensor logvar;  // [B x d], log sigma^2
};

enum class LikelihoodKind {
    Bernoulli,         // probability = clamp(x_hat, eps, 1-eps)
    BernoulliSigmoid,  // probability = sigmoid(x_hat); kept for fidelity runs
    Gaussian,          // fixed-variance Gaussian around x_hat
};

struct LikelihoodModel {
    LikelihoodKind kind = LikelihoodKind::Bernoulli;
    double gaussian_variance = 0.1;
    double clamp_eps = 1e-6;
};

// z = mu + exp(logvar/2) * noise. Gradients flow to mu and logvar only;
// noise is a fixed standard-normal draw.
Tensor reparam_sample(const GaussianLatent& q, const Tensor& noise);

// Closed-form KL(q || N(0, I)) per example: sum_d (mu^2 + s^2 - 1 - log s^2)/2.
Tensor kl_standard_normal(const GaussianLatent& q);

// Single-sample estimate log q(z) - log p(z); the literal sampled form of
// the bound, same expectation as the closed form but higher variance.
Tensor sampled_kl(const GaussianLatent& q, const Tensor& z);

// Per-example log p(x | x_hat). Bernoulli requires x in {0,1} and
// x_hat in [0,1].
Tensor log_likelihood(const Tensor& x, const Tensor& x_hat, const LikelihoodModel& model);

// loglik - sum of KL terms, per example. Training maximizes this.
Tensor elbo(const Tensor& loglik, const std::vector<Tensor>& kls);

}  // namespace cstvae
