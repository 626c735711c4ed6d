#include "cstvae/vae.hpp"

#include <cmath>
#include <numbers>

#include "cstvae/errors.hpp"

namespace cstvae {

namespace {

void check_latent(const GaussianLatent& q, const char* who) {
    if (!q.mu.defined() || !q.logvar.defined()) throw ContractError(std::string(who) + ": undefined latent");
    if (q.mu.shape() != q.logvar.shape()) {
        throw DimensionError(std::string(who) + ": mu " + shape_str(q.mu.shape()) + " vs logvar " +
                             shape_str(q.logvar.shape()));
    }
    if (q.mu.rank() != 2) {
        throw DimensionError(std::string(who) + ": expected [B x d] latent, got " + shape_str(q.mu.shape()));
    }
    for (double v : q.logvar.value()) {
        if (!std::isfinite(v)) throw ContractError(std::string(who) + ": non-finite logvar");
    }
}

}  // namespace

Tensor reparam_sample(const GaussianLatent& q, const Tensor& noise) {
    check_latent(q, "reparam_sample");
    if (noise.shape() != q.mu.shape()) {
        throw DimensionError("reparam_sample: noise " + shape_str(noise.shape()) + " vs latent " +
                             shape_str(q.mu.shape()));
    }
    if (noise.requires_grad()) throw ContractError("reparam_sample: noise must not carry gradients");
    Tensor std_dev = exp(mul(q.logvar, 0.5));
    return add(q.mu, mul(std_dev, noise));
}

Tensor kl_standard_normal(const GaussianLatent& q) {
    check_latent(q, "kl_standard_normal");
    // (mu^2 + exp(lv) - 1 - lv) / 2, summed over latent dims
    Tensor terms = sub(add(mul(q.mu, q.mu), exp(q.logvar)) - 1.0, q.logvar);
    return mul(sum(terms, 1), 0.5);
}

Tensor sampled_kl(const GaussianLatent& q, const Tensor& z) {
    check_latent(q, "sampled_kl");
    if (z.shape() != q.mu.shape()) {
        throw DimensionError("sampled_kl: z " + shape_str(z.shape()) + " vs latent " + shape_str(q.mu.shape()));
    }
    // log q(z) - log p(z) = (z^2 - (z-mu)^2/s^2 - lv) / 2 summed over dims
    Tensor centered = sub(z, q.mu);
    Tensor inv_var = exp(mul(q.logvar, -1.0));
    Tensor terms = sub(sub(mul(z, z), mul(mul(centered, centered), inv_var)), q.logvar);
    return mul(sum(terms, 1), 0.5);
}

Tensor log_likelihood(const Tensor& x, const Tensor& x_hat, const LikelihoodModel& model) {
    if (!x.defined() || !x_hat.defined()) throw ContractError("log_likelihood: undefined operand");
    if (x.shape() != x_hat.shape()) {
        throw DimensionError("log_likelihood: x " + shape_str(x.shape()) + " vs x_hat " +
                             shape_str(x_hat.shape()));
    }
    if (x.rank() != 2) {
        throw DimensionError("log_likelihood: expected [B x pixels], got " + shape_str(x.shape()));
    }
    switch (model.kind) {
        case LikelihoodKind::Bernoulli: {
            for (double v : x.value()) {
                if (v != 0.0 && v != 1.0) {
                    throw ContractError("log_likelihood: Bernoulli target must be binary, got " +
                                        std::to_string(v));
                }
            }
            for (double v : x_hat.value()) {
                if (v < -1e-9 || v > 1.0 + 1e-9) {
                    throw ContractError("log_likelihood: Bernoulli probability out of [0,1]: " +
                                        std::to_string(v));
                }
            }
            const double eps = model.clamp_eps;
            Tensor p = clamp(x_hat, eps, 1.0 - eps);
            Tensor terms = add(mul(x, log(p)), mul(sub(1.0, x), log(sub(1.0, p))));
            return sum(terms, 1);
        }
        case LikelihoodKind::BernoulliSigmoid: {
            for (double v : x.value()) {
                if (v != 0.0 && v != 1.0) {
                    throw ContractError("log_likelihood: Bernoulli target must be binary, got " +
                                        std::to_string(v));
                }
            }
            Tensor p = sigmoid(x_hat);
            const double eps = model.clamp_eps;
            Tensor pc = clamp(p, eps, 1.0 - eps);
            Tensor terms = add(mul(x, log(pc)), mul(sub(1.0, x), log(sub(1.0, pc))));
            return sum(terms, 1);
        }
        case LikelihoodKind::Gaussian: {
            if (!(model.gaussian_variance > 0.0)) {
                throw ContractError("log_likelihood: gaussian_variance must be positive");
            }
            const double var = model.gaussian_variance;
            const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * var);
            const i64 dims = x.shape()[1];
            Tensor diff = sub(x, x_hat);
            Tensor quad = mul(sum(mul(diff, diff), 1), -0.5 / var);
            return add(quad, static_cast<double>(dims) * log_norm);
        }
    }
    throw ContractError("log_likelihood: unknown likelihood kind");
}

Tensor elbo(const Tensor& loglik, const std::vector<Tensor>& kls) {
    if (!loglik.defined()) throw ContractError("elbo: undefined log-likelihood");
    Tensor out = loglik;
    for (const Tensor& kl : kls) {
        if (kl.shape() != loglik.shape()) {
            throw DimensionError("elbo: KL term " + shape_str(kl.shape()) + " vs loglik " +
                                 shape_str(loglik.shape()));
        }
        out = sub(out, kl);
    }
    return out;
}

}  // namespace cstvae
