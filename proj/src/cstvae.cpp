#include "cstvae/cstvae.hpp"

#include "cstvae/errors.hpp"

namespace cstvae {

namespace {

void check_unit_range(const Tensor& t, const char* who) {
    for (double v : t.value()) {
        if (v < -1e-9 || v > 1.0 + 1e-9) {
            throw ContractError(std::string(who) + ": value " + std::to_string(v) + " outside [0,1]");
        }
    }
}

}  // namespace

Tensor over(const Tensor& front, const Tensor& back) {
    if (!front.defined() || !back.defined()) throw ContractError("over: undefined operand");
    if (front.shape() != back.shape()) {
        throw DimensionError("over: shape mismatch " + shape_str(front.shape()) + " vs " +
                             shape_str(back.shape()));
    }
    check_unit_range(front, "over");
    check_unit_range(back, "over");
    return add(front, mul(sub(1.0, front), back));
}

Tensor composite(const std::vector<Tensor>& layers) {
    if (layers.empty()) throw ContractError("composite: no layers");
    Tensor x = Tensor::zeros(layers.front().shape());
    for (const Tensor& layer : layers) x = over(x, layer);
    return x;
}

Tensor residual(const Tensor& delta, const Tensor& layer) {
    if (!delta.defined() || !layer.defined()) throw ContractError("residual: undefined operand");
    if (delta.shape() != layer.shape()) {
        throw DimensionError("residual: shape mismatch " + shape_str(delta.shape()) + " vs " +
                             shape_str(layer.shape()));
    }
    check_unit_range(delta, "residual");
    check_unit_range(layer, "residual");
    return relu(sub(delta, layer));
}

CstvaeElbo cstvae_elbo_step(const std::vector<StvaeParams>& layer_params, const Tensor& x,
                            const std::vector<Tensor>& noise_pose,
                            const std::vector<Tensor>& noise_content) {
    const std::size_t n = layer_params.size();
    if (n == 0) throw ContractError("cstvae_elbo_step: no layers");
    if (noise_content.size() != n || noise_pose.size() != n) {
        throw ContractError("cstvae_elbo_step: expected one noise tensor per layer");
    }

    CstvaeElbo r;
    std::vector<Tensor> layer_images;
    layer_images.reserve(n);
    Tensor delta = x;
    Tensor running;
    for (std::size_t i = 0; i < n; ++i) {
        LayerTrace lt;
        lt.residual_input = delta;
        lt.stvae = stvae_forward(layer_params[i], delta, noise_pose[i], noise_content[i]);
        layer_images.push_back(lt.stvae.layer);
        running = running.defined() ? over(running, lt.stvae.layer) : over(Tensor::zeros(x.shape()), lt.stvae.layer);
        lt.composite_after = running;
        if (i + 1 < n) delta = residual(delta, lt.stvae.layer);

        const StvaeParams& p = layer_params[i];
        if (p.pose_active()) {
            r.kls.push_back(p.cfg.analytic_kl ? kl_standard_normal(lt.stvae.q_pose)
                                              : sampled_kl(lt.stvae.q_pose, lt.stvae.z_pose));
        }
        r.kls.push_back(p.cfg.analytic_kl ? kl_standard_normal(lt.stvae.q_content)
                                          : sampled_kl(lt.stvae.q_content, lt.stvae.z_content));
        r.layers.push_back(std::move(lt));
    }
    r.reconstruction = running;
    r.loglik = log_likelihood(x, r.reconstruction, layer_params.front().cfg.likelihood);
    r.elbo = elbo(r.loglik, r.kls);
    return r;
}

Decomposition decompose(const std::vector<StvaeParams>& layer_params, const Tensor& x) {
    const std::size_t n = layer_params.size();
    if (n == 0) throw ContractError("decompose: no layers");
    const i64 batch = x.shape()[0];
    Decomposition d;
    Tensor delta = x;
    for (std::size_t i = 0; i < n; ++i) {
        const StvaeParams& p = layer_params[i];
        Tensor noise_pose = p.pose_active() ? Tensor::zeros({batch, p.cfg.z_pose}) : Tensor();
        Tensor noise_content = Tensor::zeros({batch, p.cfg.z_content});
        StvaeTrace t = stvae_forward(p, delta, noise_pose, noise_content);
        d.layers.push_back(t.layer);
        d.canonicals.push_back(t.canonical);
        if (i + 1 < n) delta = residual(delta, t.layer);
    }
    d.reconstruction = composite(d.layers);
    return d;
}

}  // namespace cstvae
