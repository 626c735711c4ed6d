#include "cstvae/stvae.hpp"

#include "cstvae/errors.hpp"

namespace cstvae {

namespace {

GaussianLatent split_latent(const Tensor& enc_out, i64 dim, double logvar_clamp) {
    GaussianLatent q;
    q.mu = slice_cols(enc_out, 0, dim);
    q.logvar = clamp(slice_cols(enc_out, dim, 2 * dim), -logvar_clamp, logvar_clamp);
    return q;
}

}  // namespace

Tensor identity_theta(i64 batch) {
    std::vector<double> rows(static_cast<std::size_t>(batch * 6), 0.0);
    for (i64 i = 0; i < batch; ++i) {
        rows[static_cast<std::size_t>(i * 6 + 0)] = 1.0;
        rows[static_cast<std::size_t>(i * 6 + 4)] = 1.0;
    }
    return Tensor::constant({batch, 6}, std::move(rows));
}

StvaeParams make_stvae(const StvaeConfig& cfg, Rng& rng, ParamRegistry& reg,
                       const std::string& prefix, bool create_pose) {
    if (cfg.z_pose != 6) throw ConfigError("make_stvae: pose latent dimension must be 6");
    if (cfg.z_content <= 0) throw ConfigError("make_stvae: content latent dimension must be positive");
    StvaeParams p;
    p.cfg = cfg;
    const i64 px = cfg.pixels();
    const std::vector<i64> content_hidden(static_cast<std::size_t>(cfg.n_hidden), cfg.content_hidden);
    const std::vector<i64> pose_hidden(static_cast<std::size_t>(cfg.n_hidden), cfg.pose_hidden);

    p.content_encoder = make_mlp({px, content_hidden, 2 * cfg.z_content, Act::Relu, Act::None}, rng, reg,
                                 prefix + ".content_enc");
    p.content_decoder = make_mlp({cfg.z_content, content_hidden, px, Act::Relu, Act::Sigmoid}, rng, reg,
                                 prefix + ".content_dec");
    if (create_pose) {
        p.pose_encoder = make_mlp({px, pose_hidden, 2 * cfg.z_pose, Act::Tanh, Act::None}, rng, reg,
                                  prefix + ".pose_enc");
        p.pose_decoder = make_mlp({cfg.z_pose, pose_hidden, 6, Act::Tanh, Act::None}, rng, reg,
                                  prefix + ".pose_dec");
        // Zero final weights and an identity bias put every initial pose at
        // the identity transform.
        Tensor& last_w = p.pose_decoder.weights.back();
        std::fill(last_w.mutable_value().begin(), last_w.mutable_value().end(), 0.0);
        Tensor& last_b = p.pose_decoder.biases.back();
        last_b.mutable_value() = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
    }
    return p;
}

StvaeDecode stvae_decode(const StvaeParams& p, const Tensor& z_content, const Tensor& z_pose) {
    StvaeDecode d;
    d.canonical = p.content_decoder.forward(z_content);
    const i64 batch = d.canonical.shape()[0];
    if (p.pose_active()) {
        if (!z_pose.defined()) throw ContractError("stvae_decode: pose latent required");
        d.theta = p.pose_decoder.forward(z_pose);
        Tensor c_img = reshape(d.canonical, {batch, p.cfg.image_h, p.cfg.image_w});
        Tensor warped = stn(c_img, d.theta, p.cfg.image_h, p.cfg.image_w);
        d.layer = reshape(warped, {batch, p.cfg.pixels()});
    } else {
        d.theta = identity_theta(batch);
        d.layer = d.canonical;
    }
    return d;
}

StvaeTrace stvae_encode(const StvaeParams& p, const Tensor& image, const Tensor& noise_pose,
                        const Tensor& noise_content) {
    if (!image.defined()) throw ContractError("stvae_encode: undefined image");
    if (image.rank() != 2 || image.shape()[1] != p.cfg.pixels()) {
        throw DimensionError("stvae_encode: image " + shape_str(image.shape()) + " does not match " +
                             std::to_string(p.cfg.pixels()) + " pixels");
    }
    const i64 batch = image.shape()[0];
    StvaeTrace t;
    if (p.pose_active()) {
        if (!noise_pose.defined()) throw ContractError("stvae_encode: pose noise required");
        t.q_pose = split_latent(p.pose_encoder.forward(image), p.cfg.z_pose, p.cfg.logvar_clamp);
        t.z_pose = reparam_sample(t.q_pose, noise_pose);
        t.theta = p.pose_decoder.forward(t.z_pose);
        Tensor theta_inv = affine_invert(t.theta);
        Tensor img3 = reshape(image, {batch, p.cfg.image_h, p.cfg.image_w});
        Tensor unwarped = stn(img3, theta_inv, p.cfg.image_h, p.cfg.image_w);
        t.canonical_estimate = reshape(unwarped, {batch, p.cfg.pixels()});
    } else {
        t.theta = identity_theta(batch);
        t.canonical_estimate = image;
    }
    t.q_content = split_latent(p.content_encoder.forward(t.canonical_estimate), p.cfg.z_content,
                               p.cfg.logvar_clamp);
    t.z_content = reparam_sample(t.q_content, noise_content);
    return t;
}

StvaeTrace stvae_forward(const StvaeParams& p, const Tensor& image, const Tensor& noise_pose,
                         const Tensor& noise_content) {
    StvaeTrace t = stvae_encode(p, image, noise_pose, noise_content);
    const i64 batch = image.shape()[0];
    // Reconstruction reuses the pose tensor predicted during recognition:
    // f_T is evaluated once and feeds both warps.
    t.canonical = p.content_decoder.forward(t.z_content);
    if (p.pose_active()) {
        Tensor c_img = reshape(t.canonical, {batch, p.cfg.image_h, p.cfg.image_w});
        Tensor warped = stn(c_img, t.theta, p.cfg.image_h, p.cfg.image_w);
        t.layer = reshape(warped, {batch, p.cfg.pixels()});
    } else {
        t.layer = t.canonical;
    }
    return t;
}

StvaeElbo stvae_elbo_step(const StvaeParams& p, const Tensor& x, const Tensor& noise_pose,
                          const Tensor& noise_content) {
    StvaeElbo r;
    r.trace = stvae_forward(p, x, noise_pose, noise_content);
    r.loglik = log_likelihood(x, r.trace.layer, p.cfg.likelihood);
    std::vector<Tensor> kls;
    if (p.pose_active()) {
        r.kl_pose = p.cfg.analytic_kl ? kl_standard_normal(r.trace.q_pose)
                                      : sampled_kl(r.trace.q_pose, r.trace.z_pose);
        kls.push_back(r.kl_pose);
    }
    r.kl_content = p.cfg.analytic_kl ? kl_standard_normal(r.trace.q_content)
                                     : sampled_kl(r.trace.q_content, r.trace.z_content);
    kls.push_back(r.kl_content);
    r.elbo = elbo(r.loglik, kls);
    return r;
}

}  // namespace cstvae
