#pragma once

#include <string>

#include "cstvae/mlp.hpp"
#include "cstvae/stn.hpp"
#include "cstvae/vae.hpp"

namespace cstvae {

// Single-layer spatially transformed VAE: content and pose decoders plus the
// two-stage recognition model that predicts pose first, undoes it, then
// predicts content from the un-warped image.
struct StvaeConfig {
    i64 image_h = 28;
    i64 image_w = 28;
    i64 z_content = 50;  // 20-50 is the sensible range
    i64 z_pose = 6;      // one latent per affine entry
    i64 content_hidden = 256;
    i64 pose_hidden = 32;
    int n_hidden = 2;
    bool freeze_pose = false;  // pose pinned to identity; reduces to a vanilla VAE
    double logvar_clamp = 10.0;
    LikelihoodModel likelihood{};
    bool analytic_kl = true;

    i64 pixels() const { return image_h * image_w; }
};

struct StvaeParams {
    StvaeConfig cfg;
    Mlp content_encoder;  // image -> (mu_C, logvar_C)
    Mlp content_decoder;  // z_C -> canonical image, sigmoid output
    Mlp pose_encoder;     // image -> (mu_T, logvar_T); empty when pose-free
    Mlp pose_decoder;     // z_T -> 6 affine entries; shared by both directions

    bool has_pose() const { return !pose_decoder.empty(); }
    bool pose_active() const { return has_pose() && !cfg.freeze_pose; }
};

// Content networks are created before pose networks, so a pose-free model
// consumes exactly the same init stream prefix as a full one.
StvaeParams make_stvae(const StvaeConfig& cfg, Rng& rng, ParamRegistry& reg,
                       const std::string& prefix, bool create_pose = true);

struct StvaeTrace {
    GaussianLatent q_pose;      // undefined when pose inactive
    GaussianLatent q_content;
    Tensor z_pose;
    Tensor z_content;
    Tensor theta;               // [B x 6]; identity rows when pose inactive
    Tensor canonical_estimate;  // inverse-warped input
    Tensor canonical;           // decoded canonical image, [B x pixels]
    Tensor layer;               // warped reconstruction, [B x pixels]
};

struct StvaeDecode {
    Tensor canonical;
    Tensor theta;
    Tensor layer;
};

// Generative pass C = sigmoid(f_C(z_C)), T = f_T(z_T), L = stn(C, T).
StvaeDecode stvae_decode(const StvaeParams& p, const Tensor& z_content, const Tensor& z_pose);

// Recognition pass; noise tensors hold the standard-normal draws (zero for
// posterior means). noise_pose may be undefined when pose is inactive.
// Throws SingularTransformError (with offending rows) if a predicted pose
// cannot be inverted.
StvaeTrace stvae_encode(const StvaeParams& p, const Tensor& image, const Tensor& noise_pose,
                        const Tensor& noise_content);

// encode + reconstruction through the shared pose tensor; fills canonical
// and layer. The building block for both the single-layer bound and the
// multi-layer recursion.
StvaeTrace stvae_forward(const StvaeParams& p, const Tensor& image, const Tensor& noise_pose,
                         const Tensor& noise_content);

struct StvaeElbo {
    Tensor elbo;    // [B]
    Tensor loglik;  // [B]
    Tensor kl_pose;     // [B]; undefined when pose inactive
    Tensor kl_content;  // [B]
    StvaeTrace trace;
};

// Full per-minibatch bound: encode, decode through the shared pose tensor,
// score the reconstruction against x.
StvaeElbo stvae_elbo_step(const StvaeParams& p, const Tensor& x, const Tensor& noise_pose,
                          const Tensor& noise_content);

// Identity pose rows as a plain constant.
Tensor identity_theta(i64 batch);

}  // namespace cstvae
