#pragma once

#include <vector>

#include "cstvae/stvae.hpp"

namespace cstvae {

// Classic over operator on premultiplied grayscale: the pixel value doubles
// as alpha, so out = front + (1 - front) * back. Both operands must be
// in [0,1].
Tensor over(const Tensor& front, const Tensor& back);

// Left fold of over with a black start image; layers[0] is front-most.
Tensor composite(const std::vector<Tensor>& layers);

// max(0, delta - layer): the part of the observation still unexplained.
Tensor residual(const Tensor& delta, const Tensor& layer);

struct LayerTrace {
    Tensor residual_input;   // delta_i fed to this layer's encoder
    StvaeTrace stvae;        // per-layer recognition/generation record
    Tensor composite_after;  // x_i, the running composite
};

struct CstvaeElbo {
    Tensor elbo;    // [B]
    Tensor loglik;  // [B]
    std::vector<Tensor> kls;
    std::vector<LayerTrace> layers;
    Tensor reconstruction;  // x_N
};

// Front-to-back recursion: encode the residual, decode the layer, subtract
// it, repeat; the sampled decoded layer feeds the next encoder.
CstvaeElbo cstvae_elbo_step(const std::vector<StvaeParams>& layer_params, const Tensor& x,
                            const std::vector<Tensor>& noise_pose,
                            const std::vector<Tensor>& noise_content);

struct Decomposition {
    std::vector<Tensor> layers;      // per-layer images L_i, front first
    std::vector<Tensor> canonicals;  // decoded canonical images
    Tensor reconstruction;           // composite of the returned layers
};

// Zero-noise (posterior mean) inference on a trained model.
Decomposition decompose(const std::vector<StvaeParams>& layer_params, const Tensor& x);

}  // namespace cstvae
