#include "cstvae/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cstvae/cstvae.hpp"
#include "cstvae/errors.hpp"
#include "cstvae/rng.hpp"
#include "cstvae/stn.hpp"
#include "cstvae/stvae.hpp"
#include "cstvae/vae.hpp"

namespace cstvae {

GradCheckResult check_gradients(const std::string& name, const std::function<Tensor(Tape&)>& loss_fn,
                                const std::vector<Tensor>& leaves, double h, double tol,
                                i64 max_coords_per_leaf) {
    GradCheckResult res;
    res.name = name;
    res.tolerance = tol;

    for (const Tensor& leaf : leaves) const_cast<Tensor&>(leaf).zero_grad();
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        for (const Tensor& leaf : leaves) tape.watch(leaf);
        Tensor loss = loss_fn(tape);
        if (loss.size() != 1) throw ContractError("check_gradients: loss must be scalar");
        tape.backward(loss);
        for (const Tensor& leaf : leaves) analytic.push_back(leaf.grad());
    }
    auto eval = [&]() {
        Tape tape;
        for (const Tensor& leaf : leaves) tape.watch(leaf);
        return loss_fn(tape).item();
    };

    Rng pick(0x9dc0ffeeULL + static_cast<std::uint64_t>(std::hash<std::string>{}(name)));
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor leaf = leaves[li];
        std::vector<double>& v = leaf.mutable_value();
        std::vector<i64> coords;
        if (max_coords_per_leaf > 0 && static_cast<i64>(v.size()) > max_coords_per_leaf) {
            for (i64 c = 0; c < max_coords_per_leaf; ++c) {
                coords.push_back(pick.uniform_int(static_cast<i64>(v.size())));
            }
        } else {
            coords.resize(v.size());
            for (std::size_t c = 0; c < v.size(); ++c) coords[c] = static_cast<i64>(c);
        }
        for (i64 c : coords) {
            const double saved = v[static_cast<std::size_t>(c)];
            v[static_cast<std::size_t>(c)] = saved + h;
            const double plus = eval();
            v[static_cast<std::size_t>(c)] = saved - h;
            const double minus = eval();
            v[static_cast<std::size_t>(c)] = saved;
            const double numeric = (plus - minus) / (2.0 * h);
            const double a = analytic[li][static_cast<std::size_t>(c)];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_analytic = a;
                res.worst_numeric = numeric;
            }
            ++res.coords_checked;
        }
    }
    res.pass = res.max_rel_err <= tol;
    return res;
}

namespace {

Tensor random_param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::param(shape, std::move(v));
}

// Random positive weights fixed per check; a weighted sum separates
// per-coordinate errors better than a plain sum.
Tensor weighted_sum(const Tensor& t, const Tensor& w) { return sum(mul(reshape(t, w.shape()), w)); }

Tensor random_const(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::constant(shape, std::move(v));
}

void keep_away_from(std::vector<double>& v, double point, double margin) {
    for (double& x : v) {
        if (std::abs(x - point) < margin) x = x < point ? point - margin : point + margin;
    }
}

std::vector<GradCheckResult> tensor_suite() {
    std::vector<GradCheckResult> out;
    Rng rng(41);

    {
        Tensor a = random_param({3, 4}, rng);
        Tensor b = random_param({4, 5}, rng);
        Tensor w = random_const({3, 5}, rng, 0.2, 1.0);
        out.push_back(check_gradients(
            "tensor.matmul", [&](Tape& t) { return weighted_sum(matmul(t.input(a.shape(), a.value()), b), w); },
            {b}));
        out.push_back(check_gradients(
            "tensor.matmul.lhs", [&](Tape& t) { (void)t; return weighted_sum(matmul(a, b), w); }, {a, b}));
    }
    {
        Tensor a = random_param({4, 6}, rng);
        Tensor b = random_param({4, 6}, rng);
        Tensor w = random_const({4, 6}, rng, 0.2, 1.0);
        out.push_back(check_gradients(
            "tensor.add", [&](Tape& t) { (void)t; return weighted_sum(add(a, b), w); }, {a, b}));
        out.push_back(check_gradients(
            "tensor.sub", [&](Tape& t) { (void)t; return weighted_sum(sub(a, b), w); }, {a, b}));
        out.push_back(check_gradients(
            "tensor.mul", [&](Tape& t) { (void)t; return weighted_sum(mul(a, b), w); }, {a, b}));
        out.push_back(check_gradients(
            "tensor.scalar_ops",
            [&](Tape& t) { (void)t; return weighted_sum(mul(add(sub(2.0, a), 0.75), -1.5), w); }, {a}));
    }
    {
        // relu kink excluded by keeping |x| > 1e-3
        Tensor a = random_param({5, 5}, rng);
        keep_away_from(a.mutable_value(), 0.0, 1e-3);
        Tensor w = random_const({5, 5}, rng, 0.2, 1.0);
        out.push_back(check_gradients(
            "tensor.relu", [&](Tape& t) { (void)t; return weighted_sum(relu(a), w); }, {a}));
        out.push_back(check_gradients(
            "tensor.tanh", [&](Tape& t) { (void)t; return weighted_sum(tanh(a), w); }, {a}));
        out.push_back(check_gradients(
            "tensor.sigmoid", [&](Tape& t) { (void)t; return weighted_sum(sigmoid(a), w); }, {a}));
        out.push_back(check_gradients(
            "tensor.exp", [&](Tape& t) { (void)t; return weighted_sum(exp(a), w); }, {a}));
    }
    {
        Tensor a = random_param({4, 4}, rng, 0.1, 3.0);
        Tensor w = random_const({4, 4}, rng, 0.2, 1.0);
        out.push_back(check_gradients(
            "tensor.log", [&](Tape& t) { (void)t; return weighted_sum(log(a), w); }, {a}));
    }
    {
        // clamp boundaries are non-smooth; keep samples off them
        Tensor a = random_param({6, 3}, rng, -2.0, 2.0);
        keep_away_from(a.mutable_value(), -0.5, 1e-3);
        keep_away_from(a.mutable_value(), 0.5, 1e-3);
        Tensor w = random_const({6, 3}, rng, 0.2, 1.0);
        out.push_back(check_gradients(
            "tensor.clamp", [&](Tape& t) { (void)t; return weighted_sum(clamp(a, -0.5, 0.5), w); }, {a}));
    }
    {
        Tensor a = random_param({3, 7}, rng);
        Tensor wr = random_const({3}, rng, 0.2, 1.0);
        Tensor wc = random_const({7}, rng, 0.2, 1.0);
        out.push_back(check_gradients(
            "tensor.sum", [&](Tape& t) { (void)t; return sum(a); }, {a}));
        out.push_back(check_gradients(
            "tensor.mean", [&](Tape& t) { (void)t; return mean(a); }, {a}));
        out.push_back(check_gradients(
            "tensor.sum_rows", [&](Tape& t) { (void)t; return weighted_sum(sum(a, 1), wr); }, {a}));
        out.push_back(check_gradients(
            "tensor.sum_cols", [&](Tape& t) { (void)t; return weighted_sum(sum(a, 0), wc); }, {a}));
        out.push_back(check_gradients(
            "tensor.mean_rows", [&](Tape& t) { (void)t; return weighted_sum(mean(a, 1), wr); }, {a}));
    }
    {
        Tensor a = random_param({2, 12}, rng);
        Tensor w = random_const({4, 6}, rng, 0.2, 1.0);
        out.push_back(check_gradients(
            "tensor.reshape", [&](Tape& t) { (void)t; return weighted_sum(reshape(a, {4, 6}), w); }, {a}));
        Tensor ws = random_const({2, 5}, rng, 0.2, 1.0);
        out.push_back(check_gradients(
            "tensor.slice_cols", [&](Tape& t) { (void)t; return weighted_sum(slice_cols(a, 3, 8), ws); },
            {a}));
    }
    {
        Tensor v = random_param({5}, rng);
        Tensor w = random_const({4, 5}, rng, 0.2, 1.0);
        out.push_back(check_gradients(
            "tensor.broadcast_rows",
            [&](Tape& t) { (void)t; return weighted_sum(broadcast_rows(v, 4), w); }, {v}));
    }
    {
        Tensor logits = random_param({6, 4}, rng, -2.0, 2.0);
        std::vector<i64> labels = {0, 3, 1, 2, 3, 0};
        out.push_back(check_gradients(
            "tensor.softmax_cross_entropy",
            [&](Tape& t) { (void)t; return mean(softmax_cross_entropy(logits, labels)); }, {logits}));
    }
    return out;
}

// Affine rows near identity but clear of exact pixel alignment and of the
// bilinear cell boundaries.
Tensor jittered_theta(i64 batch, Rng& rng) {
    std::vector<double> rows(static_cast<std::size_t>(batch * 6));
    for (i64 i = 0; i < batch; ++i) {
        double* r = rows.data() + i * 6;
        r[0] = 1.0 + rng.uniform(-0.15, 0.15);
        r[1] = rng.uniform(-0.12, 0.12) + 0.031;
        r[2] = rng.uniform(-0.2, 0.2) + 0.017;
        r[3] = rng.uniform(-0.12, 0.12) + 0.023;
        r[4] = 1.0 + rng.uniform(-0.15, 0.15);
        r[5] = rng.uniform(-0.2, 0.2) + 0.011;
    }
    return Tensor::param({batch, 6}, std::move(rows));
}

std::vector<GradCheckResult> stn_suite() {
    std::vector<GradCheckResult> out;
    Rng rng(42);
    const i64 h = 7, w = 6;

    {
        Tensor theta = jittered_theta(2, rng);
        Tensor wg = random_const({2, 5, 4, 2}, rng, 0.2, 1.0);
        Tensor wi = random_const({2, 6}, rng, 0.2, 1.0);
        out.push_back(check_gradients(
            "stn.affine_grid", [&](Tape& t) { (void)t; return weighted_sum(affine_grid(theta, 5, 4), wg); },
            {theta}));
        out.push_back(check_gradients(
            "stn.affine_invert",
            [&](Tape& t) { (void)t; return weighted_sum(affine_invert(theta), wi); }, {theta}));
    }
    {
        Tensor src = random_param({2, h, w}, rng, 0.0, 1.0);
        Tensor theta = jittered_theta(2, rng);
        Tensor wo = random_const({2, h, w}, rng, 0.2, 1.0);
        out.push_back(check_gradients(
            "stn.grid_sample",
            [&](Tape& t) { (void)t; return weighted_sum(grid_sample(src, affine_grid(theta, h, w)), wo); },
            {src, theta}));
        out.push_back(check_gradients(
            "stn.stn_full", [&](Tape& t) { (void)t; return sum(stn(src, theta, h, w)); }, {src, theta}));
        out.push_back(check_gradients(
            "stn.inverse_warp",
            [&](Tape& t) {
                (void)t;
                return weighted_sum(grid_sample(src, affine_grid(affine_invert(theta), h, w)), wo);
            },
            {src, theta}));
    }
    return out;
}

std::vector<GradCheckResult> vae_suite() {
    std::vector<GradCheckResult> out;
    Rng rng(43);
    const i64 b = 3, d = 4;

    Tensor mu = random_param({b, d}, rng);
    Tensor logvar = random_param({b, d}, rng, -1.5, 1.5);
    Tensor noise = random_const({b, d}, rng, -1.0, 1.0);
    Tensor w = random_const({b, d}, rng, 0.2, 1.0);
    Tensor wb = random_const({b}, rng, 0.2, 1.0);

    out.push_back(check_gradients(
        "vae.reparam_sample",
        [&](Tape& t) { (void)t; return weighted_sum(reparam_sample({mu, logvar}, noise), w); },
        {mu, logvar}));
    out.push_back(check_gradients(
        "vae.kl", [&](Tape& t) { (void)t; return weighted_sum(kl_standard_normal({mu, logvar}), wb); },
        {mu, logvar}));
    out.push_back(check_gradients(
        "vae.sampled_kl",
        [&](Tape& t) {
            (void)t;
            GaussianLatent q{mu, logvar};
            return weighted_sum(sampled_kl(q, reparam_sample(q, noise)), wb);
        },
        {mu, logvar}));
    {
        const i64 px = 6;
        std::vector<double> xv(static_cast<std::size_t>(b * px));
        Rng xr(7);
        for (double& v : xv) v = xr.uniform() < 0.5 ? 0.0 : 1.0;
        Tensor x = Tensor::constant({b, px}, xv);
        Tensor x_hat = random_param({b, px}, rng, 0.05, 0.95);
        LikelihoodModel bern{LikelihoodKind::Bernoulli};
        out.push_back(check_gradients(
            "vae.loglik_bernoulli",
            [&](Tape& t) { (void)t; return weighted_sum(log_likelihood(x, x_hat, bern), wb); }, {x_hat}));
        Tensor xg = random_const({b, px}, rng, -1.0, 1.0);
        Tensor xg_hat = random_param({b, px}, rng, -1.0, 1.0);
        LikelihoodModel gauss{LikelihoodKind::Gaussian, 0.35};
        out.push_back(check_gradients(
            "vae.loglik_gaussian",
            [&](Tape& t) { (void)t; return weighted_sum(log_likelihood(xg, xg_hat, gauss), wb); },
            {xg_hat}));
        LikelihoodModel sig{LikelihoodKind::BernoulliSigmoid};
        out.push_back(check_gradients(
            "vae.loglik_bernoulli_sigmoid",
            [&](Tape& t) { (void)t; return weighted_sum(log_likelihood(x, xg_hat, sig), wb); }, {xg_hat}));
    }
    return out;
}

// Miniature end-to-end model: 6x6 images, hidden widths 8/4, 2 content dims.
struct MiniModel {
    StvaeConfig cfg;
    ParamRegistry reg;
    std::vector<StvaeParams> layers;
    Tensor x;  // binary batch
    std::vector<Tensor> noise_pose, noise_content;
};

MiniModel make_mini(int n_layers, std::uint64_t seed) {
    MiniModel m;
    m.cfg.image_h = m.cfg.image_w = 6;
    m.cfg.z_content = 2;
    m.cfg.content_hidden = 8;
    m.cfg.pose_hidden = 4;
    Rng rng(seed);
    for (int i = 0; i < n_layers; ++i) {
        StvaeParams p = make_stvae(m.cfg, rng, m.reg, "layer" + std::to_string(i), true);
        // The identity init zeroes the last pose layer, which would make the
        // pose path vanish from the check; nudge it to a mid-training state.
        for (double& v : p.pose_decoder.weights.back().mutable_value()) v += rng.uniform(-0.05, 0.05);
        for (double& v : p.pose_decoder.biases.back().mutable_value()) v += rng.uniform(-0.05, 0.05);
        m.layers.push_back(std::move(p));
    }
    const i64 batch = 2;
    std::vector<double> xv(static_cast<std::size_t>(batch * 36));
    for (double& v : xv) v = rng.uniform() < 0.35 ? 1.0 : 0.0;
    m.x = Tensor::constant({batch, 36}, std::move(xv));
    for (int i = 0; i < n_layers; ++i) {
        std::vector<double> np(static_cast<std::size_t>(batch * 6)), nc(static_cast<std::size_t>(batch * 2));
        rng.normal_fill(np);
        rng.normal_fill(nc);
        m.noise_pose.push_back(Tensor::constant({batch, 6}, std::move(np)));
        m.noise_content.push_back(Tensor::constant({batch, 2}, std::move(nc)));
    }
    return m;
}

std::vector<Tensor> registry_tensors(const ParamRegistry& reg) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : reg.entries()) out.push_back(t);
    return out;
}

std::vector<GradCheckResult> stvae_suite() {
    std::vector<GradCheckResult> out;
    MiniModel m = make_mini(1, 51);
    out.push_back(check_gradients(
        "stvae.neg_elbo_all_params",
        [&](Tape& t) {
            Tensor x = t.input(m.x.shape(), m.x.value());
            StvaeElbo r = stvae_elbo_step(m.layers[0], x, m.noise_pose[0], m.noise_content[0]);
            return mul(mean(r.elbo), -1.0);
        },
        registry_tensors(m.reg), 1e-5, 1e-3));
    return out;
}

std::vector<GradCheckResult> cstvae_suite() {
    std::vector<GradCheckResult> out;
    MiniModel m = make_mini(2, 52);
    out.push_back(check_gradients(
        "cstvae.neg_elbo_all_params",
        [&](Tape& t) {
            Tensor x = t.input(m.x.shape(), m.x.value());
            CstvaeElbo r = cstvae_elbo_step(m.layers, x, m.noise_pose, m.noise_content);
            return mul(mean(r.elbo), -1.0);
        },
        registry_tensors(m.reg), 1e-5, 1e-3));

    // over / residual / composite as standalone differentiable ops
    Rng rng(53);
    Tensor front = random_param({3, 8}, rng, 0.05, 0.95);
    Tensor back = random_param({3, 8}, rng, 0.05, 0.95);
    Tensor w = random_const({3, 8}, rng, 0.2, 1.0);
    out.push_back(check_gradients(
        "cstvae.over", [&](Tape& t) { (void)t; return weighted_sum(over(front, back), w); }, {front, back}));
    {
        Tensor delta = random_param({3, 8}, rng, 0.0, 1.0);
        Tensor layer = random_param({3, 8}, rng, 0.0, 1.0);
        // stay off the relu kink
        for (std::size_t i = 0; i < delta.mutable_value().size(); ++i) {
            double& dv = delta.mutable_value()[i];
            double& lv = layer.mutable_value()[i];
            if (std::abs(dv - lv) < 1e-3) dv = std::min(1.0, lv + 2e-3);
        }
        out.push_back(check_gradients(
            "cstvae.residual", [&](Tape& t) { (void)t; return weighted_sum(residual(delta, layer), w); },
            {delta, layer}));
    }
    return out;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const std::string& module) {
    std::vector<GradCheckResult> out;
    auto run = [&](const std::string& name, auto fn) {
        if (module == "all" || module == name) {
            auto r = fn();
            out.insert(out.end(), r.begin(), r.end());
        }
    };
    run("tensor", tensor_suite);
    run("stn", stn_suite);
    run("vae", vae_suite);
    run("stvae", stvae_suite);
    run("cstvae", cstvae_suite);
    if (out.empty()) throw ConfigError("run_gradcheck_suite: unknown module '" + module + "'");
    return out;
}

}  // namespace cstvae
