#include "cstvae/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cstvae/errors.hpp"
#include "cstvae/serialize.hpp"

namespace cstvae {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<double> glorot_init(i64 fan_in, i64 fan_out, Rng& rng) {
    if (fan_in <= 0 || fan_out <= 0) throw ContractError("glorot_init: fans must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> out(static_cast<std::size_t>(fan_in * fan_out));
    for (double& v : out) v = rng.uniform(-bound, bound);
    return out;
}

void AdagradState::init_for(const ParamRegistry& reg) {
    accum.clear();
    accum.reserve(reg.size());
    for (const auto& [name, t] : reg.entries()) {
        accum.emplace_back(t.value().size(), 0.0);
    }
}

void adagrad_step(ParamRegistry& reg, AdagradState& st, double weight_decay_rate) {
    if (st.accum.size() != reg.size()) throw ContractError("adagrad_step: state does not match registry");
    std::size_t k = 0;
    for (auto& [name, t] : const_cast<std::vector<std::pair<std::string, Tensor>>&>(reg.entries())) {
        Tensor param = t;
        const std::vector<double>& grad = param.grad();
        std::vector<double>& value = param.mutable_value();
        std::vector<double>& acc = st.accum[k];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i] + weight_decay_rate * value[i];
            if (!std::isfinite(g)) {
                throw DivergenceError("adagrad_step: non-finite gradient in '" + name + "'", name);
            }
            acc[i] += g * g;
            value[i] -= st.learning_rate * g / (std::sqrt(acc[i]) + st.epsilon);
        }
        param.zero_grad();
        ++k;
    }
}

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::Vae:
            return "vae";
        case ModelKind::Stvae:
            return "stvae";
        case ModelKind::Cstvae:
            return "cstvae";
    }
    return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "vae") return ModelKind::Vae;
    if (s == "stvae") return ModelKind::Stvae;
    if (s == "cstvae") return ModelKind::Cstvae;
    throw ConfigError("unknown model kind '" + s + "'");
}

i64 ModelConfig::feature_dim() const {
    return kind == ModelKind::Cstvae ? static_cast<i64>(n_layers) * z_content : z_content;
}

StvaeConfig ModelConfig::layer_config() const {
    StvaeConfig c;
    c.image_h = image_h;
    c.image_w = image_w;
    c.z_content = z_content;
    c.content_hidden = content_hidden;
    c.pose_hidden = pose_hidden;
    c.freeze_pose = freeze_pose;
    c.logvar_clamp = logvar_clamp;
    c.likelihood = likelihood;
    c.analytic_kl = analytic_kl;
    return c;
}

Model::Model(const ModelConfig& cfg, Rng& init_rng) : cfg_(cfg) {
    const StvaeConfig layer_cfg = cfg.layer_config();
    switch (cfg.kind) {
        case ModelKind::Vae:
            layers_.push_back(make_stvae(layer_cfg, init_rng, reg_, "layer0", /*create_pose=*/false));
            break;
        case ModelKind::Stvae:
            layers_.push_back(make_stvae(layer_cfg, init_rng, reg_, "layer0", /*create_pose=*/true));
            break;
        case ModelKind::Cstvae: {
            if (cfg.n_layers < 1) throw ConfigError("Model: cstvae needs at least one layer");
            for (int i = 0; i < cfg.n_layers; ++i) {
                layers_.push_back(make_stvae(layer_cfg, init_rng, reg_, "layer" + std::to_string(i), true));
            }
            break;
        }
    }
}

namespace {

Tensor draw_noise(Rng& rng, i64 batch, i64 dim) {
    std::vector<double> buf(static_cast<std::size_t>(batch * dim));
    rng.normal_fill(buf);
    return Tensor::constant({batch, dim}, std::move(buf));
}

Tensor add_all(const std::vector<Tensor>& terms) {
    Tensor out = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) out = add(out, terms[i]);
    return out;
}

}  // namespace

Model::Output Model::elbo(Tape& tape, const Tensor& x, Rng& rng) const {
    (void)tape;  // x must already be a tape input; noise stays constant
    const i64 batch = x.shape()[0];
    Output out;
    if (cfg_.kind == ModelKind::Cstvae) {
        std::vector<Tensor> noise_pose, noise_content;
        std::vector<Tensor> kl_parts;
        noise_pose.reserve(layers_.size());
        noise_content.reserve(layers_.size());
        for (const StvaeParams& p : layers_) {
            noise_pose.push_back(p.pose_active() ? draw_noise(rng, batch, p.cfg.z_pose) : Tensor());
            noise_content.push_back(draw_noise(rng, batch, p.cfg.z_content));
        }
        CstvaeElbo r = cstvae_elbo_step(layers_, x, noise_pose, noise_content);
        out.elbo = r.elbo;
        out.loglik = r.loglik;
        out.kl_total = add_all(r.kls);
    } else {
        const StvaeParams& p = layers_.front();
        Tensor noise_pose;
        if (p.pose_active()) noise_pose = draw_noise(rng, batch, p.cfg.z_pose);
        Tensor noise_content = draw_noise(rng, batch, p.cfg.z_content);
        StvaeElbo r = stvae_elbo_step(p, x, noise_pose, noise_content);
        out.elbo = r.elbo;
        out.loglik = r.loglik;
        out.kl_total = r.kl_pose.defined() ? add(r.kl_pose, r.kl_content) : r.kl_content;
    }
    return out;
}

std::vector<double> Model::content_means(const LabeledImageSet& set, i64 batch_size) const {
    const i64 dim = cfg_.feature_dim();
    std::vector<double> features(static_cast<std::size_t>(set.n * dim));
    std::vector<i64> idx;
    std::vector<double> chunk;
    for (i64 at = 0; at < set.n; at += batch_size) {
        const i64 b = std::min(batch_size, set.n - at);
        idx.resize(static_cast<std::size_t>(b));
        for (i64 i = 0; i < b; ++i) idx[static_cast<std::size_t>(i)] = at + i;
        set.gather(idx, chunk);
        Tensor x = Tensor::constant({b, set.pixels()}, chunk);
        Tensor delta = x;
        i64 col = 0;
        for (const StvaeParams& p : layers_) {
            Tensor noise_pose = p.pose_active() ? Tensor::zeros({b, p.cfg.z_pose}) : Tensor();
            Tensor noise_content = Tensor::zeros({b, p.cfg.z_content});
            StvaeTrace t = stvae_forward(p, delta, noise_pose, noise_content);
            const std::vector<double>& mu = t.q_content.mu.value();
            for (i64 r = 0; r < b; ++r) {
                double* dst = features.data() + (at + r) * dim + col;
                const double* src = mu.data() + r * p.cfg.z_content;
                std::copy(src, src + p.cfg.z_content, dst);
            }
            col += p.cfg.z_content;
            if (layers_.size() > 1) delta = residual(delta, t.layer);
        }
    }
    return features;
}

// ---- config (de)serialization ----

namespace {

json likelihood_to_json(const LikelihoodModel& m) {
    json j;
    j["kind"] = m.kind == LikelihoodKind::Bernoulli
                    ? "bernoulli"
                    : (m.kind == LikelihoodKind::BernoulliSigmoid ? "bernoulli_sigmoid" : "gaussian");
    j["gaussian_variance"] = m.gaussian_variance;
    j["clamp_eps"] = m.clamp_eps;
    return j;
}

LikelihoodModel likelihood_from_json(const json& j) {
    LikelihoodModel m;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "bernoulli") {
        m.kind = LikelihoodKind::Bernoulli;
    } else if (kind == "bernoulli_sigmoid") {
        m.kind = LikelihoodKind::BernoulliSigmoid;
    } else if (kind == "gaussian") {
        m.kind = LikelihoodKind::Gaussian;
    } else {
        throw ConfigError("unknown likelihood kind '" + kind + "'");
    }
    m.gaussian_variance = j.at("gaussian_variance").get<double>();
    m.clamp_eps = j.at("clamp_eps").get<double>();
    return m;
}

json model_config_to_json(const ModelConfig& m) {
    json j;
    j["kind"] = to_string(m.kind);
    j["image_h"] = m.image_h;
    j["image_w"] = m.image_w;
    j["n_layers"] = m.n_layers;
    j["z_content"] = m.z_content;
    j["content_hidden"] = m.content_hidden;
    j["pose_hidden"] = m.pose_hidden;
    j["freeze_pose"] = m.freeze_pose;
    j["likelihood"] = likelihood_to_json(m.likelihood);
    j["analytic_kl"] = m.analytic_kl;
    j["logvar_clamp"] = m.logvar_clamp;
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig m;
    m.kind = model_kind_from_string(j.at("kind").get<std::string>());
    m.image_h = j.at("image_h").get<i64>();
    m.image_w = j.at("image_w").get<i64>();
    m.n_layers = j.at("n_layers").get<int>();
    m.z_content = j.at("z_content").get<i64>();
    m.content_hidden = j.at("content_hidden").get<i64>();
    m.pose_hidden = j.at("pose_hidden").get<i64>();
    m.freeze_pose = j.at("freeze_pose").get<bool>();
    m.likelihood = likelihood_from_json(j.at("likelihood"));
    m.analytic_kl = j.at("analytic_kl").get<bool>();
    m.logvar_clamp = j.at("logvar_clamp").get<double>();
    return m;
}

json train_config_to_json_obj(const TrainConfig& cfg) {
    json j;
    j["model"] = model_config_to_json(cfg.model);
    j["minibatch"] = cfg.minibatch;
    j["learning_rate"] = cfg.learning_rate;
    j["weight_decay_lambda"] = cfg.weight_decay_lambda;
    j["max_steps"] = cfg.max_steps;
    j["seed"] = cfg.seed;
    j["eval_every"] = cfg.eval_every;
    j["eval_subsample"] = cfg.eval_subsample;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["max_skip_fraction"] = cfg.max_skip_fraction;
    return j;
}

TrainConfig train_config_from_json_obj(const json& j) {
    TrainConfig cfg;
    cfg.model = model_config_from_json(j.at("model"));
    cfg.minibatch = j.at("minibatch").get<i64>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.weight_decay_lambda = j.at("weight_decay_lambda").get<double>();
    cfg.max_steps = j.at("max_steps").get<i64>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.eval_every = j.at("eval_every").get<i64>();
    cfg.eval_subsample = j.at("eval_subsample").get<i64>();
    cfg.checkpoint_every = j.at("checkpoint_every").get<i64>();
    cfg.max_skip_fraction = j.at("max_skip_fraction").get<double>();
    return cfg;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
    return train_config_to_json_obj(cfg).dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    return train_config_from_json_obj(json::parse(text));
}

// ---- checkpoints ----

void save_checkpoint(const std::string& path_prefix, const Model& model, const AdagradState& opt,
                     i64 step, const std::string& rng_state, i64 skips, const TrainConfig& cfg) {
    std::vector<NamedTensor> blobs;
    const auto& entries = model.params().entries();
    for (const auto& [name, t] : entries) {
        blobs.push_back({name, t.shape(), /*f64=*/true, t.value()});
    }
    for (std::size_t k = 0; k < entries.size(); ++k) {
        blobs.push_back({entries[k].first + ".adagrad_acc", entries[k].second.shape(), true, opt.accum[k]});
    }
    const std::string tensors_path = path_prefix + ".tensors";
    write_tensor_container(tensors_path, blobs);

    json j;
    j["format"] = "cstvae-checkpoint";
    j["version"] = 1;
    j["step"] = step;
    j["skips"] = skips;
    j["rng_state"] = rng_state;
    j["config"] = json::parse(train_config_to_json(cfg));
    json params = json::array();
    for (const auto& [name, t] : entries) {
        params.push_back({{"name", name}, {"shape", t.shape()}});
    }
    j["params"] = params;
    j["checksums"] = {{"tensors", crc32_hex(crc32_file(tensors_path))}};
    write_text_file(path_prefix + ".json", j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path_prefix) {
    Checkpoint c;
    const json j = json::parse(read_text_file(path_prefix + ".json"));
    if (j.at("format").get<std::string>() != "cstvae-checkpoint") {
        throw FormatError("not a checkpoint manifest: " + path_prefix + ".json", 0);
    }
    c.config = train_config_from_json(j.at("config").dump());
    c.step = j.at("step").get<i64>();
    c.skips = j.at("skips").get<i64>();
    c.rng_state = j.at("rng_state").get<std::string>();

    Rng init_rng(derive_seed(c.config.seed, 1));
    c.model = std::make_shared<Model>(c.config.model, init_rng);
    c.opt.learning_rate = c.config.learning_rate;
    c.opt.init_for(c.model->params());

    auto blobs = read_tensor_container(path_prefix + ".tensors");
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const NamedTensor& t : blobs) by_name[t.name] = &t;
    const auto& entries = c.model->params().entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& [name, tensor] = entries[k];
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint missing tensor '" + name + "'", 0);
        if (it->second->shape != tensor.shape()) {
            throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second->shape) +
                                  ", expected " + shape_str(tensor.shape()),
                              0);
        }
        const_cast<Tensor&>(tensor).mutable_value() = it->second->data;
        auto acc_it = by_name.find(name + ".adagrad_acc");
        if (acc_it == by_name.end()) throw FormatError("checkpoint missing accumulator for '" + name + "'", 0);
        c.opt.accum[k] = acc_it->second->data;
    }
    return c;
}

// ---- training loop ----

namespace {

struct CsvWriter {
    std::ofstream os;
    explicit CsvWriter(const std::string& path, bool append) {
        os.open(path, append ? std::ios::app : std::ios::trunc);
        if (!os) throw IoError("cannot open metrics file: " + path);
        if (!append) os << "step,split,elbo_per_example,kl_total,loglik,skips\n";
    }
    void row(i64 step, const char* split, double elbo, double kl, double loglik, i64 skips) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%lld,%s,%.17g,%.17g,%.17g,%lld\n",
                      static_cast<long long>(step), split, elbo, kl, loglik,
                      static_cast<long long>(skips));
        os << buf;
    }
};

double mean_of(const Tensor& t) {
    const auto& v = t.value();
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

void drop_rows(std::vector<i64>& idx, const std::vector<i64>& rows) {
    std::vector<bool> dead(idx.size(), false);
    for (i64 r : rows) {
        if (r >= 0 && r < static_cast<i64>(idx.size())) dead[static_cast<std::size_t>(r)] = true;
    }
    std::vector<i64> keep;
    keep.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (!dead[i]) keep.push_back(idx[i]);
    }
    idx.swap(keep);
}

struct EvalStats {
    double elbo = 0.0, kl = 0.0, loglik = 0.0;
};

EvalStats evaluate(const Model& model, const LabeledImageSet& set, const std::vector<i64>& subsample,
                   i64 minibatch, std::uint64_t seed, i64 step) {
    EvalStats st;
    // A per-event RNG keeps evaluation off the training stream, so resumed
    // runs stay bit-identical to uninterrupted ones.
    Rng eval_rng(derive_seed(seed, 0xE7A10000ULL + static_cast<std::uint64_t>(step)));
    double sum_elbo = 0.0, sum_kl = 0.0, sum_ll = 0.0;
    i64 counted = 0;
    std::vector<double> chunk;
    for (std::size_t at = 0; at < subsample.size(); at += static_cast<std::size_t>(minibatch)) {
        const std::size_t hi = std::min(at + static_cast<std::size_t>(minibatch), subsample.size());
        std::vector<i64> idx(subsample.begin() + static_cast<std::ptrdiff_t>(at),
                             subsample.begin() + static_cast<std::ptrdiff_t>(hi));
        while (!idx.empty()) {
            set.gather(idx, chunk);
            Tensor x = Tensor::constant({static_cast<i64>(idx.size()), set.pixels()}, chunk);
            try {
                Tape tape;
                Model::Output out = model.elbo(tape, x, eval_rng);
                for (double v : out.elbo.value()) sum_elbo += v;
                for (double v : out.kl_total.value()) sum_kl += v;
                for (double v : out.loglik.value()) sum_ll += v;
                counted += static_cast<i64>(idx.size());
                break;
            } catch (const SingularTransformError& e) {
                drop_rows(idx, e.rows);
            }
        }
    }
    if (counted > 0) {
        st.elbo = sum_elbo / static_cast<double>(counted);
        st.kl = sum_kl / static_cast<double>(counted);
        st.loglik = sum_ll / static_cast<double>(counted);
    }
    return st;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DatasetBundle& data) {
    if (data.train.n == 0) throw ContractError("train: empty training set");
    if (cfg.model.pixels() != data.train.pixels() || cfg.model.image_h != data.train.h) {
        throw DimensionError("train: model expects " + std::to_string(cfg.model.image_h) + "x" +
                             std::to_string(cfg.model.image_w) + " images, dataset has " +
                             std::to_string(data.train.h) + "x" + std::to_string(data.train.w));
    }
    if (cfg.out_dir.empty()) throw ConfigError("train: out_dir is required");
    fs::create_directories(cfg.out_dir);

    std::shared_ptr<Model> model;
    AdagradState opt;
    opt.learning_rate = cfg.learning_rate;
    Rng run_rng(derive_seed(cfg.seed, 2));
    i64 start_step = 0;
    i64 skips = 0;

    const bool resuming = !cfg.resume_from.empty();
    if (resuming) {
        Checkpoint ck = load_checkpoint(cfg.resume_from);
        model = ck.model;
        opt = std::move(ck.opt);
        opt.learning_rate = cfg.learning_rate;
        start_step = ck.step;
        skips = ck.skips;
        run_rng.set_state(ck.rng_state);
    } else {
        Rng init_rng(derive_seed(cfg.seed, 1));
        model = std::make_shared<Model>(cfg.model, init_rng);
        opt.init_for(model->params());
    }

    const double decay = cfg.weight_decay_lambda >= 0.0
                             ? cfg.weight_decay_lambda
                             : static_cast<double>(cfg.minibatch) / static_cast<double>(data.train.n);

    // Fixed test subsample, drawn once per seed.
    std::vector<i64> test_ids(static_cast<std::size_t>(data.test.n));
    for (i64 i = 0; i < data.test.n; ++i) test_ids[static_cast<std::size_t>(i)] = i;
    {
        Rng pick(derive_seed(cfg.seed, 3));
        const i64 want = std::min<i64>(cfg.eval_subsample, data.test.n);
        for (i64 i = 0; i < want; ++i) {
            const i64 j = i + pick.uniform_int(data.test.n - i);
            std::swap(test_ids[static_cast<std::size_t>(i)], test_ids[static_cast<std::size_t>(j)]);
        }
        test_ids.resize(static_cast<std::size_t>(want));
    }

    TrainResult result;
    result.metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
    CsvWriter csv(result.metrics_path, resuming && fs::exists(result.metrics_path));
    std::string last_checkpoint = resuming ? cfg.resume_from : "";

    std::vector<i64> batch_idx;
    std::vector<double> chunk;
    for (i64 step = start_step; step < cfg.max_steps; ++step) {
        batch_idx.resize(static_cast<std::size_t>(cfg.minibatch));
        for (i64 i = 0; i < cfg.minibatch; ++i) {
            batch_idx[static_cast<std::size_t>(i)] = run_rng.uniform_int(data.train.n);
        }
        bool stepped = false;
        double elbo_m = 0.0, kl_m = 0.0, ll_m = 0.0;
        while (!batch_idx.empty() && !stepped) {
            data.train.gather(batch_idx, chunk);
            Tape tape;
            Tensor x = tape.input({static_cast<i64>(batch_idx.size()), data.train.pixels()}, chunk);
            try {
                Model::Output out = model->elbo(tape, x, run_rng);
                Tensor loss = mul(mean(out.elbo), -1.0);
                if (!std::isfinite(loss.item())) {
                    throw DivergenceError("train: non-finite loss at step " + std::to_string(step), "loss");
                }
                tape.backward(loss);
                adagrad_step(model->params(), opt, decay);
                elbo_m = mean_of(out.elbo);
                kl_m = mean_of(out.kl_total);
                ll_m = mean_of(out.loglik);
                stepped = true;
            } catch (const SingularTransformError& e) {
                skips += static_cast<i64>(e.rows.size());
                drop_rows(batch_idx, e.rows);
            } catch (const DivergenceError& e) {
                std::fprintf(stderr, "train: diverged (%s); last good checkpoint: %s\n", e.what(),
                             last_checkpoint.empty() ? "<none>" : last_checkpoint.c_str());
                throw;
            }
        }
        if (stepped) {
            result.final_train_elbo = elbo_m;
            csv.row(step, "train", elbo_m, kl_m, ll_m, skips);
        }

        const double seen = static_cast<double>((step + 1 - start_step) * cfg.minibatch);
        if (static_cast<double>(skips) > cfg.max_skip_fraction * seen && skips > 10) {
            throw ContractError("train: singular-transform skip rate exceeded " +
                                std::to_string(cfg.max_skip_fraction) + " (" + std::to_string(skips) +
                                " skips)");
        }

        const bool last = step + 1 == cfg.max_steps;
        if (data.test.n > 0 && cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || last)) {
            EvalStats st = evaluate(*model, data.test, test_ids, cfg.minibatch, cfg.seed, step + 1);
            result.final_test_elbo = st.elbo;
            csv.row(step + 1, "test", st.elbo, st.kl, st.loglik, skips);
        }
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && !last) {
            const std::string prefix =
                (fs::path(cfg.out_dir) / ("ckpt_" + std::to_string(step + 1))).string();
            save_checkpoint(prefix, *model, opt, step + 1, run_rng.state(), skips, cfg);
            last_checkpoint = prefix;
        }
    }

    const std::string final_prefix = (fs::path(cfg.out_dir) / "ckpt_final").string();
    save_checkpoint(final_prefix, *model, opt, cfg.max_steps, run_rng.state(), skips, cfg);
    result.checkpoint_path = final_prefix;
    result.steps = cfg.max_steps;
    result.skips = skips;
    return result;
}

}  // namespace cstvae
