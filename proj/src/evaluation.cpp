#include "cstvae/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "cstvae/errors.hpp"

namespace cstvae {

namespace fs = std::filesystem;

std::string to_string(ClassifierInput k) {
    switch (k) {
        case ClassifierInput::LatentMeans:
            return "latent_means";
        case ClassifierInput::RawPixels:
            return "raw_pixels";
        case ClassifierInput::RawPixelsWithStn:
            return "raw_pixels_with_stn";
    }
    return "?";
}

ClassifierInput classifier_input_from_string(const std::string& s) {
    if (s == "latent_means") return ClassifierInput::LatentMeans;
    if (s == "raw_pixels") return ClassifierInput::RawPixels;
    if (s == "raw_pixels_with_stn") return ClassifierInput::RawPixelsWithStn;
    throw ConfigError("unknown classifier input kind '" + s + "'");
}

FeatureMatrix extract_features(const Model& model, const LabeledImageSet& set) {
    FeatureMatrix f;
    f.n = set.n;
    f.dim = model.config().feature_dim();
    f.data = model.content_means(set);
    return f;
}

std::string AccuracyReport::csv_header() { return "model,input_kind,train_acc,test_acc,seed"; }

std::string AccuracyReport::csv_row() const {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%llu", model.c_str(), input_kind.c_str(),
                  train_accuracy, test_accuracy, static_cast<unsigned long long>(seed));
    return buf;
}

namespace {

constexpr i64 kClasses = 10;

// Shared classifier: optional localization net + warp, then a 2-layer ReLU
// trunk with one 10-way softmax head per label.
struct ClassifierNet {
    ParamRegistry reg;
    Mlp locnet;  // STN front end only
    Mlp trunk;
    bool use_stn = false;
    i64 image_h = 0, image_w = 0;
    int labels_per = 1;

    Tensor logits(const Tensor& x) const {
        Tensor h = x;
        if (use_stn) {
            const i64 batch = x.shape()[0];
            Tensor theta = locnet.forward(x);
            Tensor img = reshape(x, {batch, image_h, image_w});
            Tensor warped = stn(img, theta, image_h, image_w);
            h = reshape(warped, {batch, image_h * image_w});
        }
        return trunk.forward(h);
    }
};

ClassifierNet build_classifier(i64 in_dim, int labels_per, const ClassifierConfig& cfg, Rng& rng,
                               i64 image_h, i64 image_w) {
    ClassifierNet net;
    net.labels_per = labels_per;
    net.use_stn = cfg.input == ClassifierInput::RawPixelsWithStn;
    net.image_h = image_h;
    net.image_w = image_w;
    if (net.use_stn) {
        net.locnet = make_mlp({in_dim, {32, 32}, 6, Act::Tanh, Act::None}, rng, net.reg, "locnet");
        Tensor& lw = net.locnet.weights.back();
        std::fill(lw.mutable_value().begin(), lw.mutable_value().end(), 0.0);
        net.locnet.biases.back().mutable_value() = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
    }
    net.trunk = make_mlp({in_dim, {cfg.hidden, cfg.hidden}, labels_per * kClasses, Act::Relu, Act::None},
                         rng, net.reg, "trunk");
    return net;
}

// Per-example labels for each head. With two labels per image, head 0 takes
// the front digit and head 1 the back digit (stored order is back, front).
std::vector<i64> head_labels(const std::vector<std::int32_t>& labels, int labels_per,
                             const std::vector<i64>& idx, int head) {
    std::vector<i64> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const i64 row = idx[i];
        if (labels_per == 1) {
            out[i] = labels[static_cast<std::size_t>(row)];
        } else {
            out[i] = head == 0 ? labels[static_cast<std::size_t>(row * 2 + 1)]
                               : labels[static_cast<std::size_t>(row * 2 + 0)];
        }
    }
    return out;
}

void gather_rows(const std::vector<double>& x, i64 dim, const std::vector<i64>& idx,
                 std::vector<double>& out) {
    out.resize(idx.size() * static_cast<std::size_t>(dim));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* src = x.data() + idx[i] * dim;
        std::copy(src, src + dim, out.data() + i * static_cast<std::size_t>(dim));
    }
}

double accuracy(const ClassifierNet& net, const std::vector<double>& x, i64 n, i64 dim,
                const std::vector<std::int32_t>& labels, int labels_per) {
    i64 correct = 0;
    std::vector<i64> idx;
    std::vector<double> chunk;
    constexpr i64 kBatch = 512;
    for (i64 at = 0; at < n; at += kBatch) {
        const i64 b = std::min(kBatch, n - at);
        idx.resize(static_cast<std::size_t>(b));
        for (i64 i = 0; i < b; ++i) idx[static_cast<std::size_t>(i)] = at + i;
        gather_rows(x, dim, idx, chunk);
        Tensor logits = net.logits(Tensor::constant({b, dim}, chunk));
        const std::vector<double>& lv = logits.value();
        const i64 width = static_cast<i64>(net.labels_per) * kClasses;
        for (i64 i = 0; i < b; ++i) {
            auto argmax = [&](int head) {
                const double* row = lv.data() + i * width + head * kClasses;
                i64 best = 0;
                for (i64 k = 1; k < kClasses; ++k) {
                    if (row[k] > row[best]) best = k;
                }
                return static_cast<std::int32_t>(best);
            };
            if (labels_per == 1) {
                if (argmax(0) == labels[static_cast<std::size_t>(at + i)]) ++correct;
            } else {
                const std::int32_t p0 = argmax(0), p1 = argmax(1);
                const std::int32_t back = labels[static_cast<std::size_t>((at + i) * 2 + 0)];
                const std::int32_t front = labels[static_cast<std::size_t>((at + i) * 2 + 1)];
                // Unordered pair match: both digits must be recovered.
                if ((p0 == front && p1 == back) || (p0 == back && p1 == front)) ++correct;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

AccuracyReport run_classifier(const std::vector<double>& train_x, const std::vector<std::int32_t>& train_labels,
                              const std::vector<double>& test_x, const std::vector<std::int32_t>& test_labels,
                              i64 n_train, i64 n_test, i64 dim, int labels_per, const ClassifierConfig& cfg,
                              i64 image_h, i64 image_w, const std::string& model_tag) {
    Rng rng(derive_seed(cfg.seed, 11));
    ClassifierNet net = build_classifier(dim, labels_per, cfg, rng, image_h, image_w);
    AdagradState opt;
    opt.learning_rate = cfg.learning_rate;
    opt.init_for(net.reg);
    const double decay = cfg.weight_decay_lambda >= 0.0
                             ? cfg.weight_decay_lambda
                             : static_cast<double>(cfg.minibatch) / static_cast<double>(n_train);

    std::vector<i64> order(static_cast<std::size_t>(n_train));
    for (i64 i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;
    std::vector<double> chunk;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (i64 i = n_train - 1; i > 0; --i) {
            const i64 j = rng.uniform_int(i + 1);
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
        for (i64 at = 0; at < n_train; at += cfg.minibatch) {
            const i64 b = std::min<i64>(cfg.minibatch, n_train - at);
            std::vector<i64> idx(order.begin() + at, order.begin() + at + b);
            gather_rows(train_x, dim, idx, chunk);
            Tape tape;
            Tensor x = tape.input({b, dim}, chunk);
            Tensor logits = net.logits(x);
            Tensor loss;
            if (labels_per == 1) {
                loss = mean(softmax_cross_entropy(logits, head_labels(train_labels, 1, idx, 0)));
            } else {
                Tensor ce0 = softmax_cross_entropy(slice_cols(logits, 0, kClasses),
                                                   head_labels(train_labels, 2, idx, 0));
                Tensor ce1 = softmax_cross_entropy(slice_cols(logits, kClasses, 2 * kClasses),
                                                   head_labels(train_labels, 2, idx, 1));
                loss = mean(add(ce0, ce1));
            }
            tape.backward(loss);
            adagrad_step(net.reg, opt, decay);
        }
    }

    AccuracyReport rep;
    rep.model = model_tag;
    rep.input_kind = to_string(cfg.input);
    rep.seed = cfg.seed;
    rep.n_train = n_train;
    rep.n_test = n_test;
    rep.train_accuracy = accuracy(net, train_x, n_train, dim, train_labels, labels_per);
    rep.test_accuracy = accuracy(net, test_x, n_test, dim, test_labels, labels_per);
    return rep;
}

}  // namespace

AccuracyReport train_feature_classifier(const FeatureMatrix& train_x,
                                        const std::vector<std::int32_t>& train_labels,
                                        const FeatureMatrix& test_x,
                                        const std::vector<std::int32_t>& test_labels, int labels_per,
                                        const ClassifierConfig& cfg, const std::string& model_tag) {
    if (train_x.dim != test_x.dim) throw DimensionError("classifier: train/test feature width mismatch");
    if (labels_per != 1 && labels_per != 2) throw ConfigError("classifier: labels_per must be 1 or 2");
    if (static_cast<i64>(train_labels.size()) != train_x.n * labels_per) {
        throw ConfigError("classifier: train label count mismatch");
    }
    std::vector<std::int32_t> distinct(train_labels.begin(), train_labels.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw ConfigError("classifier: degenerate label set");
    return run_classifier(train_x.data, train_labels, test_x.data, test_labels, train_x.n, test_x.n,
                          train_x.dim, labels_per, cfg, 0, 0, model_tag);
}

AccuracyReport train_pixel_classifier(const LabeledImageSet& train, const LabeledImageSet& test,
                                      const ClassifierConfig& cfg) {
    if (cfg.input == ClassifierInput::LatentMeans) {
        throw ConfigError("train_pixel_classifier: use train_feature_classifier for latent means");
    }
    std::vector<double> train_x(train.images.begin(), train.images.end());
    std::vector<double> test_x(test.images.begin(), test.images.end());
    return run_classifier(train_x, train.labels, test_x, test.labels, train.n, test.n, train.pixels(),
                          train.labels_per, cfg, train.h, train.w,
                          cfg.input == ClassifierInput::RawPixels ? "pixels" : "pixels_stn");
}

// ---- rendering ----

RenderMode render_mode_from_string(const std::string& s) {
    if (s == "samples") return RenderMode::Samples;
    if (s == "canonical_and_final") return RenderMode::CanonicalAndFinal;
    if (s == "decomposition") return RenderMode::Decomposition;
    if (s == "class_averages") return RenderMode::ClassAverages;
    throw ConfigError("unknown render mode '" + s + "'");
}

namespace {

GrayImage slice_image(const std::vector<double>& batch_values, i64 row, i64 h, i64 w) {
    std::vector<double> one(batch_values.begin() + row * h * w, batch_values.begin() + (row + 1) * h * w);
    return quantize(one, h, w);
}

std::vector<std::string> write_grid(const std::string& out_dir, const std::string& name,
                                    const std::vector<GrayImage>& tiles, i64 cols) {
    fs::create_directories(out_dir);
    const GrayImage grid = tile_grid(tiles, cols);
    const std::string png = (fs::path(out_dir) / (name + ".png")).string();
    const std::string pgm = (fs::path(out_dir) / (name + ".pgm")).string();
    write_png(png, grid);
    write_pgm(pgm, grid);
    return {png, pgm};
}

}  // namespace

std::vector<std::string> render(const Model& model, RenderMode mode, const std::string& out_dir,
                                std::uint64_t seed, const LabeledImageSet* data,
                                const RenderOptions& opts) {
    const ModelConfig& cfg = model.config();
    const i64 h = cfg.image_h, w = cfg.image_w;
    Rng rng(derive_seed(seed, 21));

    auto sample_layers = [&](i64 count) {
        // One prior draw per layer; layers composite front to back.
        std::vector<StvaeDecode> decodes;
        for (const StvaeParams& p : model.layer_params()) {
            std::vector<double> zc(static_cast<std::size_t>(count * p.cfg.z_content));
            rng.normal_fill(zc);
            Tensor z_content = Tensor::constant({count, p.cfg.z_content}, std::move(zc));
            Tensor z_pose;
            if (p.pose_active()) {
                std::vector<double> zp(static_cast<std::size_t>(count * p.cfg.z_pose));
                rng.normal_fill(zp);
                z_pose = Tensor::constant({count, p.cfg.z_pose}, std::move(zp));
            }
            decodes.push_back(stvae_decode(p, z_content, z_pose));
        }
        return decodes;
    };

    switch (mode) {
        case RenderMode::Samples: {
            auto decodes = sample_layers(opts.count);
            std::vector<Tensor> layers;
            for (const auto& d : decodes) layers.push_back(d.layer);
            Tensor final_img = composite(layers);
            std::vector<GrayImage> tiles;
            for (i64 i = 0; i < opts.count; ++i) tiles.push_back(slice_image(final_img.value(), i, h, w));
            return write_grid(out_dir, "samples", tiles, opts.cols);
        }
        case RenderMode::CanonicalAndFinal: {
            auto decodes = sample_layers(opts.cols);
            std::vector<Tensor> layers;
            for (const auto& d : decodes) layers.push_back(d.layer);
            Tensor final_img = composite(layers);
            std::vector<GrayImage> tiles;
            // One canonical row per layer, then the composited samples.
            for (const auto& d : decodes) {
                for (i64 i = 0; i < opts.cols; ++i) tiles.push_back(slice_image(d.canonical.value(), i, h, w));
            }
            for (i64 i = 0; i < opts.cols; ++i) tiles.push_back(slice_image(final_img.value(), i, h, w));
            return write_grid(out_dir, "canonical_and_final", tiles, opts.cols);
        }
        case RenderMode::Decomposition: {
            if (data == nullptr || data->n == 0) throw ConfigError("render: decomposition needs a dataset");
            const i64 count = std::min<i64>(opts.count, data->n);
            std::vector<i64> idx(static_cast<std::size_t>(count));
            for (i64 i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i;
            std::vector<double> chunk;
            data->gather(idx, chunk);
            Tensor x = Tensor::constant({count, data->pixels()}, chunk);
            Decomposition d = decompose(model.layer_params(), x);
            std::vector<GrayImage> tiles;
            for (i64 i = 0; i < count; ++i) {
                tiles.push_back(slice_image(x.value(), i, h, w));
                tiles.push_back(slice_image(d.reconstruction.value(), i, h, w));
                for (const Tensor& layer : d.layers) tiles.push_back(slice_image(layer.value(), i, h, w));
            }
            const i64 cols = 2 + static_cast<i64>(d.layers.size());
            return write_grid(out_dir, "decomposition", tiles, cols);
        }
        case RenderMode::ClassAverages: {
            if (data == nullptr || data->n == 0) throw ConfigError("render: class averages need a dataset");
            if (data->labels_per != 1) throw ConfigError("render: class averages need single-label data");
            const i64 count = std::min<i64>(data->n, 2000);
            std::vector<i64> idx(static_cast<std::size_t>(count));
            for (i64 i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i;
            std::vector<double> chunk;
            data->gather(idx, chunk);
            Tensor x = Tensor::constant({count, data->pixels()}, chunk);
            // Average the inverse-warped (canonicalized) posterior-mean view
            // per class; pose convergence shows up as sharp averages.
            const StvaeParams& p = model.layer_params().front();
            Tensor noise_pose = p.pose_active() ? Tensor::zeros({count, p.cfg.z_pose}) : Tensor();
            Tensor noise_content = Tensor::zeros({count, p.cfg.z_content});
            StvaeTrace t = stvae_encode(p, x, noise_pose, noise_content);
            const std::vector<double>& canon = t.canonical_estimate.value();
            std::vector<std::vector<double>> sums(10, std::vector<double>(static_cast<std::size_t>(h * w), 0.0));
            std::vector<i64> counts(10, 0);
            for (i64 i = 0; i < count; ++i) {
                const int lab = data->labels[static_cast<std::size_t>(i)];
                if (lab < 0 || lab > 9) continue;
                for (i64 j = 0; j < h * w; ++j) sums[static_cast<std::size_t>(lab)][static_cast<std::size_t>(j)] += canon[i * h * w + j];
                ++counts[static_cast<std::size_t>(lab)];
            }
            std::vector<GrayImage> tiles;
            for (int lab = 0; lab < 10; ++lab) {
                std::vector<double>& s = sums[static_cast<std::size_t>(lab)];
                if (counts[static_cast<std::size_t>(lab)] > 0) {
                    for (double& v : s) v /= static_cast<double>(counts[static_cast<std::size_t>(lab)]);
                }
                tiles.push_back(quantize(s, h, w));
            }
            return write_grid(out_dir, "class_averages", tiles, 5);
        }
    }
    throw ConfigError("render: unknown mode");
}

}  // namespace cstvae
