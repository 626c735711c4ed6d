#pragma once

#include <string>
#include <vector>

#include "cstvae/image_io.hpp"
#include "cstvae/training.hpp"

namespace cstvae {

enum class ClassifierInput { LatentMeans, RawPixels, RawPixelsWithStn };
std::string to_string(ClassifierInput k);
ClassifierInput classifier_input_from_string(const std::string& s);

struct ClassifierConfig {
    ClassifierInput input = ClassifierInput::LatentMeans;
    i64 hidden = 32;  // 256 for the layered-model evaluation
    int epochs = 30;
    i64 minibatch = 100;
    double learning_rate = 0.01;
    double weight_decay_lambda = -1.0;  // <0: minibatch / train size
    std::uint64_t seed = 0;
};

struct FeatureMatrix {
    i64 n = 0, dim = 0;
    std::vector<double> data;  // row-major
};

// Posterior content means from a frozen model; never backpropagates into it.
FeatureMatrix extract_features(const Model& model, const LabeledImageSet& set);

struct AccuracyReport {
    std::string model;
    std::string input_kind;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    i64 n_train = 0, n_test = 0;
    std::uint64_t seed = 0;

    static std::string csv_header();  // model,input_kind,train_acc,test_acc,seed
    std::string csv_row() const;
};

// Two-layer ReLU MLP with softmax cross-entropy, trained with the same
// Adagrad settings as the generative models. Two-label sets get two softmax
// heads; a prediction counts only when both digits match, in either order.
AccuracyReport train_feature_classifier(const FeatureMatrix& train_x,
                                        const std::vector<std::int32_t>& train_labels,
                                        const FeatureMatrix& test_x,
                                        const std::vector<std::int32_t>& test_labels, int labels_per,
                                        const ClassifierConfig& cfg, const std::string& model_tag);

// Raw-pixel baselines; RawPixelsWithStn adds a learned localization network
// and a differentiable warp in front of the same trunk.
AccuracyReport train_pixel_classifier(const LabeledImageSet& train, const LabeledImageSet& test,
                                      const ClassifierConfig& cfg);

enum class RenderMode { Samples, CanonicalAndFinal, Decomposition, ClassAverages };
RenderMode render_mode_from_string(const std::string& s);

struct RenderOptions {
    i64 count = 64;
    i64 cols = 8;
};

// Writes PNG and PGM grids into out_dir; data is required for the
// decomposition and class-average modes. Returns the written paths.
std::vector<std::string> render(const Model& model, RenderMode mode, const std::string& out_dir,
                                std::uint64_t seed, const LabeledImageSet* data,
                                const RenderOptions& opts = {});

}  // namespace cstvae
