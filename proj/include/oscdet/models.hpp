#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "oscdet/data.hpp"
#include "oscdet/nn/network.hpp"

namespace oscdet {

enum class Activation { none, relu, softmax };

// One stage of a declarative model: a layer plus its fused activation.
struct LayerSpec {
  nn::LayerKind kind = nn::LayerKind::dense;  // conv1d, dense, maxpool1d, dropout or flatten
  int units = 0;        // conv filters or dense units
  int kernel_size = 0;  // conv1d
  int pool_width = 0;   // maxpool1d
  double rate = 0.0;    // dropout
  Activation activation = Activation::none;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelSpec {
  std::string name;
  int input_len = 30;
  int input_channels = 1;
  std::vector<LayerSpec> layers;
  int n_classes = 2;

  // Primitive network with zeroed parameters; throws ShapeError if the stage
  // chain does not connect or does not end in an n_classes softmax.
  nn::Network instantiate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Conv1D(64,relu) Conv1D(64,relu) MaxPool(2) Dropout(.5) Flatten
// Dense(100,relu) Dropout(.5) Dense(n_classes,softmax)
ModelSpec build_conv1d_spec(int n_classes = 2, int kernel_size = 3);

// Flatten Dense(256,relu) Dropout Dense(64,relu) Dense(2,softmax)
ModelSpec build_dense_spec(double dropout_rate = 0.5);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainingPhase {
  std::string name;  // "train" or "fine_tune"
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t corpus_fingerprint = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  int best_epoch = 0;  // 0 = initialization
  std::vector<EpochRecord> history;
};

struct TrainingMeta {
  std::vector<TrainingPhase> phases;
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double validation_ratio = 0.25;
  std::uint64_t seed = 42;
  int patience = 5;                 // epochs without validation-loss improvement; 0 disables
  double fine_tune_lr_scale = 0.1;  // fine_tune runs at learning_rate * this
  std::function<void(const EpochRecord&)> on_epoch;
};

class TrainedModel {
 public:
  TrainedModel(ModelSpec spec, nn::Network network, TrainingMeta meta = {});

  const ModelSpec& spec() const noexcept { return spec_; }
  const nn::Network& network() const noexcept { return network_; }
  nn::Network& network() noexcept { return network_; }
  const TrainingMeta& meta() const noexcept { return meta_; }
  TrainingMeta& meta() noexcept { return meta_; }
  int n_classes() const noexcept { return spec_.n_classes; }

  // Softmax over classes for one normalized window (inference mode).
  Eigen::VectorXd predict_proba(std::span<const double> window) const;
  Eigen::VectorXd predict_proba(const Window& window) const;

 private:
  ModelSpec spec_;
  nn::Network network_;
  TrainingMeta meta_;
};

// Probability that the window is an oscillation, for either head.
double oscillation_probability(const Eigen::VectorXd& probs, int n_classes);
bool is_oscillation(const Eigen::VectorXd& probs, int n_classes);

// He-uniform for ReLU stages, Glorot-uniform otherwise; zero biases.
TrainedModel initialize_model(const ModelSpec& spec, std::uint64_t seed);

std::uint64_t fingerprint(const LabeledDataset& dataset);

// Splits with cfg.validation_ratio and trains from a fresh initialization.
TrainedModel train(const ModelSpec& spec, const LabeledDataset& dataset, const TrainConfig& cfg);

// Trains from a fresh initialization on an explicit split.
TrainedModel train(const ModelSpec& spec, const LabeledDataset& train_set, const LabeledDataset& val_set,
                   const TrainConfig& cfg);

// Continues optimization of `model` on `extra` at a reduced learning rate.
TrainedModel fine_tune(const TrainedModel& model, const LabeledDataset& extra, const TrainConfig& cfg);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};
Evaluation evaluate(const TrainedModel& model, const LabeledDataset& dataset);

// ---- model files -----------------------------------------------------------
// "OSC1", version byte, u32 descriptor length, JSON descriptor, parameter
// blocks (little-endian f64, layer order, weights then bias), u64 FNV-1a
// checksum of the parameter bytes.

inline constexpr std::uint8_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace oscdet
