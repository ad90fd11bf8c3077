#include "oscdet/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "oscdet/error.hpp"
#include "oscdet/nn/adam.hpp"
#include "oscdet/rng.hpp"

namespace oscdet {

using nn::LayerKind;
using nn::LayerParams;
using nn::Tensor;

nn::Network ModelSpec::instantiate() const {
  if (input_len < 1 || input_channels < 1) throw ShapeError("model input extents must be positive");
  if (n_classes < 2) throw ShapeError("model needs at least two classes");
  std::vector<LayerParams> prims;
  nn::Shape shape{input_len, input_channels};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& s = layers[i];
    auto stage = [&](const std::string& why) {
      return ShapeError(name + " stage " + std::to_string(i) + " (" + std::string(nn::to_string(s.kind)) + "): " + why);
    };
    switch (s.kind) {
      case LayerKind::conv1d:
        if (shape.size() != 2) throw stage("needs a sequence input");
        if (s.units < 1 || s.kernel_size < 1) throw stage("bad filters/kernel size");
        prims.push_back(LayerParams::conv1d(s.kernel_size, shape[1], s.units));
        break;
      case LayerKind::dense:
        if (shape.size() != 1) throw stage("needs a flat input");
        if (s.units < 1) throw stage("bad unit count");
        prims.push_back(LayerParams::dense(shape[0], s.units));
        break;
      case LayerKind::maxpool1d: prims.push_back(LayerParams::maxpool1d(s.pool_width)); break;
      case LayerKind::dropout: prims.push_back(LayerParams::dropout(s.rate)); break;
      case LayerKind::flatten: prims.push_back(LayerParams::flatten()); break;
      default: throw stage("not a stage kind");
    }
    if (s.activation == Activation::relu) prims.push_back(LayerParams::relu());
    if (s.activation == Activation::softmax) prims.push_back(LayerParams::softmax());
    nn::Shape next = shape;
    switch (s.kind) {
      case LayerKind::conv1d:
        if (shape[0] < s.kernel_size) throw stage("sequence shorter than kernel");
        next = {shape[0] - s.kernel_size + 1, s.units};
        break;
      case LayerKind::dense: next = {s.units}; break;
      case LayerKind::maxpool1d:
        if (shape.size() != 2 || s.pool_width < 1 || shape[0] / s.pool_width < 1) throw stage("bad pool width");
        next = {shape[0] / s.pool_width, shape[1]};
        break;
      case LayerKind::flatten: next = {nn::shape_size(shape)}; break;
      default: break;
    }
    shape = next;
  }
  if (layers.empty() || layers.back().activation != Activation::softmax)
    throw ShapeError(name + ": final stage must use softmax");
  if (shape.size() != 1 || shape[0] != n_classes)
    throw ShapeError(name + ": final stage emits " + nn::shape_string(shape) + ", expected " +
                     std::to_string(n_classes) + " classes");
  return nn::Network({input_len, input_channels}, std::move(prims));
}

ModelSpec build_conv1d_spec(int n_classes, int kernel_size) {
  if (n_classes != 2 && n_classes != 16)
    throw ConfigError("unsupported class count " + std::to_string(n_classes) + " (expected 2 or 16)");
  ModelSpec spec;
  spec.name = n_classes == 2 ? "conv1d" : "conv1d-16";
  spec.n_classes = n_classes;
  spec.layers = {
      {LayerKind::conv1d, 64, kernel_size, 0, 0.0, Activation::relu},
      {LayerKind::conv1d, 64, kernel_size, 0, 0.0, Activation::relu},
      {LayerKind::maxpool1d, 0, 0, 2, 0.0, Activation::none},
      {LayerKind::dropout, 0, 0, 0, 0.5, Activation::none},
      {LayerKind::flatten, 0, 0, 0, 0.0, Activation::none},
      {LayerKind::dense, 100, 0, 0, 0.0, Activation::relu},
      {LayerKind::dropout, 0, 0, 0, 0.5, Activation::none},
      {LayerKind::dense, n_classes, 0, 0, 0.0, Activation::softmax},
  };
  return spec;
}

ModelSpec build_dense_spec(double dropout_rate) {
  ModelSpec spec;
  spec.name = "dense";
  spec.n_classes = 2;
  spec.layers = {
      {LayerKind::flatten, 0, 0, 0, 0.0, Activation::none},
      {LayerKind::dense, 256, 0, 0, 0.0, Activation::relu},
      {LayerKind::dropout, 0, 0, 0, dropout_rate, Activation::none},
      {LayerKind::dense, 64, 0, 0, 0.0, Activation::relu},
      {LayerKind::dense, 2, 0, 0, 0.0, Activation::softmax},
  };
  return spec;
}

TrainedModel::TrainedModel(ModelSpec spec, nn::Network network, TrainingMeta meta)
    : spec_(std::move(spec)), network_(std::move(network)), meta_(std::move(meta)) {
  const auto reference = spec_.instantiate();
  const auto& a = reference.layers();
  const auto& b = network_.layers();
  bool ok = a.size() == b.size() && reference.input_shape() == network_.input_shape();
  for (std::size_t i = 0; ok && i < a.size(); ++i)
    ok = a[i].kind == b[i].kind && a[i].weights.shape() == b[i].weights.shape() &&
         a[i].bias.shape() == b[i].bias.shape();
  if (!ok) throw ShapeError("network parameters do not match model spec '" + spec_.name + "'");
  for (const auto& l : b)
    if (l.has_parameters() && (!l.weights.all_finite() || !l.bias.all_finite()))
      throw NumericError("model '" + spec_.name + "' has non-finite parameters");
}

Eigen::VectorXd TrainedModel::predict_proba(std::span<const double> window) const {
  if (static_cast<int>(window.size()) != spec_.input_len * spec_.input_channels)
    throw ShapeError("model expects windows of " + std::to_string(spec_.input_len) + " samples, got " +
                     std::to_string(window.size()));
  Tensor x({spec_.input_len, spec_.input_channels},
           Eigen::Map<const Eigen::VectorXd>(window.data(), static_cast<Eigen::Index>(window.size())));
  return network_.predict(x).vec();
}

Eigen::VectorXd TrainedModel::predict_proba(const Window& window) const {
  return predict_proba(std::span<const double>(window.samples.data(), static_cast<std::size_t>(window.samples.size())));
}

double oscillation_probability(const Eigen::VectorXd& probs, int n_classes) {
  return n_classes == 2 ? probs[kOscillationClass] : 1.0 - probs[0];
}

bool is_oscillation(const Eigen::VectorXd& probs, int n_classes) {
  Eigen::Index best;
  probs.maxCoeff(&best);
  return n_classes == 2 ? best == kOscillationClass : best != 0;
}

TrainedModel initialize_model(const ModelSpec& spec, std::uint64_t seed) {
  nn::Network net = spec.instantiate();
  Rng rng = make_rng(seed, {0x696e6974});
  auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    if (!l.has_parameters()) continue;
    const bool relu_next = i + 1 < layers.size() && layers[i + 1].kind == LayerKind::relu;
    const double fan_in = static_cast<double>(l.weights.size() / l.weights.shape().back());
    const double fan_out = static_cast<double>(l.weights.shape().back());
    const double limit = relu_next ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index j = 0; j < l.weights.size(); ++j) l.weights[j] = u(rng);
    l.bias.set_zero();
  }
  return TrainedModel(spec, std::move(net));
}

std::uint64_t fingerprint(const LabeledDataset& dataset) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
  };
  for (const auto& w : dataset.windows) {
    feed(w.samples.data(), static_cast<std::size_t>(w.samples.size()) * sizeof(double));
    const int label[2] = {w.label ? static_cast<int>(w.label->cls) : -1, w.label ? w.label->frequency_class : -1};
    feed(label, sizeof label);
  }
  return h;
}

namespace {

struct Sample {
  Tensor input;
  nn::Index target;
};

std::vector<Sample> to_samples(const ModelSpec& spec, const LabeledDataset& ds) {
  std::vector<Sample> out;
  out.reserve(ds.windows.size());
  for (const auto& w : ds.windows) {
    if (w.samples.size() != spec.input_len * spec.input_channels)
      throw ShapeError("window of " + std::to_string(w.samples.size()) + " samples does not match model input " +
                       std::to_string(spec.input_len));
    if (!w.label) throw DataError("training window without a label");
    out.push_back({Tensor({spec.input_len, spec.input_channels}, w.samples), class_index(*w.label, spec.n_classes)});
  }
  return out;
}

Evaluation evaluate_samples(const nn::Network& net, const std::vector<Sample>& samples) {
  Evaluation ev;
  if (samples.empty()) return ev;
  nn::ForwardTrace trace;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    net.forward(s.input, nn::Mode::infer, nullptr, trace);
    ev.loss += nn::cross_entropy(trace.output(), s.target);
    Eigen::Index best;
    trace.output().vec().maxCoeff(&best);
    correct += best == s.target;
  }
  ev.loss /= static_cast<double>(samples.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return ev;
}

TrainingPhase run_phase(nn::Network& net, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                        double learning_rate, const TrainConfig& cfg, std::uint64_t phase_tag) {
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");

  TrainingPhase phase;
  phase.learning_rate = learning_rate;
  phase.seed = cfg.seed;
  phase.n_train = train_set.size();
  phase.n_val = val_set.size();

  nn::AdamState adam = nn::AdamState::for_network(net);
  const nn::AdamConfig adam_cfg{learning_rate};
  nn::GradientSet grads = net.zero_gradients();
  nn::ForwardTrace trace;

  const bool validate = !val_set.empty();
  double best_loss = validate ? evaluate_samples(net, val_set).loss : 0.0;
  auto best_layers = net.layers();
  int since_best = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng = make_rng(cfg.seed, {phase_tag, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      nn::set_zero(grads);
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = train_set[order[k]];
        Rng dropout_rng = make_rng(cfg.seed, {phase_tag, static_cast<std::uint64_t>(epoch), k});
        net.forward(s.input, nn::Mode::train, &dropout_rng, trace);
        loss_sum += net.backward(trace, s.target, grads);
        Eigen::Index best;
        trace.output().vec().maxCoeff(&best);
        correct += best == s.target;
      }
      if (!std::isfinite(loss_sum))
        throw NumericError("training diverged (non-finite loss) in epoch " + std::to_string(epoch));
      nn::scale(grads, 1.0 / static_cast<double>(end - start));
      nn::adam_step(net, grads, adam, adam_cfg);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    rec.train_accuracy = order.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(order.size());
    if (validate) {
      const auto ev = evaluate_samples(net, val_set);
      rec.val_loss = ev.loss;
      rec.val_accuracy = ev.accuracy;
    }
    phase.history.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);

    if (!validate) {
      phase.best_epoch = epoch;
      continue;
    }
    if (rec.val_loss < best_loss) {
      best_loss = rec.val_loss;
      best_layers = net.layers();
      phase.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  if (validate) net.layers() = std::move(best_layers);
  return phase;
}

void require_two_classes(const LabeledDataset& ds, int n_classes) {
  if (ds.class_counts(n_classes).size() < 2)
    throw DataError("training data contains a single class; refusing to train");
}

}  // namespace

TrainedModel train(const ModelSpec& spec, const LabeledDataset& dataset, const TrainConfig& cfg) {
  require_two_classes(dataset, spec.n_classes);
  auto [train_set, val_set] = split_train_val(dataset, cfg.validation_ratio, cfg.seed);
  return train(spec, train_set, val_set, cfg);
}

TrainedModel train(const ModelSpec& spec, const LabeledDataset& train_set, const LabeledDataset& val_set,
                   const TrainConfig& cfg) {
  require_two_classes(train_set, spec.n_classes);
  TrainedModel model = initialize_model(spec, cfg.seed);
  const auto train_samples = to_samples(spec, train_set);
  const auto val_samples = to_samples(spec, val_set);
  TrainingPhase phase = run_phase(model.network(), train_samples, val_samples, cfg.learning_rate, cfg, 1);
  phase.name = "train";
  phase.corpus_fingerprint = fingerprint(train_set);
  model.meta().phases.push_back(std::move(phase));
  return model;
}

TrainedModel fine_tune(const TrainedModel& model, const LabeledDataset& extra, const TrainConfig& cfg) {
  if (extra.windows.empty()) throw DataError("fine-tune dataset is empty");
  LabeledDataset train_set, val_set;
  try {
    std::tie(train_set, val_set) = split_train_val(extra, cfg.validation_ratio, cfg.seed);
  } catch (const DataError&) {
    train_set = extra;  // too small to hold out a validation split
  }
  TrainedModel tuned = model;
  const auto train_samples = to_samples(model.spec(), train_set);
  const auto val_samples = to_samples(model.spec(), val_set);
  TrainingPhase phase = run_phase(tuned.network(), train_samples, val_samples,
                                  cfg.learning_rate * cfg.fine_tune_lr_scale, cfg, 2);
  phase.name = "fine_tune";
  phase.corpus_fingerprint = fingerprint(extra);
  tuned.meta().phases.push_back(std::move(phase));
  return tuned;
}

Evaluation evaluate(const TrainedModel& model, const LabeledDataset& dataset) {
  return evaluate_samples(model.network(), to_samples(model.spec(), dataset));
}

}  // namespace oscdet
