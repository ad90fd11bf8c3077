#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "oscdet/error.hpp"
#include "oscdet/models.hpp"

namespace oscdet {

namespace {

using json = nlohmann::json;
using Kind = FormatError::Kind;

constexpr std::uint8_t kMagic[4] = {'O', 'S', 'C', '1'};

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
    default: return "none";
  }
}

Activation activation_from(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "softmax") return Activation::softmax;
  if (s == "none") return Activation::none;
  throw FormatError(Kind::descriptor, "unknown activation '" + s + "'");
}

json to_json(const ModelSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers)
    layers.push_back({{"kind", nn::to_string(l.kind)},
                      {"units", l.units},
                      {"kernel_size", l.kernel_size},
                      {"pool_width", l.pool_width},
                      {"rate", l.rate},
                      {"activation", activation_name(l.activation)}});
  return {{"name", spec.name},
          {"input_len", spec.input_len},
          {"input_channels", spec.input_channels},
          {"n_classes", spec.n_classes},
          {"layers", layers}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.input_len = j.at("input_len").get<int>();
  spec.input_channels = j.at("input_channels").get<int>();
  spec.n_classes = j.at("n_classes").get<int>();
  for (const auto& l : j.at("layers")) {
    LayerSpec s;
    s.kind = nn::layer_kind_from_string(l.at("kind").get<std::string>());
    s.units = l.at("units").get<int>();
    s.kernel_size = l.at("kernel_size").get<int>();
    s.pool_width = l.at("pool_width").get<int>();
    s.rate = l.at("rate").get<double>();
    s.activation = activation_from(l.at("activation").get<std::string>());
    spec.layers.push_back(s);
  }
  return spec;
}

json to_json(const TrainingMeta& meta) {
  json phases = json::array();
  for (const auto& p : meta.phases) {
    json history = json::array();
    for (const auto& e : p.history)
      history.push_back({{"epoch", e.epoch},
                         {"train_loss", e.train_loss},
                         {"train_accuracy", e.train_accuracy},
                         {"val_loss", e.val_loss},
                         {"val_accuracy", e.val_accuracy}});
    phases.push_back({{"name", p.name},
                      {"learning_rate", p.learning_rate},
                      {"seed", p.seed},
                      {"corpus_fingerprint", p.corpus_fingerprint},
                      {"n_train", p.n_train},
                      {"n_val", p.n_val},
                      {"best_epoch", p.best_epoch},
                      {"history", history}});
  }
  return {{"phases", phases}};
}

TrainingMeta meta_from_json(const json& j) {
  TrainingMeta meta;
  for (const auto& p : j.at("phases")) {
    TrainingPhase phase;
    phase.name = p.at("name").get<std::string>();
    phase.learning_rate = p.at("learning_rate").get<double>();
    phase.seed = p.at("seed").get<std::uint64_t>();
    phase.corpus_fingerprint = p.at("corpus_fingerprint").get<std::uint64_t>();
    phase.n_train = p.at("n_train").get<std::size_t>();
    phase.n_val = p.at("n_val").get<std::size_t>();
    phase.best_epoch = p.at("best_epoch").get<int>();
    for (const auto& e : p.at("history"))
      phase.history.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                               e.at("train_accuracy").get<double>(), e.at("val_loss").get<double>(),
                               e.at("val_accuracy").get<double>()});
    meta.phases.push_back(std::move(phase));
  }
  return meta;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
  return h;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const TrainedModel& model) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kModelFormatVersion);
  const std::string descriptor = json{{"spec", to_json(model.spec())}, {"meta", to_json(model.meta())}}.dump();
  const auto len = static_cast<std::uint32_t>(descriptor.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), descriptor.begin(), descriptor.end());

  const std::size_t params_begin = out.size();
  for (const auto& l : model.network().layers()) {
    if (!l.has_parameters()) continue;
    for (const nn::Tensor* t : {&l.weights, &l.bias})
      for (Eigen::Index i = 0; i < t->size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>((*t)[i]));
  }
  put_u64(out, fnv1a(out.data() + params_begin, out.size() - params_begin));
  return out;
}

TrainedModel deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError(Kind::bad_magic, "not a model file (bad magic)");
  if (bytes.size() < 5) throw FormatError(Kind::truncated, "model file truncated in header");
  if (bytes[4] != kModelFormatVersion)
    throw FormatError(Kind::unsupported_version, "unsupported model format version " + std::to_string(bytes[4]) +
                                                     " (this build reads version " +
                                                     std::to_string(kModelFormatVersion) + ")");
  if (bytes.size() < 9) throw FormatError(Kind::truncated, "model file truncated in header");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[5 + i]) << (8 * i);
  std::size_t pos = 9;
  if (bytes.size() < pos + len) throw FormatError(Kind::truncated, "model file truncated in descriptor");

  ModelSpec spec;
  TrainingMeta meta;
  nn::Network net;
  try {
    const json j = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                               bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
    spec = spec_from_json(j.at("spec"));
    meta = meta_from_json(j.at("meta"));
    net = spec.instantiate();
  } catch (const json::exception& e) {
    throw FormatError(Kind::descriptor, std::string("bad model descriptor: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(Kind::descriptor, std::string("inconsistent model descriptor: ") + e.what());
  }
  pos += len;

  const std::size_t needed = static_cast<std::size_t>(net.parameter_count()) * 8;
  if (bytes.size() < pos + needed + 8)
    throw FormatError(Kind::truncated, "model file truncated: expected " + std::to_string(pos + needed + 8) +
                                           " bytes, found " + std::to_string(bytes.size()));
  if (bytes.size() > pos + needed + 8) throw FormatError(Kind::descriptor, "trailing bytes after model checksum");
  if (get_u64(bytes.data() + pos + needed) != fnv1a(bytes.data() + pos, needed))
    throw FormatError(Kind::checksum, "model parameter checksum mismatch");

  for (auto& l : net.layers()) {
    if (!l.has_parameters()) continue;
    for (nn::Tensor* t : {&l.weights, &l.bias})
      for (Eigen::Index i = 0; i < t->size(); ++i, pos += 8) (*t)[i] = std::bit_cast<double>(get_u64(&bytes[pos]));
  }
  return TrainedModel(std::move(spec), std::move(net), std::move(meta));
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(Kind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(Kind::io, "failed writing " + path.string());
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(Kind::io, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace oscdet
