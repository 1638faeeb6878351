#pragma once

/**
 * Checkpoints: one JSON document holding the format version, the sequence
 * spec, hyperparameters, vocabulary, every named parameter as a flat
 * row-major float32 array (base64), the run seed and the step counter.
 */

#include <sodium.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "dcdr/engine.hpp"
#include "dcdr/errors.hpp"
#include "dcdr/model.hpp"

namespace dcdr {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  std::size_t output_length = 0;
  ModelConfig model;
  TrainConfig train;
  Vocabulary vocab;
  ModelParams denoiser;
  EvaluatorParams evaluator;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

namespace detail {

inline std::string encode_f32(const Mat& m) {
  std::vector<float> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(static_cast<float>(m(r, c)));
  const auto* bytes = reinterpret_cast<const unsigned char*>(flat.data());
  const std::size_t n = flat.size() * sizeof(float);
  std::string out(sodium_base64_encoded_len(n, sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes, n, sodium_base64_VARIANT_ORIGINAL);
  out.resize(std::strlen(out.c_str()));
  return out;
}

inline Mat decode_f32(const std::string& text, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  const std::size_t count = static_cast<std::size_t>(rows * cols);
  std::vector<float> flat(count);
  std::size_t written = 0;
  if (sodium_base642bin(reinterpret_cast<unsigned char*>(flat.data()), count * sizeof(float), text.data(),
                        text.size(), nullptr, &written, nullptr, sodium_base64_VARIANT_ORIGINAL) != 0 ||
      written != count * sizeof(float))
    throw IntegrityError("checkpoint array '" + name + "' does not decode to " + std::to_string(count) + " floats");
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  return m;
}

inline void put_arrays(nlohmann::json& arrays, std::span<Param* const> params) {
  for (const Param* p : params)
    arrays[p->name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", encode_f32(p->value)}};
}

inline void take_arrays(const nlohmann::json& arrays, std::span<Param* const> params) {
  for (Param* p : params) {
    if (!arrays.contains(p->name)) throw IntegrityError("checkpoint is missing array '" + p->name + "'");
    const auto& a = arrays.at(p->name);
    const auto rows = a.at("rows").get<Eigen::Index>(), cols = a.at("cols").get<Eigen::Index>();
    if (rows != p->value.rows() || cols != p->value.cols())
      throw IntegrityError("checkpoint array '" + p->name + "' has shape " + std::to_string(rows) + "x" +
                           std::to_string(cols) + ", expected " + std::to_string(p->value.rows()) + "x" +
                           std::to_string(p->value.cols()));
    p->value = decode_f32(a.at("data").get<std::string>(), rows, cols, p->name);
    p->zero_grad();
  }
}

inline std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

}  // namespace detail

inline nlohmann::json checkpoint_to_json(Checkpoint& ck) {
  if (sodium_init() < 0) throw Error("libsodium failed to initialise");
  nlohmann::json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["spec"] = {{"output_length", ck.output_length}, {"op", to_string(ck.train.op)}};
  j["hyperparameters"] = {
      {"model",
       {{"dim", ck.model.dim},
        {"hidden", ck.model.hidden},
        {"tau", ck.model.tau},
        {"init_range", ck.model.init_range},
        {"position_scale", ck.model.position_scale}}},
      {"train",
       {{"epochs", ck.train.epochs},
        {"batch_size", ck.train.batch_size},
        {"learning_rate", ck.train.learning_rate},
        {"evaluator_learning_rate", ck.train.evaluator_learning_rate},
        {"optimizer", detail::optimizer_name(ck.train.optimizer)},
        {"beta", ck.train.schedule.beta},
        {"steps", ck.train.schedule.steps},
        {"seed", ck.train.seed}}}};
  j["vocabulary"] = ck.vocab.ids();
  nlohmann::json arrays = nlohmann::json::object();
  detail::put_arrays(arrays, ck.denoiser.params());
  detail::put_arrays(arrays, ck.evaluator.params());
  j["arrays"] = std::move(arrays);
  j["seed"] = ck.seed;
  j["step"] = ck.step;
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (sodium_init() < 0) throw Error("libsodium failed to initialise");
  if (!j.contains("format_version") || !j.at("format_version").is_number_integer())
    throw IntegrityError("checkpoint has no integer format_version");
  const int version = j.at("format_version").get<int>();
  if (version != kCheckpointFormatVersion)
    throw IntegrityError("checkpoint format_version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCheckpointFormatVersion) + ")");
  try {
    Checkpoint ck;
    ck.output_length = j.at("spec").at("output_length").get<std::size_t>();
    const auto& hm = j.at("hyperparameters").at("model");
    ck.model.dim = hm.at("dim").get<std::size_t>();
    ck.model.hidden = hm.at("hidden").get<std::size_t>();
    ck.model.tau = hm.at("tau").get<double>();
    ck.model.init_range = hm.at("init_range").get<double>();
    ck.model.position_scale = hm.at("position_scale").get<double>();
    const auto& ht = j.at("hyperparameters").at("train");
    ck.train.epochs = ht.at("epochs").get<std::size_t>();
    ck.train.batch_size = ht.at("batch_size").get<std::size_t>();
    ck.train.learning_rate = ht.at("learning_rate").get<double>();
    ck.train.evaluator_learning_rate = ht.at("evaluator_learning_rate").get<double>();
    ck.train.optimizer = parse_optimizer(ht.at("optimizer").get<std::string>());
    ck.train.schedule = NoiseSchedule(ht.at("beta").get<double>(), ht.at("steps").get<std::size_t>());
    ck.train.seed = ht.at("seed").get<std::uint64_t>();
    ck.train.op = parse_noise_op(j.at("spec").at("op").get<std::string>());
    ck.vocab = Vocabulary(j.at("vocabulary").get<std::vector<ItemId>>());
    Rng scratch(0);
    ck.denoiser = ModelParams(ck.vocab.table_rows(), ck.model, scratch);
    ck.evaluator = EvaluatorParams(ck.vocab.table_rows(), ck.model, scratch);
    detail::take_arrays(j.at("arrays"), ck.denoiser.params());
    detail::take_arrays(j.at("arrays"), ck.evaluator.params());
    ck.seed = j.at("seed").get<std::uint64_t>();
    ck.step = j.at("step").get<std::uint64_t>();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(ck).dump(1) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what(), 1);
  }
  return checkpoint_from_json(j);
}

}  // namespace dcdr
