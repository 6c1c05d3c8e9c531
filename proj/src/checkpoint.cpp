#include "byols/checkpoint.hpp"

#include "byols/binary_io.hpp"
#include "byols/error.hpp"

namespace byols::ckpt {

const nn::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode(const Checkpoint& c) {
  io::ByteWriter w;
  w.magic("BYCK");
  w.put<std::uint32_t>(kVersion);
  w.str(c.meta.dump());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    w.str(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (nn::Index d : t.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (nn::Index i = 0; i < t.size(); ++i) w.put<float>(static_cast<float>(t.data(i)));
  }
  const std::uint64_t h = io::fnv1a(w.buffer());
  w.put<std::uint64_t>(h);
  return w.take();
}

Checkpoint decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) fail(ErrorCode::kIntegrity, "checkpoint integrity: file truncated");
  const auto body = bytes.first(bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  if (io::fnv1a(body) != stored) fail(ErrorCode::kIntegrity, "checkpoint integrity: content hash mismatch");

  io::ByteReader r(body);
  r.expect_magic("BYCK");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    fail(ErrorCode::kFormat, "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                 std::to_string(kVersion) + ")");
  }
  Checkpoint c;
  try {
    c.meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("checkpoint metadata: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.str();
    const auto rank = r.get<std::uint32_t>();
    nn::Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    nn::Tensor t(shape);
    for (nn::Index i = 0; i < t.size(); ++i) t.data(i) = r.get<float>();
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) fail(ErrorCode::kFormat, "trailing bytes in checkpoint");
  return c;
}

void save(const Checkpoint& c, const std::filesystem::path& path) { io::write_file_atomic(path, encode(c)); }

Checkpoint load(const std::filesystem::path& path) { return decode(io::read_file(path)); }

nlohmann::json to_json(const encoders::EncoderConfig& c) {
  return {{"arch", encoders::arch_name(c.arch)},
          {"width_multiplier", c.width_multiplier},
          {"seed", c.seed},
          {"dropout", c.dropout}};
}

encoders::EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  encoders::EncoderConfig c;
  c.arch = encoders::parse_arch(j.at("arch").get<std::string>());
  c.width_multiplier = j.at("width_multiplier").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

nlohmann::json to_json(const train::HeadConfig& h) {
  return {{"projector_hidden", h.projector_hidden},
          {"projector_out", h.projector_out},
          {"predictor_hidden", h.predictor_hidden}};
}

train::HeadConfig head_config_from_json(const nlohmann::json& j) {
  train::HeadConfig h;
  h.projector_hidden = j.at("projector_hidden").get<nn::Index>();
  h.projector_out = j.at("projector_out").get<nn::Index>();
  h.predictor_hidden = j.at("predictor_hidden").get<nn::Index>();
  return h;
}

nlohmann::json to_json(const train::TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"hybrid", c.hybrid},
          {"alpha", c.weights.alpha},
          {"beta", c.weights.beta},
          {"symmetrize", c.symmetrize},
          {"normalized_mse", c.normalized_mse},
          {"sup_on_projector", c.sup_on_projector},
          {"ema_decay", c.ema_decay},
          {"seed", c.seed}};
}

train::TrainConfig train_config_from_json(const nlohmann::json& j) {
  train::TrainConfig c;
  c.batch_size = j.at("batch_size").get<nn::Index>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.hybrid = j.at("hybrid").get<bool>();
  c.weights.alpha = j.at("alpha").get<double>();
  c.weights.beta = j.at("beta").get<double>();
  c.symmetrize = j.at("symmetrize").get<bool>();
  c.normalized_mse = j.at("normalized_mse").get<bool>();
  c.sup_on_projector = j.at("sup_on_projector").get<bool>();
  c.ema_decay = j.at("ema_decay").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

namespace {

void add_store(Checkpoint& c, const std::string& prefix, const nn::ParameterStore& s) {
  for (const auto* p : s.all()) c.tensors.emplace_back(prefix + p->name, p->value);
}

void restore_store(const Checkpoint& c, const std::string& prefix, nn::ParameterStore& s) {
  for (auto* p : s.all()) {
    const nn::Tensor* t = c.find(prefix + p->name);
    if (t == nullptr) fail(ErrorCode::kFormat, "checkpoint lacks tensor " + prefix + p->name);
    if (t->shape != p->value.shape) {
      fail(ErrorCode::kFormat, "checkpoint tensor " + prefix + p->name + " has shape " + nn::shape_string(t->shape) +
                                   ", expected " + nn::shape_string(p->value.shape));
    }
    p->value.data = t->data;
  }
}

nlohmann::json stats_json(const audio::NormalizationStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

audio::NormalizationStats stats_from(const nlohmann::json& j) {
  return audio::NormalizationStats{j.at("mean").get<double>(), j.at("std").get<double>()};
}

template <typename F>
auto meta_field(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("checkpoint metadata (") + what + "): " + e.what());
  }
}

}  // namespace

Checkpoint from_trainer(train::TrainerState& state, const audio::NormalizationStats& stats,
                        const nlohmann::json& extra) {
  Checkpoint c;
  c.meta = extra;
  c.meta["kind"] = "trainer";
  c.meta["encoder"] = to_json(state.online_encoder().config());
  c.meta["heads"] = to_json(state.heads());
  c.meta["trainer"] = to_json(state.config());
  c.meta["stats"] = stats_json(stats);
  c.meta["step"] = state.step;
  c.meta["epoch"] = state.epoch;
  c.meta["adam_steps"] = state.optimizer().steps();
  add_store(c, "encoder.", state.online_encoder().store());
  add_store(c, "projector.", state.projector_store());
  add_store(c, "predictor.", state.predictor_store());
  add_store(c, "target.encoder.", state.target_encoder().store());
  add_store(c, "target.projector.", state.target_projector_store());
  const auto& m = state.optimizer().first_moments();
  const auto& v = state.optimizer().second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) {
    c.tensors.emplace_back("adam.m." + std::to_string(i), m[i]);
    c.tensors.emplace_back("adam.v." + std::to_string(i), v[i]);
  }
  return c;
}

Checkpoint from_encoder(const encoders::Encoder& enc, const audio::NormalizationStats& stats) {
  Checkpoint c;
  c.meta["kind"] = "encoder";
  c.meta["encoder"] = to_json(enc.config());
  c.meta["stats"] = stats_json(stats);
  add_store(c, "encoder.", enc.store());
  return c;
}

std::unique_ptr<train::TrainerState> to_trainer(const Checkpoint& c) {
  if (c.meta.value("kind", "") != "trainer") fail(ErrorCode::kFormat, "not a trainer checkpoint");
  auto state = meta_field("trainer", [&] {
    return std::make_unique<train::TrainerState>(encoder_config_from_json(c.meta.at("encoder")),
                                                 head_config_from_json(c.meta.at("heads")),
                                                 train_config_from_json(c.meta.at("trainer")));
  });
  restore_store(c, "encoder.", state->online_encoder().store());
  restore_store(c, "projector.", state->projector_store());
  restore_store(c, "predictor.", state->predictor_store());
  restore_store(c, "target.encoder.", state->target_encoder().store());
  restore_store(c, "target.projector.", state->target_projector_store());
  auto& m = state->optimizer().first_moments();
  auto& v = state->optimizer().second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) {
    const nn::Tensor* tm = c.find("adam.m." + std::to_string(i));
    const nn::Tensor* tv = c.find("adam.v." + std::to_string(i));
    if (!tm || !tv || tm->shape != m[i].shape || tv->shape != v[i].shape) {
      fail(ErrorCode::kFormat, "checkpoint optimizer state does not match the model");
    }
    m[i] = *tm;
    v[i] = *tv;
  }
  meta_field("counters", [&] {
    state->step = c.meta.at("step").get<long long>();
    state->epoch = c.meta.at("epoch").get<int>();
    state->optimizer().set_steps(c.meta.at("adam_steps").get<long long>());
    return 0;
  });
  return state;
}

LoadedEncoder to_encoder(const Checkpoint& c) {
  LoadedEncoder out;
  out.meta = c.meta;
  meta_field("encoder", [&] {
    out.encoder = encoders::make_encoder(encoder_config_from_json(c.meta.at("encoder")));
    out.stats = stats_from(c.meta.at("stats"));
    return 0;
  });
  restore_store(c, "encoder.", out.encoder->store());
  return out;
}

LoadedEncoder load_encoder(const std::filesystem::path& path) { return to_encoder(load(path)); }

}  // namespace byols::ckpt
