#include "dvtk/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "dvtk/io.hpp"

DVTK_NAMESPACE_BEGIN

namespace {

using nlohmann::json;


json param_table(const ParamList& params) {
  json table = json::array();
  for (const auto& [name, p] : params) table.push_back({{"name", name}, {"shape", p.shape()}});
  return table;
}

void put_values(std::string& out, std::span<const Scalar> values) {
  for (Scalar v : values) le::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

void get_values(le::Reader& r, std::span<Scalar> values) {
  for (auto& v : values) v = static_cast<Scalar>(std::bit_cast<float>(r.u32()));
}

struct Parsed {
  CheckpointHeader header;
  json params, disc_params;
  std::int64_t model_adam_steps = 0, disc_adam_steps = 0;
  std::string bytes;
  std::size_t payload = 0;  // offset of the first weight
};

Parsed parse(const std::filesystem::path& path) {
  Parsed p;
  p.bytes = read_file(path);
  if (p.bytes.size() < 4 || std::memcmp(p.bytes.data(), kCheckpointMagic, 4) != 0) {
    fail(ErrorKind::kFormat, path.string() + " is not a checkpoint: bad magic");
  }
  le::Reader r(p.bytes, "checkpoint " + path.string());
  r.take(4);
  const auto version = r.u16();
  if (version != kCheckpointVersion) fail(ErrorKind::kFormat, "unsupported checkpoint version " + std::to_string(version));
  const auto len = r.u32();
  const auto text = r.take(len);
  try {
    const json h = json::parse(text);
    if (h.at("dtype") != "f32") fail(ErrorKind::kFormat, "unsupported checkpoint dtype");
    p.header.config = run_config_from_json(h.at("run_config"));
    p.header.config_hash = h.at("config_hash").get<std::string>();
    p.header.step = h.at("step").get<int>();
    p.header.seed = h.at("seed").get<std::uint64_t>();
    p.params = h.at("params");
    p.disc_params = h.at("disc_params");
    p.model_adam_steps = h.at("model_adam_steps").get<std::int64_t>();
    p.disc_adam_steps = h.at("disc_adam_steps").get<std::int64_t>();
    const std::string out_dir = h.at("output_dir").get<std::string>();
    p.header.config.output_dir = out_dir;
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, "malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  if (config_hash(p.header.config) != p.header.config_hash) {
    fail(ErrorKind::kFormat, path.string() + ": stored config hash does not match its configuration");
  }
  p.payload = r.position();
  // Weights plus two Adam moments per tensor, four bytes each.
  std::int64_t values = 0;
  try {
    for (const json* table : {&p.params, &p.disc_params}) {
      for (const auto& entry : *table) values += shape_numel(entry.at("shape").get<Shape>());
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, "malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  const auto expected = static_cast<std::uint64_t>(values) * 3 * 4;
  if (r.remaining() != expected) {
    fail(ErrorKind::kData, path.string() + " holds " + std::to_string(r.remaining()) + " payload bytes, header implies " +
                               std::to_string(expected));
  }
  return p;
}

void check_table(const json& table, const ParamList& params, const std::string& what) {
  if (table.size() != params.size()) {
    fail(ErrorKind::kCompatibility, what + ": checkpoint has " + std::to_string(table.size()) + " tensors, model has " +
                                        std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (table[i].at("name") != params[i].first || table[i].at("shape").get<Shape>() != params[i].second.shape()) {
      fail(ErrorKind::kCompatibility, what + ": tensor " + std::to_string(i) + " is " + table[i].at("name").get<std::string>() +
                                          " in the checkpoint, " + params[i].first + " in the model");
    }
  }
}

std::int64_t total(const ParamList& params) {
  std::int64_t n = 0;
  for (const auto& [_, p] : params) n += p.numel();
  return n;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, Trainer& trainer, int step) {
  const ParamList params = trainer.model().parameters();
  const ParamList disc = trainer.discriminator().parameters();
  Adam& og = trainer.model_optimizer();
  Adam& od = trainer.discriminator_optimizer();
  const json header = {{"run_config", to_json(config)},
                       {"output_dir", config.output_dir.string()},
                       {"config_hash", config_hash(config)},
                       {"step", step},
                       {"seed", config.train.seed},
                       {"dtype", "f32"},
                       {"params", param_table(params)},
                       {"disc_params", param_table(disc)},
                       {"model_adam_steps", og.steps_taken()},
                       {"disc_adam_steps", od.steps_taken()}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 4);
  le::put_u16(out, kCheckpointVersion);
  le::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + 4 * 3 * static_cast<std::size_t>(total(params) + total(disc)));
  for (const auto& [_, p] : params) put_values(out, p.values());
  for (const auto& m : og.first_moment()) put_values(out, m);
  for (const auto& v : og.second_moment()) put_values(out, v);
  for (const auto& [_, p] : disc) put_values(out, p.values());
  for (const auto& m : od.first_moment()) put_values(out, m);
  for (const auto& v : od.second_moment()) put_values(out, v);
  write_file_atomic(path, out);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) { return parse(path).header; }

Tokenizer load_tokenizer(const std::filesystem::path& path, CheckpointHeader* header) {
  Parsed p = parse(path);
  Tokenizer model(p.header.config.model, p.header.seed);
  const ParamList params = model.parameters();
  check_table(p.params, params, path.string());
  le::Reader r(std::string_view(p.bytes).substr(p.payload), "checkpoint " + path.string());
  for (const auto& [_, t] : params) {
    Tensor target = t;
    get_values(r, target.mutable_values());
  }
  model.set_training(false);
  if (header) *header = std::move(p.header);
  return model;
}

int restore_trainer(const std::filesystem::path& path, Trainer& trainer) {
  Parsed p = parse(path);
  if (!(p.header.config.model == trainer.model().config())) {
    fail(ErrorKind::kCompatibility, path.string() + " was written for a different model configuration");
  }
  const ParamList params = trainer.model().parameters();
  const ParamList disc = trainer.discriminator().parameters();
  check_table(p.params, params, path.string());
  check_table(p.disc_params, disc, path.string() + " (discriminator)");
  le::Reader r(std::string_view(p.bytes).substr(p.payload), "checkpoint " + path.string());
  Adam& og = trainer.model_optimizer();
  Adam& od = trainer.discriminator_optimizer();
  for (const auto& [_, t] : params) {
    Tensor target = t;
    get_values(r, target.mutable_values());
  }
  for (auto& m : og.first_moment()) get_values(r, m);
  for (auto& v : og.second_moment()) get_values(r, v);
  for (const auto& [_, t] : disc) {
    Tensor target = t;
    get_values(r, target.mutable_values());
  }
  for (auto& m : od.first_moment()) get_values(r, m);
  for (auto& v : od.second_moment()) get_values(r, v);
  if (r.remaining() != 0) fail(ErrorKind::kData, path.string() + ": trailing bytes after the payload");
  og.set_steps_taken(p.model_adam_steps);
  od.set_steps_taken(p.disc_adam_steps);
  return p.header.step;
}

std::filesystem::path latest_checkpoint(const std::filesystem::path& dir) {
  std::filesystem::path best;
  if (!std::filesystem::is_directory(dir)) return best;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("ckpt_", 0) == 0 && entry.path().extension() == ".dvck" && (best.empty() || entry.path() > best)) {
      best = entry.path();
    }
  }
  return best;
}

DVTK_NAMESPACE_END
