#include "dvtk/config.hpp"

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

DVTK_NAMESPACE_BEGIN

namespace {

using nlohmann::json;

class YamlReader {
 public:
  explicit YamlReader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void error(const YAML::Mark& mark, const std::string& msg) const {
    fail(ErrorKind::kConfig, source_ + ":" + std::to_string(mark.line + 1) + ":" + std::to_string(mark.column + 1) + ": " + msg);
  }
  [[noreturn]] void error(const YAML::Node& node, const std::string& msg) const { error(node.Mark(), msg); }

  void expect_map(const YAML::Node& node, const std::string& path) const {
    if (!node.IsMap()) error(node, path + " must be a mapping");
  }

  void check_keys(const YAML::Node& node, const std::string& path, std::initializer_list<const char*> allowed) const {
    expect_map(node, path);
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!ok.count(key)) {
        std::string list;
        for (const auto& k : ok) list += (list.empty() ? "" : ", ") + k;
        error(kv.first, "unknown key '" + join(path, key) + "' (allowed: " + list + ")");
      }
    }
  }

  template <class T>
  T value(const YAML::Node& node, const std::string& path) const {
    if (!node.IsScalar()) error(node, path + " must be a scalar");
    try {
      return node.as<T>();
    } catch (const YAML::Exception&) {
      error(node, path + " has an invalid value '" + node.Scalar() + "'");
    }
  }

  template <class T>
  void optional(const YAML::Node& map, const std::string& path, const char* key, T& out) const {
    const YAML::Node n = map[key];
    if (n) out = value<T>(n, join(path, key));
  }

  YAML::Node required(const YAML::Node& map, const std::string& path, const char* key) const {
    const YAML::Node n = map[key];
    if (!n) error(map, join(path, key) + " is required");
    return n;
  }

  template <class T>
  std::vector<T> list(const YAML::Node& node, const std::string& path) const {
    if (!node.IsSequence()) error(node, path + " must be a list");
    std::vector<T> out;
    for (std::size_t i = 0; i < node.size(); ++i) out.push_back(value<T>(node[i], path + "[" + std::to_string(i) + "]"));
    return out;
  }

  // Runs a component validator and anchors its message at `node`.
  template <class F>
  void anchored(const YAML::Node& node, F&& check) const {
    try {
      check();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kConfig && e.kind() != ErrorKind::kShape) throw;
      error(node, e.what());
    }
  }

  static std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

 private:
  std::string source_;
};

BaseQuantizerSpec parse_base(const YamlReader& r, const YAML::Node& node, const std::string& path) {
  r.expect_map(node, path);
  const auto type = r.value<std::string>(r.required(node, path, "type"), path + ".type");
  if (type == "lfq") {
    r.check_keys(node, path, {"type", "n_bits"});
    return LfqSpec{r.value<int>(r.required(node, path, "n_bits"), path + ".n_bits")};
  }
  if (type == "fsq") {
    r.check_keys(node, path, {"type", "levels"});
    return FsqSpec{r.list<int>(r.required(node, path, "levels"), path + ".levels")};
  }
  r.error(node["type"], path + ".type must be lfq or fsq, got '" + type + "'");
}

QuantizerSpec parse_quantizer(const YamlReader& r, const YAML::Node& node, const std::string& path) {
  r.expect_map(node, path);
  const auto type = r.value<std::string>(r.required(node, path, "type"), path + ".type");
  QuantizerSpec spec;
  if (type == "lfq" || type == "fsq") {
    const BaseQuantizerSpec base = parse_base(r, node, path);
    std::visit([&](const auto& s) { spec = s; }, base);
  } else if (type == "channel_split") {
    r.check_keys(node, path, {"type", "base", "splits"});
    ChannelSplitSpec cs;
    cs.base = parse_base(r, r.required(node, path, "base"), path + ".base");
    cs.splits = r.value<int>(r.required(node, path, "splits"), path + ".splits");
    spec = cs;
  } else if (type == "residual") {
    r.check_keys(node, path, {"type", "base", "steps"});
    ResidualSpec rq;
    rq.base = parse_base(r, r.required(node, path, "base"), path + ".base");
    rq.steps = r.value<int>(r.required(node, path, "steps"), path + ".steps");
    spec = rq;
  } else {
    r.error(node["type"], path + ".type must be one of lfq, fsq, channel_split, residual; got '" + type + "'");
  }
  r.anchored(node, [&] { validate(spec); });
  return spec;
}

TokenizerConfig parse_model(const YamlReader& r, const YAML::Node& node) {
  const std::string p = "model";
  r.check_keys(node, p,
               {"kernels", "hidden_dims", "latent_channels", "attention", "state_dim", "layers_per_block", "embedding",
                "skip_connections", "quantizer", "video_channels"});
  TokenizerConfig m;
  const YAML::Node kernels = r.required(node, p, "kernels");
  if (!kernels.IsSequence() || kernels.size() == 0) r.error(kernels, "model.kernels must be a non-empty list of [t, h, w]");
  m.kernels.clear();
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const auto k = r.list<int>(kernels[i], "model.kernels[" + std::to_string(i) + "]");
    if (k.size() != 3) r.error(kernels[i], "model.kernels[" + std::to_string(i) + "] must have three entries [t, h, w]");
    m.kernels.push_back({k[0], k[1], k[2]});
  }
  const YAML::Node hidden = r.required(node, p, "hidden_dims");
  if (hidden.IsScalar()) {
    m.hidden_dims.assign(m.kernels.size(), r.value<int>(hidden, "model.hidden_dims"));
  } else {
    m.hidden_dims = r.list<int>(hidden, "model.hidden_dims");
  }
  m.latent_channels = r.value<int>(r.required(node, p, "latent_channels"), "model.latent_channels");
  m.quantizer = parse_quantizer(r, r.required(node, p, "quantizer"), "model.quantizer");
  if (const YAML::Node a = node["attention"]) {
    const auto s = r.value<std::string>(a, "model.attention");
    if (s == "state_space") {
      m.attention = MixerKind::kStateSpace;
    } else if (s == "transformer_sinusoidal") {
      m.attention = MixerKind::kTransformerSinusoidal;
    } else {
      r.error(a, "model.attention must be state_space or transformer_sinusoidal, got '" + s + "'");
    }
  }
  if (const YAML::Node e = node["embedding"]) {
    const auto s = r.value<std::string>(e, "model.embedding");
    if (s == "conv3d") {
      m.embedding = EmbeddingKind::kConv3d;
    } else if (s == "linear") {
      m.embedding = EmbeddingKind::kLinear;
    } else {
      r.error(e, "model.embedding must be conv3d or linear, got '" + s + "'");
    }
  }
  r.optional(node, p, "state_dim", m.state_dim);
  r.optional(node, p, "layers_per_block", m.layers_per_block);
  r.optional(node, p, "skip_connections", m.skip_connections);
  r.optional(node, p, "video_channels", m.video_channels);
  r.anchored(node, [&] { m.validate(); });
  return m;
}

TrainConfig parse_train(const YamlReader& r, const YAML::Node& node) {
  const std::string p = "train";
  r.check_keys(node, p,
               {"total_steps", "gan_start_step", "learning_rate", "batch_size", "beta1", "beta2", "clip_length",
                "frame_stride", "seed", "checkpoint_interval", "log_interval"});
  TrainConfig t;
  r.optional(node, p, "total_steps", t.total_steps);
  r.optional(node, p, "gan_start_step", t.gan_start_step);
  r.optional(node, p, "learning_rate", t.learning_rate);
  r.optional(node, p, "batch_size", t.batch_size);
  r.optional(node, p, "beta1", t.beta1);
  r.optional(node, p, "beta2", t.beta2);
  r.optional(node, p, "clip_length", t.clip_length);
  r.optional(node, p, "frame_stride", t.frame_stride);
  r.optional(node, p, "seed", t.seed);
  r.optional(node, p, "checkpoint_interval", t.checkpoint_interval);
  r.optional(node, p, "log_interval", t.log_interval);
  r.anchored(node, [&] { t.validate(); });
  return t;
}

LossWeights parse_weights(const YamlReader& r, const YAML::Node& node) {
  const std::string p = "loss_weights";
  r.check_keys(node, p, {"recon", "perceptual", "gan", "entropy", "commitment"});
  LossWeights w;
  r.optional(node, p, "recon", w.recon);
  r.optional(node, p, "perceptual", w.perceptual);
  r.optional(node, p, "gan", w.gan);
  r.optional(node, p, "entropy", w.entropy);
  r.optional(node, p, "commitment", w.commitment);
  for (double v : {w.recon, w.perceptual, w.gan, w.entropy, w.commitment}) {
    if (!(v >= 0)) r.error(node, "loss_weights entries must be >= 0");
  }
  return w;
}

DiscriminatorConfig parse_discriminator(const YamlReader& r, const YAML::Node& node) {
  const std::string p = "discriminator";
  r.check_keys(node, p, {"base_channels", "stages", "patch"});
  DiscriminatorConfig d;
  r.optional(node, p, "base_channels", d.base_channels);
  r.optional(node, p, "stages", d.stages);
  if (const YAML::Node patch = node["patch"]) {
    const auto v = r.list<int>(patch, "discriminator.patch");
    if (v.size() != 3) r.error(patch, "discriminator.patch must have three entries [t, h, w]");
    d.patch = {v[0], v[1], v[2]};
  }
  r.anchored(node, [&] { d.validate(); });
  return d;
}

DataSpec parse_data(const YamlReader& r, const YAML::Node& node) {
  const std::string p = "data";
  r.check_keys(node, p, {"scene", "textures", "crop", "train_seed", "eval_seed", "eval_clips"});
  DataSpec d;
  if (const YAML::Node s = node["scene"]) {
    r.check_keys(s, "data.scene", {"height", "width", "frames", "objects", "motion"});
    r.optional(s, "data.scene", "height", d.scene.height);
    r.optional(s, "data.scene", "width", d.scene.width);
    r.optional(s, "data.scene", "frames", d.scene.frames);
    r.optional(s, "data.scene", "objects", d.scene.objects);
    r.optional(s, "data.scene", "motion", d.scene.motion);
  }
  if (const YAML::Node t = node["textures"]) {
    d.textures.clear();
    const auto names = r.list<std::string>(t, "data.textures");
    for (const auto& n : names) {
      r.anchored(t, [&] { d.textures.push_back(parse_texture(n)); });
    }
  }
  d.sampler.crop = std::min(d.scene.height, d.scene.width);
  r.optional(node, p, "crop", d.sampler.crop);
  r.optional(node, p, "train_seed", d.train_seed);
  r.optional(node, p, "eval_seed", d.eval_seed);
  r.optional(node, p, "eval_clips", d.eval_clips);
  return d;
}

RunConfig parse_root(const YamlReader& r, const YAML::Node& root) {
  if (!root || root.IsNull()) fail(ErrorKind::kConfig, "configuration document is empty");
  r.check_keys(root, "", {"model", "train", "loss_weights", "discriminator", "data", "output"});
  RunConfig c;
  c.model = parse_model(r, r.required(root, "", "model"));
  if (const YAML::Node n = root["train"]) c.train = parse_train(r, n);
  if (const YAML::Node n = root["loss_weights"]) c.loss_weights = parse_weights(r, n);
  if (const YAML::Node n = root["discriminator"]) c.discriminator = parse_discriminator(r, n);
  const YAML::Node data = root["data"];
  if (data) c.data = parse_data(r, data);
  c.data.sampler.clip_length = c.train.clip_length;
  c.data.sampler.frame_stride = c.train.frame_stride;
  if (const YAML::Node out = root["output"]) {
    r.check_keys(out, "output", {"dir"});
    std::string dir = c.output_dir.string();
    r.optional(out, "output", "dir", dir);
    c.output_dir = dir;
  }
  r.anchored(data ? data : root, [&] { c.validate(); });
  return c;
}

YAML::Node parse_yaml(const std::string& text, const std::string& source) {
  try {
    return YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    fail(ErrorKind::kConfig, source + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                                 ": " + e.msg);
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kConfig, "cannot read configuration file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A delta that changes a mapping's `type` replaces the mapping instead of
// inheriting keys that only made sense for the old type.
YAML::Node merged(const YAML::Node& base, const YAML::Node& delta) {
  if (!base || !base.IsMap() || !delta.IsMap()) return YAML::Clone(delta);
  if (delta["type"] && base["type"] && delta["type"].Scalar() != base["type"].Scalar()) return YAML::Clone(delta);
  YAML::Node out = YAML::Clone(base);
  for (const auto& kv : delta) {
    const auto key = kv.first.as<std::string>();
    out[key] = merged(base[key], kv.second);
  }
  return out;
}

json base_to_json(const BaseQuantizerSpec& base) {
  return std::visit([](const auto& s) { return to_json(QuantizerSpec{s}); }, base);
}

BaseQuantizerSpec base_from_json(const json& j) {
  const QuantizerSpec q = quantizer_from_json(j);
  if (const auto* l = std::get_if<LfqSpec>(&q)) return *l;
  if (const auto* f = std::get_if<FsqSpec>(&q)) return *f;
  fail(ErrorKind::kFormat, "nested quantizer wrappers are not supported");
}

template <class T>
T get(const json& j, const char* key) {
  if (!j.contains(key)) fail(ErrorKind::kFormat, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  discriminator.validate();
  data.validate();
  const KernelTriplet c = model.compression();
  if (train.clip_length != 1 && train.clip_length % c.t != 0) {
    fail(ErrorKind::kConfig, "train.clip_length " + std::to_string(train.clip_length) +
                                 " must be 1 or a multiple of the temporal compression " + std::to_string(c.t));
  }
  if (data.sampler.crop % c.h != 0 || data.sampler.crop % c.w != 0) {
    fail(ErrorKind::kConfig, "data.crop " + std::to_string(data.sampler.crop) + " must be divisible by the spatial compression " +
                                 std::to_string(c.h) + "x" + std::to_string(c.w));
  }
  const int disc_factor = 1 << discriminator.stages;
  if (data.sampler.crop % disc_factor != 0) {
    fail(ErrorKind::kConfig, "data.crop must be divisible by 2^discriminator.stages = " + std::to_string(disc_factor));
  }
  if (data.sampler.clip_length != train.clip_length || data.sampler.frame_stride != train.frame_stride) {
    fail(ErrorKind::kConfig, "sampler clip geometry must follow train.clip_length and train.frame_stride");
  }
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  const YamlReader reader(source);
  return parse_root(reader, parse_yaml(text, source));
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_text(path), path.string()); }

json to_json(const QuantizerSpec& spec) {
  return std::visit(
      [](const auto& s) -> json {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, LfqSpec>) {
          return {{"type", "lfq"}, {"n_bits", s.n_bits}};
        } else if constexpr (std::is_same_v<S, FsqSpec>) {
          return {{"type", "fsq"}, {"levels", s.levels}};
        } else if constexpr (std::is_same_v<S, ChannelSplitSpec>) {
          return {{"type", "channel_split"}, {"base", base_to_json(s.base)}, {"splits", s.splits}};
        } else {
          return {{"type", "residual"}, {"base", base_to_json(s.base)}, {"steps", s.steps}};
        }
      },
      spec);
}

QuantizerSpec quantizer_from_json(const json& j) {
  const auto type = get<std::string>(j, "type");
  QuantizerSpec spec;
  if (type == "lfq") {
    spec = LfqSpec{get<int>(j, "n_bits")};
  } else if (type == "fsq") {
    spec = FsqSpec{get<std::vector<int>>(j, "levels")};
  } else if (type == "channel_split") {
    spec = ChannelSplitSpec{base_from_json(j.at("base")), get<int>(j, "splits")};
  } else if (type == "residual") {
    spec = ResidualSpec{base_from_json(j.at("base")), get<int>(j, "steps")};
  } else {
    fail(ErrorKind::kFormat, "unknown quantizer type '" + type + "'");
  }
  try {
    validate(spec);
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, e.what());
  }
  return spec;
}

json to_json(const TokenizerConfig& m) {
  json kernels = json::array();
  for (const auto& k : m.kernels) kernels.push_back({k.t, k.h, k.w});
  return {{"kernels", kernels},
          {"hidden_dims", m.hidden_dims},
          {"latent_channels", m.latent_channels},
          {"attention", m.attention == MixerKind::kStateSpace ? "state_space" : "transformer_sinusoidal"},
          {"state_dim", m.state_dim},
          {"layers_per_block", m.layers_per_block},
          {"embedding", m.embedding == EmbeddingKind::kConv3d ? "conv3d" : "linear"},
          {"skip_connections", m.skip_connections},
          {"quantizer", to_json(m.quantizer)},
          {"video_channels", m.video_channels}};
}

TokenizerConfig tokenizer_config_from_json(const json& j) {
  TokenizerConfig m;
  m.kernels.clear();
  for (const auto& k : get<std::vector<std::vector<int>>>(j, "kernels")) {
    if (k.size() != 3) fail(ErrorKind::kFormat, "kernel entries must have three factors");
    m.kernels.push_back({k[0], k[1], k[2]});
  }
  m.hidden_dims = get<std::vector<int>>(j, "hidden_dims");
  m.latent_channels = get<int>(j, "latent_channels");
  m.attention = get<std::string>(j, "attention") == "state_space" ? MixerKind::kStateSpace : MixerKind::kTransformerSinusoidal;
  m.state_dim = get<int>(j, "state_dim");
  m.layers_per_block = get<int>(j, "layers_per_block");
  m.embedding = get<std::string>(j, "embedding") == "conv3d" ? EmbeddingKind::kConv3d : EmbeddingKind::kLinear;
  m.skip_connections = get<bool>(j, "skip_connections");
  m.quantizer = quantizer_from_json(j.at("quantizer"));
  m.video_channels = get<int>(j, "video_channels");
  return m;
}

json to_json(const RunConfig& c) {
  json textures = json::array();
  for (auto t : c.data.textures) textures.push_back(texture_name(t));
  const auto& t = c.train;
  const auto& w = c.loss_weights;
  return {
      {"model", to_json(c.model)},
      {"train",
       {{"total_steps", t.total_steps},
        {"gan_start_step", t.gan_start_step},
        {"learning_rate", t.learning_rate},
        {"batch_size", t.batch_size},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"clip_length", t.clip_length},
        {"frame_stride", t.frame_stride},
        {"seed", t.seed},
        {"checkpoint_interval", t.checkpoint_interval},
        {"log_interval", t.log_interval}}},
      {"loss_weights",
       {{"recon", w.recon}, {"perceptual", w.perceptual}, {"gan", w.gan}, {"entropy", w.entropy}, {"commitment", w.commitment}}},
      {"discriminator",
       {{"base_channels", c.discriminator.base_channels},
        {"stages", c.discriminator.stages},
        {"patch", c.discriminator.patch}}},
      {"data",
       {{"scene",
         {{"height", c.data.scene.height},
          {"width", c.data.scene.width},
          {"frames", c.data.scene.frames},
          {"objects", c.data.scene.objects},
          {"motion", c.data.scene.motion}}},
        {"textures", textures},
        {"crop", c.data.sampler.crop},
        {"train_seed", c.data.train_seed},
        {"eval_seed", c.data.eval_seed},
        {"eval_clips", c.data.eval_clips}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c.model = tokenizer_config_from_json(j.at("model"));
    const json& t = j.at("train");
    c.train.total_steps = get<int>(t, "total_steps");
    c.train.gan_start_step = get<int>(t, "gan_start_step");
    c.train.learning_rate = get<double>(t, "learning_rate");
    c.train.batch_size = get<int>(t, "batch_size");
    c.train.beta1 = get<double>(t, "beta1");
    c.train.beta2 = get<double>(t, "beta2");
    c.train.clip_length = get<int>(t, "clip_length");
    c.train.frame_stride = get<int>(t, "frame_stride");
    c.train.seed = get<std::uint64_t>(t, "seed");
    c.train.checkpoint_interval = get<int>(t, "checkpoint_interval");
    c.train.log_interval = get<int>(t, "log_interval");
    const json& w = j.at("loss_weights");
    c.loss_weights = {get<double>(w, "recon"), get<double>(w, "perceptual"), get<double>(w, "gan"), get<double>(w, "entropy"),
                      get<double>(w, "commitment")};
    const json& d = j.at("discriminator");
    c.discriminator.base_channels = get<int>(d, "base_channels");
    c.discriminator.stages = get<int>(d, "stages");
    c.discriminator.patch = get<std::array<int, 3>>(d, "patch");
    const json& data = j.at("data");
    const json& s = data.at("scene");
    c.data.scene.height = get<int>(s, "height");
    c.data.scene.width = get<int>(s, "width");
    c.data.scene.frames = get<int>(s, "frames");
    c.data.scene.objects = get<int>(s, "objects");
    c.data.scene.motion = get<double>(s, "motion");
    c.data.textures.clear();
    for (const auto& name : get<std::vector<std::string>>(data, "textures")) c.data.textures.push_back(parse_texture(name));
    c.data.sampler.crop = get<int>(data, "crop");
    c.data.train_seed = get<std::uint64_t>(data, "train_seed");
    c.data.eval_seed = get<std::uint64_t>(data, "eval_seed");
    c.data.eval_clips = get<int>(data, "eval_clips");
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed configuration record: ") + e.what());
  }
  c.data.sampler.clip_length = c.train.clip_length;
  c.data.sampler.frame_stride = c.train.frame_stride;
  return c;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::kRuntime, "SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string config_hash(const RunConfig& config) { return sha256_hex(to_json(config).dump()).substr(0, 16); }

SweepConfig parse_sweep_config(const std::string& text, const std::string& source,
                               std::vector<std::pair<std::string, std::string>>* errors) {
  const YamlReader r(source);
  const YAML::Node root = parse_yaml(text, source);
  if (!root || !root.IsMap()) fail(ErrorKind::kConfig, source + ": sweep document must be a mapping");
  r.check_keys(root, "", {"base", "seeds", "cells"});
  const YAML::Node base = r.required(root, "", "base");
  SweepConfig sweep;
  if (const YAML::Node seeds = root["seeds"]) sweep.seeds = r.list<std::uint64_t>(seeds, "seeds");
  if (sweep.seeds.empty()) r.error(root, "seeds must not be empty");
  const YAML::Node cells = r.required(root, "", "cells");
  if (!cells.IsSequence() || cells.size() == 0) r.error(cells, "cells must be a non-empty list");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const YAML::Node cell = cells[i];
    const std::string path = "cells[" + std::to_string(i) + "]";
    r.check_keys(cell, path, {"name", "delta"});
    const auto name = r.value<std::string>(r.required(cell, path, "name"), path + ".name");
    const YAML::Node delta = cell["delta"];
    try {
      const YAML::Node doc = delta ? merged(base, delta) : YAML::Clone(base);
      sweep.cells.push_back({name, parse_root(r, doc)});
    } catch (const Error& e) {
      if (!errors) throw;
      errors->emplace_back(name, e.what());
    }
  }
  return sweep;
}

SweepConfig load_sweep_config(const std::filesystem::path& path, std::vector<std::pair<std::string, std::string>>* errors) {
  return parse_sweep_config(read_text(path), path.string(), errors);
}

DVTK_NAMESPACE_END
