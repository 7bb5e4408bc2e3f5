#include "edgedoc/model.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "edgedoc/btf.hpp"
#include "edgedoc/ops.hpp"

namespace edgedoc {

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  return os.str();
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoull(tok));
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels != 2)
    throw ContractError("ModelConfig: in_channels must be 2 (green + residual)");
  if (stage_channels.size() != 4 || stage_depths.size() != 4)
    throw ContractError("ModelConfig: exactly 4 stages required");
  if (input_h % 32 != 0 || input_w % 32 != 0)
    throw ContractError("ModelConfig: input size must be divisible by 32");
  if (decoder_channels.size() != 4)
    throw ContractError("ModelConfig: 4 decoder channel counts required");
  for (std::size_t c : stage_channels)
    if (c == 0) throw ContractError("ModelConfig: zero stage channels");
  for (std::size_t d : stage_depths)
    if (d == 0) throw ContractError("ModelConfig: zero stage depth");
  for (std::size_t s : attention_stages)
    if (s < 1 || s > 4)
      throw ContractError("ModelConfig: attention stage out of range");
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["in_channels"] = std::to_string(in_channels);
  kv["stage_channels"] = join_sizes(stage_channels);
  kv["stage_depths"] = join_sizes(stage_depths);
  kv["attention_stages"] =
      join_sizes({attention_stages.begin(), attention_stages.end()});
  kv["input_h"] = std::to_string(input_h);
  kv["input_w"] = std::to_string(input_w);
  kv["decoder_channels"] = join_sizes(decoder_channels);
  return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig cfg;
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end())
      throw IoError(std::string("config missing key: ") + key);
    return it->second;
  };
  cfg.in_channels = std::stoull(get("in_channels"));
  cfg.stage_channels = parse_sizes(get("stage_channels"));
  cfg.stage_depths = parse_sizes(get("stage_depths"));
  auto att = parse_sizes(get("attention_stages"));
  cfg.attention_stages = {att.begin(), att.end()};
  cfg.input_h = std::stoull(get("input_h"));
  cfg.input_w = std::stoull(get("input_w"));
  cfg.decoder_channels = parse_sizes(get("decoder_channels"));
  cfg.validate();
  return cfg;
}

ModelConfig ModelConfig::reduced(std::size_t input_size) {
  ModelConfig cfg;
  // Slim encoder, wide decoder: the decoder capacity dominates how quickly
  // the mask head can be fit at desk scale, so the reduced setup keeps the
  // encoder small and spends its budget on the upsampling path.
  cfg.stage_channels = {8, 16, 32, 32};
  cfg.stage_depths = {1, 1, 1, 1};
  cfg.attention_stages = {4};
  cfg.input_h = cfg.input_w = input_size;
  cfg.decoder_channels = {128, 128, 64, 64};
  return cfg;
}

ParamBundle build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(seed);
  ParamBundle params;
  const auto& sc = cfg.stage_channels;

  init::conv(params, "stem.conv", sc[0], cfg.in_channels, 4, 4, rng);
  for (std::size_t s = 1; s <= 4; ++s) {
    const std::size_t ch = sc[s - 1];
    for (std::size_t d = 0; d < cfg.stage_depths[s - 1]; ++d)
      blocks::conv_encoder_init(
          params, "stage" + std::to_string(s) + ".block" + std::to_string(d),
          ch, 3, 4, rng);
    if (cfg.attention_stages.count(s))
      blocks::transpose_attention_init(
          params, "stage" + std::to_string(s) + ".attn", ch, 4, rng);
    if (s < 4)
      blocks::downsample_init(params, "down" + std::to_string(s), ch, sc[s],
                              rng);
  }

  // Decoder: three skip up blocks (skips from stages 3,2,1), then two
  // skip-less blocks back to full resolution.
  const auto& dc = cfg.decoder_channels;
  blocks::up_init(params, "up1", sc[3] + sc[2], dc[0], rng);
  blocks::up_init(params, "up2", dc[0] + sc[1], dc[1], rng);
  blocks::up_init(params, "up3", dc[1] + sc[0], dc[2], rng);
  blocks::up_init(params, "up4", dc[2], dc[3], rng);
  blocks::up_init(params, "up5", dc[3], dc[3], rng);

  blocks::cls_head_init(params, "cls", sc[3], rng);
  blocks::mask_head_init(params, "mask", dc[3], rng);
  return params;
}

ForwardOutput forward(const ModelConfig& cfg, const ParamBundle& params,
                      const Tensor& x, bool keep_stage_features) {
  if (x.ndim() != 4 || x.dim(1) != cfg.in_channels ||
      x.dim(2) != cfg.input_h || x.dim(3) != cfg.input_w)
    throw ShapeError("forward: input " + shape_str(x.shape()) +
                     " does not match config [N," +
                     std::to_string(cfg.in_channels) + "," +
                     std::to_string(cfg.input_h) + "," +
                     std::to_string(cfg.input_w) + "]");

  Tensor h = ops::conv2d(x, param(params, "stem.conv.w"),
                         param(params, "stem.conv.b"), 4, 0);
  std::vector<Tensor> stages;
  for (std::size_t s = 1; s <= 4; ++s) {
    for (std::size_t d = 0; d < cfg.stage_depths[s - 1]; ++d)
      h = blocks::conv_encoder(
          h, params, "stage" + std::to_string(s) + ".block" + std::to_string(d));
    if (cfg.attention_stages.count(s))
      h = blocks::transpose_attention(h, params,
                                      "stage" + std::to_string(s) + ".attn");
    stages.push_back(h);
    if (s < 4) h = blocks::downsample(h, params, "down" + std::to_string(s));
  }

  Tensor d = blocks::up(stages[3], stages[2], params, "up1");
  d = blocks::up(d, stages[1], params, "up2");
  d = blocks::up(d, stages[0], params, "up3");
  d = blocks::up(d, Tensor(), params, "up4");
  d = blocks::up(d, Tensor(), params, "up5");

  ForwardOutput out;
  out.cls_logit = blocks::cls_head(stages[3], params, "cls");
  out.mask_logit = blocks::mask_head(d, params, "mask");
  if (keep_stage_features) out.stage_features = std::move(stages);
  return out;
}

Prediction predict(const ModelConfig& cfg, const ParamBundle& params,
                   const Tensor& x) {
  if (x.ndim() != 4 || x.dim(0) != 1)
    throw ShapeError("predict: expected a single sample [1,2,H,W]");
  ForwardOutput fo = forward(cfg, params, x);
  Prediction p;
  p.score = ops::sigmoid(fo.cls_logit).item();
  Tensor m = ops::sigmoid(fo.mask_logit);
  p.mask = ops::reshape(m, {x.dim(2), x.dim(3)});
  return p;
}

namespace {
constexpr const char* kManifestName = "checkpoint.txt";
}

void save_checkpoint(const std::string& dir, const ModelConfig& cfg,
                     const ParamBundle& params,
                     const std::map<std::string, std::string>& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "params");
  std::ostringstream manifest;
  for (const auto& [k, v] : cfg.to_kv()) manifest << "config." << k << " = " << v << "\n";
  for (const auto& [k, v] : meta) manifest << "meta." << k << " = " << v << "\n";
  for (const auto& [name, t] : params) {
    std::string rel = "params/" + name + ".btf";
    manifest << "param." << name << " = " << rel << "\n";
    write_btf((fs::path(dir) / rel).string(), t);
  }
  fs::path tmp = fs::path(dir) / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint manifest in " + dir);
    os << manifest.str();
  }
  fs::rename(tmp, fs::path(dir) / kManifestName);
}

Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / kManifestName);
  if (!is) throw CheckpointError("no checkpoint manifest in " + dir);
  std::map<std::string, std::string> config_kv, param_files;
  Checkpoint ckpt;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find(" = ");
    if (eq == std::string::npos)
      throw CheckpointError("malformed manifest line: " + line);
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 3);
    if (key.rfind("config.", 0) == 0)
      config_kv[key.substr(7)] = value;
    else if (key.rfind("meta.", 0) == 0)
      ckpt.meta[key.substr(5)] = value;
    else if (key.rfind("param.", 0) == 0)
      param_files[key.substr(6)] = value;
    else
      throw CheckpointError("unknown manifest key: " + key);
  }
  try {
    ckpt.cfg = ModelConfig::from_kv(config_kv);
  } catch (const Error& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  }
  for (const auto& [name, rel] : param_files) {
    Tensor t;
    try {
      t = read_btf((fs::path(dir) / rel).string());
    } catch (const Error& e) {
      throw CheckpointError("cannot load parameter " + name + ": " + e.what());
    }
    t.set_requires_grad(true);
    ckpt.params[name] = t;
  }
  // Shape check against a freshly built bundle for this config.
  ParamBundle expected = build_model(ckpt.cfg, 0);
  if (expected.size() != ckpt.params.size())
    throw CheckpointError("checkpoint parameter set does not match config");
  for (const auto& [name, t] : expected) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end())
      throw CheckpointError("checkpoint missing parameter " + name);
    if (it->second.shape() != t.shape())
      throw CheckpointError("checkpoint shape mismatch for " + name + ": " +
                            shape_str(it->second.shape()) + " vs " +
                            shape_str(t.shape()));
  }
  return ckpt;
}

}  // namespace edgedoc
