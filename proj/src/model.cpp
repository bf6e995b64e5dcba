#include "catnet/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "catnet/rng.hpp"

namespace catnet {

namespace {

std::string stage_kind_name(StageKind k) {
  switch (k) {
    case StageKind::ConvStem: return "stem";
    case StageKind::Mbconv: return "mbconv";
    case StageKind::Transformer: return "transformer";
  }
  return "stem";
}

StageKind stage_kind_from(const std::string& s) {
  if (s == "stem") return StageKind::ConvStem;
  if (s == "mbconv") return StageKind::Mbconv;
  if (s == "transformer") return StageKind::Transformer;
  throw FormatError("unknown stage kind '" + s + "'");
}

std::string block_name(std::size_t stage, int block, const char* leaf) {
  return "stage" + std::to_string(stage) + ".block" + std::to_string(block) + "." + leaf;
}

std::string stage_name(std::size_t stage, const char* leaf) {
  return "stage" + std::to_string(stage) + "." + leaf;
}

enum class Init { HeFanIn, One, Zero };

struct ParamPlan {
  std::string name;
  Shape shape;
  Init init;
  long long fan_in;
};

// Walks the config and lists every parameter and norm-stat entry in canonical
// order; this single order drives initialization, checkpoints and training.
void plan_parameters(const ModelConfig& cfg, std::vector<ParamPlan>& params,
                     std::vector<std::pair<std::string, int>>& stats) {
  int ch = cfg.in_channels;
  int h = cfg.in_height, w = cfg.in_width;
  for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
    const StageSpec& st = cfg.stages[si];
    if (st.stride == 2) {
      if (st.kind == StageKind::Transformer) {
        h = (h - 2) / 2 + 1;
        w = (w - 2) / 2 + 1;
      } else {
        h = (h + 1) / 2;
        w = (w + 1) / 2;
      }
    }
    if (st.kind == StageKind::ConvStem) {
      params.push_back({block_name(si, 0, "dw.weight"), {ch, 3, 3}, Init::HeFanIn, 9});
      params.push_back({block_name(si, 0, "pw.weight"), {st.channels, ch}, Init::HeFanIn, ch});
      params.push_back({block_name(si, 0, "norm.scale"), {st.channels}, Init::One, 0});
      params.push_back({block_name(si, 0, "norm.shift"), {st.channels}, Init::Zero, 0});
      stats.emplace_back(block_name(si, 0, "norm"), st.channels);
      ch = st.channels;
    } else if (st.kind == StageKind::Mbconv) {
      for (int j = 0; j < st.blocks; ++j) {
        const int cin = j == 0 ? ch : st.channels;
        const int stride = j == 0 ? st.stride : 1;
        const int e = 4 * cin;
        params.push_back({block_name(si, j, "expand.weight"), {e, cin}, Init::HeFanIn, cin});
        params.push_back({block_name(si, j, "norm1.scale"), {e}, Init::One, 0});
        params.push_back({block_name(si, j, "norm1.shift"), {e}, Init::Zero, 0});
        params.push_back({block_name(si, j, "dw.weight"), {e, 3, 3}, Init::HeFanIn, 9});
        params.push_back({block_name(si, j, "norm2.scale"), {e}, Init::One, 0});
        params.push_back({block_name(si, j, "norm2.shift"), {e}, Init::Zero, 0});
        params.push_back({block_name(si, j, "project.weight"), {st.channels, e}, Init::HeFanIn, e});
        if (stride == 2 || cin != st.channels) {
          params.push_back(
              {block_name(si, j, "shortcut.weight"), {st.channels, cin}, Init::HeFanIn, cin});
        }
        stats.emplace_back(block_name(si, j, "norm1"), e);
        stats.emplace_back(block_name(si, j, "norm2"), e);
      }
      ch = st.channels;
    } else {
      if (ch != st.channels) {
        params.push_back({stage_name(si, "proj.weight"), {st.channels, ch}, Init::HeFanIn, ch});
      }
      for (int j = 0; j < st.blocks; ++j) {
        const int c = st.channels;
        params.push_back({block_name(si, j, "norm1.scale"), {c}, Init::One, 0});
        params.push_back({block_name(si, j, "norm1.shift"), {c}, Init::Zero, 0});
        params.push_back({block_name(si, j, "norm2.scale"), {c}, Init::One, 0});
        params.push_back({block_name(si, j, "norm2.shift"), {c}, Init::Zero, 0});
        params.push_back({block_name(si, j, "ffn1.weight"), {4 * c, c}, Init::HeFanIn, c});
        params.push_back({block_name(si, j, "ffn2.weight"), {c, 4 * c}, Init::HeFanIn, 4 * c});
      }
      ch = st.channels;
    }
  }
  // Pre-norm transformer stages need a closing normalization so the residual
  // stream reaches the head at unit scale.
  if (cfg.stages.back().kind == StageKind::Transformer) {
    params.push_back({"final_norm.scale", {ch}, Init::One, 0});
    params.push_back({"final_norm.shift", {ch}, Init::Zero, 0});
  }
  // The head is one composite map, pooling then mixing: every logit reads all
  // ch*h*w activations, so that product is its fan-in.
  params.push_back(
      {"head.weight", {cfg.num_classes, ch}, Init::HeFanIn, static_cast<long long>(ch) * h * w});
  params.push_back({"head.bias", {cfg.num_classes}, Init::Zero, 0});
}

}  // namespace

ModelConfig ModelConfig::desk_default() {
  ModelConfig cfg;
  cfg.stages = {
      {StageKind::ConvStem, 1, 8, 2},
      {StageKind::Mbconv, 2, 16, 2},
      {StageKind::Transformer, 2, 16, 2},
  };
  return cfg;
}

void ModelConfig::validate() const {
  if (in_channels < 1 || in_height < 1 || in_width < 1) {
    throw ConfigError("input dimensions must be positive");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (stages.empty()) throw ConfigError("model needs at least one stage");
  if (stages.front().kind != StageKind::ConvStem) {
    throw ConfigError("the first stage must be the conv stem");
  }
  bool seen_mbconv = false;
  int h = in_height, w = in_width;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& st = stages[i];
    if (st.blocks < 1) throw ConfigError("stage block count must be >= 1");
    if (st.channels < 1) throw ConfigError("stage channels must be >= 1");
    if (st.stride != 1 && st.stride != 2) throw ConfigError("stage stride must be 1 or 2");
    switch (st.kind) {
      case StageKind::ConvStem:
        if (i != 0) throw ConfigError("conv stem only allowed as the first stage");
        if (st.blocks != 1) throw ConfigError("conv stem is a single block");
        if (st.stride == 2) {
          h = (h + 1) / 2;
          w = (w + 1) / 2;
        }
        break;
      case StageKind::Mbconv:
        seen_mbconv = true;
        if (st.stride == 2) {
          if (h % 2 != 0 || w % 2 != 0) {
            throw ConfigError("stride-2 mbconv stage requires even spatial input");
          }
          h /= 2;
          w /= 2;
        }
        break;
      case StageKind::Transformer:
        if (!seen_mbconv) {
          throw ConfigError("a transformer stage requires an earlier mbconv stage");
        }
        if (st.stride == 2) {
          if (h < 2 || w < 2) throw ConfigError("stride-2 transformer stage needs a 2x2 input");
          h = (h - 2) / 2 + 1;
          w = (w - 2) / 2 + 1;
        }
        break;
    }
    if (h < 1 || w < 1) throw ConfigError("stride schedule shrinks the input below 1x1");
  }
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "input_channels=" << in_channels << "\n";
  out << "input_height=" << in_height << "\n";
  out << "input_width=" << in_width << "\n";
  out << "num_classes=" << num_classes << "\n";
  out << "seed=" << seed << "\n";
  out << "stages=";
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) out << ",";
    out << stage_kind_name(stages[i].kind) << ":" << stages[i].blocks << ":"
        << stages[i].channels << ":" << stages[i].stride;
  }
  out << "\n";
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  cfg.stages.clear();
  bool saw_stages = false;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "input_channels") {
        cfg.in_channels = std::stoi(value);
      } else if (key == "input_height") {
        cfg.in_height = std::stoi(value);
      } else if (key == "input_width") {
        cfg.in_width = std::stoi(value);
      } else if (key == "num_classes") {
        cfg.num_classes = std::stoi(value);
      } else if (key == "seed") {
        cfg.seed = std::stoull(value);
      } else if (key == "stages") {
        saw_stages = true;
        std::istringstream sv(value);
        std::string part;
        while (std::getline(sv, part, ',')) {
          std::istringstream pv(part);
          std::string kind, blocks, channels, stride;
          if (!std::getline(pv, kind, ':') || !std::getline(pv, blocks, ':') ||
              !std::getline(pv, channels, ':') || !std::getline(pv, stride, ':')) {
            throw FormatError("bad stage spec '" + part + "'");
          }
          cfg.stages.push_back(
              {stage_kind_from(kind), std::stoi(blocks), std::stoi(channels), std::stoi(stride)});
        }
      } else {
        throw FormatError("unknown config key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw FormatError("bad numeric value in config line: " + line);
    } catch (const std::out_of_range&) {
      throw FormatError("numeric value out of range in config line: " + line);
    }
  }
  if (!saw_stages) throw FormatError("config text lacks a stages line");
  return cfg;
}

Model::Model(const ModelConfig& config, bool initialize) : config_(config) {
  config_.validate();
  std::vector<ParamPlan> plan;
  std::vector<std::pair<std::string, int>> stat_plan;
  plan_parameters(config_, plan, stat_plan);

  std::mt19937_64 eng(config_.seed);
  for (const ParamPlan& p : plan) {
    names_.push_back(p.name);
    if (!initialize || p.init == Init::Zero) {
      params_.emplace(p.name, Tensor::zeros(p.shape));
    } else if (p.init == Init::One) {
      params_.emplace(p.name, Tensor::full(p.shape, 1.0));
    } else {
      const double stddev = std::sqrt(2.0 / static_cast<double>(p.fan_in));
      const long long n = shape_size(p.shape);
      std::vector<double> v(static_cast<std::size_t>(n));
      for (auto& x : v) x = rng::normal(eng, 0.0, stddev);
      params_.emplace(p.name, Tensor::from_values(p.shape, std::move(v)));
    }
  }
  for (const auto& [name, channels] : stat_plan) {
    stat_names_.push_back(name);
    NormStats s;
    s.mean.assign(static_cast<std::size_t>(channels), 0.0);
    s.var.assign(static_cast<std::size_t>(channels), 1.0);
    s.initialized = true;
    stats_.emplace(name, std::move(s));
  }
}

Tensor& Model::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw IndexError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& Model::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw IndexError("unknown parameter '" + name + "'");
  return it->second;
}

void Model::set_param(const std::string& name, Tensor value) {
  Tensor& slot = param(name);
  if (value.shape() != slot.shape()) {
    throw ShapeError("parameter '" + name + "' shape mismatch");
  }
  slot = std::move(value);
}

NormStats& Model::stats(const std::string& name) {
  auto it = stats_.find(name);
  if (it == stats_.end()) throw IndexError("unknown norm statistics '" + name + "'");
  return it->second;
}

const NormStats& Model::stats(const std::string& name) const {
  auto it = stats_.find(name);
  if (it == stats_.end()) throw IndexError("unknown norm statistics '" + name + "'");
  return it->second;
}

long long Model::num_parameters() const {
  long long n = 0;
  for (const auto& name : names_) n += param(name).size();
  return n;
}

Model::Forward Model::forward(const Tensor& batch, Graph* graph, bool training) {
  const bool batched = batch.rank() == 4;
  if (!batched && batch.rank() != 3) {
    throw RankError("forward expects [B,C,H,W] or [C,H,W] input");
  }
  Shape want{config_.in_channels, config_.in_height, config_.in_width};
  Shape got(batch.shape().begin() + (batched ? 1 : 0), batch.shape().end());
  if (got != want) {
    throw ShapeError("input dims do not match the model config");
  }
  const int B = batched ? batch.shape()[0] : 1;

  Tensor x = batched ? batch
                     : reshape(batch, {1, config_.in_channels, config_.in_height, config_.in_width});
  const auto P = [&](const std::string& name) -> Tensor {
    Tensor& t = param(name);
    return graph ? graph->param(t) : t;
  };

  Forward result;
  int ch = config_.in_channels;
  for (std::size_t si = 0; si < config_.stages.size(); ++si) {
    const StageSpec& st = config_.stages[si];
    if (st.kind == StageKind::ConvStem) {
      DepthwiseKernel k{P(block_name(si, 0, "dw.weight")), Padding::Same, st.stride};
      x = depthwise_conv2d(x, k);
      x = pointwise_conv(x, P(block_name(si, 0, "pw.weight")));
      x = normalize(x, NormKind::ChannelStat, P(block_name(si, 0, "norm.scale")),
                    P(block_name(si, 0, "norm.shift")), kNormEps,
                    &stats(block_name(si, 0, "norm")), training);
      x = relu(x);
    } else if (st.kind == StageKind::Mbconv) {
      for (int j = 0; j < st.blocks; ++j) {
        const int cin = j == 0 ? ch : st.channels;
        MbconvParams p;
        p.stride = j == 0 ? st.stride : 1;
        p.expand_weight = P(block_name(si, j, "expand.weight"));
        p.norm1_scale = P(block_name(si, j, "norm1.scale"));
        p.norm1_shift = P(block_name(si, j, "norm1.shift"));
        p.dw_weight = P(block_name(si, j, "dw.weight"));
        p.norm2_scale = P(block_name(si, j, "norm2.scale"));
        p.norm2_shift = P(block_name(si, j, "norm2.shift"));
        p.project_weight = P(block_name(si, j, "project.weight"));
        if (p.stride == 2 || cin != st.channels) {
          p.shortcut_weight = P(block_name(si, j, "shortcut.weight"));
        }
        p.norm1_stats = &stats(block_name(si, j, "norm1"));
        p.norm2_stats = &stats(block_name(si, j, "norm2"));
        x = mbconv_block(x, p, training);
      }
      result.conv_hook = x;
    } else {
      if (st.stride == 2) x = pool2d(x, PoolKind::Max, 2, 2);
      if (ch != st.channels) x = pointwise_conv(x, P(stage_name(si, "proj.weight")));
      for (int j = 0; j < st.blocks; ++j) {
        TransformerParams p;
        p.norm1_scale = P(block_name(si, j, "norm1.scale"));
        p.norm1_shift = P(block_name(si, j, "norm1.shift"));
        p.norm2_scale = P(block_name(si, j, "norm2.scale"));
        p.norm2_shift = P(block_name(si, j, "norm2.shift"));
        p.ffn1_weight = P(block_name(si, j, "ffn1.weight"));
        p.ffn2_weight = P(block_name(si, j, "ffn2.weight"));
        x = transformer_block(x, p);
      }
    }
    ch = st.channels;
  }

  if (config_.stages.back().kind == StageKind::Transformer) {
    x = normalize(x, NormKind::LayerStat, P("final_norm.scale"), P("final_norm.shift"));
  }
  x = pool2d(x, PoolKind::GlobalAvg);
  x = reshape(x, {B, ch});
  Tensor logits = linear(x, P("head.weight"), P("head.bias"));
  result.logits = batched ? logits : reshape(logits, {config_.num_classes});
  return result;
}

Tensor Model::predict_logits(const Tensor& batch) {
  return forward(batch, nullptr, false).logits;
}

std::vector<double> Model::predict_proba(const Tensor& image) {
  if (image.rank() != 3) throw RankError("predict_proba expects a single [C,H,W] image");
  Tensor logits = predict_logits(image);
  Tensor probs = softmax(logits, 0);
  return probs.values();
}

Model build_model(const ModelConfig& config) { return Model(config); }

namespace {

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, std::uint16_t v) {
  put_u8(out, static_cast<std::uint8_t>(v & 0xff));
  put_u8(out, static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) put_u8(out, static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > data.size()) throw FormatError("truncated checkpoint");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data[pos++]);
  }
  std::uint16_t u16() {
    const std::uint16_t a = u8();
    return static_cast<std::uint16_t>(a | (static_cast<std::uint16_t>(u8()) << 8));
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

void put_tensor(std::string& out, const std::string& name, const Shape& shape,
                const std::vector<double>& values) {
  if (name.size() > 0xffff) throw FormatError("tensor name too long");
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.append(name);
  put_u8(out, static_cast<std::uint8_t>(shape.size()));
  for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : values) put_f32(out, static_cast<float>(v));
}

constexpr char kMagic[4] = {'C', 'A', 'T', 'N'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const Model& model, const std::string& path, const CheckpointMeta& meta) {
  std::string blob = model.config().to_text();
  if (meta.has_epoch) blob += "epoch=" + std::to_string(meta.epoch) + "\n";
  if (meta.has_loss) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "loss=%.17g\n", meta.loss);
    blob += buf;
  }

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(blob.size()));
  out.append(blob);

  const auto& params = model.param_names();
  const auto& stats = model.stat_names();
  put_u32(out, static_cast<std::uint32_t>(params.size() + 2 * stats.size()));
  for (const auto& name : params) {
    const Tensor& t = model.param(name);
    put_tensor(out, name, t.shape(), t.values());
  }
  for (const auto& name : stats) {
    const NormStats& s = model.stats(name);
    const Shape shape{static_cast<int>(s.mean.size())};
    put_tensor(out, name + ".running_mean", shape, s.mean);
    put_tensor(out, name + ".running_var", shape, s.var);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("failed writing checkpoint to '" + path + "'");
}

Model load_checkpoint(const std::string& path, CheckpointMeta* meta) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string data = ss.str();

  Reader r{data};
  if (r.bytes(4) != std::string(kMagic, 4)) throw FormatError("bad checkpoint magic");
  if (r.u32() != kVersion) throw FormatError("unsupported checkpoint version");
  const std::uint32_t blob_len = r.u32();
  const std::string blob = r.bytes(blob_len);

  // Split training metadata lines out of the config text.
  std::string config_text;
  CheckpointMeta parsed;
  {
    std::istringstream in(blob);
    std::string line;
    while (std::getline(in, line)) {
      try {
        if (line.rfind("epoch=", 0) == 0) {
          parsed.epoch = std::stoll(line.substr(6));
          parsed.has_epoch = true;
        } else if (line.rfind("loss=", 0) == 0) {
          parsed.loss = std::stod(line.substr(5));
          parsed.has_loss = true;
        } else {
          config_text += line + "\n";
        }
      } catch (const std::exception&) {
        throw FormatError("bad metadata line in checkpoint: " + line);
      }
    }
  }
  ModelConfig cfg = ModelConfig::from_text(config_text);
  Model model = [&] {
    try {
      return Model(cfg, false);
    } catch (const ConfigError& e) {
      throw IntegrityError(std::string("checkpoint config is invalid: ") + e.what());
    }
  }();

  const std::uint32_t count = r.u32();
  std::unordered_set<std::string> applied;
  const std::size_t expected = model.param_names().size() + 2 * model.stat_names().size();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.bytes(name_len);
    if (!applied.insert(name).second) {
      throw IntegrityError("checkpoint repeats tensor '" + name + "'");
    }
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    long long n = 1;
    for (int d = 0; d < rank; ++d) {
      shape[static_cast<std::size_t>(d)] = static_cast<int>(r.u32());
      n *= shape[static_cast<std::size_t>(d)];
    }
    if (n < 1 || n > (1ll << 31)) throw FormatError("implausible tensor size in checkpoint");
    std::vector<double> values(static_cast<std::size_t>(n));
    for (auto& v : values) v = static_cast<double>(r.f32());

    const auto ends_with = [&](const char* suffix) {
      const std::size_t len = std::strlen(suffix);
      return name.size() > len && name.compare(name.size() - len, len, suffix) == 0;
    };
    if (ends_with(".running_mean") || ends_with(".running_var")) {
      const bool is_mean = ends_with(".running_mean");
      const std::string base = name.substr(0, name.rfind('.'));
      try {
        NormStats& s = model.stats(base);
        if (shape.size() != 1 ||
            static_cast<std::size_t>(shape[0]) != s.mean.size()) {
          throw IntegrityError("running statistics shape mismatch for '" + name + "'");
        }
        (is_mean ? s.mean : s.var) = std::move(values);
        s.initialized = true;
      } catch (const IndexError&) {
        throw IntegrityError("checkpoint holds unknown tensor '" + name + "'");
      }
    } else {
      try {
        const Tensor& expected_t = model.param(name);
        if (expected_t.shape() != shape) {
          throw IntegrityError("tensor '" + name + "' shape disagrees with the config");
        }
        model.set_param(name, Tensor::from_values(shape, std::move(values)));
      } catch (const IndexError&) {
        throw IntegrityError("checkpoint holds unknown tensor '" + name + "'");
      }
    }
  }
  if (applied.size() != expected) {
    throw IntegrityError("checkpoint is missing tensors (" + std::to_string(applied.size()) +
                         " of " + std::to_string(expected) + ")");
  }
  if (r.pos != data.size()) throw FormatError("trailing bytes after checkpoint payload");

  if (meta) *meta = parsed;
  return model;
}

}  // namespace catnet
