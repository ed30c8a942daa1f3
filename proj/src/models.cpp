#include "burstkit/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace burstkit::models {

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

const char* task_name(Task t) {
  switch (t) {
    case Task::kEmotion: return "emotion";
    case Task::kCountry: return "country";
    case Task::kAge: return "age";
  }
  return "?";
}

Task parse_task(const std::string& s) {
  if (s == "emotion") return Task::kEmotion;
  if (s == "country") return Task::kCountry;
  if (s == "age") return Task::kAge;
  throw ValidationError("unknown task '" + s + "' (expected emotion/country/age)");
}

std::vector<Task> parse_task_list(const std::string& csv) {
  std::vector<Task> tasks;
  for (const auto& part : split(csv, ',')) {
    std::string name = trim(part);
    if (name.empty()) continue;
    Task t = parse_task(name);
    if (std::find(tasks.begin(), tasks.end(), t) != tasks.end()) {
      throw ValidationError("duplicate task '" + name + "' in task list");
    }
    tasks.push_back(t);
  }
  if (tasks.empty()) throw ValidationError("task list must name at least one task");
  return tasks;
}

std::string format_task_list(const std::vector<Task>& tasks) {
  std::string out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (i) out += ',';
    out += task_name(tasks[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

std::vector<std::size_t> ResNetConfig::stage_blocks() const {
  switch (depth) {
    case Depth::k18: return {2, 2, 2, 2};
    case Depth::k34: return {3, 4, 6, 3};
    case Depth::k50: return {3, 4, 6, 3};
    case Depth::kMini: return {1, 1};
  }
  return {};
}

std::size_t ResNetConfig::feature_dim() const {
  std::size_t stages = stage_blocks().size();
  std::size_t last_width = base_width() << (stages - 1);
  return bottleneck() ? last_width * 4 : last_width;
}

const char* depth_name(ResNetConfig::Depth d) {
  switch (d) {
    case ResNetConfig::Depth::k18: return "18";
    case ResNetConfig::Depth::k34: return "34";
    case ResNetConfig::Depth::k50: return "50";
    case ResNetConfig::Depth::kMini: return "mini";
  }
  return "?";
}

ResNetConfig::Depth parse_depth(const std::string& s) {
  if (s == "18") return ResNetConfig::Depth::k18;
  if (s == "34") return ResNetConfig::Depth::k34;
  if (s == "50") return ResNetConfig::Depth::k50;
  if (s == "mini") return ResNetConfig::Depth::kMini;
  throw ValidationError("unknown resnet depth '" + s + "' (expected 18/34/50/mini)");
}

std::size_t HeadConfig::feature_dim() const {
  switch (kind) {
    case Kind::kMean: return input_dim;
    case Kind::kFc128: return kFcUnits;
    case Kind::kLstm128: return kLstmUnits;
    case Kind::kNetVlad5: return kVladClusters * input_dim;
    case Kind::kAutoPool: return input_dim;
  }
  return 0;
}

const char* head_kind_name(HeadConfig::Kind k) {
  switch (k) {
    case HeadConfig::Kind::kMean: return "mean";
    case HeadConfig::Kind::kFc128: return "fc128";
    case HeadConfig::Kind::kLstm128: return "lstm128";
    case HeadConfig::Kind::kNetVlad5: return "netvlad5";
    case HeadConfig::Kind::kAutoPool: return "autopool";
  }
  return "?";
}

HeadConfig::Kind parse_head_kind(const std::string& s) {
  if (s == "mean") return HeadConfig::Kind::kMean;
  if (s == "fc128") return HeadConfig::Kind::kFc128;
  if (s == "lstm128") return HeadConfig::Kind::kLstm128;
  if (s == "netvlad5") return HeadConfig::Kind::kNetVlad5;
  if (s == "autopool") return HeadConfig::Kind::kAutoPool;
  throw ValidationError("unknown head kind '" + s +
                        "' (expected mean/fc128/lstm128/netvlad5/autopool)");
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

namespace {

// He-uniform: U(-limit, limit) with limit = sqrt(6 / fan_in).
TensorD he_uniform(Rng& rng, Shape shape, std::size_t fan_in) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rand_uniform(rng, -limit, limit);
  return TensorD::from_data(std::move(shape), std::move(v), true);
}

void couple_vlad(NetVladParams& p) {
  const double sigma = 1.0;
  std::size_t kc = p.centers.dim(0), d = p.centers.dim(1);
  std::vector<double> w(kc * d), b(kc);
  const auto& c = p.centers.value();
  for (std::size_t i = 0; i < kc; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      w[i * d + j] = 2.0 * sigma * c[i * d + j];
      sq += c[i * d + j] * c[i * d + j];
    }
    b[i] = -sigma * sq;
  }
  p.weights = TensorD::from_data({kc, d}, std::move(w), true);
  p.biases = TensorD::from_data({kc}, std::move(b), true);
}

}  // namespace

// ---------------------------------------------------------------------------
// Aggregation operators
// ---------------------------------------------------------------------------

TensorD aggregate_mean(const TensorD& e) {
  if (e.rank() != 2 || e.dim(0) < 1) {
    throw ValidationError("aggregate_mean expects a T x D matrix with T >= 1, got " +
                          shape_str(e.shape()));
  }
  return reduce_mean(e, 0);  // keepdims: 1 x D
}

NetVladParams NetVladParams::init(std::size_t clusters, std::size_t d, Rng& rng) {
  if (clusters < 1 || d < 1) throw ValidationError("netvlad needs clusters >= 1 and d >= 1");
  NetVladParams p;
  std::vector<double> c(clusters * d);
  for (auto& x : c) x = rand_normal(rng);
  p.centers = TensorD::from_data({clusters, d}, std::move(c), true);
  couple_vlad(p);
  return p;
}

void NetVladParams::reinit_from_descriptors(const std::vector<std::vector<double>>& descriptors,
                                            Rng& rng) {
  std::size_t kc = centers.dim(0), d = centers.dim(1);
  if (descriptors.empty()) throw ValidationError("need at least one descriptor to seed centers");
  for (const auto& row : descriptors) {
    if (row.size() != d) {
      throw ValidationError("descriptor dimension " + std::to_string(row.size()) +
                            " does not match centers (" + std::to_string(d) + ")");
    }
  }
  auto& cv = centers.mutable_value();
  if (descriptors.size() >= kc) {
    std::vector<std::size_t> idx(descriptors.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle_vec(idx, rng);
    for (std::size_t i = 0; i < kc; ++i) {
      std::copy(descriptors[idx[i]].begin(), descriptors[idx[i]].end(), cv.begin() + i * d);
    }
  } else {
    for (std::size_t i = 0; i < kc; ++i) {  // with replacement when short
      const auto& row = descriptors[rand_index(rng, descriptors.size())];
      std::copy(row.begin(), row.end(), cv.begin() + i * d);
    }
  }
  couple_vlad(*this);
}

TensorD netvlad_forward(const TensorD& e, const NetVladParams& p) {
  if (e.rank() != 2 || e.dim(0) < 1 || e.dim(1) != p.centers.dim(1)) {
    throw ValidationError("netvlad_forward expects T x D input matching the centers, got " +
                          shape_str(e.shape()));
  }
  std::size_t kc = p.centers.dim(0), d = p.centers.dim(1);
  TensorD scores = add(matmul(e, transpose(p.weights)), p.biases);  // T x K
  TensorD assign = softmax(scores);                                 // rows sum to 1
  TensorD weighted = matmul(transpose(assign), e);                  // K x D: sum_t a[t,k] x_t
  TensorD mass = reshape(reduce_sum(assign, 0), {kc, 1});           // per-cluster total assignment
  TensorD v = sub(weighted, mul(mass, p.centers));                  // K x D residual aggregate
  TensorD intra = l2_normalize(v, 1, 1e-12);
  return l2_normalize_all(reshape(intra, {1, kc * d}), 1e-12);
}

TensorD autopool_forward(const TensorD& e, const TensorD& alpha) {
  if (e.rank() != 2 || e.dim(0) < 1) {
    throw ValidationError("autopool_forward expects a T x D matrix with T >= 1, got " +
                          shape_str(e.shape()));
  }
  if (alpha.size() != e.dim(1)) {
    throw ValidationError("autopool alpha size " + std::to_string(alpha.size()) +
                          " does not match feature dimension " + std::to_string(e.dim(1)));
  }
  TensorD scaled = mul(e, alpha);  // broadcasts alpha across rows
  // softmax works over rows, so pivot to D x T and back for a per-column one.
  TensorD weights = transpose(softmax(transpose(scaled)));
  return reduce_sum(mul(e, weights), 0);  // 1 x D
}

LstmParams LstmParams::init(std::size_t input_dim, std::size_t units, Rng& rng) {
  if (input_dim < 1 || units < 1) throw ValidationError("lstm needs input_dim, units >= 1");
  LstmParams p;
  p.input_dim = input_dim;
  p.units = units;
  p.wx = he_uniform(rng, {input_dim, 4 * units}, input_dim);
  p.wh = he_uniform(rng, {units, 4 * units}, units);
  p.b = TensorD::zeros({4 * units}, true);
  return p;
}

TensorD lstm_forward(const TensorD& e, const LstmParams& p) {
  if (e.rank() != 2 || e.dim(0) < 1 || e.dim(1) != p.input_dim) {
    throw ValidationError("lstm_forward expects T x " + std::to_string(p.input_dim) +
                          " input, got " + shape_str(e.shape()));
  }
  std::size_t t_steps = e.dim(0), h_units = p.units;
  TensorD et = transpose(e);  // D x T so each step is a column slice
  TensorD h = TensorD::zeros({1, h_units});
  TensorD c = TensorD::zeros({1, h_units});
  for (std::size_t t = 0; t < t_steps; ++t) {
    TensorD xt = transpose(slice_cols(et, t, 1));  // 1 x D
    TensorD z = add(add(matmul(xt, p.wx), matmul(h, p.wh)), p.b);
    TensorD gi = sigmoid(slice_cols(z, 0, h_units));
    TensorD gf = sigmoid(slice_cols(z, h_units, h_units));
    TensorD gg = tanh_t(slice_cols(z, 2 * h_units, h_units));
    TensorD go = sigmoid(slice_cols(z, 3 * h_units, h_units));
    c = add(mul(gf, c), mul(gi, gg));
    h = mul(go, tanh_t(c));
  }
  return h;
}

Dense Dense::init(std::size_t in, std::size_t out, Rng& rng) {
  if (in < 1 || out < 1) throw ValidationError("dense needs in, out >= 1");
  Dense d;
  d.w = he_uniform(rng, {in, out}, in);
  d.b = TensorD::zeros({out}, true);
  return d;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write checkpoint: " + path);
  f.write("BKPT", 4);
  write_u32le(f, 1);
  write_u32le(f, static_cast<std::uint32_t>(c.entries.size()));
  for (const auto& [name, entry] : c.entries) {
    if (name.size() > 0xffff) throw ValidationError("parameter name too long: " + name);
    write_u16le(f, static_cast<std::uint16_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u8(f, static_cast<std::uint8_t>(entry.shape.size()));
    std::size_t numel = 1;
    for (std::size_t d : entry.shape) {
      write_u32le(f, static_cast<std::uint32_t>(d));
      numel *= d;
    }
    if (numel != entry.values.size()) {
      throw ValidationError("checkpoint entry '" + name + "' shape does not match data length");
    }
    for (double v : entry.values) write_f32le(f, static_cast<float>(v));
  }
  if (!f) throw ValidationError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "BKPT", 4) != 0) {
    throw ValidationError("bad checkpoint magic in " + path);
  }
  std::uint32_t version = read_u32le(f, "checkpoint version");
  if (version != 1) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version) + " in " +
                          path);
  }
  std::uint32_t count = read_u32le(f, "checkpoint entry count");
  Checkpoint c;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = read_u16le(f, "parameter name length");
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f) throw ValidationError("truncated input while reading parameter name in " + path);
    std::uint8_t rank = read_u8(f, "parameter rank");
    Checkpoint::Entry entry;
    std::size_t numel = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      std::uint32_t dim = read_u32le(f, "parameter dimension");
      entry.shape.push_back(dim);
      numel *= dim;
    }
    std::vector<float> raw;
    read_f32le_vec(f, numel, raw, "parameter data of '" + name + "'");
    entry.values.assign(raw.begin(), raw.end());
    if (!c.entries.emplace(std::move(name), std::move(entry)).second) {
      throw ValidationError("duplicate parameter entry in " + path);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// ResNet trunk
// ---------------------------------------------------------------------------

namespace detail {

ConvBn ConvBn::init(std::size_t out_c, std::size_t in_c, std::size_t k, std::size_t stride,
                    std::size_t pad, Rng& rng) {
  ConvBn cb;
  cb.weight = he_uniform(rng, {out_c, in_c, k, k}, in_c * k * k);
  cb.gamma = TensorD::filled({out_c}, 1.0, true);
  cb.beta = TensorD::zeros({out_c}, true);
  cb.run_mean.assign(out_c, 0.0);
  cb.run_var.assign(out_c, 1.0);
  cb.stride = stride;
  cb.pad = pad;
  return cb;
}

TensorD ConvBn::forward(const TensorD& x, bool training) {
  TensorD y = conv2d(x, weight, stride, pad);
  return batch_norm2d(y, gamma, beta, run_mean, run_var, training);
}

TensorD ResidualBlock::forward(const TensorD& x, bool training) {
  TensorD y = x;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    y = convs[i].forward(y, training);
    if (i + 1 < convs.size()) y = relu(y);
  }
  TensorD shortcut = down ? down->forward(x, training) : x;
  return relu(add(y, shortcut));
}

ResNetTrunk ResNetTrunk::init(const ResNetConfig& cfg, Rng& rng) {
  ResNetTrunk t;
  t.cfg = cfg;
  bool mini = cfg.depth == ResNetConfig::Depth::kMini;
  std::size_t stem_out = cfg.base_width();
  t.stem = mini ? ConvBn::init(stem_out, 1, 3, 1, 1, rng)   // 3x3 stride 1
                : ConvBn::init(stem_out, 1, 7, 2, 3, rng);  // 7x7 stride 2
  std::size_t in_c = stem_out;
  auto blocks = cfg.stage_blocks();
  for (std::size_t si = 0; si < blocks.size(); ++si) {
    std::size_t width = cfg.base_width() << si;
    std::size_t out_c = cfg.bottleneck() ? width * 4 : width;
    std::vector<ResidualBlock> stage;
    for (std::size_t bi = 0; bi < blocks[si]; ++bi) {
      std::size_t stride = (si > 0 && bi == 0) ? 2 : 1;
      ResidualBlock blk;
      if (cfg.bottleneck()) {
        blk.convs.push_back(ConvBn::init(width, in_c, 1, 1, 0, rng));
        blk.convs.push_back(ConvBn::init(width, width, 3, stride, 1, rng));
        blk.convs.push_back(ConvBn::init(out_c, width, 1, 1, 0, rng));
      } else {
        blk.convs.push_back(ConvBn::init(width, in_c, 3, stride, 1, rng));
        blk.convs.push_back(ConvBn::init(width, width, 3, 1, 1, rng));
      }
      if (stride != 1 || in_c != out_c) {
        blk.down = ConvBn::init(out_c, in_c, 1, stride, 0, rng);
      }
      stage.push_back(std::move(blk));
      in_c = out_c;
    }
    t.stages.push_back(std::move(stage));
  }
  return t;
}

TensorD ResNetTrunk::forward(const TensorD& x, bool training, Rng& rng) {
  if (x.rank() != 4 || x.dim(1) != 1) {
    throw ValidationError("resnet expects B x 1 x F x M input, got " + shape_str(x.shape()));
  }
  if (x.dim(2) < 8 || x.dim(3) < 8) {
    throw ValidationError("resnet input " + std::to_string(x.dim(2)) + "x" +
                          std::to_string(x.dim(3)) + " is undersized; minimum is 8x8");
  }
  TensorD y = relu(stem.forward(x, training));
  y = max_pool2d(y, 3, 2, 1);
  for (auto& stage : stages) {
    for (auto& blk : stage) y = blk.forward(y, training);
  }
  y = global_avg_pool(y);  // B x feature_dim
  if (training && cfg.dropout_rate > 0.0) y = dropout(y, cfg.dropout_rate, training, rng);
  return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (tasks.empty()) throw ValidationError("model needs at least one task");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (std::size_t j = i + 1; j < tasks.size(); ++j) {
      if (tasks[i] == tasks[j]) throw ValidationError("duplicate task in model config");
    }
  }
  if (k < 1) throw ValidationError("model needs k >= 1 emotion dimensions");
  if (n_countries < 2) throw ValidationError("model needs n_countries >= 2");
  if (family == Family::kEmbedding && head.input_dim < 1) {
    throw ValidationError("embedding head needs input_dim >= 1");
  }
  if (family == Family::kResnet &&
      (resnet.dropout_rate < 0.0 || resnet.dropout_rate >= 1.0)) {
    throw ValidationError("dropout_rate must be in [0, 1)");
  }
}

bool ModelConfig::has_task(Task t) const {
  return std::find(tasks.begin(), tasks.end(), t) != tasks.end();
}

std::string ModelConfig::to_sidecar() const {
  std::ostringstream ss;
  ss << "format = burstkit-model\n";
  ss << "family = " << (family == Family::kResnet ? "resnet" : "embedding") << "\n";
  ss << "tasks = " << format_task_list(tasks) << "\n";
  ss << "k = " << k << "\n";
  ss << "n_countries = " << n_countries << "\n";
  if (family == Family::kResnet) {
    ss << "depth = " << depth_name(resnet.depth) << "\n";
    ss << "dropout = " << fmt_g(resnet.dropout_rate) << "\n";
  } else {
    ss << "head = " << head_kind_name(head.kind) << "\n";
    ss << "emb_dim = " << head.input_dim << "\n";
  }
  return ss.str();
}

namespace {

std::size_t kv_size(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ValidationError("model sidecar missing key '" + key + "'");
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw ValidationError("model sidecar key '" + key + "' is not a number: " + it->second);
  }
}

const std::string& kv_get(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ValidationError("model sidecar missing key '" + key + "'");
  return it->second;
}

}  // namespace

ModelConfig ModelConfig::from_sidecar(const std::string& text) {
  auto kv = parse_kv_text(text);
  if (kv_get(kv, "format") != "burstkit-model") {
    throw ValidationError("not a model sidecar (format = " + kv_get(kv, "format") + ")");
  }
  ModelConfig cfg;
  const std::string& family = kv_get(kv, "family");
  if (family == "resnet") {
    cfg.family = Family::kResnet;
  } else if (family == "embedding") {
    cfg.family = Family::kEmbedding;
  } else {
    throw ValidationError("unknown model family '" + family + "'");
  }
  cfg.tasks = parse_task_list(kv_get(kv, "tasks"));
  cfg.k = kv_size(kv, "k");
  cfg.n_countries = kv_size(kv, "n_countries");
  if (cfg.family == Family::kResnet) {
    cfg.resnet.depth = parse_depth(kv_get(kv, "depth"));
    cfg.resnet.dropout_rate = std::stod(kv_get(kv, "dropout"));
  } else {
    cfg.head.kind = parse_head_kind(kv_get(kv, "head"));
    cfg.head.input_dim = kv_size(kv, "emb_dim");
  }
  cfg.validate();
  return cfg;
}

const TensorD& require_output(const TaskOutputs& out, Task t) {
  const std::optional<TensorD>* slot = nullptr;
  switch (t) {
    case Task::kEmotion: slot = &out.emotion; break;
    case Task::kCountry: slot = &out.country; break;
    case Task::kAge: slot = &out.age; break;
  }
  if (!slot || !slot->has_value()) {
    throw ValidationError(std::string("model has no ") + task_name(t) + " head");
  }
  return slot->value();
}

// ---------------------------------------------------------------------------
// MultitaskModel
// ---------------------------------------------------------------------------

MultitaskModel::MultitaskModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  std::size_t feat_dim = 0;
  if (cfg_.family == ModelConfig::Family::kResnet) {
    trunk_ = std::make_unique<detail::ResNetTrunk>(detail::ResNetTrunk::init(cfg_.resnet, rng));
    feat_dim = cfg_.resnet.feature_dim();
  } else {
    std::size_t d = cfg_.head.input_dim;
    switch (cfg_.head.kind) {
      case HeadConfig::Kind::kMean:
        break;
      case HeadConfig::Kind::kFc128:
        fc_ = Dense::init(d, HeadConfig::kFcUnits, rng);
        break;
      case HeadConfig::Kind::kLstm128:
        lstm_ = LstmParams::init(d, HeadConfig::kLstmUnits, rng);
        break;
      case HeadConfig::Kind::kNetVlad5:
        vlad_ = NetVladParams::init(HeadConfig::kVladClusters, d, rng);
        break;
      case HeadConfig::Kind::kAutoPool:
        alpha_ = TensorD::zeros({d}, true);  // starts as mean pooling
        break;
    }
    feat_dim = cfg_.head.feature_dim();
  }
  for (Task t : {Task::kEmotion, Task::kCountry, Task::kAge}) {
    if (!cfg_.has_task(t)) continue;
    std::size_t out = t == Task::kEmotion ? cfg_.k
                      : t == Task::kCountry ? cfg_.n_countries
                                            : 1;
    task_heads_.emplace(t, Dense::init(feat_dim, out, rng));
  }
  register_params();
}

void MultitaskModel::register_params() {
  params_.clear();
  buffers_.clear();
  auto add = [&](const std::string& name, const TensorD& t) {
    params_.push_back({name, t});
  };
  auto add_convbn = [&](const std::string& prefix, detail::ConvBn& cb) {
    add(prefix + ".conv.weight", cb.weight);
    add(prefix + ".bn.gamma", cb.gamma);
    add(prefix + ".bn.beta", cb.beta);
    buffers_.emplace_back(prefix + ".bn.running_mean", &cb.run_mean);
    buffers_.emplace_back(prefix + ".bn.running_var", &cb.run_var);
  };
  if (trunk_) {
    add_convbn("trunk.stem", trunk_->stem);
    for (std::size_t si = 0; si < trunk_->stages.size(); ++si) {
      for (std::size_t bi = 0; bi < trunk_->stages[si].size(); ++bi) {
        auto& blk = trunk_->stages[si][bi];
        std::string base =
            "trunk.stage" + std::to_string(si) + ".block" + std::to_string(bi);
        for (std::size_t ci = 0; ci < blk.convs.size(); ++ci) {
          add_convbn(base + ".conv" + std::to_string(ci), blk.convs[ci]);
        }
        if (blk.down) add_convbn(base + ".down", *blk.down);
      }
    }
  }
  if (fc_) {
    add("head.fc.w", fc_->w);
    add("head.fc.b", fc_->b);
  }
  if (lstm_) {
    add("head.lstm.wx", lstm_->wx);
    add("head.lstm.wh", lstm_->wh);
    add("head.lstm.b", lstm_->b);
  }
  if (vlad_) {
    add("head.vlad.centers", vlad_->centers);
    add("head.vlad.weights", vlad_->weights);
    add("head.vlad.biases", vlad_->biases);
  }
  if (alpha_) add("head.autopool.alpha", *alpha_);
  for (auto& [t, dense] : task_heads_) {
    std::string base = std::string("task.") + task_name(t);
    add(base + ".w", dense.w);
    add(base + ".b", dense.b);
  }
}

TaskOutputs MultitaskModel::project_tasks(const TensorD& features) {
  TaskOutputs out;
  for (auto& [t, dense] : task_heads_) {
    TensorD y = dense.forward(features);
    switch (t) {
      case Task::kEmotion: out.emotion = y; break;
      case Task::kCountry: out.country = softmax(y); break;
      case Task::kAge: out.age = y; break;
    }
  }
  return out;
}

TaskOutputs MultitaskModel::forward_audio(const TensorD& x, bool training, Rng& rng) {
  if (cfg_.family != ModelConfig::Family::kResnet) {
    throw ValidationError("forward_audio called on an embedding-family model");
  }
  return project_tasks(trunk_->forward(x, training, rng));
}

TaskOutputs MultitaskModel::forward_embeddings(const std::vector<TensorD>& clips, bool training,
                                               Rng& rng) {
  (void)training;
  (void)rng;
  if (cfg_.family != ModelConfig::Family::kEmbedding) {
    throw ValidationError("forward_embeddings called on a resnet-family model");
  }
  if (clips.empty()) throw ValidationError("forward_embeddings needs at least one clip");
  std::vector<TensorD> rows;
  rows.reserve(clips.size());
  for (const auto& e : clips) {
    if (e.rank() != 2 || e.dim(1) != cfg_.head.input_dim) {
      throw ValidationError("embedding clip shape " + shape_str(e.shape()) +
                            " does not match head input_dim " +
                            std::to_string(cfg_.head.input_dim));
    }
    switch (cfg_.head.kind) {
      case HeadConfig::Kind::kMean:
        rows.push_back(aggregate_mean(e));
        break;
      case HeadConfig::Kind::kFc128:
        rows.push_back(relu(fc_->forward(aggregate_mean(e))));
        break;
      case HeadConfig::Kind::kLstm128:
        rows.push_back(lstm_forward(e, *lstm_));
        break;
      case HeadConfig::Kind::kNetVlad5:
        rows.push_back(netvlad_forward(e, *vlad_));
        break;
      case HeadConfig::Kind::kAutoPool:
        rows.push_back(autopool_forward(e, *alpha_));
        break;
    }
  }
  return project_tasks(rows.size() == 1 ? rows[0] : concat(rows, 0));
}

Checkpoint MultitaskModel::to_checkpoint() const {
  Checkpoint c;
  for (const auto& p : params_) {
    c.entries[p.name] = {p.tensor.shape(), p.tensor.value()};
  }
  for (const auto& [name, buf] : buffers_) {
    c.entries[name] = {{buf->size()}, *buf};
  }
  return c;
}

void MultitaskModel::load_state(const Checkpoint& c) {
  std::size_t consumed = 0;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Checkpoint::Entry& {
    auto it = c.entries.find(name);
    if (it == c.entries.end()) {
      throw ValidationError("checkpoint is missing parameter '" + name + "'");
    }
    if (it->second.shape != shape) {
      throw ValidationError("checkpoint parameter '" + name + "' has shape " +
                            shape_str(it->second.shape) + ", expected " + shape_str(shape));
    }
    ++consumed;
    return it->second;
  };
  for (auto& p : params_) {
    const auto& entry = fetch(p.name, p.tensor.shape());
    p.tensor.mutable_value() = entry.values;
  }
  for (auto& [name, buf] : buffers_) {
    const auto& entry = fetch(name, {buf->size()});
    *buf = entry.values;
  }
  if (consumed != c.entries.size()) {
    for (const auto& [name, entry] : c.entries) {
      bool known = false;
      for (const auto& p : params_) known = known || p.name == name;
      for (const auto& b : buffers_) known = known || b.first == name;
      if (!known) throw ValidationError("checkpoint has unexpected parameter '" + name + "'");
    }
  }
}

void MultitaskModel::init_netvlad_from(const std::vector<std::vector<double>>& descriptors,
                                       Rng& rng) {
  if (!vlad_) return;
  vlad_->reinit_from_descriptors(descriptors, rng);
  register_params();  // reinit replaces the coupled weight/bias tensors
}

void save_model(const std::string& path, const MultitaskModel& m) {
  save_checkpoint(path, m.to_checkpoint());
  write_text_file(path + ".meta", m.config().to_sidecar());
}

MultitaskModel load_model(const std::string& path) {
  ModelConfig cfg = ModelConfig::from_sidecar(read_text_file(path + ".meta"));
  Rng rng(0);  // initialization is discarded by load_state
  MultitaskModel m(cfg, rng);
  m.load_state(load_checkpoint(path));
  return m;
}

}  // namespace burstkit::models
