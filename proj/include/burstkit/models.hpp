#pragma once

// Model zoo: ResNet trunks over log-mel spectrograms, frozen-embedding
// aggregation heads (mean, FC, LSTM, NetVLAD, AutoPool), and hard-parameter
// shared multitask output layers, plus checkpoint serialization.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "burstkit/common.hpp"
#include "burstkit/nn_ops.hpp"
#include "burstkit/tensor.hpp"

namespace burstkit::models {

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

enum class Task { kEmotion = 0, kCountry = 1, kAge = 2 };

const char* task_name(Task t);
Task parse_task(const std::string& s);
// Comma-separated list, e.g. "emotion,country,age". Must be non-empty and
// duplicate-free.
std::vector<Task> parse_task_list(const std::string& csv);
std::string format_task_list(const std::vector<Task>& tasks);

// ---------------------------------------------------------------------------
// Architecture configuration
// ---------------------------------------------------------------------------

struct ResNetConfig {
  enum class Depth { k18, k34, k50, kMini };
  Depth depth = Depth::kMini;
  double dropout_rate = 0.0;  // applied after global average pooling, train only

  bool bottleneck() const { return depth == Depth::k50; }
  std::vector<std::size_t> stage_blocks() const;
  std::size_t base_width() const { return depth == Depth::kMini ? 16 : 64; }
  // Trunk output dimension after global average pooling.
  std::size_t feature_dim() const;
};

const char* depth_name(ResNetConfig::Depth d);
ResNetConfig::Depth parse_depth(const std::string& s);

struct HeadConfig {
  enum class Kind { kMean, kFc128, kLstm128, kNetVlad5, kAutoPool };
  Kind kind = Kind::kMean;
  std::size_t input_dim = 1024;  // frozen-embedding dimension D

  static constexpr std::size_t kFcUnits = 128;
  static constexpr std::size_t kLstmUnits = 128;
  static constexpr std::size_t kVladClusters = 5;

  // Dimension handed to the task layers.
  std::size_t feature_dim() const;
};

const char* head_kind_name(HeadConfig::Kind k);
HeadConfig::Kind parse_head_kind(const std::string& s);

// ---------------------------------------------------------------------------
// Aggregation operators over an embedding sequence E (T x D)
// ---------------------------------------------------------------------------

// Column mean, returned as a 1 x D row.
TensorD aggregate_mean(const TensorD& e);

struct NetVladParams {
  TensorD centers;  // K x D
  TensorD weights;  // K x D soft-assignment weights
  TensorD biases;   // K

  // Random-normal centers with the standard soft-assignment coupling
  // w_k = 2*sigma*c_k, b_k = -sigma*||c_k||^2 (sigma = 1).
  static NetVladParams init(std::size_t clusters, std::size_t d, Rng& rng);
  // Re-seeds the centers from sampled descriptor rows, keeping the coupling.
  void reinit_from_descriptors(const std::vector<std::vector<double>>& descriptors, Rng& rng);
};

// Soft-assigned residual aggregation with intra-norm and global L2 norm;
// returns a 1 x (K*D) row.
TensorD netvlad_forward(const TensorD& e, const NetVladParams& p);

// Per-dimension adaptive pooling: out_d = sum_t E[t,d] * softmax_t(alpha_d * E[:,d]).
// alpha has shape {D}; alpha = 0 recovers the column mean. Returns 1 x D.
TensorD autopool_forward(const TensorD& e, const TensorD& alpha);

struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t units = 0;
  TensorD wx;  // D x 4H, gate order (input, forget, candidate, output)
  TensorD wh;  // H x 4H
  TensorD b;   // 4H

  static LstmParams init(std::size_t input_dim, std::size_t units, Rng& rng);
};

// Unidirectional recurrence; returns the final hidden state as 1 x H.
TensorD lstm_forward(const TensorD& e, const LstmParams& p);

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

struct Dense {
  TensorD w;  // in x out
  TensorD b;  // out

  static Dense init(std::size_t in, std::size_t out, Rng& rng);
  TensorD forward(const TensorD& x) const { return linear(x, w, b); }
};

// ---------------------------------------------------------------------------
// Checkpoints ("BKPT": magic, u32 version=1, u32 count, then per entry
// {u16 name length, name, u8 rank, u32 dims..., f32 little-endian data})
// ---------------------------------------------------------------------------

struct Checkpoint {
  struct Entry {
    std::vector<std::size_t> shape;
    std::vector<double> values;
  };
  std::map<std::string, Entry> entries;  // sorted by name => deterministic files
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Multitask model
// ---------------------------------------------------------------------------

struct ModelConfig {
  enum class Family { kResnet, kEmbedding };
  Family family = Family::kEmbedding;
  ResNetConfig resnet;  // used when family == kResnet
  HeadConfig head;      // used when family == kEmbedding
  std::vector<Task> tasks = {Task::kEmotion, Task::kCountry, Task::kAge};
  std::size_t k = 10;           // emotion dimensions
  std::size_t n_countries = 4;  // country classes

  void validate() const;
  bool has_task(Task t) const;
  std::string to_sidecar() const;
  static ModelConfig from_sidecar(const std::string& text);
};

struct TaskOutputs {
  std::optional<TensorD> emotion;  // B x K, linear
  std::optional<TensorD> country;  // B x C, rows on the probability simplex
  std::optional<TensorD> age;      // B x 1, linear
};

// Fetches one task's output, throwing when the model has no such head.
const TensorD& require_output(const TaskOutputs& out, Task t);

struct NamedParam {
  std::string name;
  TensorD tensor;
};

namespace detail {

struct ConvBn {
  TensorD weight;  // O x I x k x k
  TensorD gamma, beta;
  std::vector<double> run_mean, run_var;
  std::size_t stride = 1, pad = 0;

  static ConvBn init(std::size_t out_c, std::size_t in_c, std::size_t k, std::size_t stride,
                     std::size_t pad, Rng& rng);
  TensorD forward(const TensorD& x, bool training);
};

struct ResidualBlock {
  std::vector<ConvBn> convs;      // 2 for basic, 3 for bottleneck
  std::optional<ConvBn> down;     // 1x1 projection when shape changes
  TensorD forward(const TensorD& x, bool training);
};

struct ResNetTrunk {
  ResNetConfig cfg;
  ConvBn stem;
  std::vector<std::vector<ResidualBlock>> stages;

  static ResNetTrunk init(const ResNetConfig& cfg, Rng& rng);
  // x: B x 1 x F x M -> B x feature_dim()
  TensorD forward(const TensorD& x, bool training, Rng& rng);
};

}  // namespace detail

class MultitaskModel {
 public:
  MultitaskModel(const ModelConfig& cfg, Rng& rng);
  MultitaskModel(const MultitaskModel&) = delete;
  MultitaskModel& operator=(const MultitaskModel&) = delete;
  MultitaskModel(MultitaskModel&&) = default;
  MultitaskModel& operator=(MultitaskModel&&) = default;

  const ModelConfig& config() const { return cfg_; }

  // ResNet family forward; x is B x 1 x F x M.
  TaskOutputs forward_audio(const TensorD& x, bool training, Rng& rng);
  // Embedding family forward; one T x D matrix per clip.
  TaskOutputs forward_embeddings(const std::vector<TensorD>& clips, bool training, Rng& rng);

  // Trainable parameters in a stable order.
  const std::vector<NamedParam>& parameters() const { return params_; }
  Checkpoint to_checkpoint() const;  // parameters plus batch-norm buffers
  void load_state(const Checkpoint& c);

  // Optional center seeding for NetVLAD heads (no-op for other heads).
  void init_netvlad_from(const std::vector<std::vector<double>>& descriptors, Rng& rng);

 private:
  TaskOutputs project_tasks(const TensorD& features);
  void register_params();

  ModelConfig cfg_;
  // Heap-held so buffers_ pointers into its batch-norm state survive moves.
  std::unique_ptr<detail::ResNetTrunk> trunk_;
  std::optional<Dense> fc_;           // fc128 head
  std::optional<LstmParams> lstm_;    // lstm128 head
  std::optional<NetVladParams> vlad_; // netvlad5 head
  std::optional<TensorD> alpha_;      // autopool head
  std::map<Task, Dense> task_heads_;
  std::vector<NamedParam> params_;
  std::vector<std::pair<std::string, std::vector<double>*>> buffers_;
};

// BKPT weights at `path` plus a structured text sidecar at `path + ".meta"`.
void save_model(const std::string& path, const MultitaskModel& m);
MultitaskModel load_model(const std::string& path);

}  // namespace burstkit::models
