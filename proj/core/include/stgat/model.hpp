#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stgat/checkpoint.hpp"
#include "stgat/matrix.hpp"
#include "stgat/metrics.hpp"
#include "stgat/netrecon.hpp"
#include "stgat/panel.hpp"
#include "stgat/tensor.hpp"

namespace stgat::model {

// One quarter's graph: top institutions by assets, standardized features,
// pruned LGD edges (the macro stress multiplier is applied inside the
// forward pass, where it is learnable), macro state, distress labels.
struct GraphSnapshot {
  int quarter = 0;
  std::string quarter_tag;
  std::vector<std::string> certs;
  Matrix x;  // n x 13, standardized within the quarter
  net::EdgeList edges;
  std::array<double, panel::kMacroDim> z{};
  std::vector<std::uint8_t> labels;

  std::size_t n() const { return certs.size(); }
};

enum class Ablation { FULL, NO_MACRO, NO_TEMPORAL, NO_ATTENTION, PERM_EDGE };

const char* ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

struct ModelConfig {
  std::size_t feature_dim = panel::kFeatureCount;
  std::size_t macro_dim = panel::kMacroDim;
  std::size_t gat_heads = 8;
  std::size_t gat_head_dim = 8;   // per-head output; layer output = heads * dim
  std::size_t lstm_hidden = 64;   // per direction
  std::size_t lstm_layers = 2;
  std::size_t attn_dim = 64;
  std::size_t head_hidden = 64;
  std::size_t macro_hidden = 4;   // 7 -> 4 -> 1 stress multiplier
  double leaky_slope = 0.2;

  std::size_t gat_out() const { return gat_heads * gat_head_dim; }
  std::size_t seq_dim() const { return 2 * lstm_hidden; }
  std::size_t head_in(Ablation a) const {
    const std::size_t ctx = a == Ablation::NO_TEMPORAL ? gat_out() : seq_dim();
    return ctx + feature_dim + macro_dim;
  }
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t patience = 8;
  std::size_t max_epochs = 200;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dropout = 0.3;
  std::size_t history_window = 8;
  Ablation ablation = Ablation::FULL;
  ModelConfig dims;
};

// every learnable tensor of the ST-GAT
//
// All heads of a GAT layer live in flat tensors: columns [k*d, (k+1)*d) of
// `w` are head k's linear map W^k, and the matching slices of a_src / a_dst
// are its attention vector halves (scoring node and counterparty).
struct GatStack {
  ad::Tensor w;      // in x (heads * head_dim)
  ad::Tensor a_src;  // 1 x (heads * head_dim)
  ad::Tensor a_dst;  // 1 x (heads * head_dim)
};

struct LstmDir {
  ad::Tensor w_ih;  // in x 4H, gate order i f g o
  ad::Tensor w_hh;  // H x 4H
  ad::Tensor b;     // 1 x 4H
};

struct ModelParams {
  ModelConfig dims;
  Ablation ablation = Ablation::FULL;
  std::uint64_t seed = 0;

  GatStack gat1, gat2;
  std::vector<std::array<LstmDir, 2>> lstm;  // [layer][0=fwd, 1=bwd]
  ad::Tensor attn_w, attn_b, attn_v;
  net::MacroMlp macro;
  ad::Tensor head_w1, head_b1, bn_gamma, bn_beta, head_w2, head_b2;
  ad::BatchNormState bn_state;

  std::vector<ad::Tensor> learnable() const;
  ad::Checkpoint to_checkpoint() const;
  static ModelParams from_checkpoint(const ad::Checkpoint& ckpt);
};

// uniform fan-in init, substreams keyed by (seed, tensor name)
ModelParams init_params(const ModelConfig& dims, Ablation ablation,
                        std::uint64_t seed);

// ---- forward pieces --------------------------------------------------------

// attention coefficients of one layer, aligned with the edge arrays below
struct AttentionRecord {
  std::vector<std::size_t> src, dst;          // includes self loops at the end
  std::vector<std::vector<double>> alpha;     // per head, modulated+renormalized
};

// Edge arrays with self loops appended, shared across layers and epochs.
struct QuarterGraph {
  std::size_t n = 0;
  std::vector<std::size_t> src, dst;
  std::vector<double> edge_w;       // LGD weight, 0.0 on self-loop slots
  std::vector<double> self_onehot;  // 1.0 on self-loop slots
  ad::Tensor x;                     // constant n x feature_dim
  static QuarterGraph build(const GraphSnapshot& snap);
};

// One multi-head attention layer over in-window counterparties. w_tilde is
// the per-edge modulation weight (self loops pinned to 1). Rows of the
// renormalized attention sum to 1 per head.
ad::Tensor gat_layer(const ad::Tensor& x, const QuarterGraph& g,
                     const GatStack& stack, std::size_t heads,
                     const ad::Tensor& w_tilde, double leaky_slope,
                     AttentionRecord* retain);

// Two stacked layers; returns n x gat_out embeddings.
ad::Tensor spatial_encode(const QuarterGraph& g, const ModelParams& p,
                          const ad::Tensor& w_tilde,
                          std::vector<AttentionRecord>* retain);

// BiLSTM over a batch of equally-shaped sequences plus temporal attention.
// steps: per time step, a B x gat_out tensor. Returns the context (B x
// seq_dim) and the attention weights (B x L; empty for NO_ATTENTION).
struct TemporalOut {
  ad::Tensor context;
  std::vector<std::vector<double>> beta;  // [batch][step]
};
TemporalOut temporal_encode(const std::vector<ad::Tensor>& steps,
                            const ModelParams& p);

// dense -> batchnorm -> elu -> dropout -> dense -> sigmoid, scores in (0,1)
ad::Tensor risk_head(const ad::Tensor& context, const ad::Tensor& x_current,
                     const ad::Tensor& z_rows, ModelParams& p, bool train,
                     double dropout_p, const ad::DropoutKey& key);

// mean over instances of -alpha_t (1 - p_t)^gamma log(p_t)
ad::Tensor focal_loss(const ad::Tensor& scores,
                      const std::vector<std::uint8_t>& labels, double gamma,
                      double alpha);

// ---- training and prediction ------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_auprc = 0.0;
};

struct TrainResult {
  ModelParams params;  // parameters of the best validation epoch
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_auprc = 0.0;
};

// Full-graph gradient steps quarter by quarter; early stopping on
// validation AUPRC with the configured patience. Deterministic per seed.
TrainResult train(const std::vector<GraphSnapshot>& snapshots,
                  const eval::SplitSpec& split, const TrainConfig& cfg,
                  std::uint64_t seed);

struct NodePrediction {
  std::string cert;
  int quarter = 0;
  double score = 0.0;
  std::uint8_t label = 0;
  // (history quarter, beta), earliest first; empty when the temporal
  // attention path is ablated away
  std::vector<std::pair<int, double>> beta;
};

struct QuarterPredictions {
  int quarter = 0;
  std::string quarter_tag;
  std::vector<NodePrediction> nodes;
  std::vector<AttentionRecord> spatial_attention;  // one record per GAT layer
};

// Eval-mode scores for every institution present in quarter `t`, with the
// temporal attention trail and (optionally) spatial attention retained.
QuarterPredictions predict(ModelParams& params,
                           const std::vector<GraphSnapshot>& snapshots, int t,
                           const TrainConfig& cfg,
                           bool retain_spatial_attention = false);

// PERM_EDGE runs operate on a permuted copy of every snapshot; the
// permutation is keyed by (seed, quarter) so train and predict agree.
std::vector<GraphSnapshot> apply_edge_permutation(
    const std::vector<GraphSnapshot>& snapshots, std::uint64_t seed);

}  // namespace stgat::model
