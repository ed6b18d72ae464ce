#include "stgat/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "stgat/errors.hpp"
#include "stgat/optim.hpp"
#include "stgat/rng.hpp"

namespace stgat::model {

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::FULL: return "FULL";
    case Ablation::NO_MACRO: return "NO_MACRO";
    case Ablation::NO_TEMPORAL: return "NO_TEMPORAL";
    case Ablation::NO_ATTENTION: return "NO_ATTENTION";
    case Ablation::PERM_EDGE: return "PERM_EDGE";
  }
  throw InternalError("ablation_name: bad value");
}

Ablation ablation_from_name(const std::string& name) {
  std::string up = name;
  std::transform(up.begin(), up.end(), up.begin(), ::toupper);
  if (up == "FULL") return Ablation::FULL;
  if (up == "NO_MACRO") return Ablation::NO_MACRO;
  if (up == "NO_TEMPORAL") return Ablation::NO_TEMPORAL;
  if (up == "NO_ATTENTION") return Ablation::NO_ATTENTION;
  if (up == "PERM_EDGE") return Ablation::PERM_EDGE;
  throw UsageError("unknown ablation '" + name +
                   "' (FULL, NO_MACRO, NO_TEMPORAL, NO_ATTENTION, PERM_EDGE)");
}

// ---- parameters -------------------------------------------------------------

namespace {

ad::Tensor uniform_param(std::uint64_t seed, const std::string& name,
                         std::size_t rows, std::size_t cols,
                         std::size_t fan_in) {
  Rng rng(mix_seed(seed, fnv1a64(name)));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return ad::Tensor::leaf({rows, cols}, std::move(v), true);
}

ad::Tensor zeros_param(std::size_t rows, std::size_t cols) {
  return ad::Tensor::leaf({rows, cols}, std::vector<double>(rows * cols, 0.0),
                          true);
}

ad::Tensor const_param(std::size_t rows, std::size_t cols, double v) {
  return ad::Tensor::leaf({rows, cols}, std::vector<double>(rows * cols, v),
                          true);
}

bool uses_lstm(Ablation a) { return a != Ablation::NO_TEMPORAL; }
bool uses_attention(Ablation a) {
  return a != Ablation::NO_TEMPORAL && a != Ablation::NO_ATTENTION;
}
bool uses_macro(Ablation a) { return a != Ablation::NO_MACRO; }

}  // namespace

ModelParams init_params(const ModelConfig& dims, Ablation ablation,
                        std::uint64_t seed) {
  ModelParams p;
  p.dims = dims;
  p.ablation = ablation;
  p.seed = seed;

  auto gat_stack = [&](const char* base, std::size_t in_dim) {
    GatStack s;
    const std::string b(base);
    s.w = uniform_param(seed, b + ".w", in_dim, dims.gat_out(), in_dim);
    s.a_src =
        uniform_param(seed, b + ".a_src", 1, dims.gat_out(), dims.gat_head_dim);
    s.a_dst =
        uniform_param(seed, b + ".a_dst", 1, dims.gat_out(), dims.gat_head_dim);
    return s;
  };
  p.gat1 = gat_stack("gat1", dims.feature_dim);
  p.gat2 = gat_stack("gat2", dims.gat_out());

  if (uses_lstm(ablation)) {
    for (std::size_t l = 0; l < dims.lstm_layers; ++l) {
      const std::size_t in = l == 0 ? dims.gat_out() : dims.seq_dim();
      std::array<LstmDir, 2> layer;
      for (std::size_t d = 0; d < 2; ++d) {
        const std::string base = "lstm.l" + std::to_string(l) +
                                 (d == 0 ? ".fwd" : ".bwd");
        layer[d].w_ih = uniform_param(seed, base + ".w_ih", in,
                                      4 * dims.lstm_hidden, in);
        layer[d].w_hh = uniform_param(seed, base + ".w_hh", dims.lstm_hidden,
                                      4 * dims.lstm_hidden, dims.lstm_hidden);
        layer[d].b = zeros_param(1, 4 * dims.lstm_hidden);
      }
      p.lstm.push_back(std::move(layer));
    }
  }
  if (uses_attention(ablation)) {
    p.attn_w = uniform_param(seed, "attn.w", dims.seq_dim(), dims.attn_dim,
                             dims.seq_dim());
    p.attn_b = zeros_param(1, dims.attn_dim);
    p.attn_v = uniform_param(seed, "attn.v", dims.attn_dim, 1, dims.attn_dim);
  }
  if (uses_macro(ablation)) {
    p.macro.w1 = uniform_param(seed, "macro.w1", dims.macro_dim,
                               dims.macro_hidden, dims.macro_dim);
    p.macro.b1 = zeros_param(1, dims.macro_hidden);
    p.macro.w2 = uniform_param(seed, "macro.w2", dims.macro_hidden, 1,
                               dims.macro_hidden);
    p.macro.b2 = zeros_param(1, 1);
  }
  const std::size_t head_in = dims.head_in(ablation);
  p.head_w1 = uniform_param(seed, "head.w1", head_in, dims.head_hidden, head_in);
  p.head_b1 = zeros_param(1, dims.head_hidden);
  p.bn_gamma = const_param(1, dims.head_hidden, 1.0);
  p.bn_beta = zeros_param(1, dims.head_hidden);
  p.head_w2 = uniform_param(seed, "head.w2", dims.head_hidden, 1,
                            dims.head_hidden);
  p.head_b2 = zeros_param(1, 1);
  p.bn_state.init(dims.head_hidden);
  return p;
}

std::vector<ad::Tensor> ModelParams::learnable() const {
  std::vector<ad::Tensor> out;
  for (const auto* stack : {&gat1, &gat2}) {
    out.push_back(stack->w);
    out.push_back(stack->a_src);
    out.push_back(stack->a_dst);
  }
  for (const auto& layer : lstm) {
    for (const auto& dir : layer) {
      out.push_back(dir.w_ih);
      out.push_back(dir.w_hh);
      out.push_back(dir.b);
    }
  }
  if (attn_w.defined()) {
    out.push_back(attn_w);
    out.push_back(attn_b);
    out.push_back(attn_v);
  }
  if (macro.w1.defined()) {
    out.push_back(macro.w1);
    out.push_back(macro.b1);
    out.push_back(macro.w2);
    out.push_back(macro.b2);
  }
  out.push_back(head_w1);
  out.push_back(head_b1);
  out.push_back(bn_gamma);
  out.push_back(bn_beta);
  out.push_back(head_w2);
  out.push_back(head_b2);
  return out;
}

ad::Checkpoint ModelParams::to_checkpoint() const {
  ad::Checkpoint ck;
  ck.meta["ablation"] = ablation_name(ablation);
  ck.meta["seed"] = std::to_string(seed);
  ck.meta["gat_heads"] = std::to_string(dims.gat_heads);
  ck.meta["gat_head_dim"] = std::to_string(dims.gat_head_dim);
  ck.meta["lstm_hidden"] = std::to_string(dims.lstm_hidden);
  ck.meta["lstm_layers"] = std::to_string(dims.lstm_layers);
  ck.meta["attn_dim"] = std::to_string(dims.attn_dim);
  ck.meta["head_hidden"] = std::to_string(dims.head_hidden);
  ck.meta["macro_hidden"] = std::to_string(dims.macro_hidden);
  ck.meta["feature_dim"] = std::to_string(dims.feature_dim);
  ck.meta["macro_dim"] = std::to_string(dims.macro_dim);

  auto put = [&ck](const std::string& name, const ad::Tensor& t,
                   bool learnable = true) {
    ck.entries.push_back({name, t, learnable});
  };
  auto put_stack = [&](const char* base, const GatStack& stack) {
    const std::string b(base);
    put(b + ".w", stack.w);
    put(b + ".a_src", stack.a_src);
    put(b + ".a_dst", stack.a_dst);
  };
  put_stack("gat1", gat1);
  put_stack("gat2", gat2);
  for (std::size_t l = 0; l < lstm.size(); ++l) {
    for (std::size_t d = 0; d < 2; ++d) {
      const std::string base =
          "lstm.l" + std::to_string(l) + (d == 0 ? ".fwd" : ".bwd");
      put(base + ".w_ih", lstm[l][d].w_ih);
      put(base + ".w_hh", lstm[l][d].w_hh);
      put(base + ".b", lstm[l][d].b);
    }
  }
  if (attn_w.defined()) {
    put("attn.w", attn_w);
    put("attn.b", attn_b);
    put("attn.v", attn_v);
  }
  if (macro.w1.defined()) {
    put("macro.w1", macro.w1);
    put("macro.b1", macro.b1);
    put("macro.w2", macro.w2);
    put("macro.b2", macro.b2);
  }
  put("head.w1", head_w1);
  put("head.b1", head_b1);
  put("head.bn_gamma", bn_gamma);
  put("head.bn_beta", bn_beta);
  put("head.w2", head_w2);
  put("head.b2", head_b2);
  put("head.bn_running_mean",
      ad::constant({1, bn_state.running_mean.size()}, bn_state.running_mean),
      false);
  put("head.bn_running_var",
      ad::constant({1, bn_state.running_var.size()}, bn_state.running_var),
      false);
  return ck;
}

ModelParams ModelParams::from_checkpoint(const ad::Checkpoint& ck) {
  std::unordered_map<std::string, const ad::CheckpointEntry*> by_name;
  for (const auto& e : ck.entries) by_name[e.name] = &e;
  auto need = [&](const std::string& name) -> ad::Tensor {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw DataError("checkpoint is missing tensor '" + name + "'");
    }
    return it->second->tensor;
  };
  auto meta_num = [&](const char* key) -> std::size_t {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) {
      throw DataError("checkpoint is missing meta key '" + std::string(key) +
                      "'");
    }
    return static_cast<std::size_t>(std::stoull(it->second));
  };

  ModelParams p;
  p.ablation = ablation_from_name(ck.meta.at("ablation"));
  p.seed = std::stoull(ck.meta.at("seed"));
  p.dims.gat_heads = meta_num("gat_heads");
  p.dims.gat_head_dim = meta_num("gat_head_dim");
  p.dims.lstm_hidden = meta_num("lstm_hidden");
  p.dims.lstm_layers = meta_num("lstm_layers");
  p.dims.attn_dim = meta_num("attn_dim");
  p.dims.head_hidden = meta_num("head_hidden");
  p.dims.macro_hidden = meta_num("macro_hidden");
  p.dims.feature_dim = meta_num("feature_dim");
  p.dims.macro_dim = meta_num("macro_dim");

  auto get_stack = [&](const char* base) {
    const std::string b(base);
    return GatStack{need(b + ".w"), need(b + ".a_src"), need(b + ".a_dst")};
  };
  p.gat1 = get_stack("gat1");
  p.gat2 = get_stack("gat2");
  if (uses_lstm(p.ablation)) {
    for (std::size_t l = 0; l < p.dims.lstm_layers; ++l) {
      const std::string lb = "lstm.l" + std::to_string(l);
      p.lstm.push_back({LstmDir{need(lb + ".fwd.w_ih"), need(lb + ".fwd.w_hh"),
                                need(lb + ".fwd.b")},
                        LstmDir{need(lb + ".bwd.w_ih"), need(lb + ".bwd.w_hh"),
                                need(lb + ".bwd.b")}});
    }
  }
  if (uses_attention(p.ablation)) {
    p.attn_w = need("attn.w");
    p.attn_b = need("attn.b");
    p.attn_v = need("attn.v");
  }
  if (uses_macro(p.ablation)) {
    p.macro.w1 = need("macro.w1");
    p.macro.b1 = need("macro.b1");
    p.macro.w2 = need("macro.w2");
    p.macro.b2 = need("macro.b2");
  }
  p.head_w1 = need("head.w1");
  p.head_b1 = need("head.b1");
  p.bn_gamma = need("head.bn_gamma");
  p.bn_beta = need("head.bn_beta");
  p.head_w2 = need("head.w2");
  p.head_b2 = need("head.b2");
  p.bn_state.running_mean = need("head.bn_running_mean").value();
  p.bn_state.running_var = need("head.bn_running_var").value();
  return p;
}

// ---- spatial stage ----------------------------------------------------------

QuarterGraph QuarterGraph::build(const GraphSnapshot& snap) {
  QuarterGraph g;
  g.n = snap.n();
  const std::size_t e_real = snap.edges.edges.size();
  g.src.reserve(e_real + g.n);
  g.dst.reserve(e_real + g.n);
  g.edge_w.reserve(e_real + g.n);
  g.self_onehot.assign(e_real + g.n, 0.0);
  for (const auto& e : snap.edges.edges) {
    if (e.src >= g.n || e.dst >= g.n) {
      throw InternalError("QuarterGraph: edge endpoint out of range");
    }
    g.src.push_back(e.src);
    g.dst.push_back(e.dst);
    g.edge_w.push_back(e.weight);
  }
  for (std::size_t i = 0; i < g.n; ++i) {
    g.src.push_back(i);
    g.dst.push_back(i);
    g.edge_w.push_back(0.0);
    g.self_onehot[e_real + i] = 1.0;
  }
  g.x = ad::constant({g.n, snap.x.cols()}, snap.x.values());
  return g;
}

ad::Tensor gat_layer(const ad::Tensor& x, const QuarterGraph& g,
                     const GatStack& stack, std::size_t heads,
                     const ad::Tensor& w_tilde, double leaky_slope,
                     AttentionRecord* retain) {
  const std::size_t n = g.n;
  const std::size_t d = stack.w.cols() / heads;  // per-head output width

  ad::Tensor p = ad::matmul(x, stack.w);              // n x (K*d)
  // per-node score halves first, gathered per edge afterwards
  ad::Tensor s_src = ad::block_rowsum(ad::mul_rowvec(p, stack.a_src), d);
  ad::Tensor s_dst = ad::block_rowsum(ad::mul_rowvec(p, stack.a_dst), d);
  // raw score per edge per head: a_src . Wx_i + a_dst . Wx_j
  ad::Tensor score = ad::leaky_relu(
      ad::add(ad::gather_rows(s_src, g.src), ad::gather_rows(s_dst, g.dst)),
      leaky_slope);                                   // E x K
  ad::Tensor alpha = ad::segment_softmax(score, g.src, n);
  // modulate by the macro-conditioned edge weight, then renormalize so each
  // node's coefficients stay a distribution
  ad::Tensor weighted = ad::scale_rows(alpha, w_tilde);
  ad::Tensor denom =
      ad::gather_rows(ad::segment_sum(weighted, g.src, n), g.src);
  ad::Tensor alpha_hat = ad::div(weighted, denom);    // E x K
  if (retain) {
    retain->src = g.src;
    retain->dst = g.dst;
    retain->alpha.assign(heads, std::vector<double>(g.src.size()));
    for (std::size_t e = 0; e < g.src.size(); ++e) {
      for (std::size_t k = 0; k < heads; ++k) {
        retain->alpha[k][e] = alpha_hat.value()[e * heads + k];
      }
    }
  }
  return ad::elu(ad::attn_aggregate(alpha_hat, p, g.src, g.dst));  // n x (K*d)
}

ad::Tensor spatial_encode(const QuarterGraph& g, const ModelParams& p,
                          const ad::Tensor& w_tilde,
                          std::vector<AttentionRecord>* retain) {
  AttentionRecord* r1 = nullptr;
  AttentionRecord* r2 = nullptr;
  if (retain) {
    retain->assign(2, AttentionRecord{});
    r1 = &(*retain)[0];
    r2 = &(*retain)[1];
  }
  ad::Tensor h1 = gat_layer(g.x, g, p.gat1, p.dims.gat_heads, w_tilde,
                            p.dims.leaky_slope, r1);
  return gat_layer(h1, g, p.gat2, p.dims.gat_heads, w_tilde,
                   p.dims.leaky_slope, r2);
}

// ---- temporal stage ---------------------------------------------------------

namespace {

// one direction of one LSTM layer; returns the hidden state per step
std::vector<ad::Tensor> lstm_pass(const std::vector<ad::Tensor>& inputs,
                                  const LstmDir& dir, std::size_t hidden,
                                  bool reverse) {
  const std::size_t steps = inputs.size();
  const std::size_t batch = inputs[0].rows();
  // the input-path matmul for every step at once
  ad::Tensor stacked = steps == 1 ? inputs[0] : ad::concat_rows(inputs);
  ad::Tensor xw = ad::add_rowvec(ad::matmul(stacked, dir.w_ih), dir.b);
  std::vector<ad::Tensor> hs(steps);
  ad::Tensor h = ad::constant({batch, hidden},
                              std::vector<double>(batch * hidden, 0.0));
  ad::Tensor c = h;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    ad::Tensor gates = ad::add(
        ad::slice_rows(xw, t * batch, (t + 1) * batch),
        ad::matmul(h, dir.w_hh));
    ad::Tensor gi = ad::sigmoid(ad::slice_cols(gates, 0, hidden));
    ad::Tensor gf = ad::sigmoid(ad::slice_cols(gates, hidden, 2 * hidden));
    ad::Tensor gg = ad::tanh(ad::slice_cols(gates, 2 * hidden, 3 * hidden));
    ad::Tensor go = ad::sigmoid(ad::slice_cols(gates, 3 * hidden, 4 * hidden));
    c = ad::add(ad::mul(gf, c), ad::mul(gi, gg));
    h = ad::mul(go, ad::tanh(c));
    hs[t] = h;
  }
  return hs;
}

}  // namespace

TemporalOut temporal_encode(const std::vector<ad::Tensor>& steps,
                            const ModelParams& p) {
  if (steps.empty()) throw DataError("temporal_encode: empty sequence");
  const std::size_t L = steps.size();
  const std::size_t batch = steps[0].rows();

  std::vector<ad::Tensor> layer_in = steps;
  for (const auto& layer : p.lstm) {
    auto fwd = lstm_pass(layer_in, layer[0], p.dims.lstm_hidden, false);
    auto bwd = lstm_pass(layer_in, layer[1], p.dims.lstm_hidden, true);
    std::vector<ad::Tensor> concat(L);
    for (std::size_t t = 0; t < L; ++t) {
      concat[t] = ad::concat_cols({fwd[t], bwd[t]});
    }
    layer_in = std::move(concat);
  }
  const std::vector<ad::Tensor>& s = layer_in;  // B x seq_dim per step

  TemporalOut out;
  if (!p.attn_w.defined()) {
    out.context = s[L - 1];  // last hidden state, no attribution
    return out;
  }
  std::vector<ad::Tensor> scores(L);
  for (std::size_t t = 0; t < L; ++t) {
    ad::Tensor u =
        ad::tanh(ad::add_rowvec(ad::matmul(s[t], p.attn_w), p.attn_b));
    scores[t] = ad::matmul(u, p.attn_v);  // B x 1
  }
  ad::Tensor beta = ad::softmax(ad::concat_cols(scores));  // B x L
  ad::Tensor context;
  for (std::size_t t = 0; t < L; ++t) {
    ad::Tensor term = ad::scale_rows(s[t], ad::slice_cols(beta, t, t + 1));
    context = t == 0 ? term : ad::add(context, term);
  }
  out.context = context;
  out.beta.assign(batch, std::vector<double>(L, 0.0));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < L; ++t) {
      out.beta[b][t] = beta.value()[b * L + t];
    }
  }
  return out;
}

ad::Tensor risk_head(const ad::Tensor& context, const ad::Tensor& x_current,
                     const ad::Tensor& z_rows, ModelParams& p, bool train,
                     double dropout_p, const ad::DropoutKey& key) {
  ad::Tensor in = ad::concat_cols({context, x_current, z_rows});
  ad::Tensor a1 = ad::add_rowvec(ad::matmul(in, p.head_w1), p.head_b1);
  ad::Tensor bn = ad::batchnorm(a1, p.bn_gamma, p.bn_beta, p.bn_state, train);
  ad::Tensor act = ad::dropout(ad::elu(bn), dropout_p, key, train);
  return ad::sigmoid(ad::add_rowvec(ad::matmul(act, p.head_w2), p.head_b2));
}

ad::Tensor focal_loss(const ad::Tensor& scores,
                      const std::vector<std::uint8_t>& labels, double gamma,
                      double alpha) {
  const std::size_t n = scores.size();
  if (labels.size() != n) {
    throw InternalError("focal_loss: labels/scores size mismatch");
  }
  std::vector<double> y(n), alpha_t(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = labels[i] ? 1.0 : 0.0;
    alpha_t[i] = labels[i] ? alpha : 1.0 - alpha;
  }
  ad::Tensor yt = ad::constant(scores.shape(), std::move(y));
  ad::Tensor one_minus_y = ad::affine(yt, -1.0, 1.0);
  ad::Tensor wt = ad::constant(scores.shape(), std::move(alpha_t));

  ad::Tensor r = ad::clamp(scores, 1e-7, 1.0 - 1e-7);
  // p_t = r where y=1, 1-r where y=0
  ad::Tensor pt =
      ad::add(ad::mul(r, yt), ad::mul(ad::affine(r, -1.0, 1.0), one_minus_y));
  ad::Tensor focal = ad::powc(ad::affine(pt, -1.0, 1.0), gamma);
  ad::Tensor nll = ad::affine(ad::log(pt), -1.0, 0.0);
  return ad::mean_all(ad::mul(wt, ad::mul(focal, nll)));
}

// ---- batching plan and full forward -----------------------------------------

namespace {

struct SeqGroup {
  std::vector<int> quarters;                        // ascending, ends at t
  std::vector<std::size_t> members;                 // rows in snapshot t
  std::vector<std::vector<std::size_t>> gather_idx; // [step][member]
};

struct Workspace {
  const std::vector<GraphSnapshot>* snaps = nullptr;
  std::vector<QuarterGraph> graphs;
  std::vector<std::unordered_map<std::string, std::size_t>> cert_rows;
};

Workspace make_workspace(const std::vector<GraphSnapshot>& snaps) {
  Workspace ws;
  ws.snaps = &snaps;
  ws.graphs.reserve(snaps.size());
  ws.cert_rows.reserve(snaps.size());
  for (const auto& s : snaps) {
    ws.graphs.push_back(QuarterGraph::build(s));
    std::unordered_map<std::string, std::size_t> rows;
    for (std::size_t i = 0; i < s.certs.size(); ++i) rows[s.certs[i]] = i;
    ws.cert_rows.push_back(std::move(rows));
  }
  return ws;
}

std::vector<SeqGroup> plan_sequences(const Workspace& ws, int t,
                                     std::size_t window) {
  const auto& snaps = *ws.snaps;
  const auto& snap = snaps[t];
  const int lo = std::max(0, t - static_cast<int>(window) + 1);
  std::map<std::vector<int>, SeqGroup> groups;
  for (std::size_t row = 0; row < snap.n(); ++row) {
    std::vector<int> qs;
    for (int q = lo; q <= t; ++q) {
      if (ws.cert_rows[q].count(snap.certs[row])) qs.push_back(q);
    }
    auto& g = groups[qs];
    g.quarters = qs;
    g.members.push_back(row);
  }
  std::vector<SeqGroup> out;
  out.reserve(groups.size());
  for (auto& [qs, g] : groups) {
    g.gather_idx.assign(qs.size(), {});
    for (std::size_t s = 0; s < qs.size(); ++s) {
      g.gather_idx[s].reserve(g.members.size());
      for (std::size_t m : g.members) {
        g.gather_idx[s].push_back(
            ws.cert_rows[qs[s]].at(snaps[t].certs[m]));
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

struct BatchForward {
  ad::Tensor scores;                    // B x 1
  std::vector<std::size_t> rows;        // snapshot-t row per batch position
  std::vector<std::vector<std::pair<int, double>>> beta;  // per batch position
  double multiplier = 1.0;              // m_t diagnostic
};

BatchForward forward_quarter(Workspace& ws, ModelParams& p, int t,
                             const TrainConfig& cfg, bool train_mode,
                             std::size_t epoch,
                             std::vector<AttentionRecord>* retain) {
  const auto& snaps = *ws.snaps;
  const auto& snap = snaps[t];
  const int lo = cfg.ablation == Ablation::NO_TEMPORAL
                     ? t
                     : std::max(0, t - static_cast<int>(cfg.history_window) + 1);

  // spatial embeddings for every quarter the sequences can touch
  std::vector<ad::Tensor> h_quarter(snaps.size());
  BatchForward out;
  for (int q = lo; q <= t; ++q) {
    const QuarterGraph& g = ws.graphs[q];
    const std::size_t n_edges = g.src.size();
    ad::Tensor w_tilde;
    if (uses_macro(cfg.ablation)) {
      ad::Tensor m = net::macro_multiplier(snaps[q].z, p.macro);
      if (q == t) out.multiplier = m.item();
      w_tilde = ad::add(
          ad::scalar_scale(ad::constant({n_edges, 1}, g.edge_w), m),
          ad::constant({n_edges, 1}, g.self_onehot));
    } else {
      std::vector<double> w(n_edges);
      for (std::size_t e = 0; e < n_edges; ++e) {
        w[e] = g.edge_w[e] + g.self_onehot[e];
      }
      w_tilde = ad::constant({n_edges, 1}, std::move(w));
    }
    std::vector<AttentionRecord>* rec = (retain && q == t) ? retain : nullptr;
    h_quarter[q] = spatial_encode(g, p, w_tilde, rec);
  }

  ad::Tensor context;
  if (cfg.ablation == Ablation::NO_TEMPORAL) {
    context = h_quarter[t];
    out.rows.resize(snap.n());
    for (std::size_t i = 0; i < snap.n(); ++i) out.rows[i] = i;
    out.beta.assign(snap.n(), {});
  } else {
    auto groups = plan_sequences(ws, t, cfg.history_window);
    std::vector<ad::Tensor> parts;
    parts.reserve(groups.size());
    for (const auto& g : groups) {
      std::vector<ad::Tensor> steps(g.quarters.size());
      for (std::size_t s = 0; s < g.quarters.size(); ++s) {
        steps[s] = ad::gather_rows(h_quarter[g.quarters[s]], g.gather_idx[s]);
      }
      TemporalOut tout = temporal_encode(steps, p);
      parts.push_back(tout.context);
      for (std::size_t m = 0; m < g.members.size(); ++m) {
        out.rows.push_back(g.members[m]);
        std::vector<std::pair<int, double>> b;
        if (!tout.beta.empty()) {
          for (std::size_t s = 0; s < g.quarters.size(); ++s) {
            b.emplace_back(g.quarters[s], tout.beta[m][s]);
          }
        }
        out.beta.push_back(std::move(b));
      }
    }
    context = parts.size() == 1 ? parts[0] : ad::concat_rows(parts);
  }

  // current features and macro state, in batch order
  const std::size_t batch = out.rows.size();
  std::vector<double> xcur(batch * snap.x.cols());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < snap.x.cols(); ++f) {
      xcur[b * snap.x.cols() + f] = snap.x(out.rows[b], f);
    }
  }
  std::vector<double> zrows(batch * panel::kMacroDim);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < panel::kMacroDim; ++j) {
      zrows[b * panel::kMacroDim + j] = snap.z[j];
    }
  }
  ad::DropoutKey key{p.seed, epoch, static_cast<std::uint64_t>(t)};
  out.scores = risk_head(
      context, ad::constant({batch, snap.x.cols()}, std::move(xcur)),
      ad::constant({batch, panel::kMacroDim}, std::move(zrows)), p, train_mode,
      cfg.dropout, key);
  return out;
}

ModelParams clone_params(const ModelParams& p) {
  return ModelParams::from_checkpoint(p.to_checkpoint());
}

}  // namespace

std::vector<GraphSnapshot> apply_edge_permutation(
    const std::vector<GraphSnapshot>& snapshots, std::uint64_t seed) {
  std::vector<GraphSnapshot> out = snapshots;
  for (auto& s : out) {
    if (s.n() >= 2) {
      s.edges = net::permute_edges(
          s.edges, mix_seed(seed, 0xed6e5u,
                            static_cast<std::uint64_t>(s.quarter)));
    }
  }
  return out;
}

TrainResult train(const std::vector<GraphSnapshot>& snapshots,
                  const eval::SplitSpec& split, const TrainConfig& cfg,
                  std::uint64_t seed) {
  split.validate();
  const int max_q = static_cast<int>(snapshots.size()) - 1;
  if (split.test_quarters.back() > max_q) {
    throw DataError("train: split references quarter beyond the panel");
  }
  bool val_has_positive = false;
  for (int q : split.val_quarters) {
    for (auto y : snapshots[q].labels) val_has_positive |= y != 0;
  }
  if (!val_has_positive) {
    throw DataError("train: no distress cases in validation quarters; "
                    "AUPRC is undefined");
  }

  const std::vector<GraphSnapshot>* data = &snapshots;
  std::vector<GraphSnapshot> permuted;
  if (cfg.ablation == Ablation::PERM_EDGE) {
    permuted = apply_edge_permutation(snapshots, seed);
    data = &permuted;
  }
  Workspace ws = make_workspace(*data);

  ModelParams params = init_params(cfg.dims, cfg.ablation, seed);
  params.seed = seed;
  ad::AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.weight_decay = cfg.weight_decay;
  ad::Adam adam(params.learnable(), adam_cfg);

  auto val_auprc = [&]() {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (int q : split.val_quarters) {
      BatchForward fw = forward_quarter(ws, params, q, cfg, false, 0, nullptr);
      for (std::size_t b = 0; b < fw.rows.size(); ++b) {
        scores.push_back(fw.scores.value()[b]);
        labels.push_back((*data)[q].labels[fw.rows[b]]);
      }
    }
    return eval::auprc(scores, labels);
  };

  TrainResult res;
  double best = -1.0;
  ModelParams best_params;
  std::size_t since_improvement = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    for (int t : split.train_quarters) {
      ad::Tape tape;
      BatchForward fw = forward_quarter(ws, params, t, cfg, true, epoch, nullptr);
      std::vector<std::uint8_t> y(fw.rows.size());
      for (std::size_t b = 0; b < fw.rows.size(); ++b) {
        y[b] = (*data)[t].labels[fw.rows[b]];
      }
      ad::Tensor loss =
          focal_loss(fw.scores, y, cfg.focal_gamma, cfg.focal_alpha);
      loss_sum += loss.item();
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
    }
    const double val = val_auprc();
    res.log.push_back({epoch,
                       loss_sum / static_cast<double>(split.train_quarters.size()),
                       val});
    if (val > best) {
      best = val;
      res.best_epoch = epoch;
      best_params = clone_params(params);
      since_improvement = 0;
    } else if (++since_improvement >= cfg.patience) {
      break;
    }
  }
  res.best_val_auprc = best;
  res.params = std::move(best_params);
  return res;
}

QuarterPredictions predict(ModelParams& params,
                           const std::vector<GraphSnapshot>& snapshots, int t,
                           const TrainConfig& cfg,
                           bool retain_spatial_attention) {
  if (t < 0 || t >= static_cast<int>(snapshots.size())) {
    throw DataError("predict: quarter index out of range");
  }
  const std::vector<GraphSnapshot>* data = &snapshots;
  std::vector<GraphSnapshot> permuted;
  if (params.ablation == Ablation::PERM_EDGE) {
    permuted = apply_edge_permutation(snapshots, params.seed);
    data = &permuted;
  }
  Workspace ws = make_workspace(*data);
  TrainConfig cfg_run = cfg;
  cfg_run.ablation = params.ablation;

  std::vector<AttentionRecord> attention;
  BatchForward fw =
      forward_quarter(ws, params, t, cfg_run, false, 0,
                      retain_spatial_attention ? &attention : nullptr);

  QuarterPredictions out;
  out.quarter = t;
  out.quarter_tag = (*data)[t].quarter_tag;
  out.spatial_attention = std::move(attention);
  out.nodes.resize(fw.rows.size());
  for (std::size_t b = 0; b < fw.rows.size(); ++b) {
    NodePrediction np;
    np.cert = (*data)[t].certs[fw.rows[b]];
    np.quarter = t;
    np.score = fw.scores.value()[b];
    np.label = (*data)[t].labels[fw.rows[b]];
    np.beta = fw.beta[b];
    out.nodes[b] = std::move(np);
  }
  std::sort(out.nodes.begin(), out.nodes.end(),
            [](const NodePrediction& a, const NodePrediction& b) {
              return a.cert < b.cert;
            });
  return out;
}

}  // namespace stgat::model
