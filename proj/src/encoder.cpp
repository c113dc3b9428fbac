#include "tern/encoder.hpp"

#include <cmath>

#include "tern/error.hpp"

namespace tern {

namespace {

constexpr double kLayerNormEps = 1e-5;

Tensor xavier_uniform(int fan_in, int fan_out, std::vector<int> shape, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

TeLayerParams make_te_layer(ParamStore& store, const std::string& prefix, int d_model, int heads,
                            int d_ff, double dropout, Rng& init_rng) {
  if (d_model <= 0 || heads <= 0 || d_ff <= 0) {
    throw ConfigError("te layer dimensions must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("te layer: d_model " + std::to_string(d_model) +
                      " not divisible by head count " + std::to_string(heads));
  }
  TeLayerParams p;
  p.d_model = d_model;
  p.heads = heads;
  p.d_k = d_model / heads;
  p.d_ff = d_ff;
  p.dropout = dropout;
  for (int h = 0; h < heads; ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h);
    TeLayerParams::Head head;
    head.wq = &store.create(hp + ".wq", xavier_uniform(d_model, p.d_k, {d_model, p.d_k}, init_rng));
    head.wk = &store.create(hp + ".wk", xavier_uniform(d_model, p.d_k, {d_model, p.d_k}, init_rng));
    head.wv = &store.create(hp + ".wv", xavier_uniform(d_model, p.d_k, {d_model, p.d_k}, init_rng));
    p.head_params.push_back(head);
  }
  p.wo = &store.create(prefix + ".wo", xavier_uniform(d_model, d_model, {d_model, d_model}, init_rng));
  p.bo = &store.create(prefix + ".bo", Tensor::zeros({1, d_model}));
  p.ff_w1 = &store.create(prefix + ".ff.w1", xavier_uniform(d_model, d_ff, {d_model, d_ff}, init_rng));
  p.ff_b1 = &store.create(prefix + ".ff.b1", Tensor::zeros({1, d_ff}));
  p.ff_w2 = &store.create(prefix + ".ff.w2", xavier_uniform(d_ff, d_model, {d_ff, d_model}, init_rng));
  p.ff_b2 = &store.create(prefix + ".ff.b2", Tensor::zeros({1, d_model}));
  p.ln1_gain = &store.create(prefix + ".ln1.gain", Tensor::full({1, d_model}, 1.0));
  p.ln1_bias = &store.create(prefix + ".ln1.bias", Tensor::zeros({1, d_model}));
  p.ln2_gain = &store.create(prefix + ".ln2.gain", Tensor::full({1, d_model}, 1.0));
  p.ln2_bias = &store.create(prefix + ".ln2.bias", Tensor::zeros({1, d_model}));
  return p;
}

Graph::NodeId scaled_dot_product_attention(Graph& g, Graph::NodeId q, Graph::NodeId k,
                                           Graph::NodeId v, const AttentionMask& mask) {
  const Tensor& tq = g.value(q);
  const Tensor& tk = g.value(k);
  const Tensor& tv = g.value(v);
  if (tq.rank() != 2 || tk.rank() != 2 || tv.rank() != 2 || tq.cols() != tk.cols() ||
      tk.rows() != tv.rows()) {
    throw ArgumentError("attention: Q/K/V dimensions do not agree");
  }
  if (mask.size() != tk.rows()) {
    throw ArgumentError("attention: mask length does not match key count");
  }
  if (mask.count_valid() == 0) throw ArgumentError("attention: all positions masked");
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(tq.cols()));
  const Graph::NodeId scores = g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_dk);
  const Graph::NodeId weights = g.softmax_rows(scores, &mask.valid);
  return g.matmul(weights, v);
}

Graph::NodeId multi_head_attention(Graph& g, Graph::NodeId x, const TeLayerParams& params,
                                   const AttentionMask& mask) {
  const Tensor& tx = g.value(x);
  if (tx.rank() != 2 || tx.cols() != params.d_model) {
    throw ArgumentError("multi_head_attention: input width does not match d_model");
  }
  std::vector<Graph::NodeId> heads;
  heads.reserve(params.head_params.size());
  for (const auto& h : params.head_params) {
    const Graph::NodeId q = g.matmul(x, g.param(*h.wq));
    const Graph::NodeId k = g.matmul(x, g.param(*h.wk));
    const Graph::NodeId v = g.matmul(x, g.param(*h.wv));
    heads.push_back(scaled_dot_product_attention(g, q, k, v, mask));
  }
  const Graph::NodeId cat = g.concat_cols(heads);
  return g.add_row(g.matmul(cat, g.param(*params.wo)), g.param(*params.bo));
}

Graph::NodeId te_layer_forward(Graph& g, Graph::NodeId x, const TeLayerParams& params,
                               const AttentionMask& mask) {
  Graph::NodeId attn = multi_head_attention(g, x, params, mask);
  attn = g.dropout(attn, params.dropout);
  const Graph::NodeId x1 = g.layer_norm_rows(g.add(x, attn), g.param(*params.ln1_gain),
                                             g.param(*params.ln1_bias), kLayerNormEps);
  Graph::NodeId ff = g.add_row(g.matmul(x1, g.param(*params.ff_w1)), g.param(*params.ff_b1));
  ff = g.add_row(g.matmul(g.relu(ff), g.param(*params.ff_w2)), g.param(*params.ff_b2));
  ff = g.dropout(ff, params.dropout);
  const Graph::NodeId out = g.layer_norm_rows(g.add(x1, ff), g.param(*params.ln2_gain),
                                              g.param(*params.ln2_bias), kLayerNormEps);
  ensure_finite(g.value(out), "te layer activations");
  return out;
}

Graph::NodeId te_stack_forward(Graph& g, Graph::NodeId x, std::span<const TeLayerParams> layers,
                               const AttentionMask& mask) {
  Graph::NodeId cur = x;
  for (const TeLayerParams& layer : layers) {
    if (g.value(cur).cols() != layer.d_model) {
      throw ConfigError("te stack: layer width mismatch");
    }
    cur = te_layer_forward(g, cur, layer, mask);
  }
  return cur;
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    const AttentionMask& mask) {
  Graph g(Precision::f64);
  return g.value(
      scaled_dot_product_attention(g, g.constant(q), g.constant(k), g.constant(v), mask));
}

Tensor te_layer_forward(const Tensor& x, const TeLayerParams& params, const AttentionMask& mask) {
  Graph g(Precision::f64);
  return g.value(te_layer_forward(g, g.constant(x), params, mask));
}

Tensor te_stack_forward(const Tensor& x, std::span<const TeLayerParams> layers,
                        const AttentionMask& mask) {
  Graph g(Precision::f64);
  return g.value(te_stack_forward(g, g.constant(x), layers, mask));
}

}  // namespace tern
