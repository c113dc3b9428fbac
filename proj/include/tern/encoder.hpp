#pragma once

#include <span>
#include <string>
#include <vector>

#include "tern/autodiff.hpp"
#include "tern/rng.hpp"

namespace tern {

// Marks which positions of a length-s input are real (true) versus padding.
// Masked positions receive a -1e9 logit offset before the softmax, which is
// exactly zero attention weight after normalization.
struct AttentionMask {
  std::vector<uint8_t> valid;

  static AttentionMask all_valid(int n) {
    AttentionMask m;
    m.valid.assign(static_cast<size_t>(n), 1);
    return m;
  }

  int size() const { return static_cast<int>(valid.size()); }
  int count_valid() const {
    int n = 0;
    for (uint8_t v : valid) n += (v != 0);
    return n;
  }
};

// One transformer-encoder layer's parameters: h per-head Q/K/V projections
// (d_model -> d_k with d_k = d_model / h), an output projection, a two-layer
// feed-forward block with ReLU, and two layer-norm gain/bias pairs.
struct TeLayerParams {
  int d_model = 0;
  int heads = 0;
  int d_k = 0;
  int d_ff = 0;
  double dropout = 0.0;

  struct Head {
    Parameter* wq = nullptr;
    Parameter* wk = nullptr;
    Parameter* wv = nullptr;
  };
  std::vector<Head> head_params;
  Parameter* wo = nullptr;
  Parameter* bo = nullptr;
  Parameter* ff_w1 = nullptr;
  Parameter* ff_b1 = nullptr;
  Parameter* ff_w2 = nullptr;
  Parameter* ff_b2 = nullptr;
  Parameter* ln1_gain = nullptr;
  Parameter* ln1_bias = nullptr;
  Parameter* ln2_gain = nullptr;
  Parameter* ln2_bias = nullptr;
};

// Registers one TE layer's parameters in `store` under `prefix` with Xavier
// uniform init (layer-norm gains 1, all biases 0). d_model % heads != 0 ->
// ConfigError.
TeLayerParams make_te_layer(ParamStore& store, const std::string& prefix, int d_model, int heads,
                            int d_ff, double dropout, Rng& init_rng);

// softmax(Q K^T / sqrt(d_k)) V with column masking over the s key/value
// positions. Q is t x d_k, K is s x d_k, V is s x d_v.
Graph::NodeId scaled_dot_product_attention(Graph& g, Graph::NodeId q, Graph::NodeId k,
                                           Graph::NodeId v, const AttentionMask& mask);

// Self-attention over X (s x d_model): h per-head attentions concatenated,
// then the output projection.
Graph::NodeId multi_head_attention(Graph& g, Graph::NodeId x, const TeLayerParams& params,
                                   const AttentionMask& mask);

// Post-norm residual arrangement:
//   LayerNorm(x + Dropout(MHA(x))), then LayerNorm(. + Dropout(FFN(.)))
// with a ReLU inside the FFN. Raises NumericError on non-finite activations.
Graph::NodeId te_layer_forward(Graph& g, Graph::NodeId x, const TeLayerParams& params,
                               const AttentionMask& mask);

// Sequential application; an empty layer list is the identity.
Graph::NodeId te_stack_forward(Graph& g, Graph::NodeId x, std::span<const TeLayerParams> layers,
                               const AttentionMask& mask);

// Value-level conveniences (evaluation mode on a fresh 64-bit graph).
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    const AttentionMask& mask);
Tensor te_layer_forward(const Tensor& x, const TeLayerParams& params, const AttentionMask& mask);
Tensor te_stack_forward(const Tensor& x, std::span<const TeLayerParams> layers,
                        const AttentionMask& mask);

}  // namespace tern
