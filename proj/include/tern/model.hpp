#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "tern/autodiff.hpp"
#include "tern/encoder.hpp"
#include "tern/rng.hpp"
#include "tern/types.hpp"

namespace tern {

// How bounding-box geometry is normalized into the 5-vector c. The
// conventional mode divides x coordinates by the width and y coordinates by
// the height; the literal mode keeps the mixed denominators of the printed
// formula. Both are kept selectable; conventional is the default.
enum class GeometryMode { conventional, paper_literal };

struct TernConfig {
  int d_r = 2048;        // region feature dim
  int d_visual = 2048;   // visual TE stack width (spatial MLP output)
  int d_text = 768;      // word embedding dim
  int d_common = 1024;   // common space dim
  int n_visual_te = 4;   // non-shared visual TE layers
  int n_text_te = 0;     // non-shared text TE layers
  int n_shared_te = 2;   // final TE layers with weights shared across pipelines
  int d_ff = 2048;
  double dropout = 0.1;
  int heads = 4;
  int max_regions = 36;
  int max_seq_len = 128;
  GeometryMode geometry_mode = GeometryMode::conventional;
  Precision precision = Precision::f32;

  void validate() const;  // ConfigError on violation
};

// Normalized box coordinates plus normalized area (the 5-vector c).
// Zero width or height -> ArgumentError.
std::array<double, 5> geometry_features(const std::array<double, 4>& box, double width,
                                        double height, GeometryMode mode);

// Dual-pipeline encoder: a spatially conditioned visual transformer stack and
// a textual transformer stack projected into one common space, with the final
// TE layers physically shared between the two pipelines. Position 0 of each
// pipeline (I-CLS / T-CLS) carries the global embedding.
class TernModel {
 public:
  TernModel(TernConfig config, int vocab_size, uint64_t seed);

  const TernConfig& config() const { return config_; }
  int vocab_size() const { return vocab_size_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Spatial conditioning of a region set: per region, geometry 5-vector
  // concatenated onto the raw feature, through the shared
  // Linear-ReLU-Linear stack. I-CLS is not part of this.
  std::vector<std::vector<double>> spatial_condition(const RegionSet& rs) const;

  // Graph-building encoders (training or evaluation; dropout follows the
  // graph's mode). Output node is 1 x d_common with unit L2 norm.
  Graph::NodeId encode_image_node(Graph& g, const RegionSet& rs) const;
  Graph::NodeId encode_caption_node(Graph& g, const TokenSequence& ts) const;

  // Evaluation-mode conveniences on a fresh graph in the configured
  // precision.
  Embedding encode_image(const RegionSet& rs) const;
  Embedding encode_caption(const TokenSequence& ts) const;

  // True iff both pipelines reference one physical set of shared-layer
  // parameters.
  bool shared_layers_identity_check() const;

  // Shared-layer views used by both pipelines (identical by construction).
  std::span<const TeLayerParams> visual_pipeline_shared_layers() const { return shared_te_; }
  std::span<const TeLayerParams> text_pipeline_shared_layers() const { return shared_te_; }

  const std::vector<TeLayerParams>& visual_layers() const { return visual_te_; }
  const std::vector<TeLayerParams>& text_layers() const { return text_te_; }

 private:
  TernConfig config_;
  int vocab_size_ = 0;
  ParamStore store_;

  Parameter* cond_w1_ = nullptr;
  Parameter* cond_b1_ = nullptr;
  Parameter* cond_w2_ = nullptr;
  Parameter* cond_b2_ = nullptr;
  std::vector<TeLayerParams> visual_te_;
  Parameter* vis_proj_w_ = nullptr;
  Parameter* vis_proj_b_ = nullptr;
  Parameter* token_table_ = nullptr;
  std::vector<TeLayerParams> text_te_;
  Parameter* txt_proj_w_ = nullptr;
  Parameter* txt_proj_b_ = nullptr;
  std::vector<TeLayerParams> shared_te_;
  Tensor positional_encoding_;
};

// Sinusoidal positional encoding table (len x d).
Tensor sinusoidal_positional_encoding(int len, int d);

}  // namespace tern
