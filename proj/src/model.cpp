#include "tern/model.hpp"

#include <cmath>

#include "tern/error.hpp"

namespace tern {

namespace {

Tensor xavier_uniform(int fan_in, int fan_out, std::vector<int> shape, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

void validate_region_set(const RegionSet& rs, int d_r) {
  if (rs.regions.empty()) {
    throw ArgumentError("encode_image: empty region list for image " + rs.image_id);
  }
  if (rs.width <= 0.0 || rs.height <= 0.0) {
    throw ArgumentError("encode_image: non-positive image size for image " + rs.image_id);
  }
  for (const Region& r : rs.regions) {
    if (static_cast<int>(r.feat.size()) != d_r) {
      throw ArgumentError("encode_image: region feature dim " + std::to_string(r.feat.size()) +
                          " does not match configured d_r " + std::to_string(d_r) + " for image " +
                          rs.image_id);
    }
  }
}

}  // namespace

void TernConfig::validate() const {
  if (d_r <= 0 || d_visual <= 0 || d_text <= 0 || d_common <= 0 || d_ff <= 0 || heads <= 0 ||
      max_regions <= 0 || max_seq_len <= 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (n_visual_te < 0 || n_text_te < 0 || n_shared_te < 0) {
    throw ConfigError("layer counts must be non-negative");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (d_common % heads != 0) throw ConfigError("d_common must be divisible by heads");
  if (d_visual % heads != 0) throw ConfigError("d_visual must be divisible by heads");
  if (d_text % heads != 0) throw ConfigError("d_text must be divisible by heads");
}

std::array<double, 5> geometry_features(const std::array<double, 4>& box, double width,
                                        double height, GeometryMode mode) {
  if (width <= 0.0 || height <= 0.0) {
    throw ArgumentError("geometry_features: image width and height must be positive");
  }
  const double x1 = box[0], y1 = box[1], x2 = box[2], y2 = box[3];
  const double area = (x2 - x1) * (y2 - y1) / (width * height);
  if (mode == GeometryMode::conventional) {
    return {x1 / width, y1 / height, x2 / width, y2 / height, area};
  }
  return {x1 / width, y1 / width, x2 / height, y2 / height, area};
}

Tensor sinusoidal_positional_encoding(int len, int d) {
  Tensor pe = Tensor::zeros({len, d});
  for (int pos = 0; pos < len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      pe.at(pos, i) = std::sin(angle);
      if (i + 1 < d) pe.at(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

TernModel::TernModel(TernConfig config, int vocab_size, uint64_t seed)
    : config_(config), vocab_size_(vocab_size) {
  config_.validate();
  if (vocab_size_ <= 0) throw ConfigError("vocab size must be positive");
  Rng rng(Rng::derive_seed(seed, 0x7e51, 0x1a17));

  const int d_cond_in = config_.d_r + 5;
  cond_w1_ = &store_.create("visual.cond.w1", xavier_uniform(d_cond_in, config_.d_visual,
                                                             {d_cond_in, config_.d_visual}, rng));
  cond_b1_ = &store_.create("visual.cond.b1", Tensor::zeros({1, config_.d_visual}));
  cond_w2_ = &store_.create("visual.cond.w2",
                            xavier_uniform(config_.d_visual, config_.d_visual,
                                           {config_.d_visual, config_.d_visual}, rng));
  cond_b2_ = &store_.create("visual.cond.b2", Tensor::zeros({1, config_.d_visual}));
  for (int i = 0; i < config_.n_visual_te; ++i) {
    visual_te_.push_back(make_te_layer(store_, "visual.te" + std::to_string(i), config_.d_visual,
                                       config_.heads, config_.d_ff, config_.dropout, rng));
  }
  vis_proj_w_ = &store_.create("visual.proj.w", xavier_uniform(config_.d_visual, config_.d_common,
                                                               {config_.d_visual, config_.d_common},
                                                               rng));
  vis_proj_b_ = &store_.create("visual.proj.b", Tensor::zeros({1, config_.d_common}));

  token_table_ = &store_.create(
      "text.embed.table",
      xavier_uniform(vocab_size_, config_.d_text, {vocab_size_, config_.d_text}, rng));
  for (int i = 0; i < config_.n_text_te; ++i) {
    text_te_.push_back(make_te_layer(store_, "text.te" + std::to_string(i), config_.d_text,
                                     config_.heads, config_.d_ff, config_.dropout, rng));
  }
  txt_proj_w_ = &store_.create("text.proj.w", xavier_uniform(config_.d_text, config_.d_common,
                                                             {config_.d_text, config_.d_common},
                                                             rng));
  txt_proj_b_ = &store_.create("text.proj.b", Tensor::zeros({1, config_.d_common}));

  // One physical set, referenced by both pipelines.
  for (int i = 0; i < config_.n_shared_te; ++i) {
    shared_te_.push_back(make_te_layer(store_, "shared.te" + std::to_string(i), config_.d_common,
                                       config_.heads, config_.d_ff, config_.dropout, rng));
  }

  positional_encoding_ = sinusoidal_positional_encoding(config_.max_seq_len, config_.d_text);
}

std::vector<std::vector<double>> TernModel::spatial_condition(const RegionSet& rs) const {
  validate_region_set(rs, config_.d_r);
  Graph g(config_.precision);
  const int n = static_cast<int>(rs.regions.size());
  Tensor in = Tensor::zeros({n, config_.d_r + 5});
  for (int i = 0; i < n; ++i) {
    const Region& r = rs.regions[static_cast<size_t>(i)];
    for (int j = 0; j < config_.d_r; ++j) in.at(i, j) = r.feat[static_cast<size_t>(j)];
    const auto c = geometry_features(r.box, rs.width, rs.height, config_.geometry_mode);
    for (int j = 0; j < 5; ++j) in.at(i, config_.d_r + j) = c[static_cast<size_t>(j)];
  }
  Graph::NodeId h = g.add_row(g.matmul(g.constant(std::move(in)), g.param(*cond_w1_)),
                              g.param(*cond_b1_));
  h = g.add_row(g.matmul(g.relu(h), g.param(*cond_w2_)), g.param(*cond_b2_));
  const Tensor& out = g.value(h);
  std::vector<std::vector<double>> result(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    result[static_cast<size_t>(i)].assign(out.data.begin() + static_cast<long>(i) * out.cols(),
                                          out.data.begin() + static_cast<long>(i + 1) * out.cols());
  }
  return result;
}

Graph::NodeId TernModel::encode_image_node(Graph& g, const RegionSet& rs) const {
  validate_region_set(rs, config_.d_r);
  RegionSet truncated;
  const RegionSet* use = &rs;
  if (static_cast<int>(rs.regions.size()) > config_.max_regions) {
    // File order is descending confidence; keep the head.
    truncated.image_id = rs.image_id;
    truncated.width = rs.width;
    truncated.height = rs.height;
    truncated.regions.assign(rs.regions.begin(), rs.regions.begin() + config_.max_regions);
    use = &truncated;
  }
  const int n = static_cast<int>(use->regions.size());

  Tensor in = Tensor::zeros({n, config_.d_r + 5});
  for (int i = 0; i < n; ++i) {
    const Region& r = use->regions[static_cast<size_t>(i)];
    for (int j = 0; j < config_.d_r; ++j) in.at(i, j) = r.feat[static_cast<size_t>(j)];
    const auto c = geometry_features(r.box, use->width, use->height, config_.geometry_mode);
    for (int j = 0; j < 5; ++j) in.at(i, config_.d_r + j) = c[static_cast<size_t>(j)];
  }
  Graph::NodeId cond = g.add_row(g.matmul(g.constant(std::move(in)), g.param(*cond_w1_)),
                                 g.param(*cond_b1_));
  cond = g.add_row(g.matmul(g.relu(cond), g.param(*cond_w2_)), g.param(*cond_b2_));

  // I-CLS: zero vector at position 0, bypassing spatial conditioning.
  const Graph::NodeId cls = g.constant(Tensor::zeros({1, config_.d_visual}));
  const std::array<Graph::NodeId, 2> rows = {cls, cond};
  Graph::NodeId x = g.concat_rows(rows);

  const AttentionMask mask = AttentionMask::all_valid(n + 1);
  x = te_stack_forward(g, x, visual_te_, mask);
  x = g.add_row(g.matmul(x, g.param(*vis_proj_w_)), g.param(*vis_proj_b_));
  x = te_stack_forward(g, x, shared_te_, mask);
  return g.l2_normalize_rows(g.select_row(x, 0));
}

Graph::NodeId TernModel::encode_caption_node(Graph& g, const TokenSequence& ts) const {
  if (ts.tokens.empty()) {
    throw ArgumentError("encode_caption: empty token sequence for caption " + ts.caption_id);
  }
  const int m = static_cast<int>(ts.tokens.size());
  if (m + 1 > config_.max_seq_len) {
    throw ArgumentError("encode_caption: sequence length " + std::to_string(m + 1) +
                        " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(m) + 1);
  ids.push_back(0);  // T-CLS
  for (int t : ts.tokens) {
    if (t < 0 || t >= vocab_size_) {
      throw ArgumentError("encode_caption: unknown token id " + std::to_string(t) +
                          " in caption " + ts.caption_id);
    }
    ids.push_back(t);
  }

  Graph::NodeId x = g.gather_rows(g.param(*token_table_), ids);
  Tensor pe = Tensor::zeros({m + 1, config_.d_text});
  for (int i = 0; i <= m; ++i) {
    for (int j = 0; j < config_.d_text; ++j) pe.at(i, j) = positional_encoding_.at(i, j);
  }
  x = g.add(x, g.constant(std::move(pe)));

  const AttentionMask mask = AttentionMask::all_valid(m + 1);
  x = te_stack_forward(g, x, text_te_, mask);
  x = g.add_row(g.matmul(x, g.param(*txt_proj_w_)), g.param(*txt_proj_b_));
  x = te_stack_forward(g, x, shared_te_, mask);
  return g.l2_normalize_rows(g.select_row(x, 0));
}

Embedding TernModel::encode_image(const RegionSet& rs) const {
  Graph g(config_.precision);
  const Tensor& v = g.value(encode_image_node(g, rs));
  return Embedding{rs.image_id, EmbeddingSource::image, v.data};
}

Embedding TernModel::encode_caption(const TokenSequence& ts) const {
  Graph g(config_.precision);
  const Tensor& v = g.value(encode_caption_node(g, ts));
  return Embedding{ts.caption_id, EmbeddingSource::caption, v.data};
}

bool TernModel::shared_layers_identity_check() const {
  const auto vis = visual_pipeline_shared_layers();
  const auto txt = text_pipeline_shared_layers();
  if (vis.size() != txt.size() || vis.size() != static_cast<size_t>(config_.n_shared_te)) {
    return false;
  }
  for (size_t i = 0; i < vis.size(); ++i) {
    if (vis[i].wo != txt[i].wo || vis[i].ff_w1 != txt[i].ff_w1 ||
        vis[i].ln1_gain != txt[i].ln1_gain) {
      return false;
    }
    for (size_t h = 0; h < vis[i].head_params.size(); ++h) {
      if (vis[i].head_params[h].wq != txt[i].head_params[h].wq) return false;
    }
  }
  return true;
}

}  // namespace tern
