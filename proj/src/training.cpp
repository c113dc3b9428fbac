#include "tern/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tern/error.hpp"
#include "tern/metrics.hpp"

namespace tern {

namespace {

// Per-pair hard-negative selection and hinge activity, shared by the plain
// and the graph versions of the loss so both routes agree exactly.
struct TripletTerm {
  int pair = 0;
  int hard_col = -1;  // c' for the caption-negative term
  bool row_active = false;
  int hard_row = -1;  // i' for the image-negative term
  bool col_active = false;
};

struct TripletBreakdown {
  double loss = 0.0;
  std::vector<TripletTerm> terms;
};

TripletBreakdown triplet_forward(const SimilarityMatrix& s, double alpha, Reduction reduction) {
  const int b = s.size;
  TripletBreakdown out;
  if (b <= 1) return out;  // no negatives exist
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    TripletTerm term;
    term.pair = i;
    // Hard caption negative: argmax over c' != i of S(i, c'), lowest index wins.
    for (int c = 0; c < b; ++c) {
      if (c == i) continue;
      if (term.hard_col < 0 || s.at(i, c) > s.at(i, term.hard_col)) term.hard_col = c;
    }
    // Hard image negative: argmax over i' != i of S(i', i).
    for (int r = 0; r < b; ++r) {
      if (r == i) continue;
      if (term.hard_row < 0 || s.at(r, i) > s.at(term.hard_row, i)) term.hard_row = r;
    }
    const double row_term = alpha + s.at(i, term.hard_col) - s.at(i, i);
    const double col_term = alpha + s.at(term.hard_row, i) - s.at(i, i);
    term.row_active = row_term > 0.0;
    term.col_active = col_term > 0.0;
    if (term.row_active) total += row_term;
    if (term.col_active) total += col_term;
    out.terms.push_back(term);
  }
  out.loss = reduction == Reduction::mean ? total / b : total;
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (alpha <= 0.0) throw ConfigError("train: alpha must be positive");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (lr <= 0.0) throw ConfigError("train: lr must be positive");
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw ArgumentError("cosine_similarity: dimension mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ArgumentError("cosine_similarity: zero-norm input");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

SimilarityMatrix similarity_matrix(const std::vector<Embedding>& image_embs,
                                   const std::vector<Embedding>& caption_embs) {
  if (image_embs.size() != caption_embs.size()) {
    throw ArgumentError("similarity_matrix: batch sizes differ");
  }
  SimilarityMatrix s;
  s.size = static_cast<int>(image_embs.size());
  s.values.resize(static_cast<size_t>(s.size) * s.size);
  for (int i = 0; i < s.size; ++i) {
    for (int c = 0; c < s.size; ++c) {
      s.at(i, c) = cosine_similarity(image_embs[static_cast<size_t>(i)].vector,
                                     caption_embs[static_cast<size_t>(c)].vector);
    }
  }
  return s;
}

double triplet_loss_hard_negatives(const SimilarityMatrix& s, double alpha, Reduction reduction) {
  if (static_cast<size_t>(s.size) * s.size != s.values.size()) {
    throw ArgumentError("triplet loss: similarity matrix is not square");
  }
  return triplet_forward(s, alpha, reduction).loss;
}

Graph::NodeId triplet_loss_node(Graph& g, Graph::NodeId similarities, double alpha,
                                Reduction reduction) {
  const Tensor& t = g.value(similarities);
  if (t.rank() != 2 || t.rows() != t.cols()) {
    throw ArgumentError("triplet loss: similarity matrix is not square");
  }
  SimilarityMatrix s;
  s.size = t.rows();
  s.values = t.data;
  const TripletBreakdown bd = triplet_forward(s, alpha, reduction);
  const double unit = reduction == Reduction::mean && s.size > 0 ? 1.0 / s.size : 1.0;
  const std::vector<TripletTerm> terms = bd.terms;
  return g.make_node(
      Tensor::scalar(bd.loss), {similarities},
      [similarities, terms, unit](Graph& gg, Graph::NodeId self) {
        const double go = gg.grad(self).data[0];
        Tensor ds = Tensor::zeros(gg.value(similarities).shape);
        for (const TripletTerm& term : terms) {
          const double w = go * unit;
          if (term.row_active) {
            ds.at(term.pair, term.hard_col) += w;
            ds.at(term.pair, term.pair) -= w;
          }
          if (term.col_active) {
            ds.at(term.hard_row, term.pair) += w;
            ds.at(term.pair, term.pair) -= w;
          }
        }
        gg.accumulate_grad(similarities, ds);
      });
}

PairedDataset build_paired_dataset(const std::vector<RegionSet>& images,
                                   const std::vector<CaptionRecord>& captions,
                                   const DatasetSplit& split, const Vocabulary& vocab) {
  std::map<std::string, int> image_index;
  std::map<std::string, int> caption_index;
  PairedDataset out;
  for (const auto& [image_id, caption_id] : split.pairs) {
    if (image_index.count(image_id) == 0) {
      auto it = std::find_if(images.begin(), images.end(),
                             [&](const RegionSet& rs) { return rs.image_id == image_id; });
      if (it == images.end()) throw DataError("split references missing image " + image_id);
      image_index[image_id] = static_cast<int>(out.images.size());
      out.images.push_back(*it);
    }
    if (caption_index.count(caption_id) == 0) {
      auto it = std::find_if(captions.begin(), captions.end(),
                             [&](const CaptionRecord& c) { return c.caption_id == caption_id; });
      if (it == captions.end()) throw DataError("split references missing caption " + caption_id);
      TokenSequence ts;
      ts.caption_id = it->caption_id;
      ts.image_id = it->image_id;
      ts.tokens = tokenize(it->text, vocab);
      caption_index[caption_id] = static_cast<int>(out.captions.size());
      out.captions.push_back(std::move(ts));
    }
    out.pairs.emplace_back(image_index[image_id], caption_index[caption_id]);
  }
  return out;
}

double train_epoch(TernModel& model, const PairedDataset& data, const TrainConfig& cfg,
                   AdamState& adam, int epoch_index, std::ostream* log) {
  cfg.validate();
  if (data.pairs.empty()) return 0.0;

  std::vector<std::pair<int, int>> order = data.pairs;
  Rng shuffle_rng(Rng::derive_seed(cfg.seed, 0x5af1u, static_cast<uint64_t>(epoch_index)));
  shuffle_rng.shuffle(order);

  // First-fit batch assembly over the shuffled pairs, keeping any one image
  // from appearing twice in a batch. A duplicated in-batch image would make
  // its own sibling caption the hard negative and pin that pair's loss at
  // the margin; at corpus scale collisions never happen, at desk scale they
  // would dominate every batch. No pair is dropped.
  std::vector<std::vector<std::pair<int, int>>> batches;
  for (const auto& pair : order) {
    bool placed = false;
    for (auto& batch : batches) {
      if (static_cast<int>(batch.size()) >= cfg.batch_size) continue;
      bool collides = false;
      for (const auto& other : batch) collides = collides || other.first == pair.first;
      if (!collides) {
        batch.push_back(pair);
        placed = true;
        break;
      }
    }
    if (!placed) batches.push_back({pair});
  }

  const Precision prec = model.config().precision;
  double loss_sum = 0.0;
  int batch_count = 0;
  for (const auto& batch : batches) {
    ++batch_count;
    if (batch.size() < 2) {
      if (log != nullptr) {
        (*log) << "epoch=" << epoch_index << " batch=" << (batch_count - 1)
               << " warning=batch_of_one_skipped loss=0\n";
      }
      continue;
    }

    Rng dropout_rng(Rng::derive_seed(cfg.seed, 0xd40u, (static_cast<uint64_t>(epoch_index) << 20) +
                                                           static_cast<uint64_t>(batch_count)));
    Graph g(prec, /*training=*/true, &dropout_rng);

    std::vector<Graph::NodeId> img_rows, cap_rows;
    for (const auto& [ii, ci] : batch) {
      img_rows.push_back(model.encode_image_node(g, data.images[static_cast<size_t>(ii)]));
      cap_rows.push_back(model.encode_caption_node(g, data.captions[static_cast<size_t>(ci)]));
    }
    const Graph::NodeId img_mat = g.concat_rows(img_rows);
    const Graph::NodeId cap_mat = g.concat_rows(cap_rows);
    // Embeddings are unit length, so the dot product is the cosine.
    const Graph::NodeId sims = g.matmul(img_mat, g.transpose(cap_mat));
    const Graph::NodeId loss = triplet_loss_node(g, sims, cfg.alpha, cfg.loss_reduction);

    g.backward(loss);
    adam.lr = cfg.lr;
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.adam_eps;
    adam_step(adam, model.params(), prec);
    model.params().zero_grads();

    const double batch_loss = g.value(loss).data[0];
    loss_sum += batch_loss;
    if (log != nullptr) {
      (*log) << "epoch=" << epoch_index << " batch=" << (batch_count - 1)
             << " loss=" << batch_loss << " lr=" << cfg.lr << " seed=" << cfg.seed << "\n";
    }
  }
  return batch_count == 0 ? 0.0 : loss_sum / batch_count;
}

double validation_recall1(const TernModel& model, const PairedDataset& data) {
  if (data.pairs.empty()) return 0.0;
  std::vector<Embedding> gallery;
  gallery.reserve(data.images.size());
  for (const RegionSet& rs : data.images) gallery.push_back(model.encode_image(rs));
  std::vector<RankedList> rankings;
  std::unordered_map<std::string, std::string> gt;
  for (const TokenSequence& ts : data.captions) {
    const Embedding q = model.encode_caption(ts);
    rankings.push_back(rank_gallery(q, gallery));
    gt[ts.caption_id] = ts.image_id;
  }
  return recall_at_k(rankings, gt, 1);
}

TrainRunResult train_run(TernModel& model, const PairedDataset& train_data,
                         const PairedDataset* val_data, const TrainConfig& cfg, AdamState& adam,
                         int first_epoch, std::ostream* log,
                         const std::function<void(const EpochInfo&)>& on_epoch) {
  cfg.validate();
  TrainRunResult result;
  for (int epoch = first_epoch; epoch < first_epoch + cfg.epochs; ++epoch) {
    EpochInfo info;
    info.epoch = epoch;
    info.loss = train_epoch(model, train_data, cfg, adam, epoch, log);
    const bool validate = cfg.validate_every > 0 &&
                          ((epoch - first_epoch) % cfg.validate_every == cfg.validate_every - 1 ||
                           epoch == first_epoch + cfg.epochs - 1);
    if (validate) {
      const PairedDataset& vd = val_data != nullptr && !val_data->pairs.empty() ? *val_data
                                                                                : train_data;
      info.val_recall1 = validation_recall1(model, vd);
      if (info.val_recall1 > result.best_recall1) {
        result.best_recall1 = info.val_recall1;
        result.best_epoch = epoch;
        info.is_best = true;
      }
    }
    if (log != nullptr) {
      (*log) << "epoch=" << epoch << " mean_loss=" << info.loss;
      if (info.val_recall1 >= 0.0) (*log) << " val_recall1=" << info.val_recall1;
      (*log) << "\n";
    }
    if (on_epoch) on_epoch(info);
    result.epochs.push_back(info);
  }
  return result;
}

}  // namespace tern
