#pragma once

#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tern/adam.hpp"
#include "tern/autodiff.hpp"
#include "tern/data_io.hpp"
#include "tern/model.hpp"
#include "tern/types.hpp"

namespace tern {

enum class Reduction { sum, mean };

struct TrainConfig {
  double alpha = 0.2;  // triplet margin
  int batch_size = 32;
  int epochs = 30;
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  Reduction loss_reduction = Reduction::sum;
  int checkpoint_every = 0;  // epochs between periodic checkpoints; 0 = none
  int validate_every = 1;    // epochs between Recall@1 validations

  void validate() const;
};

// B x B cosine similarities; row i / column i are the positive pair.
struct SimilarityMatrix {
  int size = 0;
  std::vector<double> values;  // row-major

  double at(int i, int c) const { return values[static_cast<size_t>(i) * size + c]; }
  double& at(int i, int c) { return values[static_cast<size_t>(i) * size + c]; }
};

// dot(a, b) / (|a| |b|). Zero-norm input -> ArgumentError.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

SimilarityMatrix similarity_matrix(const std::vector<Embedding>& image_embs,
                                   const std::vector<Embedding>& caption_embs);

// Hinge triplet loss over in-batch hard negatives: per positive pair (i, i),
//   [alpha + max_{c' != i} S(i, c') - S(i, i)]_+
// + [alpha + max_{i' != i} S(i', i) - S(i, i)]_+,
// reduced by sum or mean over pairs. Argmax ties break to the lowest index;
// B = 1 has no negatives and yields 0.
double triplet_loss_hard_negatives(const SimilarityMatrix& s, double alpha, Reduction reduction);

// Graph version of the same loss on an in-graph B x B similarity node.
// Subgradient convention: gradient flows only through the selected hard
// negative and the positive; exactly-zero hinge terms pass no gradient.
Graph::NodeId triplet_loss_node(Graph& g, Graph::NodeId similarities, double alpha,
                                Reduction reduction);

// Aligned training data: pairs index into images/captions.
struct PairedDataset {
  std::vector<RegionSet> images;
  std::vector<TokenSequence> captions;
  std::vector<std::pair<int, int>> pairs;  // (image index, caption index)
};

// Assembles a PairedDataset for one split (tokenizing captions with vocab).
PairedDataset build_paired_dataset(const std::vector<RegionSet>& images,
                                   const std::vector<CaptionRecord>& captions,
                                   const DatasetSplit& split, const Vocabulary& vocab);

// One training pass: seeded shuffle, batched encode of both modalities,
// similarity matrix, loss, backward, Adam step. Returns the mean per-batch
// loss. Deterministic given (config seed, epoch_index) in single-threaded
// mode. A batch of size 1 is skipped with a warning and contributes 0.
double train_epoch(TernModel& model, const PairedDataset& data, const TrainConfig& cfg,
                   AdamState& adam, int epoch_index, std::ostream* log = nullptr);

// Computes image-retrieval Recall@1 of the model over a dataset (captions as
// queries against the dataset's distinct images).
double validation_recall1(const TernModel& model, const PairedDataset& data);

struct EpochInfo {
  int epoch = 0;
  double loss = 0.0;
  double val_recall1 = -1.0;  // -1 when not validated this epoch
  bool is_best = false;
};

struct TrainRunResult {
  std::vector<EpochInfo> epochs;
  int best_epoch = -1;
  double best_recall1 = -1.0;
};

// Full training run: epochs of train_epoch plus periodic validation; invokes
// `on_epoch` after each epoch (checkpointing is the caller's business).
TrainRunResult train_run(TernModel& model, const PairedDataset& train_data,
                         const PairedDataset* val_data, const TrainConfig& cfg, AdamState& adam,
                         int first_epoch = 0, std::ostream* log = nullptr,
                         const std::function<void(const EpochInfo&)>& on_epoch = {});

}  // namespace tern
