#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "tern/types.hpp"

namespace tern {

// Token / id mapping with reserved slots. Built from the training split only;
// ordering is deterministic (frequency descending, then lexicographic).
class Vocabulary {
 public:
  static constexpr int kTcls = 0;
  static constexpr int kOov = 1;
  static constexpr int kPad = 2;
  static constexpr int kReservedCount = 3;

  static Vocabulary build(const std::vector<std::string>& texts);

  // Reconstructs a vocabulary from its non-reserved tokens in id order.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int id(const std::string& token) const;  // kOov when unknown
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()) + kReservedCount; }
  // Non-reserved tokens in id order (id 3 first).
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Lowercases, turns punctuation into separators, splits on whitespace.
std::vector<std::string> clean_tokens(const std::string& text);

// clean_tokens + vocabulary lookup with OOV fallback. Empty result after
// cleaning -> ArgumentError.
std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);

// Space-joined token strings for the given ids.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// File formats (JSON lines). Loaders validate and reject; they never repair.

std::vector<RegionSet> load_region_features(const std::string& path);
void write_region_features(const std::string& path, const std::vector<RegionSet>& sets);

std::vector<CaptionRecord> load_captions(const std::string& path);
void write_captions(const std::string& path, const std::vector<CaptionRecord>& captions);

std::vector<Embedding> load_embeddings(const std::string& path);
void write_embeddings(const std::string& path, const std::vector<Embedding>& embeddings);

// image_id -> split name ("train" | "val" | "test"), insertion-ordered file.
std::vector<std::pair<std::string, std::string>> load_splits(const std::string& path);
void write_splits(const std::string& path,
                  const std::vector<std::pair<std::string, std::string>>& splits);

// ---------------------------------------------------------------------------
// Splits

struct DatasetSplit {
  std::string name;
  std::vector<std::pair<std::string, std::string>> pairs;  // (image_id, caption_id)
};

// Collects the (image, caption) pairs of one split. Every image id in the
// split map must be unique (an image cannot sit in two splits by
// construction of the map format; duplicates -> DataError).
DatasetSplit make_split(const std::string& name,
                        const std::vector<std::pair<std::string, std::string>>& split_map,
                        const std::vector<CaptionRecord>& captions);

// Slices `ids` into k disjoint contiguous folds covering all ids (sizes as
// equal as possible, first folds take the remainder).
std::vector<std::vector<std::string>> kfold_ids(const std::vector<std::string>& ids, int k);

// ---------------------------------------------------------------------------
// Synthetic dataset generation

struct GenConfig {
  uint64_t seed = 0;
  int n_train = 32;
  int n_val = 0;
  int n_test = 0;
  int captions_per_image = 5;
  int n_regions = 6;
  int d_r = 32;
  int vocab_size = 30;  // concept-word pool size
};

struct SyntheticDataset {
  std::vector<RegionSet> images;
  std::vector<CaptionRecord> captions;
  std::vector<std::pair<std::string, std::string>> image_splits;
};

// Deterministic toy corpus: each image draws a few latent concepts; its
// region features point along per-concept directions and its captions name
// the same concepts, so embeddings are learnable from either side.
SyntheticDataset gen_synthetic_dataset(const GenConfig& cfg);

// Writes features.jsonl, captions.jsonl, splits.jsonl under dir.
void write_dataset(const std::string& dir, const SyntheticDataset& ds);

}  // namespace tern
