#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tern/types.hpp"

namespace tern {

struct RankedItem {
  std::string gallery_id;
  double score = 0.0;
};

// One query's gallery ranking, scores non-increasing; ties broken by id.
struct RankedList {
  std::string query_id;
  std::vector<RankedItem> items;
};

enum class TauAggregation { max, mean };

struct EvalConfig {
  int ndcg_p = 25;
  std::vector<int> recall_ks = {1, 5, 10};
  double rouge_beta = 1.2;
  TauAggregation tau_aggregation = TauAggregation::max;

  void validate() const;
};

// Brute-force cosine retrieval: full descending sort, stable tie-break by
// gallery id.
RankedList rank_gallery(const Embedding& query, const std::vector<Embedding>& gallery);

// Fraction of queries whose ground-truth id appears in the top k.
double recall_at_k(const std::vector<RankedList>& rankings,
                   const std::unordered_map<std::string, std::string>& ground_truth, int k);

// Discounted cumulative gain over the first min(p, len) positions,
// sum of rel_i / log2(i + 1) with 1-indexed positions. Negative relevance ->
// ArgumentError.
double dcg(std::span<const double> rels, int p);

// dcg(rels, p) normalized by the ideal (descending-sorted) ordering of the
// full list; 0 when every relevance is 0.
double ndcg(std::span<const double> rels, int p);

// LCS-based F-measure between token sequences:
//   R = LCS/len(reference), P = LCS/len(candidate),
//   F = (1 + beta^2) R P / (R + beta^2 P), 0 when LCS = 0.
double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
               double beta);

// Relevance of a query caption against an image's caption set: max (default)
// or mean of per-caption ROUGE-L.
double tau(const std::vector<std::string>& query_tokens,
           const std::vector<std::vector<std::string>>& caption_set, const EvalConfig& cfg);

// N_c x N_i relevance values with id registries. Values are stored as f32,
// matching the binary format below bit for bit.
class RelevanceMatrix {
 public:
  RelevanceMatrix() = default;
  RelevanceMatrix(std::vector<std::string> query_ids, std::vector<std::string> image_ids);

  int rows() const { return static_cast<int>(query_ids_.size()); }
  int cols() const { return static_cast<int>(image_ids_.size()); }
  float at(int r, int c) const { return values_[static_cast<size_t>(r) * cols() + c]; }
  void set(int r, int c, float v) { values_[static_cast<size_t>(r) * cols() + c] = v; }

  const std::vector<std::string>& query_ids() const { return query_ids_; }
  const std::vector<std::string>& image_ids() const { return image_ids_; }
  // -1 when absent.
  int query_index(const std::string& id) const;
  int image_index(const std::string& id) const;

  // Binary layout: magic "RELM", u16 LE version, u32 rows, u32 cols, the two
  // length-prefixed UTF-8 id tables (queries then images), then rows x cols
  // f32 LE values row-major.
  void save(const std::string& path) const;
  static RelevanceMatrix load(const std::string& path);

 private:
  std::vector<std::string> query_ids_;
  std::vector<std::string> image_ids_;
  std::vector<float> values_;
  std::unordered_map<std::string, int> query_index_;
  std::unordered_map<std::string, int> image_index_;
};

// Builds the matrix of tau values for query captions against each image's
// caption set. Duplicate ids -> ArgumentError.
RelevanceMatrix build_relevance_matrix(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& queries,
    const std::vector<std::pair<std::string, std::vector<std::vector<std::string>>>>& images,
    const EvalConfig& cfg);

struct QueryRecord {
  std::string query_id;
  int ground_truth_rank = 0;  // 1-indexed
  double ndcg_value = 0.0;
};

struct RetrievalReport {
  std::vector<int> recall_ks;
  std::vector<double> recall_values;
  int ndcg_p = 0;
  double mean_ndcg = 0.0;
  std::vector<QueryRecord> per_query;

  std::string text_table() const;
  void write_jsonl(const std::string& path) const;
};

// Ranks every caption query against the image gallery and aggregates
// Recall@K and NDCG@p. Relevance must cover all queries and gallery images;
// gaps -> ArgumentError listing the missing ids.
RetrievalReport evaluate_retrieval(const std::vector<Embedding>& image_embs,
                                   const std::vector<Embedding>& caption_queries,
                                   const RelevanceMatrix& relevance,
                                   const std::unordered_map<std::string, std::string>& ground_truth,
                                   const EvalConfig& cfg);

// Mean of each metric across fold reports (all folds must share Ks and p).
RetrievalReport average_reports(const std::vector<RetrievalReport>& folds);

}  // namespace tern
