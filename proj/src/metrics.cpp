#include "tern/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tern/error.hpp"
#include "tern/training.hpp"

namespace tern {

namespace {

void write_u16(std::ostream& out, uint16_t v) {
  const uint8_t bytes[2] = {static_cast<uint8_t>(v & 0xff), static_cast<uint8_t>(v >> 8)};
  out.write(reinterpret_cast<const char*>(bytes), 2);
}

void write_u32(std::ostream& out, uint32_t v) {
  uint8_t bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<uint8_t>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

void write_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

uint16_t read_u16(std::istream& in, const std::string& path) {
  uint8_t bytes[2];
  if (!in.read(reinterpret_cast<char*>(bytes), 2)) throw DataError(path + ": truncated file");
  return static_cast<uint16_t>(bytes[0] | (bytes[1] << 8));
}

uint32_t read_u32(std::istream& in, const std::string& path) {
  uint8_t bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw DataError(path + ": truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[i]) << (8 * i);
  return v;
}

float read_f32(std::istream& in, const std::string& path) {
  const uint32_t bits = read_u32(in, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& path) {
  const uint32_t len = read_u32(in, path);
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len)) throw DataError(path + ": truncated string");
  return s;
}

constexpr uint16_t kRelmVersion = 1;

// Longest common subsequence length by the standard two-row DP.
size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

void EvalConfig::validate() const {
  if (ndcg_p < 1) throw ConfigError("eval: ndcg_p must be >= 1");
  for (int k : recall_ks) {
    if (k < 1) throw ConfigError("eval: recall K values must be >= 1");
  }
  if (rouge_beta <= 0.0) throw ConfigError("eval: rouge_beta must be positive");
}

RankedList rank_gallery(const Embedding& query, const std::vector<Embedding>& gallery) {
  if (gallery.empty()) throw ArgumentError("rank_gallery: empty gallery");
  RankedList out;
  out.query_id = query.id;
  out.items.reserve(gallery.size());
  for (const Embedding& g : gallery) {
    if (g.vector.size() != query.vector.size()) {
      throw ArgumentError("rank_gallery: dimension mismatch for gallery item " + g.id);
    }
    out.items.push_back({g.id, cosine_similarity(query.vector, g.vector)});
  }
  std::sort(out.items.begin(), out.items.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.gallery_id < b.gallery_id;
  });
  return out;
}

double recall_at_k(const std::vector<RankedList>& rankings,
                   const std::unordered_map<std::string, std::string>& ground_truth, int k) {
  if (k < 1) throw ArgumentError("recall_at_k: k must be >= 1");
  if (rankings.empty()) return 0.0;
  int hits = 0;
  for (const RankedList& rl : rankings) {
    auto it = ground_truth.find(rl.query_id);
    if (it == ground_truth.end()) {
      throw ArgumentError("recall_at_k: missing ground truth for query " + rl.query_id);
    }
    const int limit = std::min<int>(k, static_cast<int>(rl.items.size()));
    for (int i = 0; i < limit; ++i) {
      if (rl.items[static_cast<size_t>(i)].gallery_id == it->second) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

double dcg(std::span<const double> rels, int p) {
  if (p < 1) throw ArgumentError("dcg: p must be >= 1");
  double sum = 0.0;
  const size_t limit = std::min<size_t>(static_cast<size_t>(p), rels.size());
  for (size_t i = 0; i < limit; ++i) {
    if (rels[i] < 0.0) throw ArgumentError("dcg: negative relevance");
    sum += rels[i] / std::log2(static_cast<double>(i) + 2.0);
  }
  return sum;
}

double ndcg(std::span<const double> rels, int p) {
  const double raw = dcg(rels, p);
  std::vector<double> ideal(rels.begin(), rels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<double>());
  const double best = dcg(ideal, p);
  if (best == 0.0) return 0.0;  // all-zero relevance
  return raw / best;
}

double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
               double beta) {
  if (candidate.empty() || reference.empty()) {
    throw ArgumentError("rouge_l: empty token sequence");
  }
  const size_t lcs = lcs_length(candidate, reference);
  if (lcs == 0) return 0.0;
  const double r = static_cast<double>(lcs) / static_cast<double>(reference.size());
  const double p = static_cast<double>(lcs) / static_cast<double>(candidate.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * r * p / (r + b2 * p);
}

double tau(const std::vector<std::string>& query_tokens,
           const std::vector<std::vector<std::string>>& caption_set, const EvalConfig& cfg) {
  if (caption_set.empty()) throw ArgumentError("tau: empty caption set");
  double agg = 0.0;
  if (cfg.tau_aggregation == TauAggregation::max) {
    for (const auto& cap : caption_set) {
      agg = std::max(agg, rouge_l(query_tokens, cap, cfg.rouge_beta));
    }
  } else {
    for (const auto& cap : caption_set) agg += rouge_l(query_tokens, cap, cfg.rouge_beta);
    agg /= static_cast<double>(caption_set.size());
  }
  return agg;
}

RelevanceMatrix::RelevanceMatrix(std::vector<std::string> query_ids,
                                 std::vector<std::string> image_ids)
    : query_ids_(std::move(query_ids)), image_ids_(std::move(image_ids)) {
  values_.assign(query_ids_.size() * image_ids_.size(), 0.0f);
  for (size_t i = 0; i < query_ids_.size(); ++i) {
    if (!query_index_.emplace(query_ids_[i], static_cast<int>(i)).second) {
      throw ArgumentError("relevance matrix: duplicate query id " + query_ids_[i]);
    }
  }
  for (size_t i = 0; i < image_ids_.size(); ++i) {
    if (!image_index_.emplace(image_ids_[i], static_cast<int>(i)).second) {
      throw ArgumentError("relevance matrix: duplicate image id " + image_ids_[i]);
    }
  }
}

int RelevanceMatrix::query_index(const std::string& id) const {
  auto it = query_index_.find(id);
  return it == query_index_.end() ? -1 : it->second;
}

int RelevanceMatrix::image_index(const std::string& id) const {
  auto it = image_index_.find(id);
  return it == image_index_.end() ? -1 : it->second;
}

void RelevanceMatrix::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out.write("RELM", 4);
  write_u16(out, kRelmVersion);
  write_u32(out, static_cast<uint32_t>(rows()));
  write_u32(out, static_cast<uint32_t>(cols()));
  for (const std::string& id : query_ids_) write_string(out, id);
  for (const std::string& id : image_ids_) write_string(out, id);
  for (float v : values_) write_f32(out, v);
  if (!out) throw DataError("write failed: " + path);
}

RelevanceMatrix RelevanceMatrix::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open for reading: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "RELM", 4) != 0) {
    throw DataError(path + ": not a relevance matrix file (bad magic)");
  }
  const uint16_t version = read_u16(in, path);
  if (version != kRelmVersion) {
    throw DataError(path + ": unsupported relevance matrix version " + std::to_string(version));
  }
  const uint32_t rows = read_u32(in, path);
  const uint32_t cols = read_u32(in, path);
  std::vector<std::string> queries(rows), images(cols);
  for (auto& id : queries) id = read_string(in, path);
  for (auto& id : images) id = read_string(in, path);
  RelevanceMatrix m(std::move(queries), std::move(images));
  for (uint32_t r = 0; r < rows; ++r) {
    for (uint32_t c = 0; c < cols; ++c) {
      m.set(static_cast<int>(r), static_cast<int>(c), read_f32(in, path));
    }
  }
  return m;
}

RelevanceMatrix build_relevance_matrix(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& queries,
    const std::vector<std::pair<std::string, std::vector<std::vector<std::string>>>>& images,
    const EvalConfig& cfg) {
  cfg.validate();
  std::vector<std::string> query_ids, image_ids;
  query_ids.reserve(queries.size());
  for (const auto& [id, tokens] : queries) query_ids.push_back(id);
  image_ids.reserve(images.size());
  for (const auto& [id, caps] : images) {
    if (caps.empty()) throw ArgumentError("relevance matrix: image " + id + " has no captions");
    image_ids.push_back(id);
  }
  RelevanceMatrix m(std::move(query_ids), std::move(image_ids));
  for (size_t r = 0; r < queries.size(); ++r) {
    for (size_t c = 0; c < images.size(); ++c) {
      m.set(static_cast<int>(r), static_cast<int>(c),
            static_cast<float>(tau(queries[r].second, images[c].second, cfg)));
    }
  }
  return m;
}

std::string RetrievalReport::text_table() const {
  std::ostringstream os;
  os << "metric          value\n";
  os << "--------------  -----\n";
  for (size_t i = 0; i < recall_ks.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "Recall@%-7d %.4f\n", recall_ks[i], recall_values[i]);
    os << buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "NDCG@%-10d %.4f\n", ndcg_p, mean_ndcg);
  os << buf;
  return os.str();
}

void RetrievalReport::write_jsonl(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const QueryRecord& q : per_query) {
    const nlohmann::json j = {{"query_id", q.query_id},
                              {"gt_rank", q.ground_truth_rank},
                              {"ndcg", q.ndcg_value}};
    out << j.dump() << "\n";
  }
}

RetrievalReport evaluate_retrieval(const std::vector<Embedding>& image_embs,
                                   const std::vector<Embedding>& caption_queries,
                                   const RelevanceMatrix& relevance,
                                   const std::unordered_map<std::string, std::string>& ground_truth,
                                   const EvalConfig& cfg) {
  cfg.validate();
  if (image_embs.empty()) throw ArgumentError("evaluate_retrieval: empty gallery");

  std::string missing;
  for (const Embedding& e : caption_queries) {
    if (relevance.query_index(e.id) < 0) missing += " " + e.id;
  }
  for (const Embedding& e : image_embs) {
    if (relevance.image_index(e.id) < 0) missing += " " + e.id;
  }
  if (!missing.empty()) {
    throw ArgumentError("evaluate_retrieval: relevance matrix does not cover:" + missing);
  }

  RetrievalReport report;
  report.recall_ks = cfg.recall_ks;
  report.ndcg_p = cfg.ndcg_p;
  std::vector<RankedList> rankings;
  rankings.reserve(caption_queries.size());
  double ndcg_sum = 0.0;
  for (const Embedding& q : caption_queries) {
    RankedList rl = rank_gallery(q, image_embs);
    const int qi = relevance.query_index(q.id);
    std::vector<double> rels;
    rels.reserve(rl.items.size());
    for (const RankedItem& item : rl.items) {
      rels.push_back(relevance.at(qi, relevance.image_index(item.gallery_id)));
    }
    const double nv = ndcg(rels, cfg.ndcg_p);
    ndcg_sum += nv;

    auto gt = ground_truth.find(q.id);
    if (gt == ground_truth.end()) {
      throw ArgumentError("evaluate_retrieval: missing ground truth for query " + q.id);
    }
    int gt_rank = 0;
    for (size_t i = 0; i < rl.items.size(); ++i) {
      if (rl.items[i].gallery_id == gt->second) {
        gt_rank = static_cast<int>(i) + 1;
        break;
      }
    }
    report.per_query.push_back({q.id, gt_rank, nv});
    rankings.push_back(std::move(rl));
  }
  for (int k : cfg.recall_ks) {
    report.recall_values.push_back(recall_at_k(rankings, ground_truth, k));
  }
  report.mean_ndcg = caption_queries.empty() ? 0.0 : ndcg_sum / caption_queries.size();
  return report;
}

RetrievalReport average_reports(const std::vector<RetrievalReport>& folds) {
  if (folds.empty()) throw ArgumentError("average_reports: no fold reports");
  RetrievalReport avg;
  avg.recall_ks = folds[0].recall_ks;
  avg.ndcg_p = folds[0].ndcg_p;
  avg.recall_values.assign(avg.recall_ks.size(), 0.0);
  for (const RetrievalReport& r : folds) {
    if (r.recall_ks != avg.recall_ks || r.ndcg_p != avg.ndcg_p) {
      throw ArgumentError("average_reports: fold reports use different settings");
    }
    for (size_t i = 0; i < r.recall_values.size(); ++i) avg.recall_values[i] += r.recall_values[i];
    avg.mean_ndcg += r.mean_ndcg;
  }
  for (double& v : avg.recall_values) v /= static_cast<double>(folds.size());
  avg.mean_ndcg /= static_cast<double>(folds.size());
  return avg;
}

}  // namespace tern
