#include "tern/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tern/error.hpp"
#include "tern/rng.hpp"

namespace tern {

using nlohmann::json;

namespace {

json parse_line(const std::string& line, const std::string& path, size_t line_no) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) {
    throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON line");
  }
  return j;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open for reading: " + path);
  return in;
}

}  // namespace

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::map<std::string, long long> freq;
  for (const std::string& text : texts) {
    for (const std::string& tok : clean_tokens(text)) freq[tok] += 1;
  }
  std::vector<std::pair<std::string, long long>> entries(freq.begin(), freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(entries.size());
  for (auto& [tok, count] : entries) tokens.push_back(tok);
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (size_t i = 0; i < v.tokens_.size(); ++i) {
    auto [it, inserted] = v.index_.emplace(v.tokens_[i], static_cast<int>(i) + kReservedCount);
    if (!inserted) throw DataError("vocabulary: duplicate token " + v.tokens_[i]);
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kOov : it->second;
}

const std::string& Vocabulary::token(int id) const {
  static const std::string kReserved[] = {"<t-cls>", "<oov>", "<pad>"};
  if (id >= 0 && id < kReservedCount) return kReserved[id];
  const size_t i = static_cast<size_t>(id - kReservedCount);
  if (id < 0 || i >= tokens_.size()) throw ArgumentError("vocabulary: id out of range");
  return tokens_[i];
}

std::vector<std::string> clean_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    const unsigned char uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc)) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
  const std::vector<std::string> words = clean_tokens(text);
  if (words.empty()) throw ArgumentError("tokenize: no tokens left after cleaning");
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const std::string& w : words) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += vocab.token(ids[i]);
  }
  return out;
}

std::vector<RegionSet> load_region_features(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<RegionSet> sets;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json j = parse_line(line, path, line_no);
    RegionSet rs;
    try {
      rs.image_id = j.at("id").get<std::string>();
      rs.width = j.at("width").get<double>();
      rs.height = j.at("height").get<double>();
      for (const json& jr : j.at("regions")) {
        Region r;
        const auto& box = jr.at("box");
        if (box.size() != 4) throw DataError("box must have 4 coordinates");
        for (size_t i = 0; i < 4; ++i) r.box[i] = box[i].get<double>();
        r.feat = jr.at("feat").get<std::vector<double>>();
        rs.regions.push_back(std::move(r));
      }
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (rs.width <= 0.0 || rs.height <= 0.0) {
      throw DataError(path + ":" + std::to_string(line_no) + ": non-positive image size for " +
                      rs.image_id);
    }
    if (rs.regions.empty()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": image " + rs.image_id +
                      " has no regions");
    }
    for (const Region& r : rs.regions) {
      const auto& b = r.box;
      if (!(0.0 <= b[0] && b[0] <= b[2] && b[2] <= rs.width) ||
          !(0.0 <= b[1] && b[1] <= b[3] && b[3] <= rs.height)) {
        throw DataError(path + ":" + std::to_string(line_no) + ": box outside image for " +
                        rs.image_id);
      }
    }
    sets.push_back(std::move(rs));
  }
  return sets;
}

void write_region_features(const std::string& path, const std::vector<RegionSet>& sets) {
  std::ofstream out = open_out(path);
  for (const RegionSet& rs : sets) {
    json regions = json::array();
    for (const Region& r : rs.regions) {
      regions.push_back({{"box", r.box}, {"feat", r.feat}});
    }
    const json j = {
        {"id", rs.image_id}, {"width", rs.width}, {"height", rs.height}, {"regions", regions}};
    out << j.dump() << "\n";
  }
}

std::vector<CaptionRecord> load_captions(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<CaptionRecord> caps;
  std::set<std::string> seen;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json j = parse_line(line, path, line_no);
    CaptionRecord c;
    try {
      c.caption_id = j.at("caption_id").get<std::string>();
      c.image_id = j.at("image_id").get<std::string>();
      c.text = j.at("text").get<std::string>();
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(c.caption_id).second) {
      throw DataError(path + ":" + std::to_string(line_no) + ": duplicate caption id " +
                      c.caption_id);
    }
    caps.push_back(std::move(c));
  }
  return caps;
}

void write_captions(const std::string& path, const std::vector<CaptionRecord>& captions) {
  std::ofstream out = open_out(path);
  for (const CaptionRecord& c : captions) {
    const json j = {{"caption_id", c.caption_id}, {"image_id", c.image_id}, {"text", c.text}};
    out << j.dump() << "\n";
  }
}

std::vector<Embedding> load_embeddings(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<Embedding> embs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json j = parse_line(line, path, line_no);
    Embedding e;
    try {
      e.id = j.at("id").get<std::string>();
      const std::string src = j.at("source").get<std::string>();
      if (src == "image") {
        e.source = EmbeddingSource::image;
      } else if (src == "caption") {
        e.source = EmbeddingSource::caption;
      } else {
        throw DataError(path + ":" + std::to_string(line_no) + ": unknown source " + src);
      }
      e.vector = j.at("vector").get<std::vector<double>>();
    } catch (const json::exception& ex) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + ex.what());
    }
    if (e.vector.empty()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": empty vector for " + e.id);
    }
    embs.push_back(std::move(e));
  }
  return embs;
}

void write_embeddings(const std::string& path, const std::vector<Embedding>& embeddings) {
  std::ofstream out = open_out(path);
  for (const Embedding& e : embeddings) {
    const json j = {{"id", e.id},
                    {"source", e.source == EmbeddingSource::image ? "image" : "caption"},
                    {"vector", e.vector}};
    out << j.dump() << "\n";
  }
}

std::vector<std::pair<std::string, std::string>> load_splits(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<std::pair<std::string, std::string>> splits;
  std::set<std::string> seen;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json j = parse_line(line, path, line_no);
    std::string image_id, split;
    try {
      image_id = j.at("image_id").get<std::string>();
      split = j.at("split").get<std::string>();
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (split != "train" && split != "val" && split != "test") {
      throw DataError(path + ":" + std::to_string(line_no) + ": unknown split " + split);
    }
    if (!seen.insert(image_id).second) {
      throw DataError(path + ":" + std::to_string(line_no) + ": image " + image_id +
                      " assigned to two splits");
    }
    splits.emplace_back(std::move(image_id), std::move(split));
  }
  return splits;
}

void write_splits(const std::string& path,
                  const std::vector<std::pair<std::string, std::string>>& splits) {
  std::ofstream out = open_out(path);
  for (const auto& [image_id, split] : splits) {
    const json j = {{"image_id", image_id}, {"split", split}};
    out << j.dump() << "\n";
  }
}

DatasetSplit make_split(const std::string& name,
                        const std::vector<std::pair<std::string, std::string>>& split_map,
                        const std::vector<CaptionRecord>& captions) {
  std::set<std::string> members;
  for (const auto& [image_id, split] : split_map) {
    if (split == name && !members.insert(image_id).second) {
      throw DataError("split " + name + ": duplicate image " + image_id);
    }
  }
  DatasetSplit out;
  out.name = name;
  for (const CaptionRecord& c : captions) {
    if (members.count(c.image_id) != 0) out.pairs.emplace_back(c.image_id, c.caption_id);
  }
  return out;
}

std::vector<std::vector<std::string>> kfold_ids(const std::vector<std::string>& ids, int k) {
  if (k <= 0) throw ArgumentError("kfold_ids: k must be positive");
  if (static_cast<int>(ids.size()) < k) {
    throw ArgumentError("kfold_ids: fewer ids than folds");
  }
  std::vector<std::vector<std::string>> folds(static_cast<size_t>(k));
  const size_t base = ids.size() / static_cast<size_t>(k);
  const size_t rem = ids.size() % static_cast<size_t>(k);
  size_t pos = 0;
  for (size_t f = 0; f < static_cast<size_t>(k); ++f) {
    const size_t take = base + (f < rem ? 1 : 0);
    folds[f].assign(ids.begin() + static_cast<long>(pos), ids.begin() + static_cast<long>(pos + take));
    pos += take;
  }
  return folds;
}

SyntheticDataset gen_synthetic_dataset(const GenConfig& cfg) {
  if (cfg.n_train < 0 || cfg.n_val < 0 || cfg.n_test < 0 ||
      cfg.n_train + cfg.n_val + cfg.n_test < 1) {
    throw ArgumentError("gen_synthetic_dataset: need at least one image");
  }
  if (cfg.captions_per_image < 1 || cfg.n_regions < 1 || cfg.d_r < 1 || cfg.vocab_size < 4) {
    throw ArgumentError("gen_synthetic_dataset: sizes must be >= 1 (vocab >= 4)");
  }

  Rng rng(Rng::derive_seed(cfg.seed, 0x9e4d, 0x51));

  // Concept pool: a word plus a feature-space direction per concept.
  const int n_concepts = cfg.vocab_size;
  std::vector<std::vector<double>> directions(static_cast<size_t>(n_concepts));
  for (auto& dir : directions) {
    dir.resize(static_cast<size_t>(cfg.d_r));
    double norm = 0.0;
    for (double& v : dir) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : dir) v /= norm;
  }
  static const char* kNouns[] = {"dog",   "cat",   "car",    "tree",  "house", "bird",
                                 "boat",  "chair", "table",  "horse", "train", "plane",
                                 "apple", "river", "clock",  "lamp",  "phone", "book",
                                 "shirt", "glass", "bridge", "field", "cloud", "stone",
                                 "flower", "truck", "bench",  "tower", "beach", "piano"};
  constexpr int kNounCount = static_cast<int>(sizeof(kNouns) / sizeof(kNouns[0]));
  std::vector<std::string> words(static_cast<size_t>(n_concepts));
  for (int c = 0; c < n_concepts; ++c) {
    words[static_cast<size_t>(c)] =
        c < kNounCount ? kNouns[c] : "object" + std::to_string(c - kNounCount);
  }
  static const char* kTemplates[] = {
      "a %0 with a %1 near a %2",  "the %0 and the %1 beside a %2",
      "a %1 next to a %0 and a %2", "some %2 behind a %1 with the %0",
      "a photo of a %0 a %1 and a %2"};
  constexpr int kTemplateCount = static_cast<int>(sizeof(kTemplates) / sizeof(kTemplates[0]));

  SyntheticDataset ds;
  const int total = cfg.n_train + cfg.n_val + cfg.n_test;
  const double width = 640.0, height = 480.0;
  const long long max_sets =
      n_concepts >= 3
          ? static_cast<long long>(n_concepts) * (n_concepts - 1) * (n_concepts - 2) / 6
          : 1;
  std::set<std::vector<int>> used_sets;
  for (int i = 0; i < total; ++i) {
    const std::string image_id = "img" + std::to_string(i);
    // Three distinct concepts per image. Concept sets are unique across
    // images while the pool allows it, so every image stays separable from
    // every other by at least one content word / feature direction.
    std::vector<int> concepts;
    while (true) {
      concepts.clear();
      while (static_cast<int>(concepts.size()) < 3) {
        const int c = rng.uniform_int(0, n_concepts - 1);
        if (std::find(concepts.begin(), concepts.end(), c) == concepts.end()) {
          concepts.push_back(c);
        }
      }
      std::vector<int> key = concepts;
      std::sort(key.begin(), key.end());
      if (static_cast<long long>(used_sets.size()) >= max_sets || used_sets.insert(key).second) {
        break;
      }
    }

    RegionSet rs;
    rs.image_id = image_id;
    rs.width = width;
    rs.height = height;
    for (int r = 0; r < cfg.n_regions; ++r) {
      Region region;
      const int concept_id = concepts[static_cast<size_t>(r % 3)];
      const std::vector<double>& dir = directions[static_cast<size_t>(concept_id)];
      region.feat.resize(static_cast<size_t>(cfg.d_r));
      for (int j = 0; j < cfg.d_r; ++j) {
        region.feat[static_cast<size_t>(j)] = dir[static_cast<size_t>(j)] + 0.05 * rng.normal();
      }
      const double x1 = rng.uniform(0.0, width * 0.6);
      const double y1 = rng.uniform(0.0, height * 0.6);
      const double x2 = x1 + rng.uniform(width * 0.05, width * 0.4);
      const double y2 = y1 + rng.uniform(height * 0.05, height * 0.4);
      region.box = {x1, y1, std::min(x2, width), std::min(y2, height)};
      rs.regions.push_back(std::move(region));
    }
    ds.images.push_back(std::move(rs));

    for (int k = 0; k < cfg.captions_per_image; ++k) {
      std::vector<int> order = concepts;
      rng.shuffle(order);
      std::string text = kTemplates[rng.uniform_int(0, kTemplateCount - 1)];
      for (int slot = 0; slot < 3; ++slot) {
        const std::string key = "%" + std::to_string(slot);
        const size_t pos = text.find(key);
        text.replace(pos, key.size(), words[static_cast<size_t>(order[static_cast<size_t>(slot)])]);
      }
      CaptionRecord cap;
      cap.caption_id = image_id + "#" + std::to_string(k);
      cap.image_id = image_id;
      cap.text = std::move(text);
      ds.captions.push_back(std::move(cap));
    }

    const std::string split =
        i < cfg.n_train ? "train" : (i < cfg.n_train + cfg.n_val ? "val" : "test");
    ds.image_splits.emplace_back(image_id, split);
  }
  return ds;
}

void write_dataset(const std::string& dir, const SyntheticDataset& ds) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  write_region_features((base / "features.jsonl").string(), ds.images);
  write_captions((base / "captions.jsonl").string(), ds.captions);
  write_splits((base / "splits.jsonl").string(), ds.image_splits);
}

}  // namespace tern
