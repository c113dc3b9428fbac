#include "tern/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tern/error.hpp"

namespace tern {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (allowed.count(key) == 0) {
      throw ConfigError("unknown config key \"" + key + "\" in " + where);
    }
  }
}

json model_to_json(const TernConfig& m) {
  return json{{"d_r", m.d_r},
              {"d_visual", m.d_visual},
              {"d_text", m.d_text},
              {"d_common", m.d_common},
              {"n_visual_te", m.n_visual_te},
              {"n_text_te", m.n_text_te},
              {"n_shared_te", m.n_shared_te},
              {"d_ff", m.d_ff},
              {"dropout", m.dropout},
              {"heads", m.heads},
              {"max_regions", m.max_regions},
              {"max_seq_len", m.max_seq_len},
              {"geometry_mode",
               m.geometry_mode == GeometryMode::conventional ? "conventional" : "paper-literal"},
              {"precision", m.precision == Precision::f64 ? "f64" : "f32"}};
}

TernConfig model_from_json(const json& j) {
  TernConfig m;
  check_keys(j,
             {"d_r", "d_visual", "d_text", "d_common", "n_visual_te", "n_text_te", "n_shared_te",
              "d_ff", "dropout", "heads", "max_regions", "max_seq_len", "geometry_mode",
              "precision"},
             "model");
  m.d_r = j.value("d_r", m.d_r);
  m.d_visual = j.value("d_visual", m.d_visual);
  m.d_text = j.value("d_text", m.d_text);
  m.d_common = j.value("d_common", m.d_common);
  m.n_visual_te = j.value("n_visual_te", m.n_visual_te);
  m.n_text_te = j.value("n_text_te", m.n_text_te);
  m.n_shared_te = j.value("n_shared_te", m.n_shared_te);
  m.d_ff = j.value("d_ff", m.d_ff);
  m.dropout = j.value("dropout", m.dropout);
  m.heads = j.value("heads", m.heads);
  m.max_regions = j.value("max_regions", m.max_regions);
  m.max_seq_len = j.value("max_seq_len", m.max_seq_len);
  if (j.contains("geometry_mode")) {
    const std::string mode = j["geometry_mode"].get<std::string>();
    if (mode == "conventional") {
      m.geometry_mode = GeometryMode::conventional;
    } else if (mode == "paper-literal") {
      m.geometry_mode = GeometryMode::paper_literal;
    } else {
      throw ConfigError("model.geometry_mode must be \"conventional\" or \"paper-literal\"");
    }
  }
  if (j.contains("precision")) {
    const std::string p = j["precision"].get<std::string>();
    if (p == "f64") {
      m.precision = Precision::f64;
    } else if (p == "f32") {
      m.precision = Precision::f32;
    } else {
      throw ConfigError("model.precision must be \"f64\" or \"f32\"");
    }
  }
  return m;
}

json train_to_json(const TrainConfig& t) {
  return json{{"alpha", t.alpha},
              {"batch_size", t.batch_size},
              {"epochs", t.epochs},
              {"lr", t.lr},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},
              {"loss_reduction", t.loss_reduction == Reduction::sum ? "sum" : "mean"},
              {"checkpoint_every", t.checkpoint_every},
              {"validate_every", t.validate_every}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  check_keys(j,
             {"alpha", "batch_size", "epochs", "lr", "beta1", "beta2", "adam_eps",
              "loss_reduction", "checkpoint_every", "validate_every"},
             "train");
  t.alpha = j.value("alpha", t.alpha);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.epochs = j.value("epochs", t.epochs);
  t.lr = j.value("lr", t.lr);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.adam_eps = j.value("adam_eps", t.adam_eps);
  if (j.contains("loss_reduction")) {
    const std::string r = j["loss_reduction"].get<std::string>();
    if (r == "sum") {
      t.loss_reduction = Reduction::sum;
    } else if (r == "mean") {
      t.loss_reduction = Reduction::mean;
    } else {
      throw ConfigError("train.loss_reduction must be \"sum\" or \"mean\"");
    }
  }
  t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
  t.validate_every = j.value("validate_every", t.validate_every);
  return t;
}

json eval_to_json(const EvalConfig& e) {
  return json{{"ndcg_p", e.ndcg_p},
              {"recall_ks", e.recall_ks},
              {"rouge_beta", e.rouge_beta},
              {"tau_aggregation", e.tau_aggregation == TauAggregation::max ? "max" : "mean"}};
}

EvalConfig eval_from_json(const json& j) {
  EvalConfig e;
  check_keys(j, {"ndcg_p", "recall_ks", "rouge_beta", "tau_aggregation"}, "eval");
  e.ndcg_p = j.value("ndcg_p", e.ndcg_p);
  if (j.contains("recall_ks")) e.recall_ks = j["recall_ks"].get<std::vector<int>>();
  e.rouge_beta = j.value("rouge_beta", e.rouge_beta);
  if (j.contains("tau_aggregation")) {
    const std::string a = j["tau_aggregation"].get<std::string>();
    if (a == "max") {
      e.tau_aggregation = TauAggregation::max;
    } else if (a == "mean") {
      e.tau_aggregation = TauAggregation::mean;
    } else {
      throw ConfigError("eval.tau_aggregation must be \"max\" or \"mean\"");
    }
  }
  return e;
}

json gen_to_json(const GenConfig& g) {
  return json{{"images", g.n_train},     {"val", g.n_val},
              {"test", g.n_test},        {"captions_per_image", g.captions_per_image},
              {"regions", g.n_regions},  {"feat_dim", g.d_r},
              {"concepts", g.vocab_size}};
}

GenConfig gen_from_json(const json& j) {
  GenConfig g;
  check_keys(j, {"images", "val", "test", "captions_per_image", "regions", "feat_dim", "concepts"},
             "gen");
  g.n_train = j.value("images", g.n_train);
  g.n_val = j.value("val", g.n_val);
  g.n_test = j.value("test", g.n_test);
  g.captions_per_image = j.value("captions_per_image", g.captions_per_image);
  g.n_regions = j.value("regions", g.n_regions);
  g.d_r = j.value("feat_dim", g.d_r);
  g.vocab_size = j.value("concepts", g.vocab_size);
  return g;
}

json paths_to_json(const Paths& p) {
  return json{{"features", p.features},     {"captions", p.captions},
              {"splits", p.splits},         {"relevance", p.relevance},
              {"embeddings", p.embeddings}, {"checkpoint", p.checkpoint},
              {"output_dir", p.output_dir}};
}

Paths paths_from_json(const json& j) {
  Paths p;
  check_keys(j,
             {"features", "captions", "splits", "relevance", "embeddings", "checkpoint",
              "output_dir"},
             "paths");
  p.features = j.value("features", "");
  p.captions = j.value("captions", "");
  p.splits = j.value("splits", "");
  p.relevance = j.value("relevance", "");
  p.embeddings = j.value("embeddings", "");
  p.checkpoint = j.value("checkpoint", "");
  p.output_dir = j.value("output_dir", "");
  return p;
}

json to_json(const RunConfig& cfg) {
  return json{{"seed", cfg.seed},           {"model", model_to_json(cfg.model)},
              {"train", train_to_json(cfg.train)}, {"eval", eval_to_json(cfg.eval)},
              {"gen", gen_to_json(cfg.gen)},       {"paths", paths_to_json(cfg.paths)}};
}

RunConfig from_json(const json& j) {
  RunConfig cfg;
  check_keys(j, {"seed", "model", "train", "eval", "gen", "paths"}, "config root");
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("model")) cfg.model = model_from_json(j["model"]);
  if (j.contains("train")) cfg.train = train_from_json(j["train"]);
  if (j.contains("eval")) cfg.eval = eval_from_json(j["eval"]);
  if (j.contains("gen")) cfg.gen = gen_from_json(j["gen"]);
  if (j.contains("paths")) cfg.paths = paths_from_json(j["paths"]);
  cfg.train.seed = cfg.seed;
  cfg.gen.seed = cfg.seed;
  return cfg;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  eval.validate();
}

RunConfig run_config_from_json_text(const std::string& text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON");
  RunConfig cfg = from_json(j);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return run_config_from_json_text(buf.str());
}

std::string run_config_to_json_text(const RunConfig& cfg) { return to_json(cfg).dump(2); }

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("--set expects key=value, got \"" + assignment + "\"");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json j = to_json(cfg);
  json* cur = &j;
  size_t start = 0;
  while (true) {
    const size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!cur->contains(part)) {
      throw ConfigError("unknown config key \"" + key + "\"");
    }
    cur = &(*cur)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }

  try {
    if (cur->is_string()) {
      *cur = value;
    } else if (cur->is_boolean()) {
      *cur = (value == "true" || value == "1");
    } else if (cur->is_number_integer() || cur->is_number_unsigned()) {
      *cur = std::stoll(value);
    } else if (cur->is_number_float()) {
      *cur = std::stod(value);
    } else if (cur->is_array()) {
      json arr = json::array();
      std::istringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) arr.push_back(std::stoll(item));
      *cur = arr;
    } else {
      throw ConfigError("config key \"" + key + "\" is not a settable value");
    }
  } catch (const std::invalid_argument&) {
    throw ConfigError("cannot parse value \"" + value + "\" for key \"" + key + "\"");
  }
  cfg = from_json(j);
  cfg.validate();
}

void write_resolved_config(const std::string& dir, const RunConfig& cfg) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path p = std::filesystem::path(dir) / "resolved_config.json";
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write resolved config: " + p.string());
  out << run_config_to_json_text(cfg) << "\n";
}

}  // namespace tern
