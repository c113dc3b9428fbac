// Command-line front end: gen / train / embed / evaluate over the formats
// defined in data_io and metrics.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "tern/checkpoint.hpp"
#include "tern/config.hpp"
#include "tern/data_io.hpp"
#include "tern/error.hpp"
#include "tern/metrics.hpp"
#include "tern/model.hpp"
#include "tern/training.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

tern::RunConfig resolve_config(const CommonOpts& opts) {
  tern::RunConfig cfg;
  if (!opts.config_path.empty()) cfg = tern::load_run_config(opts.config_path);
  for (const std::string& o : opts.overrides) tern::apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

std::string resolve_output_dir(const tern::RunConfig& cfg, const std::string& fallback) {
  if (!cfg.paths.output_dir.empty()) return cfg.paths.output_dir;
  if (const char* env = std::getenv("TERN_OUTPUT_DIR"); env != nullptr && env[0] != '\0') {
    return env;
  }
  return fallback;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw tern::ConfigError("missing required path for " + what);
  if (!fs::exists(path)) throw tern::DataError(what + " file not found: " + path);
}

// Caption token lists (for relevance) and ground truth, restricted to the
// given image gallery.
struct EvalInputs {
  std::vector<std::pair<std::string, std::vector<std::string>>> queries;
  std::vector<std::pair<std::string, std::vector<std::vector<std::string>>>> image_caption_sets;
  std::unordered_map<std::string, std::string> ground_truth;
};

EvalInputs collect_eval_inputs(const std::vector<tern::CaptionRecord>& captions,
                               const std::set<std::string>& gallery_ids,
                               const std::set<std::string>& query_ids) {
  EvalInputs out;
  std::map<std::string, std::vector<std::vector<std::string>>> sets;
  for (const tern::CaptionRecord& c : captions) {
    if (gallery_ids.count(c.image_id) != 0) {
      sets[c.image_id].push_back(tern::clean_tokens(c.text));
    }
    if (query_ids.count(c.caption_id) != 0) {
      out.queries.emplace_back(c.caption_id, tern::clean_tokens(c.text));
      out.ground_truth[c.caption_id] = c.image_id;
    }
  }
  for (const std::string& id : gallery_ids) {
    auto it = sets.find(id);
    if (it == sets.end()) {
      throw tern::DataError("gallery image " + id + " has no captions in the captions file");
    }
    out.image_caption_sets.emplace_back(id, it->second);
  }
  return out;
}

int cmd_gen(const CommonOpts& common, const std::string& out_dir_flag) {
  tern::RunConfig cfg = resolve_config(common);
  const std::string out_dir =
      out_dir_flag.empty() ? resolve_output_dir(cfg, "tern_data") : out_dir_flag;
  const tern::SyntheticDataset ds = tern::gen_synthetic_dataset(cfg.gen);
  tern::write_dataset(out_dir, ds);
  tern::write_resolved_config(out_dir, cfg);
  std::cout << "wrote " << ds.images.size() << " images / " << ds.captions.size()
            << " captions to " << out_dir << "\n";
  return tern::kExitOk;
}

int cmd_train(const CommonOpts& common, const std::string& resume_path) {
  tern::RunConfig cfg;
  std::unique_ptr<tern::TernModel> model;
  tern::Vocabulary vocab;
  tern::AdamState adam;
  int first_epoch = 0;

  if (!resume_path.empty()) {
    require_file(resume_path, "checkpoint");
    tern::LoadedCheckpoint ck = tern::load_checkpoint(resume_path, [&](tern::RunConfig& c) {
      for (const std::string& o : common.overrides) tern::apply_override(c, o);
    });
    cfg = ck.config;
    model = std::move(ck.model);
    vocab = ck.vocab;
    if (ck.train_state.has_value()) {
      adam = ck.train_state->adam;
      first_epoch = ck.train_state->next_epoch;
    }
  } else {
    cfg = resolve_config(common);
  }

  require_file(cfg.paths.features, "features");
  require_file(cfg.paths.captions, "captions");
  require_file(cfg.paths.splits, "splits");

  const auto images = tern::load_region_features(cfg.paths.features);
  const auto captions = tern::load_captions(cfg.paths.captions);
  const auto split_map = tern::load_splits(cfg.paths.splits);
  const tern::DatasetSplit train_split = tern::make_split("train", split_map, captions);
  const tern::DatasetSplit val_split = tern::make_split("val", split_map, captions);

  if (model == nullptr) {
    // Vocabulary comes from the training split only.
    std::vector<std::string> train_texts;
    std::set<std::string> train_caption_ids;
    for (const auto& [img, cap] : train_split.pairs) train_caption_ids.insert(cap);
    for (const tern::CaptionRecord& c : captions) {
      if (train_caption_ids.count(c.caption_id) != 0) train_texts.push_back(c.text);
    }
    vocab = tern::Vocabulary::build(train_texts);
    model = std::make_unique<tern::TernModel>(cfg.model, vocab.size(), cfg.seed);
  }

  const tern::PairedDataset train_data =
      tern::build_paired_dataset(images, captions, train_split, vocab);
  const tern::PairedDataset val_data =
      tern::build_paired_dataset(images, captions, val_split, vocab);

  const std::string out_dir = resolve_output_dir(cfg, "tern_run");
  fs::create_directories(out_dir);
  tern::write_resolved_config(out_dir, cfg);
  std::ofstream log(fs::path(out_dir) / "run_log.txt", std::ios::app);
  log << "run seed=" << cfg.seed << " pairs=" << train_data.pairs.size()
      << " first_epoch=" << first_epoch << "\n";
  std::ofstream loss_csv(fs::path(out_dir) / "loss_curve.csv",
                         first_epoch == 0 ? std::ios::trunc : std::ios::app);
  if (first_epoch == 0) loss_csv << "epoch,mean_loss,val_recall1\n";

  const auto save = [&](const std::string& name, int next_epoch) {
    tern::TrainState ts;
    ts.next_epoch = next_epoch;
    ts.adam = adam;
    tern::save_checkpoint((fs::path(out_dir) / name).string(), *model, vocab, cfg, &ts);
  };

  tern::TrainRunResult result = tern::train_run(
      *model, train_data, &val_data, cfg.train, adam, first_epoch, &log,
      [&](const tern::EpochInfo& info) {
        loss_csv << info.epoch << "," << info.loss << ","
                 << (info.val_recall1 >= 0.0 ? std::to_string(info.val_recall1) : "") << "\n";
        if (info.is_best) save("checkpoint_best.ckpt", info.epoch + 1);
        if (cfg.train.checkpoint_every > 0 &&
            (info.epoch + 1) % cfg.train.checkpoint_every == 0) {
          save("checkpoint_epoch" + std::to_string(info.epoch) + ".ckpt", info.epoch + 1);
        }
      });
  save("checkpoint_last.ckpt", first_epoch + cfg.train.epochs);

  std::cout << "trained " << cfg.train.epochs << " epochs; best val Recall@1 "
            << result.best_recall1 << " at epoch " << result.best_epoch << "; outputs in "
            << out_dir << "\n";
  return tern::kExitOk;
}

int cmd_embed(const CommonOpts& common, const std::string& checkpoint_path,
              const std::string& split_name, const std::string& out_flag) {
  require_file(checkpoint_path, "checkpoint");
  tern::LoadedCheckpoint ck = tern::load_checkpoint(checkpoint_path, [&](tern::RunConfig& c) {
    if (!common.config_path.empty()) {
      const tern::RunConfig file_cfg = tern::load_run_config(common.config_path);
      c.paths = file_cfg.paths;
    }
    for (const std::string& o : common.overrides) tern::apply_override(c, o);
  });
  const tern::RunConfig& cfg = ck.config;

  require_file(cfg.paths.features, "features");
  require_file(cfg.paths.captions, "captions");
  require_file(cfg.paths.splits, "splits");
  const auto images = tern::load_region_features(cfg.paths.features);
  const auto captions = tern::load_captions(cfg.paths.captions);
  const auto split_map = tern::load_splits(cfg.paths.splits);
  const tern::DatasetSplit split = tern::make_split(split_name, split_map, captions);
  const tern::PairedDataset data = tern::build_paired_dataset(images, captions, split, ck.vocab);

  std::vector<tern::Embedding> embeddings;
  for (const tern::RegionSet& rs : data.images) {
    embeddings.push_back(ck.model->encode_image(rs));
  }
  for (const tern::TokenSequence& ts : data.captions) {
    embeddings.push_back(ck.model->encode_caption(ts));
  }

  const std::string out_dir = resolve_output_dir(cfg, ".");
  fs::create_directories(out_dir);
  const std::string out_path =
      out_flag.empty() ? (fs::path(out_dir) / ("embeddings_" + split_name + ".jsonl")).string()
                       : out_flag;
  tern::write_embeddings(out_path, embeddings);
  tern::write_resolved_config(out_dir, cfg);
  std::cout << "wrote " << embeddings.size() << " embeddings to " << out_path << "\n";
  return tern::kExitOk;
}

int cmd_evaluate(const CommonOpts& common, const std::string& embeddings_path,
                 const std::string& captions_path, const std::string& relevance_path, int folds) {
  tern::RunConfig cfg = resolve_config(common);
  const std::string emb_path =
      embeddings_path.empty() ? cfg.paths.embeddings : embeddings_path;
  const std::string cap_path = captions_path.empty() ? cfg.paths.captions : captions_path;
  require_file(emb_path, "embeddings");
  require_file(cap_path, "captions");

  const auto all_embeddings = tern::load_embeddings(emb_path);
  std::vector<tern::Embedding> gallery, queries;
  for (const tern::Embedding& e : all_embeddings) {
    (e.source == tern::EmbeddingSource::image ? gallery : queries).push_back(e);
  }
  if (gallery.empty() || queries.empty()) {
    throw tern::DataError("embeddings file must contain both image and caption embeddings");
  }
  const auto captions = tern::load_captions(cap_path);

  std::set<std::string> gallery_ids, query_ids;
  for (const auto& e : gallery) gallery_ids.insert(e.id);
  for (const auto& e : queries) query_ids.insert(e.id);
  const EvalInputs inputs = collect_eval_inputs(captions, gallery_ids, query_ids);

  const tern::RelevanceMatrix rouge_rel =
      tern::build_relevance_matrix(inputs.queries, inputs.image_caption_sets, cfg.eval);
  std::optional<tern::RelevanceMatrix> external;
  if (!relevance_path.empty()) {
    require_file(relevance_path, "relevance matrix");
    external = tern::RelevanceMatrix::load(relevance_path);
  }

  const std::string out_dir = resolve_output_dir(cfg, "tern_eval");
  fs::create_directories(out_dir);

  // Optionally evaluate per fold and average (the k-fold protocol over the
  // gallery); folds are contiguous slices in gallery order.
  const auto run_eval = [&](const tern::RelevanceMatrix& rel, const std::string& label) {
    std::vector<tern::RetrievalReport> fold_reports;
    if (folds > 1) {
      std::vector<std::string> ids;
      for (const auto& e : gallery) ids.push_back(e.id);
      for (const auto& fold_ids : tern::kfold_ids(ids, folds)) {
        const std::set<std::string> fold_set(fold_ids.begin(), fold_ids.end());
        std::vector<tern::Embedding> fg, fq;
        for (const auto& e : gallery) {
          if (fold_set.count(e.id) != 0) fg.push_back(e);
        }
        for (const auto& e : queries) {
          auto it = inputs.ground_truth.find(e.id);
          if (it != inputs.ground_truth.end() && fold_set.count(it->second) != 0) {
            fq.push_back(e);
          }
        }
        fold_reports.push_back(
            tern::evaluate_retrieval(fg, fq, rel, inputs.ground_truth, cfg.eval));
      }
      tern::RetrievalReport avg = tern::average_reports(fold_reports);
      std::cout << "== NDCG relevance: " << label << " (" << folds << "-fold average) ==\n"
                << avg.text_table();
      return avg;
    }
    tern::RetrievalReport rep =
        tern::evaluate_retrieval(gallery, queries, rel, inputs.ground_truth, cfg.eval);
    std::cout << "== NDCG relevance: " << label << " ==\n" << rep.text_table();
    rep.write_jsonl((fs::path(out_dir) / ("report_" + label + ".jsonl")).string());
    return rep;
  };

  const tern::RetrievalReport rouge_report = run_eval(rouge_rel, "rouge_l");
  std::optional<tern::RetrievalReport> external_report;
  if (external.has_value()) external_report = run_eval(*external, "external");

  {
    std::ofstream rep_out(fs::path(out_dir) / "report.txt");
    rep_out << "relevance: rouge_l\n" << rouge_report.text_table();
    if (external_report.has_value()) {
      rep_out << "\nrelevance: external\n" << external_report->text_table();
    }
  }
  if (folds <= 1) {
    // NDCG as a function of the cutoff, for external plotting.
    std::ofstream csv(fs::path(out_dir) / "ndcg_vs_p.csv");
    csv << "p,mean_ndcg_rouge_l" << (external ? ",mean_ndcg_external" : "") << "\n";
    const int max_p = std::min<int>(static_cast<int>(gallery.size()), 50);
    for (int p = 1; p <= max_p; ++p) {
      tern::EvalConfig pc = cfg.eval;
      pc.ndcg_p = p;
      const auto r = tern::evaluate_retrieval(gallery, queries, rouge_rel, inputs.ground_truth, pc);
      csv << p << "," << r.mean_ndcg;
      if (external.has_value()) {
        const auto re =
            tern::evaluate_retrieval(gallery, queries, *external, inputs.ground_truth, pc);
        csv << "," << re.mean_ndcg;
      }
      csv << "\n";
    }
  }
  tern::write_resolved_config(out_dir, cfg);
  return tern::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-pipeline transformer image-text retrieval"};
  app.require_subcommand(1);

  CommonOpts gen_common, train_common, embed_common, eval_common;
  std::string gen_out, resume_path, checkpoint_path, split_name = "test", embed_out;
  std::string eval_embeddings, eval_captions, eval_relevance, eval_out;
  int eval_folds = 1;

  const auto add_common = [](CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON config file");
    cmd->add_option("--set", opts.overrides, "config overrides, key=value (repeatable)");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, gen_common);
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", [&](const std::vector<std::string>& v) {
    gen_common.overrides.push_back("seed=" + v[0]);
    return true;
  }, "run seed");
  gen->add_option("--images", [&](const std::vector<std::string>& v) {
    gen_common.overrides.push_back("gen.images=" + v[0]);
    return true;
  }, "training images to generate");
  gen->add_option("--val", [&](const std::vector<std::string>& v) {
    gen_common.overrides.push_back("gen.val=" + v[0]);
    return true;
  }, "validation images to generate");
  gen->add_option("--test", [&](const std::vector<std::string>& v) {
    gen_common.overrides.push_back("gen.test=" + v[0]);
    return true;
  }, "test images to generate");

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, train_common);
  train->add_option("--resume", resume_path, "checkpoint to resume from");

  CLI::App* embed = app.add_subcommand("embed", "write embeddings for a split");
  add_common(embed, embed_common);
  embed->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  embed->add_option("--split", split_name, "split to embed (train|val|test)");
  embed->add_option("--out", embed_out, "output embeddings file");

  CLI::App* evaluate = app.add_subcommand("evaluate", "retrieval evaluation report");
  add_common(evaluate, eval_common);
  evaluate->add_option("--embeddings", eval_embeddings, "embeddings JSONL file");
  evaluate->add_option("--captions", eval_captions, "captions JSONL file");
  evaluate->add_option("--relevance", eval_relevance, "external relevance matrix file");
  evaluate->add_option("--folds", eval_folds, "disjoint gallery folds to average over");
  evaluate->add_option("--out", eval_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? tern::kExitOk : tern::kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_common, gen_out);
    if (train->parsed()) return cmd_train(train_common, resume_path);
    if (embed->parsed()) return cmd_embed(embed_common, checkpoint_path, split_name, embed_out);
    if (evaluate->parsed()) {
      if (!eval_out.empty()) eval_common.overrides.push_back("paths.output_dir=" + eval_out);
      return cmd_evaluate(eval_common, eval_embeddings, eval_captions, eval_relevance,
                          eval_folds);
    }
  } catch (const tern::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return tern::kExitUsage;
  } catch (const tern::ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return tern::kExitUsage;
  } catch (const tern::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return tern::kExitData;
  } catch (const tern::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return tern::kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return tern::kExitData;
  }
  return tern::kExitUsage;
}
