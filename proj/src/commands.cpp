#include "magic/commands.hpp"

#include "magic/bundle.hpp"
#include "magic/errors.hpp"
#include "magic/vocabulary.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace magic {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path in_work(const RunConfig& cfg, const char* name) { return cfg.work_dir / name; }

void require(const fs::path& p, const char* produced_by) {
  if (!fs::exists(p))
    throw BundleError(BundleError::Code::kIo,
                      "missing " + p.string() + " (run `magic " + produced_by + "` first)");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw BundleError(BundleError::Code::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw BundleError(BundleError::Code::kIo, "write failed for " + path.string());
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

CaptionModel load_checked(const fs::path& path, const RunConfig& cfg) {
  CaptionModel model = load_model(path);
  // N_k is an inference-time choice and may differ from the checkpoint.
  json have = model.config.to_json(), want = cfg.model.to_json();
  have.erase("N_k");
  want.erase("N_k");
  if (have != want)
    throw ConfigError("model", "differs from the checkpoint in " + path.string() + ": " + have.dump());
  model.config.N_k = cfg.model.N_k;
  return model;
}

json provenance(const RunConfig& cfg, int N_k, const std::string& rule) {
  return {{"seed", cfg.seed}, {"N_k", N_k}, {"rule", rule}, {"selection", "best-of-N_k by CIDEr-D"},
          {"config", cfg.to_json()}};
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DivergenceError*>(&e)) return 2;
  if (dynamic_cast<const BundleError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return 3;
  return 1;
}

void cmd_synth(const RunConfig& cfg, std::ostream& log) {
  fs::create_directories(cfg.work_dir);
  const SentenceCorpus corpus = generate_sentence_corpus(substream_seed(cfg.seed, "data:corpus"), cfg.grammar,
                                                         static_cast<std::size_t>(cfg.data.sentences));
  const Vocabulary vocab = build_vocabulary(corpus, cfg.model.raw_dim, cfg.data.scenes.word_seed);

  SceneSet train;
  for (auto& g : generate_scenes(substream_seed(cfg.seed, "data:train"),
                                 static_cast<std::size_t>(cfg.data.train_scenes), cfg.data.scenes, cfg.grammar,
                                 "train_"))
    train.scenes.push_back(std::move(g.scene));
  EvaluationSet eval;
  for (auto& g : generate_scenes(substream_seed(cfg.seed, "data:eval"), static_cast<std::size_t>(cfg.data.eval_scenes),
                                 cfg.data.scenes, cfg.grammar, "eval_")) {
    eval.scenes.push_back(std::move(g.scene));
    eval.references.push_back(std::move(g.references));
  }

  save_corpus(in_work(cfg, files::kCorpus), corpus);
  save_vocabulary(in_work(cfg, files::kVocab), vocab);
  save_scene_set(in_work(cfg, files::kScenes), train);
  save_evaluation_set(in_work(cfg, files::kEvalScenes), eval);
  export_corpus_jsonl(cfg.work_dir / "corpus.jsonl", corpus);
  export_scenes_jsonl(cfg.work_dir / "scenes.jsonl", train.scenes);
  export_scenes_jsonl(cfg.work_dir / "eval.jsonl", eval.scenes, &eval.references);
  log << "synth: " << corpus.sentences.size() << " sentences, vocabulary " << vocab.size() << ", "
      << train.scenes.size() << " training scenes, " << eval.scenes.size() << " evaluation scenes -> "
      << cfg.work_dir.string() << "\n";
}

void cmd_pretrain(const RunConfig& cfg, std::ostream& log) {
  require(in_work(cfg, files::kCorpus), "synth");
  require(in_work(cfg, files::kVocab), "synth");
  const SentenceCorpus corpus = load_corpus(in_work(cfg, files::kCorpus));
  Vocabulary vocab = load_vocabulary(in_work(cfg, files::kVocab));
  if (vocab.embedding_dim != cfg.model.raw_dim)
    throw ConfigError("model.raw_dim", "does not match the vocabulary dimension " + std::to_string(vocab.embedding_dim));
  CaptionModel model(cfg.model, std::move(vocab), cfg.seed);

  std::ostringstream curve;
  curve << "epoch,loss,exact_match\n";
  pretrain_autoencoder(corpus, model.vocab, cfg.grammar, model.sentence, cfg.autoencoder,
                       [&](const PretrainEpoch& e) {
                         curve << e.epoch << ',' << num(e.loss) << ',' << (e.exact_match < 0 ? "" : num(e.exact_match)) << "\n";
                         log << "pretrain autoencoder epoch " << e.epoch << " loss " << num(e.loss) << " exact "
                             << num(e.exact_match) << "\n";
                       });
  write_text(in_work(cfg, files::kPretrainCurve), curve.str());

  std::ostringstream lcurve;
  lcurve << "epoch,loss,holdout_accuracy\n";
  pretrain_language_discriminator(corpus, model.vocab, model.language, cfg.language,
                                  [&](const LanguagePretrainEpoch& e) {
                                    lcurve << e.epoch << ',' << num(e.loss) << ',' << num(e.holdout_accuracy) << "\n";
                                    log << "pretrain language epoch " << e.epoch << " loss " << num(e.loss)
                                        << " accuracy " << num(e.holdout_accuracy) << "\n";
                                  });
  write_text(in_work(cfg, files::kLanguageCurve), lcurve.str());
  save_model(in_work(cfg, files::kPretrained), model);
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  require(in_work(cfg, files::kScenes), "synth");
  require(in_work(cfg, files::kCorpus), "synth");
  require(in_work(cfg, files::kPretrained), "pretrain");
  const SceneSet scenes = load_scene_set(in_work(cfg, files::kScenes));
  const SentenceCorpus corpus = load_corpus(in_work(cfg, files::kCorpus));
  CaptionModel model = load_checked(in_work(cfg, files::kPretrained), cfg);
  if (cfg.train.warm_start) model.warm_start_image_encoder();

  std::ostringstream csv;
  csv << "iteration,critic_loss,gap_image,gap_sentence,adv_image,adv_sentence,cycle,language\n";
  const int every = std::max(1, cfg.train.iterations / 20);
  auto on_row = [&](const TrainLogRow& r) {
    csv << r.iteration << ',' << num(r.critic_loss) << ',' << num(r.gap_image) << ',' << num(r.gap_sentence) << ','
        << num(r.adv_image) << ',' << num(r.adv_sentence) << ',' << num(r.cycle) << ',' << num(r.language) << "\n";
    if (r.iteration % every == 0)
      log << "train iteration " << r.iteration << " gap_I " << num(r.gap_image) << " gap_S " << num(r.gap_sentence)
          << " cycle " << num(r.cycle) << "\n";
  };
  try {
    train_magic(scenes, corpus, cfg.grammar, model, cfg.train, on_row);
  } catch (const DivergenceError&) {
    write_text(in_work(cfg, files::kTrainLog), csv.str());
    save_model(in_work(cfg, files::kDiverged), model);
    throw;
  }
  write_text(in_work(cfg, files::kTrainLog), csv.str());
  save_model(in_work(cfg, files::kModel), model);
}

std::vector<Prediction> predict(const EvaluationSet& eval, CaptionModel& model, int N_k, SelectionRule rule,
                                std::uint64_t seed) {
  std::vector<Prediction> out;
  for (const auto& scene : eval.scenes) {
    const auto caps =
        generate_captions(scene, model, N_k, rule, substream_seed(seed, "scene:" + scene.scene_id));
    for (std::size_t k = 0; k < caps.size(); ++k) out.push_back({scene.scene_id, static_cast<int>(k), caps[k].text()});
  }
  return out;
}

std::map<std::string, std::vector<std::string>> references_by_id(const EvaluationSet& eval) {
  std::map<std::string, std::vector<std::string>> out;
  for (std::size_t i = 0; i < eval.scenes.size(); ++i) out[eval.scenes[i].scene_id] = eval.references[i];
  return out;
}

void write_predictions(const fs::path& path, const std::vector<Prediction>& predictions) {
  std::ostringstream os;
  for (const auto& p : predictions)
    os << json{{"image_id", p.image_id}, {"caption_index", p.caption_index}, {"text", p.text}}.dump() << "\n";
  write_text(path, os.str());
}

std::vector<Prediction> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw BundleError(BundleError::Code::kIo, "cannot open " + path.string());
  std::vector<Prediction> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("image_id").get<std::string>(), j.at("caption_index").get<int>(),
                     j.at("text").get<std::string>()});
    } catch (const json::exception& e) {
      throw BundleError(BundleError::Code::kFormat,
                        path.string() + ":" + std::to_string(lineno) + ": bad prediction record: " + e.what());
    }
  }
  return out;
}

std::map<std::string, std::vector<std::string>> group_predictions(const std::vector<Prediction>& predictions) {
  std::map<std::string, std::map<int, std::string>> ordered;
  for (const auto& p : predictions) {
    if (!ordered[p.image_id].emplace(p.caption_index, p.text).second)
      throw std::invalid_argument("duplicate prediction for " + p.image_id + " caption " +
                                  std::to_string(p.caption_index));
  }
  std::map<std::string, std::vector<std::string>> out;
  for (auto& [id, caps] : ordered)
    for (auto& [k, text] : caps) out[id].push_back(std::move(text));
  return out;
}

void cmd_generate(const RunConfig& cfg, std::ostream& log) {
  require(in_work(cfg, files::kModel), "train");
  require(in_work(cfg, files::kEvalScenes), "synth");
  CaptionModel model = load_checked(in_work(cfg, files::kModel), cfg);
  const EvaluationSet eval = load_evaluation_set(in_work(cfg, files::kEvalScenes));
  const auto preds = predict(eval, model, cfg.model.N_k, selection_rule_from_string(cfg.eval.rule),
                             substream_seed(cfg.seed, "generate"));
  write_predictions(in_work(cfg, files::kPredictions), preds);
  log << "generate: " << preds.size() << " captions for " << eval.scenes.size() << " scenes\n";
}

void cmd_eval(const RunConfig& cfg, std::ostream& log) {
  require(in_work(cfg, files::kPredictions), "generate");
  require(in_work(cfg, files::kEvalScenes), "synth");
  const EvaluationSet eval = load_evaluation_set(in_work(cfg, files::kEvalScenes));
  const auto preds = group_predictions(read_predictions(in_work(cfg, files::kPredictions)));
  const EvaluationReport report =
      evaluate_run(preds, references_by_id(eval), provenance(cfg, cfg.model.N_k, cfg.eval.rule), cfg.eval.parallel);
  write_text(in_work(cfg, files::kReportJson), report.to_json().dump(2) + "\n");
  write_text(in_work(cfg, files::kReportText), report.to_text());
  log << report.to_text();
}

void cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  require(in_work(cfg, files::kModel), "train");
  require(in_work(cfg, files::kEvalScenes), "synth");
  CaptionModel model = load_checked(in_work(cfg, files::kModel), cfg);
  const EvaluationSet eval = load_evaluation_set(in_work(cfg, files::kEvalScenes));
  const auto refs = references_by_id(eval);

  static const char* kColumns[] = {"CIDEr-D", "BLEU-4", "Div-1", "Div-2", "RE-4", "SelfCIDEr"};
  json rows = json::array();
  std::ostringstream table;
  table << std::left << std::setw(11) << "rule" << std::setw(5) << "N_k";
  for (const char* c : kColumns) table << std::setw(11) << c;
  table << "\n";
  for (const auto& rule_name : cfg.ablate.rules) {
    for (int N_k : cfg.ablate.N_k) {
      json row{{"rule", rule_name}, {"N_k", N_k}};
      table << std::setw(11) << rule_name << std::setw(5) << N_k;
      try {
        const SelectionRule rule = selection_rule_from_string(rule_name);
        const auto preds = predict(eval, model, N_k, rule, substream_seed(cfg.seed, "ablate:" + rule_name));
        const auto report = evaluate_run(group_predictions(preds), refs, provenance(cfg, N_k, rule_name),
                                         cfg.eval.parallel);
        row["scores"] = report.scores;
        table << std::fixed << std::setprecision(4);
        for (const char* c : kColumns) table << std::setw(11) << report.scores.at(c);
        table.unsetf(std::ios::floatfield);
      } catch (const std::exception& e) {
        row["error"] = e.what();
        table << "failed: " << e.what();
      }
      table << "\n";
      rows.push_back(std::move(row));
    }
  }
  write_text(in_work(cfg, files::kAblationJson),
             json{{"seed", cfg.seed}, {"arms", rows}, {"config", cfg.to_json()}}.dump(2) + "\n");
  write_text(in_work(cfg, files::kAblationText), table.str());
  log << table.str();
}

int run_command(const std::string& name, const RunConfig& cfg, std::ostream& log, std::ostream& err) {
  try {
    if (name == "synth") cmd_synth(cfg, log);
    else if (name == "pretrain") cmd_pretrain(cfg, log);
    else if (name == "train") cmd_train(cfg, log);
    else if (name == "generate") cmd_generate(cfg, log);
    else if (name == "eval") cmd_eval(cfg, log);
    else if (name == "ablate") cmd_ablate(cfg, log);
    else throw std::invalid_argument("unknown command '" + name + "'");
    return 0;
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    err << "magic " << name << ": " << (code == 2 ? "diverged: " : "error: ") << e.what() << "\n";
    return code;
  }
}

}  // namespace magic
