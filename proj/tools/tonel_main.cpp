// tonel: train, cluster, and evaluate CiM-friendly retrieval embeddings.
//
// Subcommands: ingest | cluster | train | evaluate | export-prompts.
// Every command accepts --config <json>; command-line flags override config
// fields one by one. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 numerical failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tonel/baselines.hpp"
#include "tonel/cim_noise.hpp"
#include "tonel/embedding_store.hpp"
#include "tonel/error.hpp"
#include "tonel/nato_trainer.hpp"
#include "tonel/pgm_cluster.hpp"
#include "tonel/projector.hpp"
#include "tonel/retrieval_eval.hpp"
#include "tonel/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tonel;

namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<float> parse_float_list(const std::string& s, const char* field) {
  std::vector<float> out;
  for (const auto& tok : split_list(s)) {
    char* end = nullptr;
    const float v = std::strtof(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0' || !std::isfinite(v))
      fail(ErrorCode::kBadConfig,
           std::string(field) + ": cannot parse \"" + tok + "\" as a number");
    out.push_back(v);
  }
  if (out.empty())
    fail(ErrorCode::kBadConfig, std::string(field) + ": empty list");
  return out;
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kBadConfig, "config: cannot open " + path);
  try {
    json j;
    in >> j;
    if (!j.is_object())
      fail(ErrorCode::kBadConfig, "config " + path + ": must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    fail(ErrorCode::kBadConfig, "config " + path + ": " + e.what());
  }
}

// Config-file values fill every field the user did not pass as a flag; the
// key set is checked so a typo in the file fails before any computation.
class ConfigMerge {
 public:
  ConfigMerge(json j, const CLI::App* cmd) : j_(std::move(j)), cmd_(cmd) {
    known_.insert("config");
  }

  template <typename T>
  void field(const char* key, const char* flag, T& target) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    const CLI::Option* opt = cmd_->get_option_no_throw(flag);
    if (opt != nullptr && opt->count() > 0) return;  // explicit flag wins
    try {
      target = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorCode::kBadConfig,
           std::string("config field \"") + key + "\" has the wrong type");
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      (void)value;
      if (!known_.count(key))
        fail(ErrorCode::kBadConfig,
             "config field \"" + key + "\" is not recognized");
    }
  }

 private:
  const json j_;
  const CLI::App* cmd_;
  std::set<std::string> known_;
};

void require_file(const std::string& path, const char* field) {
  if (path.empty())
    fail(ErrorCode::kBadConfig, std::string(field) + " is required");
  if (!fs::exists(path))
    fail(ErrorCode::kBadConfig,
         std::string(field) + ": path does not exist: " + path);
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) fail(ErrorCode::kIoFailure, "cannot create " + path);
  out << body;
  out.flush();
  if (!out) fail(ErrorCode::kIoFailure, "write failed for " + path);
}

void write_report_json(const std::string& path, const char* command,
                       const json& config, const json& report) {
  json body;
  body["version"] = kVersion;
  body["command"] = command;
  body["config"] = config;
  body["report"] = report;
  write_text_file(path, body.dump(2) + "\n");
}

DeviceProfile resolve_profile(const std::string& name_or_path) {
  if (fs::exists(name_or_path) && fs::is_regular_file(name_or_path))
    return load_profile(name_or_path);
  return profile_by_name(name_or_path);
}

// ---------------------------------------------------------------- ingest

struct IngestOptions {
  std::string config, input, format = "csv", output, manifest_out;
  std::string id_prefix;
};

int run_ingest(const IngestOptions& opt) {
  require_file(opt.input, "--input");
  if (opt.output.empty()) fail(ErrorCode::kBadConfig, "--output is required");
  if (opt.format != "csv" && opt.format != "jsonl")
    fail(ErrorCode::kBadConfig, "--format must be csv or jsonl");

  EmbeddingSet set;
  Manifest manifest;
  std::ifstream in(opt.input);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open " + opt.input);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ManifestEntry entry;
    std::vector<float> row;
    if (opt.format == "csv") {
      for (const auto& tok : split_list(line)) {
        char* end = nullptr;
        const float v = std::strtof(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0')
          fail(ErrorCode::kNonFiniteValue,
               opt.input + ":" + std::to_string(lineno) + ": cannot parse \"" +
                   tok + "\" as a float");
        if (!std::isfinite(v))
          fail(ErrorCode::kNonFiniteValue,
               opt.input + ":" + std::to_string(lineno) + ": non-finite value");
        row.push_back(v);
      }
      entry.id = opt.id_prefix + std::to_string(set.count);
    } else {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        fail(ErrorCode::kBadConfig,
             opt.input + ":" + std::to_string(lineno) + ": " + e.what());
      }
      const json* vec = nullptr;
      if (j.is_array()) {
        vec = &j;
        entry.id = opt.id_prefix + std::to_string(set.count);
      } else if (j.is_object()) {
        if (j.contains("embedding"))
          vec = &j.at("embedding");
        else if (j.contains("vector"))
          vec = &j.at("vector");
        else
          fail(ErrorCode::kBadConfig,
               opt.input + ":" + std::to_string(lineno) +
                   ": object needs an \"embedding\" array");
        entry.id = j.contains("id") ? j.at("id").get<std::string>()
                                    : opt.id_prefix + std::to_string(set.count);
        if (j.contains("text") && !j.at("text").is_null())
          entry.text = j.at("text").get<std::string>();
        if (j.contains("true_label") && !j.at("true_label").is_null())
          entry.true_label = j.at("true_label").get<int>();
      } else {
        fail(ErrorCode::kBadConfig, opt.input + ":" + std::to_string(lineno) +
                                        ": line must be an array or object");
      }
      if (!vec->is_array())
        fail(ErrorCode::kBadConfig, opt.input + ":" + std::to_string(lineno) +
                                        ": embedding must be an array");
      row.reserve(vec->size());
      for (const auto& x : *vec) {
        if (!x.is_number())
          fail(ErrorCode::kNonFiniteValue,
               opt.input + ":" + std::to_string(lineno) +
                   ": embedding entries must be numbers");
        const float v = x.get<float>();
        if (!std::isfinite(v))
          fail(ErrorCode::kNonFiniteValue,
               opt.input + ":" + std::to_string(lineno) + ": non-finite value");
        row.push_back(v);
      }
    }
    if (row.empty())
      fail(ErrorCode::kBadConfig,
           opt.input + ":" + std::to_string(lineno) + ": empty row");
    if (set.count == 0) {
      set.dim = row.size();
    } else if (row.size() != set.dim) {
      fail(ErrorCode::kShapeMismatch,
           opt.input + ":" + std::to_string(lineno) + ": row has " +
               std::to_string(row.size()) + " values, expected " +
               std::to_string(set.dim));
    }
    set.data.insert(set.data.end(), row.begin(), row.end());
    set.ids.push_back(entry.id);
    manifest.entries.push_back(std::move(entry));
    ++set.count;
  }
  if (set.count == 0)
    fail(ErrorCode::kBadConfig, opt.input + ": no rows to ingest");

  save_embeddings(set, opt.output);
  if (!opt.manifest_out.empty()) save_manifest(manifest, opt.manifest_out);
  std::cerr << "[tonel] ingested " << set.count << " x " << set.dim
            << " embeddings -> " << opt.output << "\n";
  return 0;
}

// ---------------------------------------------------------------- cluster

struct ClusterOptions {
  std::string config, embeddings, manifest, model_out, report_out, sweep;
  int k = -1;  // -1: take the true-label class count from the manifest
  uint64_t seed = 0;
  int max_iters = 300;
  double tol = 1e-6;
  bool normalize = false;
};

int run_cluster(const ClusterOptions& opt, const json& resolved) {
  require_file(opt.embeddings, "--embeddings");
  require_file(opt.manifest, "--manifest");
  const EmbeddingSet set = load_embeddings(opt.embeddings);
  Manifest manifest = load_manifest(opt.manifest);
  const LabeledSet labeled = attach_labels(set, manifest);

  if (!opt.sweep.empty()) {
    std::vector<int> ks;
    for (const float v : parse_float_list(opt.sweep, "--sweep"))
      ks.push_back(static_cast<int>(v));
    const auto sweep = kmeans_sweep(set, ks, opt.seed);
    std::cout << "k,inertia\n";
    for (const auto& [k, inertia] : sweep)
      std::cout << k << "," << fmt_g(inertia) << "\n";
    return 0;
  }

  int k = opt.k;
  if (k < 0) {
    if (labeled.true_classes >= 2) {
      k = labeled.true_classes;
      std::cerr << "[tonel] --k not given, using true-label class count " << k
                << "\n";
    } else {
      fail(ErrorCode::kBadConfig,
           "--k is required when the manifest has no true labels");
    }
  }

  const ClusterModel model =
      kmeans_fit(set, k, opt.seed, opt.max_iters, opt.tol, opt.normalize);
  const Manifest updated = write_pseudo_labels(model, manifest);
  save_manifest(updated, opt.manifest);
  if (!opt.model_out.empty()) save_cluster_model(model, opt.model_out);
  if (!opt.report_out.empty()) {
    json report;
    report["k"] = model.k;
    report["inertia"] = model.inertia;
    report["degenerate"] = model.degenerate;
    write_report_json(opt.report_out, "cluster", resolved, report);
  }
  std::cerr << "[tonel] clustered " << set.count << " documents into " << k
            << " groups (inertia " << fmt_g(model.inertia) << ")\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string config, embeddings, manifest, mode = "pl";
  std::string checkpoint, report_out;
  std::string device = "Device-2";
  double sigma = 1.0;
  int epochs = 30;
  int batch_size = 64;
  std::string optimizer = "adam";
  double lr = 1e-3;
  double momentum = 0.9;
  double val_fraction = 0.1;
  int d_out = 64;
  std::string arch = "affine";
  int hidden = 128;
  int bits = 8;
  bool surrogate = false;
  uint64_t seed = 0;
};

TrainConfig to_train_config(const TrainOptions& opt) {
  TrainConfig cfg;
  if (opt.mode == "pl")
    cfg.label_source = LabelSource::kPseudo;
  else if (opt.mode == "tl")
    cfg.label_source = LabelSource::kTrue;
  else
    fail(ErrorCode::kBadConfig, "--mode must be pl or tl, got " + opt.mode);
  cfg.device = opt.device;
  cfg.sigma_scale = static_cast<float>(opt.sigma);
  cfg.epochs = opt.epochs;
  cfg.batch_size = opt.batch_size;
  if (opt.optimizer == "adam")
    cfg.optimizer.algo = OptAlgo::kAdam;
  else if (opt.optimizer == "sgd")
    cfg.optimizer.algo = OptAlgo::kSgdMomentum;
  else
    fail(ErrorCode::kBadConfig, "--optimizer must be adam or sgd");
  cfg.optimizer.lr = static_cast<float>(opt.lr);
  cfg.optimizer.momentum = static_cast<float>(opt.momentum);
  cfg.seed = opt.seed;
  cfg.validation_fraction = static_cast<float>(opt.val_fraction);
  cfg.quant.bits = opt.bits;
  cfg.surrogate = opt.surrogate;
  cfg.d_out = opt.d_out;
  if (opt.arch == "affine")
    cfg.arch = ProjectionArch::kAffine;
  else if (opt.arch == "mlp")
    cfg.arch = ProjectionArch::kMlp;
  else
    fail(ErrorCode::kBadConfig, "--arch must be affine or mlp");
  cfg.hidden = opt.hidden;
  return cfg;
}

int run_train(const TrainOptions& opt, const json& resolved) {
  require_file(opt.embeddings, "--embeddings");
  require_file(opt.manifest, "--manifest");
  if (opt.checkpoint.empty())
    fail(ErrorCode::kBadConfig, "--checkpoint is required");
  TrainConfig cfg = to_train_config(opt);
  // resolve the profile (name or JSON file) before loading anything heavy
  cfg.device_profile = resolve_profile(opt.device);

  const EmbeddingSet set = load_embeddings(opt.embeddings);
  const Manifest manifest = load_manifest(opt.manifest);
  const LabeledSet labeled = attach_labels(set, manifest);

  auto [model, report] = train(labeled, cfg);
  save_model(model, opt.checkpoint);
  report.checkpoint_path = opt.checkpoint;

  if (!opt.report_out.empty()) {
    json r;
    r["epochs_run"] = report.epochs_run;
    r["best_epoch"] = report.best_epoch;
    r["best_val_acc"] = report.best_val_acc;
    r["train_loss"] = report.train_loss;
    r["train_acc"] = report.train_acc;
    r["val_loss"] = report.val_loss;
    r["val_acc"] = report.val_acc;
    r["checkpoint"] = report.checkpoint_path;
    r["classes"] = model.cfg.classes;
    write_report_json(opt.report_out, "train", resolved, r);
  }
  // timing goes to the log only; report artifacts stay run-to-run identical
  std::cerr << "[tonel] trained " << opt.mode << " model in "
            << fmt_g(report.wall_clock_seconds) << "s, best val acc "
            << fmt_g(report.best_val_acc) << " -> " << opt.checkpoint << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateOptions {
  std::string config, embeddings, queries, method = "oracle";
  std::string checkpoint, pca_model, out_dir = ".";
  std::string devices = "Device-2";
  std::string fractions = "0,0.5,1";
  std::string sigmas = "1";
  int pca_dim = 64;
  int k = 5;
  int bits = 8;
  uint64_t seed = 0;
  bool dump_quantized = false;
};

int run_evaluate(const EvaluateOptions& opt, const json& resolved) {
  require_file(opt.embeddings, "--embeddings");
  require_file(opt.queries, "--queries");
  const bool is_tonel = opt.method == "tonel-pl" || opt.method == "tonel-tl";
  if (!is_tonel && opt.method != "pca" && opt.method != "oracle")
    fail(ErrorCode::kBadConfig,
         "--method must be tonel-pl, tonel-tl, pca or oracle, got " + opt.method);

  EvalConfig cfg;
  cfg.method_name = opt.method;
  for (const auto& name : split_list(opt.devices))
    cfg.devices.push_back(resolve_profile(name));
  if (cfg.devices.empty()) fail(ErrorCode::kBadConfig, "--devices: empty list");
  cfg.noisy_fractions = parse_float_list(opt.fractions, "--fractions");
  for (const float p : cfg.noisy_fractions)
    if (p < 0.0f || p > 1.0f)
      fail(ErrorCode::kBadConfig, "--fractions values must lie in [0, 1]");
  cfg.sigma_scales = parse_float_list(opt.sigmas, "--sigmas");
  cfg.seed = opt.seed;
  cfg.k = static_cast<std::size_t>(opt.k);
  cfg.quant.bits = opt.bits;

  const EmbeddingSet docs = load_embeddings(opt.embeddings);
  const QuerySet queries = load_embeddings(opt.queries);

  TonelModel model;
  PcaModel pca;
  std::unique_ptr<Projector> projector;
  if (is_tonel) {
    require_file(opt.checkpoint, "--checkpoint");
    model = load_model(opt.checkpoint);
    projector = std::make_unique<ModelProjector>(model);
  } else if (opt.method == "pca") {
    if (!opt.pca_model.empty()) {
      require_file(opt.pca_model, "--pca-model");
      pca = load_pca(opt.pca_model);
    } else {
      pca = pca_fit(docs, static_cast<std::size_t>(opt.pca_dim));
    }
    projector = std::make_unique<PcaProjector>(pca);
  }

  fs::create_directories(opt.out_dir);
  const auto reports = run_experiment(projector.get(), docs, queries, cfg);

  if (opt.dump_quantized && projector) {
    QuantizedSet qs;
    qs.count = docs.count;
    qs.dim = projector->output_dim();
    qs.vectors = quantize_corpus(*projector, docs, cfg.quant);
    qs.ids = docs.ids;
    save_quantized(qs, (fs::path(opt.out_dir) / "documents.tq08").string());
  }

  std::string csv =
      "method,device,sigma_scale,noisy_fraction,acc_at_1,prec_at_5,ndcg_at_5\n";
  for (const auto& r : reports) {
    json body;
    body["method"] = r.method;
    body["device"] = r.device;
    body["sigma_scale"] = r.sigma_scale;
    body["noisy_fraction"] = r.noisy_fraction;
    body["seed"] = r.seed;
    body["k"] = r.k;
    body["num_docs"] = r.num_docs;
    body["num_queries"] = r.num_queries;
    body["noisy_count"] = r.noisy_count;
    body["acc_at_1"] = r.acc1;
    body["prec_at_5"] = r.prec5;
    body["ndcg_at_5"] = r.ndcg5;
    const std::string name = "report_" + r.method + "_" + r.device + "_s" +
                             fmt_g(r.sigma_scale) + "_p" +
                             fmt_g(r.noisy_fraction) + ".json";
    write_report_json((fs::path(opt.out_dir) / name).string(), "evaluate",
                      resolved, body);
    char row[256];
    std::snprintf(row, sizeof row, "%s,%s,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  r.method.c_str(), r.device.c_str(), r.sigma_scale,
                  r.noisy_fraction, r.acc1, r.prec5, r.ndcg5);
    csv += row;
  }
  write_text_file((fs::path(opt.out_dir) / "summary.csv").string(), csv);
  std::cerr << "[tonel] wrote " << reports.size() << " evaluation reports to "
            << opt.out_dir << "\n";
  return 0;
}

// ------------------------------------------------------------ export-prompts

struct ExportOptions {
  std::string config, embeddings, queries, manifest, query_manifest;
  std::string method = "oracle", checkpoint, pca_model, out;
  std::string device;  // empty: clean retrieval
  double sigma = 1.0;
  double fraction = 1.0;
  int pca_dim = 64;
  int k = 5;
  int bits = 8;
  uint64_t seed = 0;
};

int run_export(const ExportOptions& opt) {
  require_file(opt.embeddings, "--embeddings");
  require_file(opt.queries, "--queries");
  require_file(opt.manifest, "--manifest");
  require_file(opt.query_manifest, "--query-manifest");
  if (opt.out.empty()) fail(ErrorCode::kBadConfig, "--out is required");
  if (opt.k < 0) fail(ErrorCode::kBadConfig, "--k must be >= 0");

  const EmbeddingSet docs = load_embeddings(opt.embeddings);
  const QuerySet queries = load_embeddings(opt.queries);
  const Manifest doc_manifest = load_manifest(opt.manifest);
  const Manifest query_manifest = load_manifest(opt.query_manifest);
  attach_labels(docs, doc_manifest);  // id consistency check
  attach_labels(queries, query_manifest);

  TonelModel model;
  PcaModel pca;
  std::unique_ptr<Projector> projector;
  if (opt.method == "tonel" || opt.method == "tonel-pl" ||
      opt.method == "tonel-tl") {
    require_file(opt.checkpoint, "--checkpoint");
    model = load_model(opt.checkpoint);
    projector = std::make_unique<ModelProjector>(model);
  } else if (opt.method == "pca") {
    if (!opt.pca_model.empty()) {
      require_file(opt.pca_model, "--pca-model");
      pca = load_pca(opt.pca_model);
    } else {
      pca = pca_fit(docs, static_cast<std::size_t>(opt.pca_dim));
    }
    projector = std::make_unique<PcaProjector>(pca);
  } else if (opt.method != "oracle") {
    fail(ErrorCode::kBadConfig, "--method must be tonel, pca or oracle");
  }

  const std::size_t k = std::min<std::size_t>(opt.k, docs.count);

  // Stored document matrix: the chosen method's quantized corpus, optionally
  // noise-perturbed; queries are projected + quantized but never noised.
  std::vector<float> stored;
  std::size_t stored_dim = 0;
  std::vector<std::vector<float>> query_vecs(queries.count);
  QuantConfig quant;
  quant.bits = opt.bits;
  if (projector) {
    const auto doc_codes = quantize_corpus(*projector, docs, quant);
    const auto query_codes = quantize_corpus(*projector, queries, quant);
    stored_dim = projector->output_dim();
    if (!opt.device.empty()) {
      NoiseConfig noise;
      noise.profile = resolve_profile(opt.device);
      noise.sigma_scale = static_cast<float>(opt.sigma);
      noise.noisy_fraction = static_cast<float>(opt.fraction);
      noise.seed = opt.seed;
      stored = perturb_matrix(doc_codes, noise).data;
    } else {
      stored.resize(docs.count * stored_dim);
      for (std::size_t i = 0; i < docs.count; ++i) {
        const auto v = dequantize(doc_codes[i]);
        std::copy(v.begin(), v.end(), stored.begin() + i * stored_dim);
      }
    }
    for (std::size_t q = 0; q < queries.count; ++q)
      query_vecs[q] = dequantize(query_codes[q]);
  } else {
    stored = docs.data;
    stored_dim = docs.dim;
    for (std::size_t q = 0; q < queries.count; ++q) {
      const auto row = queries.row(q);
      query_vecs[q].assign(row.begin(), row.end());
    }
  }

  const MatrixView mat{stored.data(), docs.count, stored_dim};
  std::ofstream out(opt.out, std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot create " + opt.out);
  for (std::size_t q = 0; q < queries.count; ++q) {
    const TopK top = mips_topk(mat, query_vecs[q], k);
    std::vector<std::string> texts;
    texts.reserve(top.indices.size());
    for (const std::size_t i : top.indices) {
      const auto& entry = doc_manifest.entries[i];
      if (!entry.text)
        fail(ErrorCode::kMissingText,
             "document \"" + entry.id + "\" has no text in the manifest");
      texts.push_back(*entry.text);
    }
    const auto& qentry = query_manifest.entries[q];
    if (!qentry.text)
      fail(ErrorCode::kMissingText,
           "query \"" + qentry.id + "\" has no text in the query manifest");
    json line;
    line["query_id"] = qentry.id;
    line["prompt"] = assemble_prompt(*qentry.text, texts);
    out << line.dump() << "\n";
  }
  out.flush();
  if (!out) fail(ErrorCode::kIoFailure, "write failed for " + opt.out);
  std::cerr << "[tonel] exported " << queries.count << " prompts -> " << opt.out
            << "\n";
  return 0;
}

int exit_code_for(const TonelError& e) {
  switch (e.code()) {
    case ErrorCode::kBadConfig:
      return 2;
    case ErrorCode::kDivergedTraining:
      return 4;
    default:
      return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"task-oriented noise-resilient embeddings for CiM retrieval"};
  app.require_subcommand(1);

  IngestOptions ingest;
  ClusterOptions cluster;
  TrainOptions train_opt;
  EvaluateOptions eval_opt;
  ExportOptions export_opt;

  auto* cmd_ingest = app.add_subcommand("ingest", "convert CSV/JSONL to TEMB");
  cmd_ingest->add_option("--config", ingest.config, "JSON config file");
  cmd_ingest->add_option("--input", ingest.input, "CSV or JSONL input");
  cmd_ingest->add_option("--format", ingest.format, "csv | jsonl");
  cmd_ingest->add_option("--output", ingest.output, "TEMB output path");
  cmd_ingest->add_option("--manifest", ingest.manifest_out,
                         "also write a JSONL manifest here");
  cmd_ingest->add_option("--id-prefix", ingest.id_prefix,
                         "prefix for generated row ids");

  auto* cmd_cluster =
      app.add_subcommand("cluster", "k-means pseudo labels into the manifest");
  cmd_cluster->add_option("--config", cluster.config, "JSON config file");
  cmd_cluster->add_option("--embeddings", cluster.embeddings, "TEMB input");
  cmd_cluster->add_option("--manifest", cluster.manifest,
                          "JSONL manifest (rewritten in place)");
  cmd_cluster->add_option("--k", cluster.k, "cluster count");
  cmd_cluster->add_option("--seed", cluster.seed, "RNG seed");
  cmd_cluster->add_option("--max-iters", cluster.max_iters, "Lloyd iterations");
  cmd_cluster->add_option("--tol", cluster.tol, "relative centroid shift");
  cmd_cluster->add_flag("--normalize", cluster.normalize,
                        "l2-normalize rows before clustering");
  cmd_cluster->add_option("--model", cluster.model_out, "save TKMN model here");
  cmd_cluster->add_option("--report", cluster.report_out, "write a JSON report");
  cmd_cluster->add_option("--sweep", cluster.sweep,
                          "comma list of k values: print inertia per k and exit");

  auto* cmd_train = app.add_subcommand("train", "NATO training (pl or tl mode)");
  cmd_train->add_option("--config", train_opt.config, "JSON config file");
  cmd_train->add_option("--embeddings", train_opt.embeddings, "TEMB input");
  cmd_train->add_option("--manifest", train_opt.manifest, "JSONL manifest");
  cmd_train->add_option("--mode", train_opt.mode, "pl | tl");
  cmd_train->add_option("--checkpoint", train_opt.checkpoint, "TMDL output");
  cmd_train->add_option("--report", train_opt.report_out, "JSON report output");
  cmd_train->add_option("--device", train_opt.device,
                        "device profile name or JSON file");
  cmd_train->add_option("--sigma", train_opt.sigma, "training noise scale");
  cmd_train->add_option("--epochs", train_opt.epochs, "training epochs");
  cmd_train->add_option("--batch-size", train_opt.batch_size, "mini-batch size");
  cmd_train->add_option("--optimizer", train_opt.optimizer, "adam | sgd");
  cmd_train->add_option("--lr", train_opt.lr, "learning rate");
  cmd_train->add_option("--momentum", train_opt.momentum, "SGD momentum");
  cmd_train->add_option("--val-fraction", train_opt.val_fraction,
                        "validation split fraction [0, 0.5]");
  cmd_train->add_option("--d-out", train_opt.d_out, "projected dimension");
  cmd_train->add_option("--arch", train_opt.arch, "affine | mlp");
  cmd_train->add_option("--hidden", train_opt.hidden, "MLP hidden width");
  cmd_train->add_option("--bits", train_opt.bits, "quantizer bits");
  cmd_train->add_flag("--surrogate", train_opt.surrogate,
                      "disable quantization + noise (diagnostics)");
  cmd_train->add_option("--seed", train_opt.seed, "RNG seed");

  auto* cmd_eval =
      app.add_subcommand("evaluate", "MIPS fidelity vs the oracle over a grid");
  cmd_eval->add_option("--config", eval_opt.config, "JSON config file");
  cmd_eval->add_option("--embeddings", eval_opt.embeddings, "document TEMB");
  cmd_eval->add_option("--queries", eval_opt.queries, "query TEMB");
  cmd_eval->add_option("--method", eval_opt.method,
                       "tonel-pl | tonel-tl | pca | oracle");
  cmd_eval->add_option("--checkpoint", eval_opt.checkpoint, "TMDL model");
  cmd_eval->add_option("--pca-model", eval_opt.pca_model, "TPCA model");
  cmd_eval->add_option("--pca-dim", eval_opt.pca_dim,
                       "fit PCA to this dimension when no --pca-model");
  cmd_eval->add_option("--devices", eval_opt.devices,
                       "comma list of device names or JSON files");
  cmd_eval->add_option("--fractions", eval_opt.fractions,
                       "comma list of noisy fractions");
  cmd_eval->add_option("--sigmas", eval_opt.sigmas, "comma list of sigma scales");
  cmd_eval->add_option("--k", eval_opt.k, "retrieval depth");
  cmd_eval->add_option("--bits", eval_opt.bits, "quantizer bits");
  cmd_eval->add_option("--seed", eval_opt.seed, "RNG seed");
  cmd_eval->add_option("--out", eval_opt.out_dir, "output directory");
  cmd_eval->add_flag("--dump-quantized", eval_opt.dump_quantized,
                     "also write the quantized corpus (TQ08)");

  auto* cmd_export = app.add_subcommand(
      "export-prompts", "top-k retrieval + prompt assembly to JSONL");
  cmd_export->add_option("--config", export_opt.config, "JSON config file");
  cmd_export->add_option("--embeddings", export_opt.embeddings, "document TEMB");
  cmd_export->add_option("--queries", export_opt.queries, "query TEMB");
  cmd_export->add_option("--manifest", export_opt.manifest,
                         "document manifest with texts");
  cmd_export->add_option("--query-manifest", export_opt.query_manifest,
                         "query manifest with texts");
  cmd_export->add_option("--method", export_opt.method, "tonel | pca | oracle");
  cmd_export->add_option("--checkpoint", export_opt.checkpoint, "TMDL model");
  cmd_export->add_option("--pca-model", export_opt.pca_model, "TPCA model");
  cmd_export->add_option("--pca-dim", export_opt.pca_dim, "PCA fit dimension");
  cmd_export->add_option("--device", export_opt.device,
                         "perturb stored docs with this profile (default clean)");
  cmd_export->add_option("--sigma", export_opt.sigma, "noise scale");
  cmd_export->add_option("--fraction", export_opt.fraction, "noisy fraction");
  cmd_export->add_option("--k", export_opt.k, "retrieval depth");
  cmd_export->add_option("--bits", export_opt.bits, "quantizer bits");
  cmd_export->add_option("--seed", export_opt.seed, "RNG seed");
  cmd_export->add_option("--out", export_opt.out, "prompts JSONL output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    json resolved;
    resolved["version"] = kVersion;

    if (cmd_ingest->parsed()) {
      if (!ingest.config.empty()) {
        ConfigMerge m(load_config_file(ingest.config), cmd_ingest);
        m.field("input", "--input", ingest.input);
        m.field("format", "--format", ingest.format);
        m.field("output", "--output", ingest.output);
        m.field("manifest", "--manifest", ingest.manifest_out);
        m.field("id_prefix", "--id-prefix", ingest.id_prefix);
        m.finish();
      }
      return run_ingest(ingest);
    }

    if (cmd_cluster->parsed()) {
      if (!cluster.config.empty()) {
        ConfigMerge m(load_config_file(cluster.config), cmd_cluster);
        m.field("embeddings", "--embeddings", cluster.embeddings);
        m.field("manifest", "--manifest", cluster.manifest);
        m.field("k", "--k", cluster.k);
        m.field("seed", "--seed", cluster.seed);
        m.field("max_iters", "--max-iters", cluster.max_iters);
        m.field("tol", "--tol", cluster.tol);
        m.field("normalize", "--normalize", cluster.normalize);
        m.field("model", "--model", cluster.model_out);
        m.field("report", "--report", cluster.report_out);
        m.field("sweep", "--sweep", cluster.sweep);
        m.finish();
      }
      resolved["embeddings"] = cluster.embeddings;
      resolved["manifest"] = cluster.manifest;
      resolved["k"] = cluster.k;
      resolved["seed"] = cluster.seed;
      resolved["max_iters"] = cluster.max_iters;
      resolved["tol"] = cluster.tol;
      resolved["normalize"] = cluster.normalize;
      return run_cluster(cluster, resolved);
    }

    if (cmd_train->parsed()) {
      if (!train_opt.config.empty()) {
        ConfigMerge m(load_config_file(train_opt.config), cmd_train);
        m.field("embeddings", "--embeddings", train_opt.embeddings);
        m.field("manifest", "--manifest", train_opt.manifest);
        m.field("mode", "--mode", train_opt.mode);
        m.field("checkpoint", "--checkpoint", train_opt.checkpoint);
        m.field("report", "--report", train_opt.report_out);
        m.field("device", "--device", train_opt.device);
        m.field("sigma", "--sigma", train_opt.sigma);
        m.field("epochs", "--epochs", train_opt.epochs);
        m.field("batch_size", "--batch-size", train_opt.batch_size);
        m.field("optimizer", "--optimizer", train_opt.optimizer);
        m.field("lr", "--lr", train_opt.lr);
        m.field("momentum", "--momentum", train_opt.momentum);
        m.field("val_fraction", "--val-fraction", train_opt.val_fraction);
        m.field("d_out", "--d-out", train_opt.d_out);
        m.field("arch", "--arch", train_opt.arch);
        m.field("hidden", "--hidden", train_opt.hidden);
        m.field("bits", "--bits", train_opt.bits);
        m.field("surrogate", "--surrogate", train_opt.surrogate);
        m.field("seed", "--seed", train_opt.seed);
        m.finish();
      }
      resolved["embeddings"] = train_opt.embeddings;
      resolved["manifest"] = train_opt.manifest;
      resolved["mode"] = train_opt.mode;
      resolved["checkpoint"] = train_opt.checkpoint;
      resolved["device"] = train_opt.device;
      resolved["sigma"] = train_opt.sigma;
      resolved["epochs"] = train_opt.epochs;
      resolved["batch_size"] = train_opt.batch_size;
      resolved["optimizer"] = train_opt.optimizer;
      resolved["lr"] = train_opt.lr;
      resolved["momentum"] = train_opt.momentum;
      resolved["val_fraction"] = train_opt.val_fraction;
      resolved["d_out"] = train_opt.d_out;
      resolved["arch"] = train_opt.arch;
      resolved["hidden"] = train_opt.hidden;
      resolved["bits"] = train_opt.bits;
      resolved["surrogate"] = train_opt.surrogate;
      resolved["seed"] = train_opt.seed;
      return run_train(train_opt, resolved);
    }

    if (cmd_eval->parsed()) {
      if (!eval_opt.config.empty()) {
        ConfigMerge m(load_config_file(eval_opt.config), cmd_eval);
        m.field("embeddings", "--embeddings", eval_opt.embeddings);
        m.field("queries", "--queries", eval_opt.queries);
        m.field("method", "--method", eval_opt.method);
        m.field("checkpoint", "--checkpoint", eval_opt.checkpoint);
        m.field("pca_model", "--pca-model", eval_opt.pca_model);
        m.field("pca_dim", "--pca-dim", eval_opt.pca_dim);
        m.field("devices", "--devices", eval_opt.devices);
        m.field("fractions", "--fractions", eval_opt.fractions);
        m.field("sigmas", "--sigmas", eval_opt.sigmas);
        m.field("k", "--k", eval_opt.k);
        m.field("bits", "--bits", eval_opt.bits);
        m.field("seed", "--seed", eval_opt.seed);
        m.field("out", "--out", eval_opt.out_dir);
        m.field("dump_quantized", "--dump-quantized", eval_opt.dump_quantized);
        m.finish();
      }
      resolved["embeddings"] = eval_opt.embeddings;
      resolved["queries"] = eval_opt.queries;
      resolved["method"] = eval_opt.method;
      resolved["checkpoint"] = eval_opt.checkpoint;
      resolved["pca_model"] = eval_opt.pca_model;
      resolved["pca_dim"] = eval_opt.pca_dim;
      resolved["devices"] = eval_opt.devices;
      resolved["fractions"] = eval_opt.fractions;
      resolved["sigmas"] = eval_opt.sigmas;
      resolved["k"] = eval_opt.k;
      resolved["bits"] = eval_opt.bits;
      resolved["seed"] = eval_opt.seed;
      resolved["out"] = eval_opt.out_dir;
      return run_evaluate(eval_opt, resolved);
    }

    if (cmd_export->parsed()) {
      if (!export_opt.config.empty()) {
        ConfigMerge m(load_config_file(export_opt.config), cmd_export);
        m.field("embeddings", "--embeddings", export_opt.embeddings);
        m.field("queries", "--queries", export_opt.queries);
        m.field("manifest", "--manifest", export_opt.manifest);
        m.field("query_manifest", "--query-manifest", export_opt.query_manifest);
        m.field("method", "--method", export_opt.method);
        m.field("checkpoint", "--checkpoint", export_opt.checkpoint);
        m.field("pca_model", "--pca-model", export_opt.pca_model);
        m.field("pca_dim", "--pca-dim", export_opt.pca_dim);
        m.field("device", "--device", export_opt.device);
        m.field("sigma", "--sigma", export_opt.sigma);
        m.field("fraction", "--fraction", export_opt.fraction);
        m.field("k", "--k", export_opt.k);
        m.field("bits", "--bits", export_opt.bits);
        m.field("seed", "--seed", export_opt.seed);
        m.field("out", "--out", export_opt.out);
        m.finish();
      }
      return run_export(export_opt);
    }
  } catch (const TonelError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
