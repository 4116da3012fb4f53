#include "mlffn/commands.hpp"

#include <map>

#include "json.hpp"

#include "mlffn/error.hpp"
#include "mlffn/util.hpp"

namespace mlffn::commands {

using json = nlohmann::json;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  }
}

pipeline::RunConfig with_cache(const pipeline::RunConfig& config, const fs::path& out_dir) {
  auto c = config;
  c.cache_dir = cache_dir_for(config, out_dir);
  return c;
}

std::string split_text(const eval::Split& split, const pipeline::RunConfig& config) {
  auto j = json::parse(eval::split_json(split));
  j["seed"] = config.seed;
  j["ratios"] = config.split;
  return j.dump() + "\n";
}

std::vector<TrajectorySegment> align_segments(const fs::path& dir, const std::vector<features::FeatureVector>& rows) {
  std::map<std::string, TrajectorySegment> by_id;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") {
      auto seg = ingest::parse_segment(entry.path());
      by_id.emplace(seg.id, std::move(seg));
    }
  }
  std::vector<TrajectorySegment> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::LengthMismatch, "no segment file for feature row '" + r.id + "'");
    }
    out.push_back(it->second);
  }
  return out;
}

model::ModelConfig model_for(const pipeline::RunConfig& config, const std::vector<features::FeatureVector>& rows,
                             const std::vector<embed::TextEmbedding>& embeddings) {
  auto mc = config.model;
  mc.seed = config.seed;
  mc.feature_dim = rows.front().dim();
  if (!embeddings.empty()) {
    mc.text_dim = embeddings.front().values.size();
  }
  if (mc.uses_text() && embeddings.empty()) {
    throw Error(ErrorCode::ConfigError,
                "variant '" + std::string(model::variant_key(mc.variant)) + "' needs text embeddings");
  }
  return mc;
}

std::vector<features::FeatureVector> load_rows(const fs::path& features_csv) {
  auto rows = features::load_feature_matrix(features_csv);
  if (rows.empty()) {
    throw Error(ErrorCode::EmptySplit, "no rows in " + features_csv.string());
  }
  return rows;
}

}  // namespace

fs::path cache_dir_for(const pipeline::RunConfig& config, const fs::path& out_dir) {
  return config.cache_dir.empty() ? out_dir / "cache" : config.cache_dir;
}

SynthSummary synth(const pipeline::RunConfig& config, const fs::path& out_dir) {
  ensure_dir(out_dir);
  auto sc = config.synth;
  sc.seed = config.seed;
  sc.tau = config.features.tau.accel;
  const auto segments = eval::gen_synthetic(sc);
  for (const auto& s : segments) {
    ingest::write_segment(s, out_dir / (s.id + ".csv"));
  }
  return {segments.size()};
}

ExtractSummary extract(const pipeline::RunConfig& config, const fs::path& in_dir, const fs::path& out_dir,
                       bool skip_bad) {
  const auto result = pipeline::extract_dir(in_dir, config, skip_bad);
  ensure_dir(out_dir);
  util::write_file_atomic(out_dir / "features.csv", features::feature_matrix_csv(result.features));
  util::write_file_atomic(out_dir / "drop_report.json", ingest::drop_report_json(result.clean));
  json meta;
  meta["tau"] = {{"accel", config.features.tau.accel},
                 {"brake", config.features.tau.brake},
                 {"turn", config.features.tau.turn}};
  meta["signals"] = config.features.signal_names();
  meta["feature_dim"] = features::feature_dim(config.features.n_signals());
  meta["rows"] = result.features.size();
  meta["skipped"] = json::array();
  for (const auto& [file, reason] : result.skipped) {
    meta["skipped"].push_back({{"file", file}, {"reason", reason}});
  }
  util::write_file_atomic(out_dir / "extract_meta.json", meta.dump(2) + "\n");
  return {result.features.size(), result.clean.dropped.size(), result.skipped.size()};
}

DescribeSummary describe(const pipeline::RunConfig& config, const fs::path& features_csv, const fs::path& out_dir) {
  const auto rows = load_rows(features_csv);
  const auto fitted = pipeline::split_and_fit(config, rows);
  ensure_dir(out_dir);
  const auto descriptions = pipeline::describe_all(rows, fitted.stats, pipeline::describer_config(with_cache(config, out_dir)));
  features::save_norm_stats(fitted.stats, out_dir / "norm_stats.txt");
  util::write_file_atomic(out_dir / "split.json", split_text(fitted.split, config));
  util::write_file_atomic(out_dir / "descriptions.jsonl", pipeline::descriptions_jsonl(rows, descriptions));
  DescribeSummary s;
  s.rows = descriptions.size();
  for (const auto& d : descriptions) {
    switch (d.source) {
      case semantic::Source::Remote:
        s.remote++;
        break;
      case semantic::Source::Fallback:
        s.fallback++;
        break;
      case semantic::Source::Cache:
        s.cached++;
        break;
    }
    s.requests += static_cast<std::size_t>(d.attempts);
  }
  return s;
}

EmbedSummary embed(const pipeline::RunConfig& config, const fs::path& descriptions_jsonl, const fs::path& out_dir) {
  std::vector<std::string> ids;
  std::vector<semantic::SemanticDescription> descriptions;
  std::size_t line_no = 0;
  for (const auto& line : util::split(util::read_file(descriptions_jsonl), '\n')) {
    line_no++;
    if (util::trim(line).empty()) {
      continue;
    }
    try {
      const auto j = json::parse(line);
      ids.push_back(j.at("id").get<std::string>());
      semantic::SemanticDescription d;
      d.text = j.at("text").get<std::string>();
      descriptions.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, descriptions_jsonl.filename().string() + " line " + std::to_string(line_no) +
                                             ": " + e.what());
    }
  }
  if (descriptions.empty()) {
    throw Error(ErrorCode::EmptySplit, "no descriptions in " + descriptions_jsonl.string());
  }
  ensure_dir(out_dir);
  const auto embeddings = pipeline::embed_all(descriptions, pipeline::embedder_config(with_cache(config, out_dir)));
  util::write_file_atomic(out_dir / "embeddings.csv", pipeline::embeddings_csv(ids, embeddings));
  return {embeddings.size(), embeddings.front().encoder_id};
}

std::vector<embed::TextEmbedding> load_embeddings(const fs::path& path,
                                                  const std::vector<features::FeatureVector>& rows) {
  auto table = pipeline::parse_embeddings_csv(util::read_file(path));
  std::map<std::string, std::vector<double>> by_id;
  for (auto& [id, values] : table) {
    by_id[id] = std::move(values);
  }
  std::vector<embed::TextEmbedding> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::LengthMismatch, "no embedding for feature row '" + r.id + "'");
    }
    out.push_back({it->second, "file"});
  }
  return out;
}

TrainSummary train(const pipeline::RunConfig& config, const fs::path& features_csv, const fs::path& embeddings_csv,
                   const fs::path& out_dir, const fs::path& segments_dir, const model::EpochCallback& on_epoch) {
  const auto rows = load_rows(features_csv);
  const auto embeddings = embeddings_csv.empty() ? std::vector<embed::TextEmbedding>{} : load_embeddings(embeddings_csv, rows);
  const auto mc = model_for(config, rows, embeddings);
  const auto segments = mc.input_mode == model::InputMode::RawSeries ? align_segments(segments_dir, rows)
                                                                    : std::vector<TrajectorySegment>{};
  const auto fitted = pipeline::split_and_fit(config, rows);
  const auto train_set = pipeline::make_samples(mc, rows, fitted.stats, embeddings, fitted.split.train, segments);
  const auto val_set = pipeline::make_samples(mc, rows, fitted.stats, embeddings, fitted.split.val, segments);
  const auto test_set = pipeline::make_samples(mc, rows, fitted.stats, embeddings, fitted.split.test, segments);

  auto result = model::train(mc, train_set, val_set, on_epoch);
  result.model.norm_stats = fitted.stats;
  ensure_dir(out_dir);
  model::save_checkpoint(result.model, out_dir / "model.ckpt");
  util::write_file_atomic(out_dir / "train_log.jsonl", model::training_log_jsonl(result.log));
  util::write_file_atomic(out_dir / "split.json", split_text(fitted.split, config));

  TrainSummary s;
  s.epochs_run = static_cast<int>(result.log.size());
  s.best_epoch = result.best_epoch;
  s.best_val_accuracy = result.best_val_accuracy;
  s.early_stopped = result.early_stopped;
  s.param_count = result.model.param_count();
  auto metrics = eval::evaluate_model(result.model, test_set);
  s.test_accuracy = metrics.accuracy;
  json summary = {{"variant", model::variant_key(mc.variant)},
                  {"seed", config.seed},
                  {"lr", mc.lr},
                  {"epochs_run", s.epochs_run},
                  {"best_epoch", s.best_epoch},
                  {"best_val_accuracy", s.best_val_accuracy},
                  {"early_stopped", s.early_stopped},
                  {"param_count", s.param_count},
                  {"test", json::parse(eval::metrics_json(metrics))}};
  util::write_file_atomic(out_dir / "train_summary.json", summary.dump(2) + "\n");
  return s;
}

eval::MetricsReport evaluate(const pipeline::RunConfig& config, const fs::path& checkpoint,
                             const fs::path& features_csv, const fs::path& embeddings_csv, const std::string& split,
                             const fs::path& out_dir, const fs::path& segments_dir) {
  auto net = model::load_checkpoint(checkpoint);
  if (!net.norm_stats) {
    throw Error(ErrorCode::ConfigError, "checkpoint has no normalization statistics");
  }
  const auto rows = load_rows(features_csv);
  const auto& mc = net.config();
  const auto embeddings = mc.uses_text() ? load_embeddings(embeddings_csv, rows) : std::vector<embed::TextEmbedding>{};
  const auto segments = mc.input_mode == model::InputMode::RawSeries ? align_segments(segments_dir, rows)
                                                                    : std::vector<TrajectorySegment>{};
  std::vector<std::size_t> indices;
  if (split == "all") {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      indices.push_back(i);
    }
  } else {
    const auto s = eval::stratified_split(pipeline::labels_of(rows), config.split, config.seed);
    if (split == "train") {
      indices = s.train;
    } else if (split == "val") {
      indices = s.val;
    } else if (split == "test") {
      indices = s.test;
    } else {
      throw Error(ErrorCode::ConfigError, "unknown split '" + split + "'");
    }
  }
  const auto samples = pipeline::make_samples(mc, rows, *net.norm_stats, embeddings, indices, segments);
  auto metrics = eval::evaluate_model(net, samples);
  ensure_dir(out_dir);
  util::write_file_atomic(out_dir / ("metrics_" + split + ".json"), eval::metrics_json(metrics) + "\n");
  return metrics;
}

std::vector<eval::AblationRow> ablate(const pipeline::RunConfig& config, const fs::path& features_csv,
                                      const fs::path& embeddings_csv, const fs::path& out_dir,
                                      const eval::AblationProgress& progress) {
  const auto rows = load_rows(features_csv);
  const auto embeddings = load_embeddings(embeddings_csv, rows);
  auto base = model_for(config, rows, embeddings);
  base.variant = model::Variant::Full;
  const auto fitted = pipeline::split_and_fit(config, rows);
  const auto data = pipeline::build_splits(base, rows, fitted, embeddings);
  auto result = eval::run_ablation(base, data, progress);
  ensure_dir(out_dir);
  util::write_file_atomic(out_dir / "ablation.csv", eval::ablation_csv(result));
  util::write_file_atomic(out_dir / "ablation_macro.csv", eval::ablation_macro_csv(result));
  std::string log;
  for (const auto& r : result) {
    for (const auto& e : r.log) {
      log += json{{"variant", model::variant_key(r.variant)},
                  {"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"train_accuracy", e.train_accuracy},
                  {"val_loss", e.val_loss},
                  {"val_accuracy", e.val_accuracy}}
                 .dump() +
             "\n";
    }
  }
  util::write_file_atomic(out_dir / "ablation_log.jsonl", log);
  return result;
}

ReportSummary report(const pipeline::RunConfig&, const fs::path& features_csv, const fs::path& out_dir,
                     const std::vector<std::string>& feature_names) {
  const auto rows = load_rows(features_csv);
  const auto names = feature_names.empty() ? rows.front().names : feature_names;
  const auto corr = eval::correlation_matrix(rows);
  const auto dist = eval::distribution_report(rows, names);
  ensure_dir(out_dir);
  util::write_file_atomic(out_dir / "correlation.csv", eval::correlation_csv(corr));
  util::write_file_atomic(out_dir / "distribution_samples.csv", eval::distribution_samples_csv(dist));
  util::write_file_atomic(out_dir / "distribution_kde.csv", eval::distribution_kde_csv(dist));
  std::string warnings;
  for (const auto& w : dist.warnings) {
    warnings += w + "\n";
  }
  util::write_file_atomic(out_dir / "report_warnings.txt", warnings);
  return {corr.dim(), dist.curves.size(), dist.warnings};
}

}  // namespace mlffn::commands
