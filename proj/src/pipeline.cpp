#include "mlffn/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "json.hpp"

#include "mlffn/error.hpp"
#include "mlffn/util.hpp"

namespace mlffn::pipeline {

using json = nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) {
    throw Error(ErrorCode::ConfigError, where + " must be an object");
  }
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw Error(ErrorCode::ConfigError, "unknown key '" + item.key() + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    out = j.at(key).get<T>();
  }
}

void read_path(const json& j, const char* key, std::filesystem::path& out) {
  if (j.contains(key)) {
    out = j.at(key).get<std::string>();
  }
}

const std::set<std::string> kEndpointKeys = {"endpoint",    "model_id",  "api_key_env",  "timeout_s",
                                             "max_attempts", "backoff_s", "max_in_flight"};

std::optional<service::EndpointConfig> read_endpoint(const json& j) {
  if (!j.contains("endpoint") || j.at("endpoint").is_null()) {
    return std::nullopt;
  }
  service::EndpointConfig ep;
  ep.url = j.at("endpoint").get<std::string>();
  read(j, "api_key_env", ep.api_key_env);
  read(j, "timeout_s", ep.timeout_s);
  read(j, "max_attempts", ep.max_attempts);
  read(j, "backoff_s", ep.backoff_initial_s);
  read(j, "max_in_flight", ep.max_in_flight);
  if (ep.url.empty() || ep.max_attempts < 1 || ep.timeout_s <= 0.0 || ep.backoff_initial_s < 0.0) {
    throw Error(ErrorCode::ConfigError, "invalid endpoint settings for '" + ep.url + "'");
  }
  return ep;
}

json endpoint_json(const std::optional<service::EndpointConfig>& ep, const std::string& model_id) {
  json j;
  j["endpoint"] = ep ? json(ep->url) : json(nullptr);
  j["model_id"] = model_id;
  const service::EndpointConfig d = ep ? *ep : service::EndpointConfig{};
  j["api_key_env"] = d.api_key_env;
  j["timeout_s"] = d.timeout_s;
  j["max_attempts"] = d.max_attempts;
  j["backoff_s"] = d.backoff_initial_s;
  j["max_in_flight"] = d.max_in_flight;
  return j;
}

RunConfig from_json(const json& j) {
  check_keys(j,
             {"version", "seed", "data_dir", "out_dir", "cache_dir", "tau", "extra_signals", "clean", "llm",
              "embedding", "model", "split", "synth", "offline"},
             "run config");
  if (j.contains("version") && j.at("version").get<int>() != kConfigVersion) {
    throw Error(ErrorCode::ConfigError, "unsupported run config version " + j.at("version").dump());
  }
  if (!j.contains("seed")) {
    throw Error(ErrorCode::ConfigError, "run config must set 'seed'");
  }
  RunConfig c;
  if (!j.at("seed").is_number_unsigned()) {
    throw Error(ErrorCode::ConfigError, "'seed' must be a non-negative integer");
  }
  const auto seed = j.at("seed").get<std::uint64_t>();
  read_path(j, "data_dir", c.data_dir);
  read_path(j, "out_dir", c.out_dir);
  read_path(j, "cache_dir", c.cache_dir);
  if (j.contains("tau")) {
    const auto& tau = j.at("tau");
    if (tau.is_number()) {
      c.features.tau = features::Thresholds::uniform(tau.get<double>());
    } else {
      check_keys(tau, {"accel", "brake", "turn"}, "tau");
      read(tau, "accel", c.features.tau.accel);
      read(tau, "brake", c.features.tau.brake);
      read(tau, "turn", c.features.tau.turn);
    }
    if (!(c.features.tau.accel > 0.0 && c.features.tau.brake > 0.0 && c.features.tau.turn > 0.0)) {
      throw Error(ErrorCode::ConfigError, "tau must be positive");
    }
  }
  read(j, "extra_signals", c.features.extra_signals);
  c.features.signal_names();
  if (j.contains("clean")) {
    const auto& cl = j.at("clean");
    check_keys(cl, {"max_speed", "max_accel", "max_jerk", "smoothing", "smoothing_window", "gap_factor"},
               "clean");
    read(cl, "max_speed", c.clean.max_speed);
    read(cl, "max_accel", c.clean.max_accel);
    read(cl, "max_jerk", c.clean.max_jerk);
    read(cl, "smoothing", c.clean.smoothing);
    read(cl, "smoothing_window", c.clean.smoothing_window);
    read(cl, "gap_factor", c.clean.gap_factor);
  }
  if (j.contains("llm")) {
    const auto& l = j.at("llm");
    auto keys = kEndpointKeys;
    keys.insert({"temperature", "max_tokens", "max_text_chars"});
    check_keys(l, keys, "llm");
    c.llm.endpoint = read_endpoint(l);
    read(l, "model_id", c.llm.model_id);
    read(l, "temperature", c.llm.temperature);
    read(l, "max_tokens", c.llm.max_tokens);
    read(l, "max_text_chars", c.llm.max_text_chars);
    if (c.llm.max_text_chars == 0 || c.llm.max_text_chars > semantic::kMaxTextChars) {
      throw Error(ErrorCode::ConfigError, "llm.max_text_chars must be in [1, 4000]");
    }
  }
  if (j.contains("embedding")) {
    const auto& e = j.at("embedding");
    check_keys(e, kEndpointKeys, "embedding");
    c.embedding.endpoint = read_endpoint(e);
    read(e, "model_id", c.embedding.model_id);
  }
  if (j.contains("model")) {
    if (j.at("model").contains("seed")) {
      throw Error(ErrorCode::ConfigError, "model.seed is taken from the top-level seed");
    }
    c.model = model::config_from_json(j.at("model").dump());
  }
  if (j.contains("split")) {
    const auto ratios = j.at("split").get<std::vector<double>>();
    if (ratios.size() != 3) {
      throw Error(ErrorCode::ConfigError, "split must list train, val and test ratios");
    }
    std::copy(ratios.begin(), ratios.end(), c.split.begin());
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    check_keys(s, {"n_per_class", "length", "dt"}, "synth");
    read(s, "n_per_class", c.synth.n_per_class);
    read(s, "length", c.synth.length);
    read(s, "dt", c.synth.dt);
  }
  read(j, "offline", c.offline);
  c.synth.tau = c.features.tau.accel;
  set_seed(c, seed);
  if (c.offline) {
    set_offline(c);
  }
  return c;
}

template <typename Out, typename In, typename Fn>
std::vector<Out> parallel_map(std::span<const In> items, std::size_t workers, Fn fn) {
  std::vector<Out> out(items.size());
  workers = std::max<std::size_t>(1, std::min(workers, items.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      out[i] = fn(items[i]);
    }
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < items.size(); i = next++) {
        try {
          out[i] = fn(items[i]);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) {
            failure = std::current_exception();
          }
          next = items.size();
        }
      }
    });
  }
  for (auto& t : threads) {
    t.join();
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("run config: ") + e.what());
  }
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("run config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = util::read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  return parse_run_config(text);
}

std::string run_config_json(const RunConfig& c) {
  json j;
  j["version"] = kConfigVersion;
  j["seed"] = c.seed;
  j["data_dir"] = c.data_dir.string();
  j["out_dir"] = c.out_dir.string();
  j["cache_dir"] = c.cache_dir.string();
  j["tau"] = {{"accel", c.features.tau.accel}, {"brake", c.features.tau.brake}, {"turn", c.features.tau.turn}};
  j["extra_signals"] = c.features.extra_signals;
  j["clean"] = {{"max_speed", c.clean.max_speed},   {"max_accel", c.clean.max_accel},
                {"max_jerk", c.clean.max_jerk},     {"smoothing", c.clean.smoothing},
                {"smoothing_window", c.clean.smoothing_window}, {"gap_factor", c.clean.gap_factor}};
  auto llm = endpoint_json(c.llm.endpoint, c.llm.model_id);
  llm["temperature"] = c.llm.temperature;
  llm["max_tokens"] = c.llm.max_tokens;
  llm["max_text_chars"] = c.llm.max_text_chars;
  j["llm"] = llm;
  j["embedding"] = endpoint_json(c.embedding.endpoint, c.embedding.model_id);
  auto m = json::parse(model::config_to_json(c.model));
  m.erase("seed");
  j["model"] = m;
  j["split"] = c.split;
  j["synth"] = {{"n_per_class", c.synth.n_per_class}, {"length", c.synth.length}, {"dt", c.synth.dt}};
  j["offline"] = c.offline;
  return j.dump(2);
}

void set_seed(RunConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.model.seed = seed;
  config.synth.seed = seed;
}

void set_offline(RunConfig& config) {
  config.offline = true;
  config.llm.endpoint.reset();
  config.embedding.endpoint.reset();
}

semantic::LlmConfig describer_config(const RunConfig& config) {
  auto llm = config.llm;
  if (config.offline) {
    llm.endpoint.reset();
  }
  if (!config.cache_dir.empty()) {
    llm.cache_dir = config.cache_dir / "descriptions";
  }
  return llm;
}

embed::EmbedConfig embedder_config(const RunConfig& config) {
  auto e = config.embedding;
  if (config.offline) {
    e.endpoint.reset();
  }
  if (!config.cache_dir.empty()) {
    e.cache_dir = config.cache_dir / "embeddings";
  }
  return e;
}

ExtractResult extract_segments(std::vector<TrajectorySegment> segments, const RunConfig& config) {
  ExtractResult out;
  out.clean = ingest::clean_segments(std::move(segments), config.clean);
  out.segments = out.clean.segments;
  out.features.reserve(out.segments.size());
  for (const auto& s : out.segments) {
    out.features.push_back(features::assemble(s, config.features));
  }
  return out;
}

ExtractResult extract_dir(const std::filesystem::path& dir, const RunConfig& config, bool skip_bad) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<TrajectorySegment> segments;
  std::vector<std::pair<std::string, std::string>> skipped;
  for (const auto& f : files) {
    try {
      segments.push_back(ingest::parse_segment(f));
    } catch (const Error& e) {
      if (!skip_bad) {
        throw Error(e.code(), f.filename().string() + ": " + e.detail());
      }
      skipped.emplace_back(f.filename().string(), e.what());
    }
  }
  auto out = extract_segments(std::move(segments), config);
  out.skipped = std::move(skipped);
  return out;
}

std::vector<int> labels_of(std::span<const features::FeatureVector> rows) {
  std::vector<int> labels;
  labels.reserve(rows.size());
  for (const auto& r : rows) {
    if (!r.label) {
      throw Error(ErrorCode::BadLabel, "row '" + r.id + "' has no style label");
    }
    labels.push_back(style_code(*r.label));
  }
  return labels;
}

std::vector<semantic::SemanticDescription> describe_all(std::span<const features::FeatureVector> rows,
                                                        const features::NormStats& stats,
                                                        const semantic::LlmConfig& config) {
  const std::size_t workers = config.endpoint ? config.endpoint->max_in_flight : 1;
  return parallel_map<semantic::SemanticDescription>(
      rows, workers, [&](const features::FeatureVector& fv) { return semantic::describe(fv, stats, config); });
}

std::vector<embed::TextEmbedding> embed_all(std::span<const semantic::SemanticDescription> descriptions,
                                            const embed::EmbedConfig& config) {
  const std::size_t workers = config.endpoint ? config.endpoint->max_in_flight : 1;
  return parallel_map<embed::TextEmbedding>(
      descriptions, workers, [&](const semantic::SemanticDescription& d) { return embed::embed(d.text, config); });
}

std::vector<model::Sample> make_samples(const model::ModelConfig& config,
                                        std::span<const features::FeatureVector> rows,
                                        const features::NormStats& stats,
                                        std::span<const embed::TextEmbedding> embeddings,
                                        std::span<const std::size_t> indices,
                                        std::span<const TrajectorySegment> segments) {
  const bool raw = config.input_mode == model::InputMode::RawSeries;
  if (raw && segments.size() != rows.size()) {
    throw Error(ErrorCode::ConfigError, "raw_series input needs the trajectory segments");
  }
  if (config.uses_text() && embeddings.size() != rows.size()) {
    throw Error(ErrorCode::LengthMismatch, "need one text embedding per feature row");
  }
  std::vector<model::Sample> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    model::Sample s;
    s.id = rows[i].id;
    s.label = rows[i].label ? style_code(*rows[i].label) : -1;
    if (config.uses_numeric()) {
      s.numeric = raw ? model::resample_series(segments[i], config.raw_len) : features::z_scores(rows[i].values, stats);
    }
    if (config.uses_text()) {
      s.text = embeddings[i].values;
    }
    out.push_back(std::move(s));
  }
  return out;
}

SplitStats split_and_fit(const RunConfig& config, std::span<const features::FeatureVector> rows) {
  if (rows.empty()) {
    throw Error(ErrorCode::EmptySplit, "no feature rows");
  }
  SplitStats out;
  out.split = eval::stratified_split(labels_of(rows), config.split, config.seed);
  std::vector<features::FeatureVector> train_rows;
  train_rows.reserve(out.split.train.size());
  for (auto i : out.split.train) {
    train_rows.push_back(rows[i]);
  }
  out.stats = features::fit_norm(train_rows);
  return out;
}

eval::DatasetSplits build_splits(const model::ModelConfig& config, std::span<const features::FeatureVector> rows,
                                 const SplitStats& fitted, std::span<const embed::TextEmbedding> embeddings,
                                 std::span<const TrajectorySegment> segments) {
  auto full = config;
  full.variant = model::Variant::Full;
  eval::DatasetSplits data;
  data.train = make_samples(full, rows, fitted.stats, embeddings, fitted.split.train, segments);
  data.val = make_samples(full, rows, fitted.stats, embeddings, fitted.split.val, segments);
  data.test = make_samples(full, rows, fitted.stats, embeddings, fitted.split.test, segments);
  return data;
}

PreparedData prepare(const RunConfig& config, std::span<const features::FeatureVector> rows,
                     std::span<const TrajectorySegment> segments) {
  auto fitted = split_and_fit(config, rows);
  PreparedData out;
  out.model = config.model;
  out.model.feature_dim = rows.front().dim();
  out.model.seed = config.seed;
  out.descriptions = describe_all(rows, fitted.stats, describer_config(config));
  out.embeddings = embed_all(out.descriptions, embedder_config(config));
  out.model.text_dim = out.embeddings.front().values.size();
  out.data = build_splits(out.model, rows, fitted, out.embeddings, segments);
  out.split = std::move(fitted.split);
  out.stats = std::move(fitted.stats);
  return out;
}

std::string descriptions_jsonl(std::span<const features::FeatureVector> rows,
                               std::span<const semantic::SemanticDescription> descriptions) {
  std::string out;
  for (std::size_t i = 0; i < descriptions.size(); ++i) {
    const auto& d = descriptions[i];
    json j = {{"id", i < rows.size() ? rows[i].id : std::string()},
              {"label", i < rows.size() && rows[i].label ? json(style_name(*rows[i].label)) : json(nullptr)},
              {"text", d.text},
              {"source", semantic::source_name(d.source)},
              {"feature_hash", d.feature_hash},
              {"model_id", d.model_id}};
    out += j.dump() + "\n";
  }
  return out;
}

std::string embeddings_csv(std::span<const std::string> ids, std::span<const embed::TextEmbedding> embeddings) {
  std::string out;
  util::CsvWriter w(out);
  const std::size_t dim = embeddings.empty() ? 0 : embeddings.front().values.size();
  std::vector<std::string> header = {"id"};
  for (std::size_t k = 0; k < dim; ++k) {
    header.push_back("e" + std::to_string(k));
  }
  w.row(header);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    std::vector<std::string> cells = {i < ids.size() ? ids[i] : std::to_string(i)};
    for (double v : embeddings[i].values) {
      cells.push_back(util::format_double(v));
    }
    w.row(cells);
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<double>>> parse_embeddings_csv(std::string_view text) {
  const auto table = util::parse_csv(text);
  if (table.header.empty() || table.header.front() != "id") {
    throw Error(ErrorCode::ParseError, "embeddings table must start with an id column");
  }
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (row.size() != table.header.size()) {
      throw Error(ErrorCode::ParseError, "embeddings row " + std::to_string(r + 1) + " has wrong width");
    }
    std::vector<double> values;
    for (std::size_t c = 1; c < row.size(); ++c) {
      auto v = util::parse_double(row[c]);
      if (!v || !std::isfinite(*v)) {
        throw NonFiniteValueError(r + 1, table.header[c]);
      }
      values.push_back(*v);
    }
    out.emplace_back(row.front(), std::move(values));
  }
  return out;
}

}  // namespace mlffn::pipeline
