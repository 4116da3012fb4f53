#include "mlffn/semantic.hpp"

#include <array>

#include "json.hpp"

#include "mlffn/error.hpp"
#include "mlffn/util.hpp"

namespace mlffn::semantic {

namespace {

constexpr std::string_view kSystem =
    "You are an expert in vehicle dynamics. You read kinematic feature values computed from a "
    "driving trajectory segment and describe the driving behavior they reveal.";

constexpr std::string_view kExemplarHeader = "Example: 1 Aggressive";

constexpr std::array<std::pair<std::string_view, std::string_view>, 2> kExemplarFeatures = {{
    {"acceleration_autocorrelation", "0.498655829"},
    {"acceleration_change_rate", "-0.540905602"},
}};

constexpr std::string_view kExemplarResponse =
    "The driver exhibits frequent and significant acceleration and deceleration, as indicated by "
    "high acceleration autocorrelation and acceleration change rate. The high jerk values and "
    "frequent occurrences of hard accelerations, brakes, and turns suggest an aggressive driving "
    "style. Additionally, the speed metrics show high and fluctuating speeds, reinforcing the "
    "characterization of this driver's style as aggressive. Overall, this driver demonstrates an "
    "aggressive driving behavior.";

constexpr std::string_view kInstruction =
    "Please analyze the driving style based on the following feature values and describe it in "
    "natural language within 100 words.";

enum class Level { Low, Medium, High };

Level bin(double z) {
  if (z < -0.5) {
    return Level::Low;
  }
  if (z > 0.5) {
    return Level::High;
  }
  return Level::Medium;
}

int direction(Level level) {
  return level == Level::High ? 1 : level == Level::Low ? -1 : 0;
}

class NamedScores {
 public:
  NamedScores(const std::vector<std::string>& names, const std::vector<double>& z) : names_(names), z_(z) {}

  std::optional<double> get(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) {
        return z_[i];
      }
    }
    return std::nullopt;
  }

  std::optional<double> mean(std::initializer_list<std::string_view> names) const {
    double sum = 0.0;
    int n = 0;
    for (auto name : names) {
      if (auto v = get(name)) {
        sum += *v;
        n++;
      }
    }
    if (n == 0) {
      return std::nullopt;
    }
    return sum / n;
  }

 private:
  const std::vector<std::string>& names_;
  const std::vector<double>& z_;
};

std::string_view level_word(Level level) {
  switch (level) {
    case Level::Low:
      return "low";
    case Level::Medium:
      return "medium";
    case Level::High:
      return "high";
  }
  return "medium";
}

}  // namespace

std::string PromptDocument::render() const {
  return system + "\n\n" + example + "\n\n" + "Feature Values:\n" + target + "\n" + instruction + "\n";
}

std::string_view source_name(Source source) {
  switch (source) {
    case Source::Remote:
      return "remote";
    case Source::Fallback:
      return "fallback";
    case Source::Cache:
      return "cache";
  }
  return "fallback";
}

std::string_view exemplar_response() { return kExemplarResponse; }

PromptDocument build_prompt(const features::FeatureVector& fv) {
  PromptDocument doc;
  doc.system = std::string(kSystem);
  doc.example = std::string(kExemplarHeader) + "\nFeature Values:\n";
  for (const auto& [name, value] : kExemplarFeatures) {
    doc.example += std::string(name) + ": " + std::string(value) + "\n";
  }
  doc.example += "Response:\n" + std::string(kExemplarResponse);
  for (std::size_t k = 0; k < fv.values.size(); ++k) {
    const std::string name = k < fv.names.size() ? fv.names[k] : "feature_" + std::to_string(k);
    doc.target += name + ": " + util::format_fixed(fv.values[k], kValueDecimals) + "\n";
  }
  doc.target_lines = fv.values.size();
  doc.instruction = std::string(kInstruction);
  return doc;
}

std::string feature_hash(const features::FeatureVector& fv) {
  std::uint64_t h = util::kFnvOffset;
  for (const auto& name : fv.names) {
    h = util::fnv1a(name, h);
    h = util::fnv1a(std::string_view("\0", 1), h);
  }
  return util::hex64(util::fnv1a_doubles(fv.values, h));
}

std::string cap_text(std::string_view text, std::size_t max_chars) {
  if (text.size() <= max_chars) {
    return std::string(text);
  }
  std::size_t cut = max_chars;
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0U) == 0x80U) {
    cut--;
  }
  return std::string(text.substr(0, cut));
}

SemanticDescription describe_remote(const PromptDocument& prompt, const LlmConfig& config,
                                    std::string_view hash) {
  if (!config.endpoint) {
    throw Error(ErrorCode::ConfigError, "no LLM endpoint configured");
  }
  nlohmann::json request = {
      {"model", config.model_id},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt.render()}}})},
      {"temperature", config.temperature},
      {"max_tokens", config.max_tokens},
  };
  const auto result = service::post_json(*config.endpoint, request.dump());
  std::string content;
  try {
    const auto body = nlohmann::json::parse(result.body);
    content = body.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, std::string("chat response: ") + e.what());
  }
  content = util::trim(content);
  if (content.empty()) {
    throw Error(ErrorCode::MalformedResponse, "chat response has empty content");
  }
  SemanticDescription out;
  out.text = cap_text(content, config.max_text_chars);
  out.source = Source::Remote;
  out.feature_hash = std::string(hash);
  out.model_id = config.model_id;
  out.attempts = result.attempts;
  return out;
}

SemanticDescription describe_fallback(const features::FeatureVector& fv, const features::NormStats& stats) {
  const auto z = features::z_scores(fv.values, stats);
  const auto& names = fv.names.size() == z.size() ? fv.names : stats.names;
  const NamedScores scores(names, z);

  std::string text;
  int aggression = 0;
  bool hard_events_high = false;

  if (auto s = scores.get("speed_mean")) {
    const auto level = bin(*s);
    aggression += direction(level);
    text += "Speed level is " + std::string(level_word(level));
    text += level == Level::High  ? ": the vehicle travels at high speeds. "
            : level == Level::Low ? ": the vehicle travels at consistently low speeds. "
                                  : ": travel speeds stay close to typical values. ";
  }
  if (auto s = scores.mean({"acceleration_std", "acceleration_change_rate"})) {
    const auto level = bin(*s);
    aggression += direction(level);
    text += "Acceleration volatility is " + std::string(level_word(level));
    text += level == Level::High  ? ": acceleration fluctuates strongly. "
            : level == Level::Low ? ": acceleration stays steady. "
                                  : ": acceleration varies within a normal range. ";
  }
  {
    constexpr std::array<std::pair<std::string_view, std::string_view>, 3> events = {{
        {"num_hard_brakes", "frequent hard braking"},
        {"num_hard_accelerations", "frequent hard acceleration"},
        {"num_hard_turns", "frequent hard turns"},
    }};
    std::optional<double> top;
    std::vector<std::string_view> high;
    for (const auto& [name, phrase] : events) {
      if (auto s = scores.get(name)) {
        top = top ? std::max(*top, *s) : *s;
        if (bin(*s) == Level::High) {
          high.push_back(phrase);
        }
      }
    }
    if (top) {
      const auto level = bin(*top);
      aggression += direction(level);
      hard_events_high = level == Level::High;
      text += "Hard-event frequency is " + std::string(level_word(level));
      if (level == Level::High) {
        text += ": the segment shows ";
        for (std::size_t i = 0; i < high.size(); ++i) {
          text += (i == 0 ? "" : " and ") + std::string(high[i]);
        }
        text += ". ";
      } else {
        text += level == Level::Low ? ": hard maneuvers are rare. " : ": hard maneuvers occur occasionally. ";
      }
    }
  }
  if (auto s = scores.get("jerk_std")) {
    const auto level = bin(-*s);
    aggression -= direction(level);
    text += "Smoothness is " + std::string(level_word(level));
    text += level == Level::High  ? ": motion is smooth with little jerk. "
            : level == Level::Low ? ": jerk is large and motion is abrupt. "
                                  : ": motion is reasonably even. ";
  }

  std::string_view tendency = "a moderate tendency";
  if (hard_events_high || aggression >= 2) {
    tendency = "an aggressive tendency";
  } else if (aggression == 1) {
    tendency = "an assertive tendency";
  } else if (aggression <= -1) {
    tendency = "a conservative tendency";
  }
  text += "Overall, these traits indicate " + std::string(tendency) + ".";

  SemanticDescription out;
  out.text = cap_text(text);
  out.source = Source::Fallback;
  out.feature_hash = feature_hash(features::apply_norm(fv, stats));
  out.model_id = std::string(kFallbackModelId);
  return out;
}

SemanticDescription describe(const features::FeatureVector& fv, const features::NormStats& stats,
                             const LlmConfig& config) {
  const auto normalized = features::apply_norm(fv, stats);
  const auto hash = feature_hash(normalized);
  const std::string model_id = config.endpoint ? config.model_id : std::string(kFallbackModelId);

  std::optional<service::KeyedCache> cache;
  if (config.cache_dir) {
    cache.emplace(*config.cache_dir);
    if (auto record = cache->get(hash, model_id)) {
      SemanticDescription out;
      out.text = cap_text(record->body, config.max_text_chars);
      out.source = Source::Cache;
      out.feature_hash = hash;
      out.model_id = model_id;
      if (!out.text.empty()) {
        return out;
      }
    }
  }

  auto out = config.endpoint ? describe_remote(build_prompt(normalized), config, hash)
                             : describe_fallback(fv, stats);
  out.text = cap_text(out.text, config.max_text_chars);
  if (cache) {
    cache->put({model_id, std::string(source_name(out.source)), hash, service::utc_timestamp(), out.text});
  }
  return out;
}

}  // namespace mlffn::semantic
