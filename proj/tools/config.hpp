// Flat dotted-key run configuration for the command-line tool.
//
// Resolution order: built-in defaults, then the profile preset, then the
// JSON config file, then --set overrides and dedicated flags.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ittr/data.hpp"
#include "ittr/metrics.hpp"
#include "ittr/training.hpp"

namespace ittr::app {

using Json = nlohmann::ordered_json;

struct Settings {
  Json values = Json::object();

  const Json& at(const std::string& key) const;
  void set(const std::string& key, Json value);

  double number(const std::string& key) const { return at(key).get<double>(); }
  Index integer(const std::string& key) const { return at(key).get<Index>(); }
  bool flag(const std::string& key) const { return at(key).get<bool>(); }
  std::string text(const std::string& key) const { return at(key).get<std::string>(); }
};

/// Every known key with its default value.
Settings default_settings();
std::vector<std::string> profile_names();

/// Keys a profile overrides; ConfigError for an unknown profile.
Json profile_preset(const std::string& name);

/// Parses a flat JSON object; ConfigError on unknown keys or mismatched types.
Json read_config_file(const std::filesystem::path& path);
/// "key=value" where value is JSON when it parses as JSON and a string otherwise.
std::pair<std::string, Json> parse_override(const std::string& assignment);

/// defaults <- preset(profile) <- file <- overrides, with type checks.
Settings resolve_settings(const Json& file, const Json& overrides);

/// Writes pretty-printed JSON that read_config_file accepts unchanged.
void write_resolved(const std::filesystem::path& path, const Settings& s);

GeneratorSpec generator_spec(const Settings& s);
TrainConfig train_config(const Settings& s);
SyntheticDomainSpec synthetic_spec(const Settings& s, char domain);
FeatureExtractor feature_extractor(const Settings& s);

}  // namespace ittr::app
