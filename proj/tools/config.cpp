#include "config.hpp"

#include <fstream>

namespace ittr::app {

namespace {

bool same_kind(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) return !a.is_number_integer() || b.is_number_integer();
  return a.type() == b.type();
}

std::string kind_name(const Json& v) {
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  return v.type_name();
}

void merge_checked(Settings& s, const Json& layer, const std::string& origin) {
  for (const auto& [key, value] : layer.items()) {
    const Json& current = s.at(key);
    if (!same_kind(current, value))
      throw ConfigError(origin + ": key '" + key + "' expects " + kind_name(current) + ", got " + kind_name(value));
    if (value.is_array())
      for (const auto& e : value)
        if (!e.is_number_integer()) throw ConfigError(origin + ": key '" + key + "' expects a list of integers");
    s.values[key] = value;
  }
}

}  // namespace

const Json& Settings::at(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw ConfigError("unknown config key '" + key + "'");
  return *it;
}

void Settings::set(const std::string& key, Json value) {
  at(key);
  values[key] = std::move(value);
}

Settings default_settings() {
  const GeneratorSpec g;
  const TrainConfig t;
  const SyntheticDomainSpec d;
  Settings s;
  s.values = Json{
      {"profile", "desk"},
      {"seed", 0},
      {"generator.channels", g.channels},
      {"generator.hpb_count", g.hpb_count},
      {"generator.ffn_expansion", g.ffn_expansion},
      {"generator.heads", g.heads},
      {"generator.sparse_tokens", g.sparse_tokens},
      {"generator.local_kernel", g.local_kernel},
      {"generator.l2_normalize", g.l2_normalize},
      {"generator.attention", to_string(g.attention)},
      {"generator.enable_local", g.enable_local},
      {"generator.enable_global", g.enable_global},
      {"generator.output_kernel", g.output_kernel},
      {"generator.feature_taps", g.feature_taps},
      {"train.precision", "float"},
      {"train.lr", t.lr},
      {"train.constant_epochs", t.constant_epochs},
      {"train.iterations", t.iterations},
      {"train.batch", t.batch},
      {"train.image_size", t.image_size},
      {"train.train_size", t.train_size},
      {"train.test_size", 256},
      {"train.disc_channels", t.disc_channels},
      {"train.lambda_x", t.lambda_x},
      {"train.lambda_y", t.lambda_y},
      {"train.head_width", t.head_width},
      {"train.checkpoint_every", t.checkpoint_every},
      {"train.sample_every", 500},
      {"train.sample_count", t.sample_count},
      {"nce.tau", t.nce.tau},
      {"nce.num_patches", t.nce.num_patches},
      {"nce.detach_keys", t.nce.detach_keys},
      {"adam.beta1", t.adam.beta1},
      {"adam.beta2", t.adam.beta2},
      {"adam.eps", t.adam.eps},
      {"data.synthetic", false},
      {"data.root", ""},
      {"data.min_shapes", d.min_shapes},
      {"data.max_shapes", d.max_shapes},
      {"data.palette_seed", d.palette_seed},
      {"data.palette_size", d.palette_size},
      {"eval.enabled", true},
      {"eval.feature_dim", 64},
      {"eval.feature_seed", 0},
  };
  return s;
}

std::vector<std::string> profile_names() { return {"desk", "full"}; }

Json profile_preset(const std::string& name) {
  if (name == "full") return Json{{"generator.channels", 256}, {"generator.heads", 8}};
  if (name == "desk") return Json{{"generator.channels", 64}, {"generator.heads", 4}};
  throw ConfigError("unknown profile '" + name + "' (expected desk or full)");
}

Json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file " + path.string() + " must hold a JSON object");
  const Settings known = default_settings();
  for (const auto& [key, value] : j.items()) {
    known.at(key);
    if (value.is_object()) throw ConfigError("config key '" + key + "' must be flat, not an object");
  }
  return j;
}

std::pair<std::string, Json> parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  default_settings().at(key);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded() || value.is_object()) value = raw;
  return {key, value};
}

Settings resolve_settings(const Json& file, const Json& overrides) {
  Settings s = default_settings();
  std::string profile = s.text("profile");
  if (file.contains("profile")) profile = file.at("profile").get<std::string>();
  if (overrides.contains("profile")) profile = overrides.at("profile").get<std::string>();
  merge_checked(s, profile_preset(profile), "profile " + profile);
  merge_checked(s, file, "config file");
  merge_checked(s, overrides, "command line");
  s.values["profile"] = profile;
  return s;
}

void write_resolved(const std::filesystem::path& path, const Settings& s) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << s.values.dump(2) << '\n';
}

GeneratorSpec generator_spec(const Settings& s) {
  GeneratorSpec g;
  g.channels = s.integer("generator.channels");
  g.hpb_count = s.integer("generator.hpb_count");
  g.ffn_expansion = s.integer("generator.ffn_expansion");
  g.heads = s.integer("generator.heads");
  g.sparse_tokens = s.integer("generator.sparse_tokens");
  g.local_kernel = s.integer("generator.local_kernel");
  g.l2_normalize = s.flag("generator.l2_normalize");
  g.attention = parse_attention_variant(s.text("generator.attention"));
  g.enable_local = s.flag("generator.enable_local");
  g.enable_global = s.flag("generator.enable_global");
  g.output_kernel = s.integer("generator.output_kernel");
  g.feature_taps = s.at("generator.feature_taps").get<std::vector<Index>>();
  g.finalize();
  return g;
}

TrainConfig train_config(const Settings& s) {
  TrainConfig t;
  t.lr = s.number("train.lr");
  t.constant_epochs = s.number("train.constant_epochs");
  t.iterations = s.integer("train.iterations");
  t.batch = s.integer("train.batch");
  t.seed = s.at("seed").get<std::uint64_t>();
  t.image_size = s.integer("train.image_size");
  t.train_size = s.integer("train.train_size");
  t.test_size = s.integer("train.test_size");
  t.disc_channels = s.integer("train.disc_channels");
  t.lambda_x = s.number("train.lambda_x");
  t.lambda_y = s.number("train.lambda_y");
  t.head_width = s.integer("train.head_width");
  t.checkpoint_every = s.integer("train.checkpoint_every");
  t.sample_every = s.integer("train.sample_every");
  t.sample_count = s.integer("train.sample_count");
  t.nce.tau = s.number("nce.tau");
  t.nce.num_patches = s.integer("nce.num_patches");
  t.nce.detach_keys = s.flag("nce.detach_keys");
  t.adam.beta1 = s.number("adam.beta1");
  t.adam.beta2 = s.number("adam.beta2");
  t.adam.eps = s.number("adam.eps");
  t.validate();
  const std::string precision = s.text("train.precision");
  if (precision != "float" && precision != "double")
    throw ConfigError("train.precision must be float or double, got '" + precision + "'");
  return t;
}

SyntheticDomainSpec synthetic_spec(const Settings& s, char domain) {
  SyntheticDomainSpec d;
  d.domain = domain;
  d.size = s.integer("train.image_size");
  d.min_shapes = s.integer("data.min_shapes");
  d.max_shapes = s.integer("data.max_shapes");
  d.palette_seed = s.at("data.palette_seed").get<std::uint64_t>();
  d.palette_size = s.integer("data.palette_size");
  d.validate();
  return d;
}

FeatureExtractor feature_extractor(const Settings& s) {
  return FeatureExtractor::random_projection(s.at("eval.feature_seed").get<std::uint64_t>(),
                                             s.integer("eval.feature_dim"));
}

}  // namespace ittr::app
