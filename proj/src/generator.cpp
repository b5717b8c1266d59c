#include "ittr/generator.hpp"

#include <algorithm>
#include <sstream>

namespace ittr {

ReceptiveField receptive_field(const std::vector<ConvStage>& stages) {
  ReceptiveField rf;
  for (const auto& s : stages) {
    rf.size += (s.kernel - 1) * rf.stride;
    rf.stride *= s.stride;
  }
  return rf;
}

namespace {

std::string join(const std::vector<Index>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<Index> split_ints(const std::string& s) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw ConfigError("expected an integer list, got '" + s + "'");
    }
  }
  return out;
}

const std::string& lookup(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("manifest is missing key '" + key + "'");
  return it->second;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

}  // namespace

Index GeneratorSpec::total_stride() const { return receptive_field(stem).stride; }

GeneratorSpec& GeneratorSpec::finalize() {
  if (stem.empty()) {
    if (channels % 4 != 0) throw ConfigError("generator: channels must be divisible by 4");
    stem = {{channels / 4, 7, 1}, {channels / 2, 3, 2}, {channels, 3, 2}};
  }
  if (decoder_channels.empty()) decoder_channels = {channels / 2, channels / 4};
  validate();
  return *this;
}

void GeneratorSpec::validate() const {
  if (channels <= 0) throw ConfigError("generator: channels must be positive");
  if (hpb_count < 1) throw ConfigError("generator: at least one hybrid perception block is required");
  if (ffn_expansion < 1) throw ConfigError("generator: ffn expansion must be >= 1");
  if (local_kernel < 1 || local_kernel % 2 == 0)
    throw ConfigError("generator: local kernel must be odd and positive");
  if (output_kernel < 1 || output_kernel % 2 == 0)
    throw ConfigError("generator: output kernel must be odd and positive");
  if (!enable_local && !enable_global)
    throw ConfigError("generator: at least one HPB branch must be enabled");
  AttentionConfig{channels, heads, sparse_tokens, l2_normalize, attention}.validate();
  if (stem.empty() || stem.back().out_channels != channels)
    throw ConfigError("generator: stem must end at the body width");
  for (const auto& s : stem)
    if (s.out_channels < 1 || s.kernel < 1 || s.kernel % 2 == 0 || s.stride < 1)
      throw ConfigError("generator: invalid stem stage");
  if (total_stride() != 4) throw ConfigError("generator: stem must downsample exactly 4x");
  if (decoder_channels.size() != 2)
    throw ConfigError("generator: decoder must upsample exactly 4x (two 2x stages)");
  for (Index c : decoder_channels)
    if (c < 1) throw ConfigError("generator: decoder widths must be positive");
  for (Index t : feature_taps)
    if (t < 0 || t > hpb_count)
      throw ConfigError("generator: feature tap " + std::to_string(t) + " out of range");
}

std::map<std::string, std::string> GeneratorSpec::to_manifest() const {
  std::ostringstream stem_os;
  for (size_t i = 0; i < stem.size(); ++i)
    stem_os << (i ? "," : "") << stem[i].out_channels << ':' << stem[i].kernel << ':'
            << stem[i].stride;
  return {
      {"generator.channels", std::to_string(channels)},
      {"generator.hpb_count", std::to_string(hpb_count)},
      {"generator.ffn_expansion", std::to_string(ffn_expansion)},
      {"generator.heads", std::to_string(heads)},
      {"generator.sparse_tokens", std::to_string(sparse_tokens)},
      {"generator.local_kernel", std::to_string(local_kernel)},
      {"generator.l2_normalize", l2_normalize ? "true" : "false"},
      {"generator.attention", to_string(attention)},
      {"generator.enable_local", enable_local ? "true" : "false"},
      {"generator.enable_global", enable_global ? "true" : "false"},
      {"generator.stem", stem_os.str()},
      {"generator.decoder", join(decoder_channels)},
      {"generator.output_kernel", std::to_string(output_kernel)},
      {"generator.output_activation", "tanh"},
      {"generator.feature_taps", join(feature_taps)},
  };
}

GeneratorSpec GeneratorSpec::from_manifest(const std::map<std::string, std::string>& kv) {
  GeneratorSpec s;
  try {
    s.channels = std::stoll(lookup(kv, "generator.channels"));
    s.hpb_count = std::stoll(lookup(kv, "generator.hpb_count"));
    s.ffn_expansion = std::stoll(lookup(kv, "generator.ffn_expansion"));
    s.heads = std::stoll(lookup(kv, "generator.heads"));
    s.sparse_tokens = std::stoll(lookup(kv, "generator.sparse_tokens"));
    s.local_kernel = std::stoll(lookup(kv, "generator.local_kernel"));
    s.output_kernel = std::stoll(lookup(kv, "generator.output_kernel"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("manifest holds a non-integer generator field");
  }
  s.l2_normalize = parse_bool(lookup(kv, "generator.l2_normalize"));
  s.attention = parse_attention_variant(lookup(kv, "generator.attention"));
  s.enable_local = parse_bool(lookup(kv, "generator.enable_local"));
  s.enable_global = parse_bool(lookup(kv, "generator.enable_global"));
  if (lookup(kv, "generator.output_activation") != "tanh")
    throw ConfigError("unsupported output activation in manifest");
  s.stem.clear();
  std::stringstream ss(lookup(kv, "generator.stem"));
  std::string stage;
  while (std::getline(ss, stage, ',')) {
    std::replace(stage.begin(), stage.end(), ':', ',');
    const auto parts = split_ints(stage);
    if (parts.size() != 3) throw ConfigError("malformed stem stage in manifest");
    s.stem.push_back({parts[0], parts[1], parts[2]});
  }
  s.decoder_channels = split_ints(lookup(kv, "generator.decoder"));
  s.feature_taps = split_ints(lookup(kv, "generator.feature_taps"));
  s.validate();
  return s;
}

void HpbConfig::validate() const {
  if (!enable_local && !enable_global)
    throw ConfigError("hybrid perception block: both branches disabled");
  if (attention.channels != channels)
    throw ConfigError("hybrid perception block: attention width differs from block width");
  attention.validate();
}

template <typename T>
HybridPerceptionBlock<T>::HybridPerceptionBlock(const HpbConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const Index c = cfg.channels, e = cfg.channels * cfg.ffn_expansion;
  norm1 = InstanceNorm2d<T>(c);
  if (cfg.enable_local)
    local = Conv2d<T>({c, c, cfg.local_kernel, 1, cfg.local_kernel / 2, c, true}, rng);
  if (cfg.enable_global) global = SelfAttention<T>(cfg.attention, rng);
  fuse = Conv2d<T>({cfg.fusion_width(), c, 1, 1, 0, 1, true}, rng);
  norm2 = InstanceNorm2d<T>(c);
  ffn_expand = Conv2d<T>({c, e, 1, 1, 0, 1, true}, rng);
  ffn_dw = Conv2d<T>({e, e, 3, 1, 1, e, true}, rng);
  ffn_reduce = Conv2d<T>({e, c, 1, 1, 0, 1, true}, rng);
}

template <typename T>
Tensor<T> HybridPerceptionBlock<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.channels)
    throw ShapeError("hybrid perception block: input " + to_string(x.shape()) + " does not have " +
                     std::to_string(cfg_.channels) + " channels");
  const auto u = norm1(x);
  const auto local_out = cfg_.enable_local ? local(u) : u;
  const auto global_out = cfg_.enable_global ? global(u) : u;
  const auto mixed = x + fuse(concat(std::vector<Tensor<T>>{local_out, global_out}, 1));
  return mixed + ffn_reduce(gelu(ffn_dw(ffn_expand(norm2(mixed)))));
}

template <typename T>
Cost HybridPerceptionBlock<T>::cost(Index height, Index width) const {
  Cost c = norm1.cost() + norm2.cost();
  if (cfg_.enable_local) c += local.cost(height, width);
  if (cfg_.enable_global) c += global.cost(height, width);
  c += fuse.cost(height, width);
  c += ffn_expand.cost(height, width) + ffn_dw.cost(height, width) + ffn_reduce.cost(height, width);
  return c;
}

template <typename T>
void HybridPerceptionBlock<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
  norm1.collect(prefix + ".norm1", out);
  if (cfg_.enable_local) local.collect(prefix + ".local", out);
  if (cfg_.enable_global) global.collect(prefix + ".attn", out);
  fuse.collect(prefix + ".fuse", out);
  norm2.collect(prefix + ".norm2", out);
  ffn_expand.collect(prefix + ".ffn.expand", out);
  ffn_dw.collect(prefix + ".ffn.dw", out);
  ffn_reduce.collect(prefix + ".ffn.reduce", out);
}

template <typename T>
Generator<T>::Generator(GeneratorSpec spec, Rng& rng) : spec_(std::move(spec.finalize())) {
  Index in = 3;
  for (const auto& s : spec_.stem) {
    stem_.push_back({Conv2d<T>({in, s.out_channels, s.kernel, s.stride, s.kernel / 2, 1, true}, rng),
                     InstanceNorm2d<T>(s.out_channels)});
    in = s.out_channels;
  }
  HpbConfig hpb;
  hpb.channels = spec_.channels;
  hpb.local_kernel = spec_.local_kernel;
  hpb.attention = {spec_.channels, spec_.heads, spec_.sparse_tokens, spec_.l2_normalize,
                   spec_.attention};
  hpb.ffn_expansion = spec_.ffn_expansion;
  hpb.enable_local = spec_.enable_local;
  hpb.enable_global = spec_.enable_global;
  for (Index i = 0; i < spec_.hpb_count; ++i) body.emplace_back(hpb, rng);
  for (Index c : spec_.decoder_channels) {
    decoder_.push_back({Conv2d<T>({in, c, 3, 1, 1, 1, true}, rng), InstanceNorm2d<T>(c)});
    in = c;
  }
  to_rgb_ = Conv2d<T>({in, 3, spec_.output_kernel, 1, spec_.output_kernel / 2, 1, true}, rng);
}

template <typename T>
void Generator<T>::check_input(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != 3)
    throw ShapeError("generator: expected [B x 3 x H x W] input, got " + to_string(x.shape()));
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
    throw ShapeError("generator: spatial extents of " + to_string(x.shape()) +
                     " must be divisible by 4");
  for (T v : x.data())
    if (v < T(-1) || v > T(1)) throw ContractError("generator: input values must lie in [-1, 1]");
}

template <typename T>
Tensor<T> Generator<T>::stem_forward(const Tensor<T>& x) const {
  check_input(x);
  Tensor<T> h = x;
  for (const auto& s : stem_) h = gelu(s.norm(s.conv(h)));
  return h;
}

template <typename T>
Tensor<T> Generator<T>::decoder_forward(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (const auto& d : decoder_) h = gelu(d.norm(d.conv(upsample_nearest2x(h))));
  return tanh(to_rgb_(h));
}

template <typename T>
Tensor<T> Generator<T>::run(const Tensor<T>& x, bool decode, std::vector<Tensor<T>>* taps) const {
  const auto is_tap = [&](Index layer) {
    return std::find(spec_.feature_taps.begin(), spec_.feature_taps.end(), layer) !=
           spec_.feature_taps.end();
  };
  const Index last_tap = spec_.feature_taps.empty()
                             ? 0
                             : *std::max_element(spec_.feature_taps.begin(), spec_.feature_taps.end());
  Tensor<T> h = stem_forward(x);
  if (taps && is_tap(0)) taps->push_back(h);
  for (Index i = 0; i < spec_.hpb_count; ++i) {
    if (!decode && i + 1 > last_tap) break;
    h = body[static_cast<size_t>(i)](h);
    if (taps && is_tap(i + 1)) taps->push_back(h);
  }
  return decode ? decoder_forward(h) : h;
}

template <typename T>
GeneratorOutput<T> Generator<T>::forward(const Tensor<T>& x) const {
  GeneratorOutput<T> out;
  out.image = run(x, true, &out.features);
  for (Index t : spec_.feature_taps) {
    out.feature_tags.push_back(t == 0 ? "stem" : "hpb" + std::to_string(t));
  }
  std::sort(out.feature_tags.begin(), out.feature_tags.end(), [](const auto& a, const auto& b) {
    auto rank = [](const std::string& s) { return s == "stem" ? 0 : std::stoi(s.substr(3)); };
    return rank(a) < rank(b);
  });
  return out;
}

template <typename T>
Tensor<T> Generator<T>::translate(const Tensor<T>& x) const {
  return run(x, true, nullptr);
}

template <typename T>
std::vector<Tensor<T>> Generator<T>::encode(const Tensor<T>& x) const {
  std::vector<Tensor<T>> taps;
  run(x, false, &taps);
  return taps;
}

template <typename T>
Cost Generator<T>::stem_cost(Index height, Index width) const {
  Cost c;
  Index h = height, w = width;
  for (const auto& s : stem_) {
    c += s.conv.cost(h, w) + s.norm.cost();
    std::tie(h, w) = s.conv.output_size(h, w);
  }
  return c;
}

template <typename T>
Cost Generator<T>::body_cost(Index height, Index width) const {
  Cost c;
  for (const auto& b : body) c += b.cost(height / 4, width / 4);
  return c;
}

template <typename T>
Cost Generator<T>::decoder_cost(Index height, Index width) const {
  Cost c;
  Index h = height / 4, w = width / 4;
  for (const auto& d : decoder_) {
    h *= 2;
    w *= 2;
    c += d.conv.cost(h, w) + d.norm.cost();
  }
  return c + to_rgb_.cost(h, w);
}

template <typename T>
Cost Generator<T>::cost(Index height, Index width) const {
  return stem_cost(height, width) + body_cost(height, width) + decoder_cost(height, width);
}

template <typename T>
void Generator<T>::collect(const std::string& prefix, NamedTensors<T>& out) const {
  for (size_t i = 0; i < stem_.size(); ++i) {
    stem_[i].conv.collect(prefix + "stem." + std::to_string(i) + ".conv", out);
    stem_[i].norm.collect(prefix + "stem." + std::to_string(i) + ".norm", out);
  }
  for (size_t i = 0; i < body.size(); ++i) body[i].collect(prefix + "body." + std::to_string(i), out);
  for (size_t i = 0; i < decoder_.size(); ++i) {
    decoder_[i].conv.collect(prefix + "decoder." + std::to_string(i) + ".conv", out);
    decoder_[i].norm.collect(prefix + "decoder." + std::to_string(i) + ".norm", out);
  }
  to_rgb_.collect(prefix + "decoder.to_rgb", out);
}

template <typename T>
NamedTensors<T> Generator<T>::parameters() const {
  NamedTensors<T> out;
  collect("", out);
  return out;
}

template <typename T>
void assign_parameters(const NamedTensors<T>& params, const NamedTensors<T>& source,
                       const std::string& prefix) {
  std::map<std::string, const Tensor<T>*> by_name;
  for (const auto& [name, t] : source) by_name[name] = &t;
  for (const auto& [name, t] : params) {
    auto it = by_name.find(prefix + name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing tensor '" + prefix + name + "'");
    if (it->second->shape() != t.shape())
      throw FormatError("tensor '" + prefix + name + "' has shape " +
                        to_string(it->second->shape()) + ", expected " + to_string(t.shape()));
    Tensor<T> dst = t;
    std::copy(it->second->data().begin(), it->second->data().end(), dst.mutable_data().begin());
  }
}

template class HybridPerceptionBlock<float>;
template class HybridPerceptionBlock<double>;
template class Generator<float>;
template class Generator<double>;
template void assign_parameters<float>(const NamedTensors<float>&, const NamedTensors<float>&,
                                       const std::string&);
template void assign_parameters<double>(const NamedTensors<double>&, const NamedTensors<double>&,
                                        const std::string&);

}  // namespace ittr
