#include "commands.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ittr/serialize.hpp"
#include "verify.hpp"

namespace fs = std::filesystem;

namespace ittr::app {

namespace {

struct CommonArgs {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  std::vector<std::string> sets;
};

CLI::Option* add_common(CLI::App* sub, CommonArgs& c, const std::string& default_out,
                        const std::string& out_names = "--out") {
  c.out = default_out;
  sub->add_option("--seed", c.seed, "Master seed");
  auto* out = sub->add_option(out_names, c.out, "Output directory")->capture_default_str();
  sub->add_option("--config", c.config, "Flat JSON config file");
  sub->add_option("--set", c.sets, "Override a config key (key=value), repeatable");
  return out;
}

Settings resolve(const CLI::App* sub, const CommonArgs& c, Json flags = Json::object()) {
  const Json file = c.config.empty() ? Json::object() : read_config_file(c.config);
  Json overrides = Json::object();
  for (const auto& s : c.sets) {
    auto [key, value] = parse_override(s);
    overrides[key] = value;
  }
  if (sub->count("--seed")) overrides["seed"] = c.seed;
  for (const auto& [key, value] : flags.items()) overrides[key] = value;
  return resolve_settings(file, overrides);
}

fs::path prepare_out(const std::string& out, const Settings& s) {
  const fs::path dir(out);
  fs::create_directories(dir);
  write_resolved(dir / "config.resolved", s);
  return dir;
}

std::vector<Image> load_domain(const Domain& d, Index limit) {
  std::vector<Image> out;
  const Index n = std::min(d.count, limit);
  out.reserve(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) out.push_back(d.load(i));
  return out;
}

std::string format_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%dm%02ds", static_cast<int>(s) / 60, static_cast<int>(s) % 60);
  return buf;
}

template <typename T>
int train_with(const Settings& s, const fs::path& out, bool resume) {
  const GeneratorSpec spec = generator_spec(s);
  const TrainConfig cfg = train_config(s);
  const Index size = cfg.image_size;
  std::pair<Domain, Domain> train_domains;
  if (s.flag("data.synthetic")) {
    train_domains = {synthetic_domain(synthetic_spec(s, 'A'), cfg.seed, cfg.train_size),
                     synthetic_domain(synthetic_spec(s, 'B'), cfg.seed, cfg.train_size)};
  } else {
    train_domains = dataset_domains(s.text("data.root"), "train", size, size);
  }
  UnpairedIterator data(train_domains.first, train_domains.second, cfg.batch, cfg.seed);

  const bool evaluate = s.flag("eval.enabled");
  std::vector<Image> test_a, test_b;
  if (evaluate || cfg.sample_every > 0) std::tie(test_a, test_b) = test_images(s);
  const auto extractor = feature_extractor(s);
  FeatureStats target;
  EvalResult eval;

  TrainState<T> state(spec, cfg);
  if (evaluate) {
    target = collect_stats(test_b, extractor);
    eval.untrained = translation_distance(state.generator, test_a, target, extractor);
    std::cout << "untrained Frechet proxy " << eval.untrained << '\n';
  }
  if (resume && fs::exists(out / kManifestFile)) {
    load_checkpoint(out, state);
    data.skip(state.iteration);
    std::cout << "resumed at iteration " << state.iteration << '\n';
  }
  std::vector<Image> samples(test_a.begin(), test_a.begin() + std::min<Index>(cfg.sample_count, test_a.size()));

  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t every = std::max<std::uint64_t>(1, cfg.iterations / 20);
  RunHooks hooks;
  hooks.manifest["data.source"] = s.flag("data.synthetic") ? "synthetic" : s.text("data.root");
  hooks.on_step = [&](std::uint64_t iter, double lr, const LossBundle& l) {
    if (iter % every != 0 && iter != static_cast<std::uint64_t>(cfg.iterations)) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("iter %llu/%lld  lr %.3g  loss_d %.4f  loss_g %.4f  nce_x %.4f  nce_y %.4f  %s\n",
                static_cast<unsigned long long>(iter), static_cast<long long>(cfg.iterations), lr, l.loss_d,
                l.loss_g, l.loss_nce_x, l.loss_nce_y, format_seconds(secs).c_str());
    std::fflush(stdout);
  };
  run_training(state, data, cfg, out, samples, hooks);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (evaluate) {
    eval.trained = translation_distance(state.generator, test_a, target, extractor);
    std::cout << "trained Frechet proxy " << eval.trained << " (improvement " << 100.0 * eval.improvement()
              << "%)\n";
    const Json report{{"untrained", eval.untrained},
                      {"trained", eval.trained},
                      {"improvement", eval.improvement()},
                      {"feature_dim", extractor.dim()},
                      {"test_images", static_cast<Index>(test_a.size())},
                      {"train_seconds", secs}};
    std::ofstream(out / "eval.json") << report.dump(2) << '\n';
  }
  return kExitOk;
}

template <typename T>
int translate_with(const fs::path& checkpoint, const std::vector<fs::path>& inputs, const fs::path& out) {
  const Generator<T> g = load_generator<T>(checkpoint);
  const Index stride = g.spec().total_stride();
  for (const auto& path : inputs) {
    const Image src = load_image(path);
    const Index h = (src.height + stride - 1) / stride * stride, w = (src.width + stride - 1) / stride * stride;
    const Image fitted = h == src.height && w == src.width ? src : resize_bilinear(src, h, w);
    Image result = translate_images(g, {fitted}).front();
    if (h != src.height || w != src.width) result = resize_bilinear(result, src.height, src.width);
    save_image(result, out / path.filename());
  }
  std::cout << "translated " << inputs.size() << " images into " << out.string() << '\n';
  return kExitOk;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct BenchRow {
  std::string variant;
  Index size = 0;
  Cost cost;
  std::int64_t map_macs_per_head = 0;
  double forward_ms = -1.0;
};

BenchRow bench_one(const Settings& s, AttentionVariant variant, Index size, int runs, std::uint64_t seed) {
  GeneratorSpec spec = generator_spec(s);
  spec.attention = variant;
  spec.finalize();
  Rng rng = derive_rng(seed, {0xBE7C});
  const Generator<float> g(spec, rng);
  BenchRow row{to_string(variant), size, g.cost(size, size)};
  const Index body = size / spec.total_stride();
  const auto acfg = g.body.front().global.config().resolved(body, body);
  row.map_macs_per_head = attention_map_macs_per_head(acfg, body * body);
  if (runs > 0) {
    NoGradGuard no_grad;
    Tensor<float> x({1, 3, size, size});
    for (auto& v : x.mutable_data()) v = static_cast<float>(uniform(rng, -1.0, 1.0));
    g.translate(x);
    std::vector<double> ms;
    for (int r = 0; r < runs; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      g.translate(x);
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    row.forward_ms = median(ms);
  }
  return row;
}

int bench(const Settings& s, const fs::path& out, const std::vector<Index>& sizes, int runs) {
  std::vector<BenchRow> rows;
  for (Index size : sizes)
    for (auto variant : {AttentionVariant::dense, AttentionVariant::dpsa}) {
      rows.push_back(bench_one(s, variant, size, runs, s.at("seed").get<std::uint64_t>()));
      std::cerr << "benched " << rows.back().variant << " at " << size << "\n";
    }

  std::ostringstream csv, md;
  csv << "variant,resolution,params,macs,attention_map_macs_per_head,forward_ms,source\n";
  md << "# Generator cost (profile " << s.text("profile") << ", channels " << s.integer("generator.channels")
     << ", heads " << s.integer("generator.heads") << ")\n\n"
     << "| variant | resolution | params (M) | MACs (G) | MACs (exact) | attention-map MACs / head | forward ms "
        "(median of "
     << runs << ") |\n|---|---|---|---|---|---|---|\n";
  char buf[256];
  for (const auto& r : rows) {
    csv << r.variant << ',' << r.size << ',' << r.cost.params << ',' << r.cost.macs << ',' << r.map_macs_per_head
        << ',';
    if (r.forward_ms >= 0) csv << r.forward_ms;
    csv << ",measured\n";
    const std::string ms = r.forward_ms >= 0 ? std::to_string(r.forward_ms) : std::string("-");
    std::snprintf(buf, sizeof buf, "| %s | %lldx%lld | %.3f | %.3f | %lld | %lld | %s |\n", r.variant.c_str(),
                  static_cast<long long>(r.size), static_cast<long long>(r.size), r.cost.params / 1e6,
                  r.cost.macs / 1e9, static_cast<long long>(r.cost.macs), static_cast<long long>(r.map_macs_per_head),
                  ms.c_str());
    md << buf;
  }
  csv << "published,256,8500000,45800000000,,,published\n";
  md << "| published (reference, not measured) | 256x256 | 8.5 | 45.8 | - | - | - |\n\n";
  md << "Attention-map MAC ratio dpsa/dense per head:\n\n";
  for (size_t i = 0; i + 1 < rows.size(); i += 2) {
    std::snprintf(buf, sizeof buf, "- %lldx%lld input: %lld / %lld = 1/%g\n", static_cast<long long>(rows[i].size),
                  static_cast<long long>(rows[i].size), static_cast<long long>(rows[i + 1].map_macs_per_head),
                  static_cast<long long>(rows[i].map_macs_per_head),
                  double(rows[i].map_macs_per_head) / double(rows[i + 1].map_macs_per_head));
    md << buf;
  }
  std::ofstream(out / "bench.csv") << csv.str();
  std::ofstream(out / "bench.md") << md.str();
  std::cout << md.str();
  return kExitOk;
}

std::vector<fs::path> png_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ImageError("input directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
  }
  if (files.empty()) throw ImageError("no PNG files in " + dir.string());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

int thread_limit_from_env() {
  const char* raw = std::getenv("ITTR_THREADS");
  if (!raw || !*raw) return 0;
  char* end = nullptr;
  const long n = std::strtol(raw, &end, 10);
  if (*end != '\0' || n < 1 || n > 4096) throw ConfigError(std::string("ITTR_THREADS must be a positive integer, got '") + raw + "'");
  return static_cast<int>(n);
}

std::pair<std::vector<Image>, std::vector<Image>> test_images(const Settings& s) {
  const Index count = s.integer("train.test_size");
  if (s.flag("data.synthetic")) {
    const std::uint64_t seed = derive_rng(s.at("seed").get<std::uint64_t>(), {0x7E57})();
    return {load_domain(synthetic_domain(synthetic_spec(s, 'A'), seed, count), count),
            load_domain(synthetic_domain(synthetic_spec(s, 'B'), seed, count), count)};
  }
  const Index size = s.integer("train.image_size");
  const auto [a, b] = dataset_domains(s.text("data.root"), "test", size, size);
  return {load_domain(a, count), load_domain(b, count)};
}

template <typename T>
std::vector<Image> translate_images(const Generator<T>& g, const std::vector<Image>& images) {
  NoGradGuard no_grad;
  std::vector<Image> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(from_batch(g.translate(to_batch<T>({im}))));
  return out;
}

template <typename T>
double translation_distance(const Generator<T>& g, const std::vector<Image>& source, const FeatureStats& target,
                            const FeatureExtractor& extractor) {
  return frechet_distance(collect_stats(translate_images(g, source), extractor), target);
}

template std::vector<Image> translate_images(const Generator<float>&, const std::vector<Image>&);
template std::vector<Image> translate_images(const Generator<double>&, const std::vector<Image>&);
template double translation_distance(const Generator<float>&, const std::vector<Image>&, const FeatureStats&,
                                     const FeatureExtractor&);
template double translation_distance(const Generator<double>&, const std::vector<Image>&, const FeatureStats&,
                                     const FeatureExtractor&);

int run_cli(int argc, char** argv) {
  CLI::App app{"ITTR unpaired image-to-image translation"};
  app.require_subcommand(1, 1);

  CommonArgs train_args, translate_args, bench_args, verify_args;

  auto* train = app.add_subcommand("train", "Train a generator");
  add_common(train, train_args, "runs/train");
  bool synthetic = false, resume = false;
  std::string data_root;
  Index iters = 0;
  train->add_flag("--synthetic", synthetic, "Use the synthetic squares-to-circles dataset");
  train->add_option("--data", data_root, "Dataset root holding trainA, trainB, testA, testB");
  train->add_option("--iters", iters, "Number of iterations")->check(CLI::PositiveNumber);
  train->add_flag("--resume", resume, "Continue from the checkpoint in --out");

  auto* translate = app.add_subcommand("translate", "Translate a folder of PNG images");
  add_common(translate, translate_args, "", "--out,--output")->required();
  std::string checkpoint, input;
  translate->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  translate->add_option("--input", input, "Folder of PNG images")->required();

  auto* bench_cmd = app.add_subcommand("bench", "Parameter, MAC and latency report");
  add_common(bench_cmd, bench_args, "runs/bench");
  std::vector<Index> sizes{64, 128, 256};
  int runs = 3;
  bool no_timing = false;
  bench_cmd->add_option("--sizes", sizes, "Input resolutions")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--runs", runs, "Timed forward passes per cell")->check(CLI::PositiveNumber);
  bench_cmd->add_flag("--no-timing", no_timing, "Report analytic costs only");

  auto* verify = app.add_subcommand("verify", "Run the property suite");
  add_common(verify, verify_args, "");
  bool break_l2norm = false;
  verify->add_flag("--break-l2norm", break_l2norm, "Skip L2 normalisation before the factored scores");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (const int threads = thread_limit_from_env(); threads > 0) Eigen::setNbThreads(threads);
    set_diagnostic_sink([](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; });

    if (*train) {
      Json flags = Json::object();
      if (synthetic) flags["data.synthetic"] = true;
      if (!data_root.empty()) flags["data.root"] = data_root;
      if (iters > 0) flags["train.iterations"] = iters;
      const Settings s = resolve(train, train_args, flags);
      if (!s.flag("data.synthetic") && s.text("data.root").empty())
        throw ConfigError("train needs --synthetic or --data <dir>");
      if (!s.flag("data.synthetic")) {
        const fs::path root = s.text("data.root");
        for (const char* split : {"trainA", "trainB"})
          if (!fs::is_directory(root / split)) throw ConfigError("data directory " + (root / split).string() + " does not exist");
      }
      const fs::path out = prepare_out(train_args.out, s);
      return s.text("train.precision") == "double" ? train_with<double>(s, out, resume) : train_with<float>(s, out, resume);
    }

    if (*translate) {
      const Settings s = resolve(translate, translate_args);
      try {
        const fs::path ckpt(checkpoint);
        const auto inputs = png_files(input);
        const Manifest m = read_manifest(ckpt / kManifestFile);
        const auto precision = m.find("train.precision");
        if (precision == m.end()) throw ConfigError("checkpoint manifest has no precision entry");
        const fs::path out = prepare_out(translate_args.out, s);
        if (precision->second == "double") return translate_with<double>(ckpt, inputs, out);
        if (precision->second == "float") return translate_with<float>(ckpt, inputs, out);
        throw ConfigError("checkpoint precision '" + precision->second + "' is not supported");
      } catch (const FormatError& e) {
        throw ConfigError(e.what());
      }
    }

    if (*bench_cmd) {
      const Json file = bench_args.config.empty() ? Json::object() : read_config_file(bench_args.config);
      Json flags = Json::object();
      bool profile_given = file.contains("profile");
      for (const auto& a : bench_args.sets) profile_given = profile_given || parse_override(a).first == "profile";
      if (!profile_given) flags["profile"] = "full";
      const Settings s = resolve(bench_cmd, bench_args, flags);
      return bench(s, prepare_out(bench_args.out, s), sizes, no_timing ? 0 : runs);
    }

    if (*verify) {
      const Settings s = resolve(verify, verify_args);
      SuiteOptions opts;
      opts.seed = s.at("seed").get<std::uint64_t>();
      opts.break_l2norm = break_l2norm;
      const auto results = run_property_suite(opts);
      print_table(std::cout, results);
      if (!verify_args.out.empty()) {
        std::ofstream report(prepare_out(verify_args.out, s) / "verify.txt");
        print_table(report, results);
      }
      return all_pass(results) ? kExitOk : kExitFailure;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ImageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace ittr::app
