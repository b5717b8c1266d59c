// Acceptance runner: one PASS/FAIL line per criterion.
// Usage: acceptance [--work DIR] [--only N[,N...]]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "commands.hpp"
#include "ittr/ops.hpp"
#include "verify.hpp"

using namespace ittr;
using namespace ittr::app;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Summarises a group of properties plus a wall-clock bound.
Outcome from_properties(const std::vector<PropertyResult>& results, double secs, double limit_secs) {
  std::ostringstream os;
  bool pass = secs < limit_secs;
  for (const auto& r : results) {
    pass = pass && r.pass;
    os << r.name << " = " << r.measured << " (" << r.tolerance << (r.pass ? "" : ", FAILED") << "); ";
  }
  os << fmt("runtime %.1fs (< %.0fs)", secs, limit_secs);
  return {pass, os.str()};
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ittr");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::vector<std::vector<double>> read_history(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

double column_mean(const std::vector<std::vector<double>>& rows, size_t begin, size_t end, size_t col) {
  double s = 0.0;
  for (size_t i = begin; i < end; ++i) s += rows[i][col];
  return s / static_cast<double>(end - begin);
}

Outcome criterion_1() {
  const auto t0 = Clock::now();
  const auto r = factorization_properties({});
  return from_properties(r, seconds_since(t0), 10);
}

Outcome criterion_2() {
  const auto t0 = Clock::now();
  auto r = oracle_properties({});
  for (const auto& g : gradient_properties({}))
    if (g.name.find("attention") != std::string::npos) r.push_back(g);
  return from_properties(r, seconds_since(t0), 30);
}

Outcome criterion_3() {
  const auto t0 = Clock::now();
  return from_properties(logit_range_properties({}), seconds_since(t0), 60);
}

double median_forward_ms(const std::function<void()>& f, int runs) {
  f();
  std::vector<double> ms;
  for (int i = 0; i < runs; ++i) {
    const auto t0 = Clock::now();
    f();
    ms.push_back(1e3 * seconds_since(t0));
  }
  std::sort(ms.begin(), ms.end());
  return 0.5 * (ms[(ms.size() - 1) / 2] + ms[ms.size() / 2]);
}

Outcome criterion_4() {
  const auto t0 = Clock::now();
  auto props = complexity_properties({});
  NoGradGuard no_grad;
  Rng rng(4);
  std::vector<double> dpsa_ms, dense_ms;
  for (Index side : {32, 64}) {
    AttentionConfig cfg;
    cfg.channels = 32;
    cfg.heads = 2;
    cfg.sparse_tokens = static_cast<Index>(std::floor(std::sqrt(double(side))));
    const AttentionWeights<float> w(cfg, rng);
    Tensor<float> x({1, side * side, cfg.channels});
    for (auto& v : x.mutable_data()) v = static_cast<float>(uniform(rng, -1, 1));
    auto dense_cfg = cfg;
    dense_cfg.variant = AttentionVariant::dense;
    dpsa_ms.push_back(median_forward_ms([&] { dpsa(x, side, side, w, cfg); }, 20));
    dense_ms.push_back(median_forward_ms([&] { dense_mhsa(x, w, dense_cfg); }, 20));
  }
  const double dpsa_growth = dpsa_ms[1] / dpsa_ms[0], dense_growth = dense_ms[1] / dense_ms[0];
  props.push_back({"complexity", "dpsa wall-clock growth for 4x tokens", "< 12", dpsa_growth, dpsa_growth < 12});
  props.push_back({"complexity", "dense wall-clock growth for 4x tokens", ">= 13", dense_growth, dense_growth >= 13});
  auto out = from_properties(props, seconds_since(t0), 120);
  out.detail += fmt(" [dpsa %.2f->%.2f ms, dense %.2f->%.2f ms]", dpsa_ms[0], dpsa_ms[1], dense_ms[0], dense_ms[1]);
  return out;
}

Outcome criterion_5() {
  const auto t0 = Clock::now();
  const auto r = gradient_properties({});
  const auto worst = std::max_element(r.begin(), r.end(), [](auto& a, auto& b) { return a.measured < b.measured; });
  bool pass = std::all_of(r.begin(), r.end(), [](auto& p) { return p.pass; });
  std::ostringstream os;
  os << r.size() << " checks";
  for (const auto& p : r)
    if (!p.pass) os << "; FAILED " << p.name << " = " << p.measured << " (" << p.tolerance << ")";
  os << "; largest rel err " << worst->measured << " (" << worst->name << ")";
  const double secs = seconds_since(t0);
  pass = pass && secs < 300;
  os << fmt("; runtime %.1fs (< 300s)", secs);
  return {pass, os.str()};
}

Outcome criterion_6() { return from_properties(objective_properties({}), 0, 1); }
Outcome criterion_7() { return from_properties(frechet_properties({}), 0, 1); }

Outcome criterion_8(const fs::path& work) {
  const fs::path dir = work / "desk";
  fs::remove_all(dir);
  const auto t0 = Clock::now();
  const int code = cli({"train", "--synthetic", "--out", dir.string()});
  const double secs = seconds_since(t0);
  if (code != 0) return {false, fmt("train exited with %d", code)};
  const auto eval = nlohmann::json::parse(std::ifstream(dir / "eval.json"));
  const double improvement = eval.at("improvement").get<double>();
  const auto rows = read_history(dir / kHistoryFile);
  const size_t n = rows.size(), tenth = std::max<size_t>(1, n / 10);
  const double first = column_mean(rows, 0, tenth, 5), last = column_mean(rows, n - tenth, n, 5);
  const double train_secs = eval.at("train_seconds").get<double>();
  const bool pass = n == 2000 && improvement >= 0.30 && last < first && train_secs < 45 * 60;
  return {pass, fmt("%zu iterations in %.1f min (< 45 min, %.1f min with evaluation); Frechet proxy %.3f -> %.3f, "
                    "improvement %.1f%% (>= 30%%); mean L_D first 10%% %.4f, last 10%% %.4f",
                    n, train_secs / 60, secs / 60, eval.at("untrained").get<double>(),
                    eval.at("trained").get<double>(), 100 * improvement, first, last)};
}

Outcome criterion_9() {
  std::ostringstream os;
  bool pass = true;
  GeneratorSpec spec;
  spec.channels = 64;
  spec.heads = 4;
  spec.finalize();
  Rng rng(9);
  const Generator<float> g(spec, rng);
  NoGradGuard no_grad;
  for (Index side : {64, 128, 256}) {
    Tensor<float> x({1, 3, side, side});
    for (auto& v : x.mutable_data()) v = static_cast<float>(uniform(rng, -1, 1));
    const bool ok = g.translate(x).shape() == x.shape();
    pass = pass && ok;
    os << side << "x" << side << (ok ? " ok" : " wrong shape") << "; ";
  }
  const auto rf = receptive_field(spec.stem);
  pass = pass && rf.size == 13 && rf.stride == 4 && spec.total_stride() == 4 && g.body.size() == 9;
  os << "stem receptive field " << rf.size << ", stride " << rf.stride << ", HPBs " << g.body.size() << "; ";

  GeneratorSpec full;
  full.finalize();
  Rng r1(1), r2(2);
  const Generator<float> a(full, r1), b(full, r2);
  const Cost ca = a.cost(256, 256), cb = b.cost(256, 256);
  const bool additive = ca == a.stem_cost(256, 256) + a.body_cost(256, 256) + a.decoder_cost(256, 256);
  std::int64_t scalars = 0;
  for (const auto& [_, p] : a.parameters()) scalars += p.numel();
  pass = pass && ca == cb && additive && scalars == ca.params;
  os << fmt("counter deterministic %s, additive %s; full-width dpsa generator at 256: %.2f G MACs, %.2f M params "
            "(published: 45.8 G, 8.5 M, reference only)",
            ca == cb ? "yes" : "no", additive ? "yes" : "no", ca.macs / 1e9, ca.params / 1e6);
  return {pass, os.str()};
}

Outcome criterion_10(const fs::path& work) {
  struct Variant {
    std::string name;
    std::vector<std::string> sets;
  };
  const std::vector<Variant> variants{{"full", {}},
                                      {"A", {"--set", "generator.enable_local=false"}},
                                      {"B", {"--set", "generator.enable_global=false"}}};
  Tensor<float> x({1, 3, 64, 64});
  Rng rng(10);
  for (auto& v : x.mutable_data()) v = static_cast<float>(uniform(rng, -1, 1));
  std::vector<std::vector<float>> outputs;
  std::ostringstream os;
  bool pass = true;
  for (const auto& v : variants) {
    const fs::path dir = work / ("ablation_" + v.name);
    fs::remove_all(dir);
    std::vector<std::string> args{"train", "--synthetic", "--iters", "200", "--out", dir.string(),
                                  "--set", "eval.enabled=false", "--set", "train.sample_every=0"};
    args.insert(args.end(), v.sets.begin(), v.sets.end());
    const int code = cli(args);
    const auto rows = read_history(dir / kHistoryFile);
    bool finite = code == 0 && rows.size() == 200;
    for (const auto& r : rows)
      for (double c : r) finite = finite && std::isfinite(c);
    pass = pass && finite;
    if (code != 0) {
      os << v.name << ": train exited " << code << "; ";
      outputs.emplace_back();
      continue;
    }
    const auto g = load_generator<float>(dir);
    NoGradGuard no_grad;
    const auto y = g.translate(x);
    outputs.emplace_back(y.data().begin(), y.data().end());
    os << v.name << ": 200 iterations" << (finite ? " finite" : " NOT finite") << fmt(", last L_D %.4f; ", rows.back()[5]);
  }
  for (size_t i = 1; i < outputs.size(); ++i) {
    double diff = 0.0;
    if (outputs[i].size() == outputs[0].size())
      for (size_t j = 0; j < outputs[0].size(); ++j) diff = std::max(diff, double(std::abs(outputs[i][j] - outputs[0][j])));
    pass = pass && diff > 1e-3;
    os << variants[i].name << " vs full max abs diff " << diff << " (> 0.001); ";
  }
  return {pass, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "ittr_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string n;
      while (std::getline(ss, n, ',')) only.insert(std::stoi(n));
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only N[,N...]]\n";
      return 2;
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion_1},
      {2, criterion_2},
      {3, criterion_3},
      {4, criterion_4},
      {5, criterion_5},
      {6, criterion_6},
      {7, criterion_7},
      {8, [&] { return criterion_8(work); }},
      {9, criterion_9},
      {10, [&] { return criterion_10(work); }},
  };
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
