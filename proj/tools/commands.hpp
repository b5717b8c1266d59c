#pragma once

#include <filesystem>
#include <vector>

#include "config.hpp"

namespace ittr::app {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point for the `ittr` executable; returns the process exit code.
int run_cli(int argc, char** argv);

/// Reads ITTR_THREADS; ConfigError unless it is a positive integer. 0 when unset.
int thread_limit_from_env();

struct EvalResult {
  double untrained = 0.0;
  double trained = 0.0;
  double improvement() const { return 1.0 - trained / untrained; }
};

/// Test split for a run: synthetic images from a seed disjoint from training, or <root>/testA, testB.
std::pair<std::vector<Image>, std::vector<Image>> test_images(const Settings& s);

template <typename T>
std::vector<Image> translate_images(const Generator<T>& g, const std::vector<Image>& images);

/// Fréchet proxy between translated source images and target images.
template <typename T>
double translation_distance(const Generator<T>& g, const std::vector<Image>& source, const FeatureStats& target,
                            const FeatureExtractor& extractor);

}  // namespace ittr::app
