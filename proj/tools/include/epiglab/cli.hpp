#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "epiglab/decompose.hpp"
#include "epiglab/loop.hpp"

namespace epiglab::cli {

struct DataSection {
  std::filesystem::path latent;
  std::filesystem::path raw;
  std::filesystem::path labels;
  std::filesystem::path assets;
  std::optional<int> classes;
  std::optional<SyntheticSpec> synthetic;  // in-memory data instead of files
  std::uint64_t synthetic_seed = 0;
};

struct ServerSection {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path ui_dir;
  std::uint64_t seed = 0;
  bool human_init = false;  // forced when there is no label file
};

/// A parsed experiment file. Paths are absolute (resolved against the file's
/// directory) and checked for existence.
struct ExperimentConfig {
  DataSection data;
  LoopConfig loop;
  std::vector<Method> methods{Method::random};
  SizeContrastConfig decompose;
  ServerSection server;
  std::optional<std::filesystem::path> out_dir;  // --out, then this, then $EPIGLAB_OUT, then ./out
  std::size_t jobs = 1;
};

/// `key.path=value` with a YAML scalar or flow value, applied before parsing.
struct Override {
  std::string key;
  std::string value;
};

Override parse_override(const std::string& text);

/// Parses YAML text. Unknown keys throw ConfigError naming the full key path.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                              const std::vector<Override>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<Override>& overrides = {});

/// Loads (or synthesises) the data bundle described by the config.
DataBundle load_data(const ExperimentConfig& config);

/// `seeds: N` expands to 0..N-1.
std::vector<std::uint64_t> seed_range(std::size_t count);

/// Learning curves as an 800x500 SVG: one line per method with a shaded
/// mean +- stderr band.
std::string learning_curve_svg(const std::map<std::string, CurveSummary>& curves);

/// Entry point shared by the executable and the tests. Returns the exit code:
/// 0 success, 1 runtime error, 2 usage error.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace epiglab::cli
