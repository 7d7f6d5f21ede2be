#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sagvit/model.hpp"
#include "sagvit/training.hpp"

namespace sagvit {

// One value from the TOML subset used by run configs: booleans, numbers,
// double-quoted strings and flat numeric arrays.
struct ConfigValue {
  enum class Kind { boolean, integer, real, string, array } kind = Kind::integer;
  bool boolean = false;
  double number = 0.0;
  std::string text;
  std::vector<double> array;
  std::size_t line = 0;
};

// "section.key" -> value. Top-level keys have no section prefix.
using ConfigTable = std::map<std::string, ConfigValue>;

ConfigTable parse_config_text(std::string_view text);

struct DataSpec {
  std::string source = "synthetic";  // synthetic | cifar10 | sgt_dir
  std::filesystem::path path;
  std::string split = "train";  // cifar10 only
  std::size_t classes = 2;
  std::size_t per_class = 32;
  std::size_t size = 32;
  std::size_t channels = 3;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  OptimSpec optim;
  DataSpec data;
  std::size_t threads = 0;
  std::optional<double> target_macro_f1;

  // Parses and validates; field-level problems raise ConfigError naming the key.
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  // Switches ablation and applies its defaults (no_backbone: batch 32 unless set explicitly).
  void set_ablation(Ablation ablation);

  void validate() const;
  std::string to_toml() const;

  bool batch_size_explicit = false;
};

}  // namespace sagvit
