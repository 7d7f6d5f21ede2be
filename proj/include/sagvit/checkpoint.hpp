#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sagvit/model.hpp"

namespace sagvit {

// Checkpoint container (little-endian):
//   "SGTC" | config_len:u32 | config TOML bytes | count:u32 |
//   count x (name_len:u16 | name bytes | SGT record)
struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> tensors;

  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
};

Checkpoint make_checkpoint(const SagVitModel& model, const std::string& config_text);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into the model; names and shapes must match exactly.
void apply_checkpoint(SagVitModel& model, const Checkpoint& checkpoint);

}  // namespace sagvit
