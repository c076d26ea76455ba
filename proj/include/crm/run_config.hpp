#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "crm/data_model.hpp"
#include "crm/synthgen.hpp"
#include "crm/trainer.hpp"

namespace crm {

// Invalid or unknown configuration entry; key() is "section.name" when known.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct EvalSettings {
  std::vector<double> thresholds{0.3, 0.5, 0.7};
  Split split = Split::kTest;
  double tau = 0.5;
  bool with_pairs = true;
};

// Everything a CLI run needs. Defaults describe the desk-scale synthetic setup.
struct RunConfig {
  SynthConfig synth;
  CorpusConfig corpus;
  TrainConfig train;
  EvalSettings eval;

  RunConfig();
};

// Grammar, one entry per line:
//   # comment            [section]            key = value
// Sections are data, model, train, eval. Values are strings (optionally
// double-quoted), integers, reals, booleans (true/false) or comma-separated
// number lists. Unknown sections or keys are errors.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical text form; parse_run_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& config);

// "bce,tmp,smt" subsets.
LossSwitches parse_loss_switches(std::string_view text);
std::string to_string(const LossSwitches& switches);

std::vector<double> parse_number_list(std::string_view text);

}  // namespace crm
