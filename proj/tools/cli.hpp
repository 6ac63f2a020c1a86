// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command-line front end. Talks to the engine only through the C API.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace tinydrop::cli {

enum class Command { GenData, Train, Infer, Eval, Sweep, Flops };

struct RunConfig {
  Command command = Command::Eval;

  std::string guidance_path = "guidance.tdw";
  std::string target_path = "target.tdw";
  std::string data_dir = "data";
  std::string output;  // empty: command-specific default
  std::string jsonl_path;  // eval: per-sample records
  std::string csv_path;    // eval, sweep: aggregate summary

  double tau = 0.9;
  double gamma = 0.5;
  double r_max = 0.7;
  std::vector<double> taus;    // sweep
  std::vector<double> gammas;  // sweep

  std::uint64_t seed = 1;
  std::size_t workers = 1;
  bool dump_saliency = false;
  bool dump_selection = false;

  // gen-data
  std::size_t count = 256;
  std::size_t num_classes = 4;
  double min_strength = 0.3;
  double max_strength = 1.0;

  // train
  std::string role = "guidance";
  std::string pos_mode;  // empty: preset
  std::size_t epochs = 4;
  double lr = 0.02;
  std::size_t batch_size = 16;

  // infer
  std::string image_path;
  std::optional<std::size_t> label;

  // flops
  bool flops_from_presets = false;
};

/// Help or version text that should be printed before exiting with `code`.
struct EarlyExit {
  int code = 0;
  std::string text;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses argv (without the program name). Throws UsageError naming the
/// offending flag. `env_seed` is the value of TINYDROP_SEED, if set.
std::variant<RunConfig, EarlyExit> parse_args(const std::vector<std::string>& args,
                                              const char* env_seed = nullptr);

/// Executes a parsed configuration. Returns the process exit code.
int run(const RunConfig& config);

/// parse_args + run with the documented exit codes (0 ok, 1 runtime, 2 usage).
int main_entry(int argc, const char* const* argv);

}  // namespace tinydrop::cli
