#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "voplab/cli/experiment.hpp"

namespace voplab {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitClobber = 3,
    kExitNonFinite = 4,
};

class ClobberRefused : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CommandOptions {
    bool force = false;
    bool resume = false;
    bool lr_search = false;
    std::optional<std::uint64_t> seed;  // corpus seed for generate, train seed otherwise
    std::filesystem::path out;          // replaces the config's output (dataset for generate)
    std::optional<std::size_t> max_steps;
    std::optional<std::string> axis;
    std::optional<nlohmann::json> values;
    std::vector<std::string> protocols;
};

// Worker cap from VOPLAB_THREADS, else the hardware concurrency.
std::size_t worker_threads();

inline constexpr const char* kToyBanner = "toy-scale, not comparable in magnitude";
inline constexpr const char* kReportSchema = "# voplab-report v1";
inline constexpr const char* kParamsSchema = "# voplab-params v1";
inline constexpr const char* kAblationSchema = "# voplab-ablation v1";
inline constexpr const char* kLrSearchSchema = "# voplab-lr-search v1";

struct RunOutcome {
    SplitReport val;
    std::size_t trainable = 0;
    double percent = 0;  // of the 119.8M reference backbone
    std::size_t steps = 0;
    double lr = 0;
};

// Each command writes its artifacts and a short summary to `out`.
void cmd_generate(ExperimentConfig config, const CommandOptions& opts, std::ostream& out);
RunOutcome cmd_train(ExperimentConfig config, const CommandOptions& opts, std::ostream& out);
void cmd_count_params(const ExperimentConfig& config, const CommandOptions& opts, std::ostream& out);
void cmd_ablate(ExperimentConfig config, const CommandOptions& opts, std::ostream& out);

// Runs `body`, printing the error to `err` and mapping it to an exit code.
int run_guarded(const std::function<void()>& body, std::ostream& err);

}  // namespace voplab
