#pragma once

#include <string>
#include <vector>

namespace CLI {
class App;
}

namespace taprune::cli {

enum ExitCode { ok = 0, config_error = 1, run_failure = 2, check_failure = 3 };

// Thrown by --check assertions.
struct CheckFailed {
    std::string message;
};

// Registers every verb on `app`; the selected verb's handler runs during
// parsing's callback phase and stores its exit code in `exit_code`.
void register_commands(CLI::App& app, int& exit_code);

}  // namespace taprune::cli
