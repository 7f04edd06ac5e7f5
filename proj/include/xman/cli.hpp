#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "xman/launcher.hpp"
#include "xman/versioning.hpp"

namespace xman {

struct CliContext {
  std::string xman_exe = "xman";  // embedded in rendered job scripts
  EnvLookup env = process_env();
  PromptIo prompt;
};

/// One `xman` invocation; `args` excludes the program name.
/// Exit codes: 0 success, 1 run or operation failure, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const CliContext& context = {});

}  // namespace xman
