#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace alamo::cli {

/// Exit codes of the `alamo` tool.
enum ExitCode : int {
    kOk = 0,
    kCheckFailed = 1,  // verification or numeric failure
    kUsage = 2,        // bad flags, config or arguments
    kIo = 3,
};

/// Runs one command; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace alamo::cli
