#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace rotatelab::cli {

struct Invocation;

/// The command-line parser; `state` receives the parsed options and must
/// outlive the app.
std::unique_ptr<CLI::App> make_app(Invocation& state);

/// Parses and runs one command line. Returns the process exit code:
/// 0 ok, 1 runtime failure, 2 usage or input error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Applies ROTATELAB_LOG (trace, debug, info, warn, error, off) to the
/// stderr logger. Unset means warn.
void configure_logging();

}  // namespace rotatelab::cli
