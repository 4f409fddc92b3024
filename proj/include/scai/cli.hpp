#pragma once

// Command-line entry point, exposed as a function so tests can drive the
// whole binary in-process. Subcommands: gen-data, train, eval.

namespace scai {

int run_cli(int argc, const char* const* argv);

}  // namespace scai
