#pragma once

// Runs the auseq executable through the shell and captures its output.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "auseq/ingest.hpp"

namespace testutil {

struct CliResult {
  int exit_code = -1;
  std::string stdout_text;
  std::string stderr_text;
};

inline CliResult run_cli(const std::string& args, const std::filesystem::path& scratch) {
  const auto out = scratch / "cli_stdout.txt";
  const auto err = scratch / "cli_stderr.txt";
  const std::string cmd = std::string("env -u AUSEQ_SEED '") + AUSEQ_CLI + "' " + args + " > '" + out.string() +
                          "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.stdout_text = auseq::detail::read_file(out);
  r.stderr_text = auseq::detail::read_file(err);
  return r;
}

inline std::string quoted(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace testutil
