// cglue: batch runner for the gluing scenarios.
//
// Exit status: 0 all checks pass, 1 numerical failure or failed check,
// 2 bad configuration or usage.

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "cglue/cli/scenario.hpp"

namespace {

struct Options {
  std::string config;
  std::string out = "cglue_out";
  int threads = 0;
  bool print_defaults = false;
};

void add_common(CLI::App* sub, Options& o, bool needs_config) {
  sub->add_option("--config", o.config, "scenario config (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--threads", o.threads, "worker threads (0 = hardware)")->check(CLI::NonNegativeNumber);
  if (needs_config) sub->add_flag("--print-defaults", o.print_defaults, "print default configs and exit");
}

int run_selftest() {
  bool pass = true;
  for (const auto& line : cglue::cli::selftest()) {
    std::cout << (line.pass ? "PASS " : "FAIL ") << line.name << ": " << line.detail << '\n';
    pass = pass && line.pass;
  }
  std::cout << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compact-support solves and gluing for underdetermined-elliptic operators"};
  app.require_subcommand(1);
  Options opts;
  const char* names[] = {"solve", "glue", "truncate", "flux-match", "api-estimate", "kernel-dim"};
  for (const char* name : names) add_common(app.add_subcommand(name, std::string("run a '") + name + "' scenario"), opts, true);
  add_common(app.add_subcommand("selftest", "quick identities on small grids"), opts, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  const std::string sub = app.get_subcommands().front()->get_name();
  if (opts.threads > 0) cglue::set_thread_count(static_cast<unsigned>(opts.threads));

  try {
    if (sub == "selftest") return run_selftest();
    if (opts.print_defaults) {
      std::cout << cglue::cli::print_defaults(sub).dump(2) << '\n';
      return 0;
    }
    if (opts.config.empty()) throw cglue::cli::ConfigError("--config is required");
    const auto setup = cglue::cli::load_config(cglue::cli::read_file(opts.config), sub);
    const int rc = cglue::cli::run_scenario(setup, opts.out);
    std::ifstream summary(std::filesystem::path(opts.out) / "summary.txt");
    std::cout << summary.rdbuf();
    return rc;
  } catch (const cglue::cli::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const cglue::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
