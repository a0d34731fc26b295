#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cli/commands.hpp"

int main(int argc, char** argv) {
  using namespace bls::cli;

  CLI::App app{"Bilevel sensitivity toolkit: tuning, derivative checks, bounds and landscapes"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string format;
  int jobs = 1;
  bool expect_inexact = false;

  const std::pair<const char*, const char*> commands[] = {
      {"tune", "Optimize the upper objective with gd and/or newton"},
      {"gradcheck", "Check implicit derivatives against finite-difference oracles"},
      {"bounds", "Compare measured derivative errors with their a-posteriori bounds"},
      {"landscape", "Evaluate the upper loss on the principal plane of an optimization path"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--out", out_dir, "Output directory (overrides output.dir)");
    sub->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--format", format, "csv or json (overrides output.format)")
        ->check(CLI::IsMember({"csv", "json"}));
    if (std::string(name) == "gradcheck") {
      sub->add_flag("--expect-inexact", expect_inexact,
                    "Report tolerance breaches without failing");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  CommandOptions opts;
  if (!out_dir.empty()) opts.out_dir = out_dir;
  if (!format.empty()) opts.format = parse_format(format);
  opts.jobs = jobs;
  opts.expect_inexact = expect_inexact;
  return run_command(app.get_subcommands().front()->get_name(), config_path, opts, std::cout,
                     std::cerr);
}
