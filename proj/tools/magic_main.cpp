#include "magic/commands.hpp"
#include "magic/config.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"magic: unpaired text-aware captioning pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  for (const char* name : {"synth", "pretrain", "train", "generate", "eval", "ablate"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "run configuration (JSON)")->required();
    sub->add_option("--set", overrides, "override a dotted key, e.g. train.lambda_A=0");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  magic::RunConfig cfg;
  try {
    const char* env = std::getenv("MAGIC_SEED");
    cfg = magic::load_config(config_path, overrides, env ? std::optional<std::string>(env) : std::nullopt);
  } catch (const std::exception& e) {
    std::cerr << "magic " << command << ": error: " << e.what() << "\n";
    return magic::exit_code_for(e);
  }
  return magic::run_command(command, cfg, std::cout, std::cerr);
}
