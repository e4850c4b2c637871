#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "wsiseg/config.hpp"
#include "wsiseg/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Two-stage whole-slide tumor segmentation on synthetic slides"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value configuration file (a stage manifest works too)");
  app.add_option("--seed", seed, "global seed");
  app.add_option("--out", out, "run directory");
  app.add_option("--set", overrides, "override one key, e.g. --set train.e2e_epochs=1");

  std::vector<std::string> commands = wsiseg::pipeline::stage_names();
  commands.push_back("all");
  commands.push_back("show-config");
  for (const auto& name : commands) app.add_subcommand(name)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    wsiseg::RunConfig cfg;
    if (!config_path.empty()) cfg = wsiseg::RunConfig::load(config_path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out = *out;
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw wsiseg::ConfigError("--set expects key=value, got '" + o + "'");
      cfg.set(o.substr(0, eq), o.substr(eq + 1));
    }
    cfg.validate();

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "show-config") {
      wsiseg::write_key_values(std::cout, cfg.to_key_values());
    } else if (cmd == "all") {
      wsiseg::pipeline::run_all(cfg);
    } else {
      wsiseg::pipeline::run_stage(cmd, cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "wsiseg: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
