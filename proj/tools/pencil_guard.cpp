// pencil-guard prepare|attack|chordal|detect|report --config <path>
//              [--out <dir>] [--workers N] [--seed S]

#include <iostream>

#include "CLI11.hpp"
#include "pencil_guard/experiment.hpp"

namespace pg = pencil_guard;

namespace {

int emit_error(int exit_code, const std::string& code, const std::string& message, const std::string& stage) {
  nlohmann::ordered_json j;
  j["error"] = code;
  j["message"] = message;
  j["stage"] = stage;
  j["exit_code"] = exit_code;
  std::cerr << j.dump() << std::endl;
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Matrix-pencil adversarial example detection for audio spectrograms"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  std::size_t workers = 0;
  std::uint64_t seed = 0;
  const std::vector<std::string> stages{"prepare", "attack", "chordal", "detect", "report"};
  for (const auto& name : stages) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (overrides config)");
    sub->add_option("--workers", workers, "worker threads (overrides PENCIL_GUARD_WORKERS and config)");
    sub->add_option("--seed", seed, "master seed (overrides config)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error(1, "ValidationError", e.what(), "");
  }
  const std::string stage = app.get_subcommands().front()->get_name();
  const auto* sub = app.get_subcommands().front();

  try {
    auto cfg = pg::load_config(config_path);
    if (sub->count("--out")) cfg.output_dir = out_dir;
    if (sub->count("--seed")) cfg.seed = seed;
    if (sub->count("--workers")) {
      if (workers == 0) pg::fail(pg::ErrorCode::ValidationError, "--workers must be positive");
      cfg.workers = workers;
    } else if (std::getenv("PENCIL_GUARD_WORKERS")) {
      cfg.workers = 0;
    }
    const pg::Experiment ex(cfg);
    if (stage == "prepare") {
      pg::cmd_prepare(ex);
    } else if (stage == "attack") {
      const auto summary = pg::cmd_attack(ex);
      std::cout << summary.to_csv();
      if (!summary.failures.empty()) {
        std::string list;
        for (const auto& f : summary.failures) list += (list.empty() ? "" : "; ") + f;
        return emit_error(2, "AttackFailures", list, stage);
      }
    } else if (stage == "chordal") {
      const auto out = pg::cmd_chordal(ex);
      std::cout << out.report.to_csv();
    } else if (stage == "detect") {
      pg::cmd_detect(ex);
      std::ifstream csv(ex.root() / "detect" / "auc.csv");
      std::cout << csv.rdbuf();
    } else {
      std::cout << pg::cmd_report(ex);
    }
  } catch (const pg::Error& e) {
    const int code = e.code() == pg::ErrorCode::ValidationError ? 1 : 2;
    return emit_error(code, std::string(pg::to_string(e.code())), e.what(), stage);
  } catch (const std::exception& e) {
    return emit_error(2, "RuntimeError", e.what(), stage);
  }
  return 0;
}
