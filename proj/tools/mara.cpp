#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mara/common.hpp"
#include "mara/config.hpp"
#include "mara/pipeline.hpp"

namespace {

using Command = std::function<void(const mara::Settings&)>;

const std::vector<std::pair<std::string, std::pair<std::string, Command>>>& commands() {
  static const std::vector<std::pair<std::string, std::pair<std::string, Command>>> list = {
      {"gen-corpus", {"generate the synthetic benchmark files", mara::command_gen_corpus}},
      {"train-target", {"train the black-box target ranker", mara::command_train_target}},
      {"distill-surrogate", {"distill the surrogate from target rankings", mara::command_distill_surrogate}},
      {"train-attacker", {"train the attack policies", mara::command_train_attacker}},
      {"attack", {"attack the evaluation targets with the frozen policies", mara::command_attack}},
      {"evaluate", {"compute metrics and screening for the attack outcomes", mara::command_evaluate}},
      {"report", {"print the evaluation report table", mara::command_report}},
  };
  return list;
}

// Turns leftover "--key value" and "--key=value" arguments into overrides.
void apply_overrides(const std::vector<std::string>& extras, mara::Config& cfg) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.size() == 2) throw mara::Error("unexpected argument: " + arg);
    std::string key = arg.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw mara::Error("missing value for --" + key);
      value = extras[++i];
    }
    for (char& c : key)
      if (c == '-') c = '_';
    cfg.set(key, value);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-granular adversarial ranking attack toolkit"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, entry] : commands()) {
    CLI::App* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "key = value configuration file");
    sub->allow_extras();
    sub->footer("Any configuration key can be overridden with --key value.");
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (const auto& [name, entry] : commands()) {
      CLI::App* sub = subs.at(name);
      if (!sub->parsed()) continue;
      mara::Config cfg = config_path.empty() ? mara::Config{} : mara::Config::load(config_path);
      apply_overrides(sub->remaining(), cfg);
      mara::set_quiet(cfg.get_bool("quiet", false));
#ifdef _OPENMP
      if (const auto threads = cfg.get_count("threads", 0); threads > 0) omp_set_num_threads(static_cast<int>(threads));
#endif
      const mara::Settings settings = mara::Settings::from_config(cfg);
      entry.second(settings);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
