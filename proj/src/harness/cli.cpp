#include "numblocks/harness/cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "numblocks/errors.hpp"
#include "numblocks/harness/report.hpp"

namespace numblocks::harness {

namespace {

namespace fs = std::filesystem;

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model, instr, curriculum, out, debug_log;
};

struct EvalArgs {
  std::string checkpoint;
  std::string set = "all";
  std::optional<std::string> out;
};

struct DatasetArgs {
  int max_actions = 10;
  std::string which = "train";
};

struct OracleArgs {
  int number = 0;
  bool trace = false;
  std::string instr = "policy";
  std::string reward = "dense";
};

struct PlotArgs {
  std::vector<std::string> runs;
  std::optional<std::string> out;
};

std::vector<int> read_number_list(const fs::path& path) {
  const std::string text = read_text(path);
  std::vector<int> out;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }), line.end());
    if (line.empty()) continue;
    if (first && line == "number") {
      first = false;
      continue;
    }
    first = false;
    int v = 0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || ptr != line.data() + line.size() || v < env::kMinTarget || v > env::kMaxTarget) {
      throw DomainError(fmt::format("'{}': '{}' is not a number in [1, 999]", path.string(), line));
    }
    out.push_back(v);
  }
  return out;
}

std::vector<int> numbers_for(const std::string& set, int max_actions) {
  if (set == "train") return curriculum::build_training_set(max_actions);
  if (set == "test") return curriculum::build_test_set(max_actions);
  if (set == "all") {
    std::vector<int> all(env::kMaxTarget);
    std::iota(all.begin(), all.end(), env::kMinTarget);
    return all;
  }
  return read_number_list(set);
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig cfg = load_config(a.config);
  if (a.seed) cfg.seeds = {*a.seed};
  if (a.model) cfg.model = models::model_kind_from_string(*a.model);
  if (a.instr) cfg.instructions = instr::instruction_mode_from_string(*a.instr);
  if (a.curriculum) {
    const auto* r = std::get_if<curriculum::Random>(&cfg.curriculum.ordering);
    cfg.curriculum.ordering = curriculum::ordering_from_string(*a.curriculum, r ? r->seed : 0);
  }
  cfg.validate();
  const fs::path dir = resolve_output_dir(a.out, cfg);
  std::optional<std::ofstream> debug;
  if (a.debug_log) {
    debug.emplace(*a.debug_log);
    if (!*debug) throw IoError(fmt::format("cannot write rollout log '{}'", *a.debug_log));
  }

  std::vector<std::vector<CurvePoint>> curves;
  std::vector<std::array<RangeStat, kNumRanges>> ranges;
  for (std::uint64_t seed : cfg.seeds) {
    const TrainResult res = train(cfg, seed, &err, debug ? &*debug : nullptr);
    const fs::path run_dir = cfg.seeds.size() == 1 ? dir : dir / fmt::format("seed_{}", seed);
    write_run(run_dir, cfg, res);
    fmt::print(out, "seed {}: {} after {} frames, {} episodes; mean reward {}, success rate {} -> {}\n", seed,
               to_string(res.status), res.checkpoint.frames, res.checkpoint.episodes, res.final_eval.mean_reward,
               res.final_eval.success_rate, run_dir.string());
    curves.push_back(res.curve);
    ranges.push_back(res.final_eval.ranges);
  }
  if (curves.size() > 1) write_summary(dir, curves, ranges);
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto numbers = numbers_for(a.set, ck.config.curriculum.max_actions);
  const EvalReport rep = evaluate(ck, numbers);
  fmt::print(out, "evaluated {} numbers: mean reward {}, success rate {}\n", rep.results.size(), rep.mean_reward,
             rep.success_rate);
  out << ranges_csv(rep.ranges);
  if (a.out) {
    const fs::path dir = *a.out;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));
    write_text(dir / "eval_ranges.csv", ranges_csv(rep.ranges));
    write_text(dir / "eval_numbers.csv", numbers_csv(rep.results));
    write_text(dir / "ranges.svg", ranges_svg(rep.ranges));
  }
  return kExitOk;
}

int cmd_dataset(const DatasetArgs& a, std::ostream& out) {
  for (int n : numbers_for(a.which, a.max_actions)) out << n << '\n';
  return kExitOk;
}

int cmd_oracle(const OracleArgs& a, std::ostream& out) {
  const auto mode = instr::instruction_mode_from_string(a.instr);
  env::EnvState s = env::new_episode(a.number, env::reward_mode_from_string(a.reward));
  double total = 0.0;
  std::vector<std::string_view> actions;
  while (s.running()) {
    const env::Action act = env::oracle_action(s);
    const std::string text = instr::instruction(s, mode);
    auto [next, outcome] = env::step(s, act);
    total += outcome.reward;
    actions.push_back(env::to_string(act));
    if (a.trace) {
      fmt::print(out, "{} {} | {} | reward {}{}\n", next.steps_taken, env::to_string(act), text, outcome.reward,
                 outcome.done ? fmt::format(" {}", env::to_string(outcome.reason)) : std::string());
    }
    s = std::move(next);
  }
  if (!a.trace) {
    fmt::print(out, "{}: {} steps, return {}: {}\n", a.number, s.steps_taken, total, fmt::join(actions, " "));
  }
  return kExitOk;
}

int cmd_plot(const PlotArgs& a, std::ostream& out) {
  std::vector<std::vector<CurvePoint>> curves;
  std::vector<std::array<RangeStat, kNumRanges>> ranges;
  bool all_ranges = true;
  for (const auto& run : a.runs) {
    const fs::path dir = run;
    for (auto& c : split_by_seed(parse_curve_csv(read_text(dir / "curve.csv")))) curves.push_back(std::move(c));
    if (fs::exists(dir / "eval_ranges.csv")) {
      ranges.push_back(parse_ranges_csv(read_text(dir / "eval_ranges.csv")));
    } else {
      all_ranges = false;
    }
  }
  if (!all_ranges) ranges.clear();
  TrainConfig defaults;
  const fs::path dir = resolve_output_dir(a.out, defaults);
  write_summary(dir, curves, ranges);
  fmt::print(out, "aggregated {} curves -> {}\n", curves.size(), dir.string());
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Number-construction RL workbench", "numblocks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version()));

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train over the curriculum for every configured seed");
  train_cmd->add_option("--config", train_args.config, "JSON config file")->required();
  train_cmd->add_option("--seed", train_args.seed, "Run only this seed");
  train_cmd->add_option("--model", train_args.model, "visual | dense | attention");
  train_cmd->add_option("--instr", train_args.instr, "policy | state | none");
  train_cmd->add_option("--curriculum", train_args.curriculum, "ascending | task-ease | descending | random");
  train_cmd->add_option("--out", train_args.out, "Output directory (default: config, then $NUMBLOCKS_OUT, then runs)");
  train_cmd->add_option("--rollout-log", train_args.debug_log, "Write every rollout step with its instruction text");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint.json")->required();
  eval_cmd->add_option("--set", eval_args.set, "train | test | all | path to a list of numbers")
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_args.out, "Directory for eval_ranges.csv, eval_numbers.csv, ranges.svg");

  DatasetArgs dataset_args;
  auto* dataset_cmd = app.add_subcommand("dataset", "Print the training or test set, one number per line");
  dataset_cmd->add_option("--max-actions", dataset_args.max_actions, "Training-set action budget")
      ->capture_default_str();
  dataset_cmd->add_option("--which", dataset_args.which, "train | test")
      ->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();

  OracleArgs oracle_args;
  auto* oracle_cmd = app.add_subcommand("oracle", "Play the scripted optimal policy on one target");
  oracle_cmd->add_option("--number", oracle_args.number, "Target in [1, 999]")->required();
  oracle_cmd->add_flag("--trace", oracle_args.trace, "Print every step");
  oracle_cmd->add_option("--instr", oracle_args.instr, "policy | state | none")->capture_default_str();
  oracle_cmd->add_option("--reward", oracle_args.reward, "dense | sparse")->capture_default_str();

  PlotArgs plot_args;
  auto* plot_cmd = app.add_subcommand("plot", "Aggregate finished runs into mean and 66% CI plots");
  plot_cmd->add_option("--runs", plot_args.runs, "Run directories containing curve.csv")->required();
  plot_cmd->add_option("--out", plot_args.out, "Output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForVersion&) {
    out << version() << '\n';
    return kExitOk;
  } catch (const CLI::Success&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* failed = &app;
    for (auto* sub : {train_cmd, eval_cmd, dataset_cmd, oracle_cmd, plot_cmd}) {
      if (!args.empty() && args.front() == sub->get_name()) failed = sub;
    }
    err << failed->help();
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_args, out, err);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, out);
    if (dataset_cmd->parsed()) return cmd_dataset(dataset_args, out);
    if (oracle_cmd->parsed()) return cmd_oracle(oracle_args, out);
    if (plot_cmd->parsed()) return cmd_plot(plot_args, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace numblocks::harness
