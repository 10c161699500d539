#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <unistd.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <fmt/format.h>

#include "numblocks/errors.hpp"
#include "numblocks/harness/checkpoint.hpp"
#include "numblocks/harness/cli.hpp"
#include "numblocks/harness/config.hpp"
#include "numblocks/harness/evaluate.hpp"
#include "numblocks/harness/report.hpp"
#include "numblocks/harness/train.hpp"
#include "oracles.hpp"

using namespace numblocks;
using namespace numblocks::harness;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / fmt::format("numblocks_{}_{}", tag, ::getpid());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

class AlwaysAgent final : public ppo::Agent {
 public:
  explicit AlwaysAgent(env::Action a) : action_(a) {}
  ppo::ActionChoice sample(const env::EnvState&, const models::Observation&, nn::Rng&) const override {
    return {action_, 0.0, 0.0};
  }
  env::Action greedy(const env::EnvState&, const models::Observation&) const override { return action_; }
  double value(const models::Observation&) const override { return 0.0; }

 private:
  env::Action action_;
};

TrainConfig tiny_config() {
  TrainConfig c;
  c.curriculum.max_actions = 4;
  c.curriculum.block_size = 2;
  c.curriculum.episodes_per_number = 4;
  c.ppo.horizon = 32;
  c.ppo.minibatch_size = 16;
  c.ppo.epochs = 2;
  c.eval_interval_frames = 32;
  c.seeds = {3};
  return c;
}

std::pair<int, std::string> cli(std::vector<std::string> args, std::string* err_out = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (err_out) *err_out = err.str();
  return {code, out.str()};
}

bool well_formed_svg(const std::string& text) {
  std::istringstream in(text);
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_xml(in, tree);
  } catch (const boost::property_tree::xml_parser_error&) {
    return false;
  }
  return tree.size() == 1 && tree.begin()->first == "svg";
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

}  // namespace

TEST_CASE("config json") {
  const TrainConfig defaults;
  CHECK(config_from_json(Json::object()) == defaults);
  CHECK(config_from_json(config_to_json(defaults)) == defaults);

  TrainConfig c = tiny_config();
  c.model = models::ModelKind::AttentionVisualLanguage;
  c.model_config.parity_target.reset();
  c.curriculum.ordering = curriculum::Random{77};
  c.ppo.clip_epsilon.reset();
  c.max_frames = 1000;
  c.abort = AbortRule{64, 0.5};
  c.output_dir = "somewhere";
  CHECK(config_from_json(config_to_json(c)) == c);

  const Json partial = Json::parse(R"({"model": {"kind": "visual"}, "ppo": {"horizon": 256}, "seeds": [4, 5]})");
  const TrainConfig p = config_from_json(partial);
  CHECK(p.model == models::ModelKind::VisualOnly);
  CHECK(p.ppo.horizon == 256);
  CHECK(p.ppo.minibatch_size == defaults.ppo.minibatch_size);
  CHECK(p.seeds == std::vector<std::uint64_t>{4, 5});

  CHECK_THROWS_AS(config_from_json(Json::parse(R"({"modle": {}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(Json::parse(R"({"ppo": {"gama": 0.9}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(Json::parse(R"({"model": {"kind": "bert"}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(Json::parse(R"({"ppo": {"horizon": "long"}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(Json::parse(R"({"seeds": []})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(Json::parse(R"({"seeds": [1, 1]})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(Json::parse(R"({"eval_interval_frames": 10})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(Json::parse(R"({"curriculum": {"episodes_per_number": 55}})")), ConfigError);

  TempDir dir("config");
  CHECK_THROWS_AS(load_config(dir.path() / "missing.json"), IoError);
  write_text(dir.path() / "bad.json", "{ not json");
  CHECK_THROWS_AS(load_config(dir.path() / "bad.json"), ConfigError);
}

TEST_CASE("output directory precedence") {
  TrainConfig c;
  ::unsetenv("NUMBLOCKS_OUT");
  CHECK(resolve_output_dir(std::nullopt, c) == fs::path("runs"));
  ::setenv("NUMBLOCKS_OUT", "from_env", 1);
  CHECK(resolve_output_dir(std::nullopt, c) == fs::path("from_env"));
  c.output_dir = "from_config";
  CHECK(resolve_output_dir(std::nullopt, c) == fs::path("from_config"));
  CHECK(resolve_output_dir("from_flag", c) == fs::path("from_flag"));
  ::unsetenv("NUMBLOCKS_OUT");
}

TEST_CASE("oracle evaluation") {
  std::vector<int> all(999);
  std::iota(all.begin(), all.end(), 1);
  const ppo::ObservationEncoder enc;
  const EvalReport rep = evaluate(ppo::OracleAgent{}, all, enc);
  CHECK(rep.success_rate == 1.0);
  double expect = 0.0;
  for (int n : all) expect += 1.0 + 0.1 * oracles::digit_sum_by_division(n);
  expect /= 999.0;
  CHECK(std::abs(rep.mean_reward - expect) <= 1e-12);
  int total = 0;
  for (int r = 0; r < kNumRanges; ++r) {
    CHECK(rep.ranges[r].start == 100 * r);
    CHECK(rep.ranges[r].end == 100 * r + 99);
    total += rep.ranges[r].n;
  }
  CHECK(rep.ranges[0].n == 99);
  CHECK(total == 999);
  for (const auto& r : rep.results) CHECK(r.steps == 2 * oracles::digit_sum_by_division(r.number));
}

TEST_CASE("timeout evaluation and range buckets") {
  const ppo::ObservationEncoder enc;
  const std::vector<int> one{1};
  const EvalReport rep = evaluate(AlwaysAgent(env::Action::PlaceHundred), one, enc);
  REQUIRE(rep.results.size() == 1);
  CHECK(rep.results[0].reward == -1.0);
  CHECK(rep.results[0].steps == 5);
  CHECK_FALSE(rep.results[0].solved);
  CHECK(rep.success_rate == 0.0);

  const std::vector<int> two{5, 505};
  const EvalReport b = evaluate(ppo::OracleAgent{}, two, enc);
  for (int r = 0; r < kNumRanges; ++r) {
    CHECK(b.ranges[r].n == (r == 0 || r == 5 ? 1 : 0));
    if (b.ranges[r].n == 0) CHECK(std::isnan(b.ranges[r].mean_reward));
  }
  CHECK(b.ranges[0].mean_reward == doctest::Approx(1.5));
  CHECK(b.ranges[5].mean_reward == doctest::Approx(2.0));
}

TEST_CASE("seed aggregation") {
  const std::vector<std::vector<CurvePoint>> two{{{10, 0, 0.0, 0.0}}, {{10, 1, 2.0, 0.0}}};
  const auto s2 = aggregate_seeds(two);
  REQUIRE(s2.size() == 1);
  CHECK(s2[0].mean == 1.0);
  CHECK(std::abs(s2[0].half_width - 0.9542) <= 1e-12);

  const std::vector<std::vector<CurvePoint>> three{{{10, 0, 0.0, 0}}, {{10, 1, 1.0, 0}}, {{10, 2, 2.0, 0}}};
  const auto s3 = aggregate_seeds(three);
  CHECK(s3[0].mean == 1.0);
  CHECK(std::abs(s3[0].half_width - 0.9542 / std::sqrt(3.0)) <= 1e-12);
  CHECK(std::abs(s3[0].half_width - 0.5509) <= 1e-4);
  CHECK(s3[0].n == 3);

  const std::vector<std::vector<CurvePoint>> same{{{5, 0, 0.7, 0}, {9, 0, 0.8, 0}}, {{5, 1, 0.7, 0}, {9, 1, 0.8, 0}}};
  for (const auto& p : aggregate_seeds(same)) CHECK(p.half_width == 0.0);

  const std::vector<std::vector<CurvePoint>> misaligned{{{5, 0, 0.7, 0}}, {{6, 1, 0.7, 0}}};
  CHECK_THROWS_AS(aggregate_seeds(misaligned), DomainError);
  CHECK_THROWS_AS(aggregate_seeds(std::span(two).first(1)), DomainError);
  const auto aligned = align_curves(std::vector<std::vector<CurvePoint>>{{{5, 0, 0, 0}, {6, 0, 1, 0}},
                                                                        {{6, 1, 1, 0}, {7, 1, 2, 0}}});
  CHECK(aligned[0] == std::vector<CurvePoint>{{6, 0, 1, 0}});
  CHECK(aligned[1] == std::vector<CurvePoint>{{6, 1, 1, 0}});
}

TEST_CASE("csv and svg formats") {
  const std::vector<CurvePoint> pts{{32, 3, 0.25, 0.5}, {64, 3, -0.125, 0.0}};
  const std::string curve = curve_csv(pts);
  CHECK(first_line(curve) == "frames,seed,mean_reward,success_rate");
  CHECK(curve.find('\r') == std::string::npos);
  CHECK(curve.back() == '\n');
  CHECK(parse_curve_csv(curve) == pts);

  const EvalReport rep = evaluate(ppo::OracleAgent{}, std::vector<int>{5, 505, 999}, ppo::ObservationEncoder{});
  const std::string ranges = ranges_csv(rep.ranges);
  CHECK(first_line(ranges) == "range_start,range_end,mean_reward,n");
  const auto back = parse_ranges_csv(ranges);
  for (int r = 0; r < kNumRanges; ++r) {
    CHECK(back[r].n == rep.ranges[r].n);
    CHECK(back[r].start == rep.ranges[r].start);
  }
  CHECK(first_line(numbers_csv(rep.results)) == "number,reward,solved,steps");
  CHECK(first_line(aggregate_csv(aggregate_seeds(std::vector<std::vector<CurvePoint>>{pts, pts}))) ==
        "frames,mean_reward,ci_half_width,n");

  const std::vector<std::vector<CurvePoint>> curves{pts};
  CHECK(well_formed_svg(curve_svg(curves, {})));
  CHECK(well_formed_svg(ranges_svg(rep.ranges)));
  const std::vector<std::vector<CurvePoint>> pair{pts, pts};
  const std::string with_band = curve_svg(pair, aggregate_seeds(pair));
  CHECK(well_formed_svg(with_band));
  CHECK(with_band.find("class=\"ci\"") != std::string::npos);
}

TEST_CASE("training run, checkpoint round trip, determinism") {
  const TrainConfig cfg = tiny_config();
  const TrainResult a = train(cfg, 3);
  const TrainResult b = train(cfg, 3);
  CHECK(a.status == RunStatus::Completed);
  CHECK(a.checkpoint.episodes == 9 * 4);
  CHECK(a.curve == b.curve);
  CHECK(checkpoint_to_string(a.checkpoint) == checkpoint_to_string(b.checkpoint));
  for (std::size_t i = 1; i < a.curve.size(); ++i) CHECK(a.curve[i].frames > a.curve[i - 1].frames);
  CHECK(a.curve.back().frames == a.checkpoint.frames);

  const std::string text = checkpoint_to_string(a.checkpoint);
  const Checkpoint loaded = checkpoint_from_string(text);
  CHECK(checkpoint_to_string(loaded) == text);
  CHECK(loaded.model.params == a.checkpoint.model.params);

  TempDir dir("run");
  save_checkpoint(a.checkpoint, dir.path() / "ck.json");
  const Checkpoint from_file = load_checkpoint(dir.path() / "ck.json");
  save_checkpoint(from_file, dir.path() / "ck2.json");
  CHECK(read_text(dir.path() / "ck.json") == read_text(dir.path() / "ck2.json"));

  // Evaluation leaves the checkpoint untouched and agrees with the in-training report.
  const EvalReport ev = evaluate(from_file, curriculum::build_training_set(4));
  CHECK(checkpoint_to_string(from_file) == text);
  CHECK(ev.mean_reward == a.final_eval.mean_reward);

  write_run(dir.path() / "r1", cfg, a);
  write_run(dir.path() / "r2", cfg, b);
  for (const char* f : {"curve.csv", "eval_ranges.csv", "curve.svg", "ranges.svg", "run_meta.json", "checkpoint.json"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(dir.path() / "r1" / f));
    CHECK(read_text(dir.path() / "r1" / f) == read_text(dir.path() / "r2" / f));
  }
  const Json meta = Json::parse(read_text(dir.path() / "r1" / "run_meta.json"));
  CHECK(meta["status"] == "completed");
  CHECK(meta["version"] == std::string(version()));
  CHECK(config_from_json(meta["config"]) == cfg);
}

TEST_CASE("incompatible checkpoints") {
  TrainConfig cfg = tiny_config();
  cfg.max_frames = 32;
  const Checkpoint ck = train(cfg, 3).checkpoint;
  const std::string text = checkpoint_to_string(ck);
  CHECK_THROWS_AS(checkpoint_from_string("{"), IncompatibleCheckpoint);
  CHECK_THROWS_AS(checkpoint_from_string("{}"), IncompatibleCheckpoint);

  Json j = Json::parse(text);
  j["format_version"] = 99;
  CHECK_THROWS_AS(checkpoint_from_string(j.dump()), IncompatibleCheckpoint);

  j = Json::parse(text);
  j["parameters"][0]["value"] = "AAAA";
  CHECK_THROWS_AS(checkpoint_from_string(j.dump()), IncompatibleCheckpoint);

  Checkpoint other_vocab = ck;
  other_vocab.vocabulary.back() = "zebra";
  CHECK_THROWS_AS(check_compatible(other_vocab), IncompatibleCheckpoint);
  CHECK_THROWS_AS(evaluate(other_vocab, std::vector<int>{1}), IncompatibleCheckpoint);

  Checkpoint other_shape = ck;
  other_shape.model.arch.config.hidden = {64, 64};
  CHECK_THROWS_AS(check_compatible(other_shape), IncompatibleCheckpoint);
  CHECK_NOTHROW(check_compatible(ck));
}

TEST_CASE("abort fires at the first evaluation past the threshold") {
  TrainConfig cfg = tiny_config();
  cfg.ppo.value_coef = 0.0;
  cfg.ppo.policy_coef = 0.0;
  cfg.ppo.entropy_coef = 0.0;
  cfg.curriculum.episodes_per_number = 40;
  cfg.abort = AbortRule{100, 2.0};
  const TrainResult res = train(cfg, 3);
  CHECK(res.status == RunStatus::Aborted);
  REQUIRE(!res.curve.empty());
  CHECK(res.curve.back().frames >= 100);
  CHECK(res.curve.back().frames < 100 + cfg.eval_interval_frames + cfg.ppo.horizon);
  for (std::size_t i = 0; i + 1 < res.curve.size(); ++i) CHECK(res.curve[i].frames < 100);
  const models::Model fresh = models::build_model(cfg.model, instr::default_vocabulary(), cfg.model_config, 3);
  CHECK(res.checkpoint.model.params.params()[0].value == fresh.params.params()[0].value);
  CHECK(run_meta(cfg, res)["status"] == "aborted");
}

TEST_CASE("cli") {
  std::string err;
  auto [code, out] = cli({"oracle", "--number", "1", "--trace"});
  CHECK(code == kExitOk);
  CHECK(std::count(out.begin(), out.end(), '\n') == 2);
  CHECK(out.ends_with("reward 1.1 solved\n"));

  std::tie(code, out) = cli({"dataset", "--max-actions", "10", "--which", "train"});
  CHECK(code == kExitOk);
  CHECK(std::count(out.begin(), out.end(), '\n') == 55);
  std::tie(code, out) = cli({"dataset", "--which", "test"});
  CHECK(std::count(out.begin(), out.end(), '\n') == 944);

  std::tie(code, out) = cli({"train"}, &err);
  CHECK(code == kExitUsage);
  CHECK(err.find("--config") != std::string::npos);
  std::tie(code, out) = cli({"dataset", "--bogus"}, &err);
  CHECK(code == kExitUsage);
  CHECK(err.find("Usage") != std::string::npos);
  std::tie(code, out) = cli({"oracle", "--number", "0"}, &err);
  CHECK(code == kExitUsage);
  std::tie(code, out) = cli({}, &err);
  CHECK(code == kExitUsage);
  std::tie(code, out) = cli({"--version"});
  CHECK(code == kExitOk);
  CHECK(out == std::string(version()) + "\n");

  TempDir dir("cli");
  std::tie(code, out) = cli({"train", "--config", (dir.path() / "none.json").string()}, &err);
  CHECK(code == kExitRuntime);

  TrainConfig cfg = tiny_config();
  cfg.seeds = {1, 2};
  write_text(dir.path() / "cfg.json", config_to_json(cfg).dump(2));
  const fs::path runs = dir.path() / "runs";
  std::tie(code, out) =
      cli({"train", "--config", (dir.path() / "cfg.json").string(), "--out", runs.string(), "--model", "visual"}, &err);
  REQUIRE(code == kExitOk);
  for (const char* seed : {"seed_1", "seed_2"}) CHECK(fs::exists(runs / seed / "checkpoint.json"));
  for (const char* f : {"curve.csv", "curve_aggregate.csv", "curve.svg", "eval_ranges.csv", "ranges.svg"})
    CHECK(fs::exists(runs / f));
  const Checkpoint ck = load_checkpoint(runs / "seed_1" / "checkpoint.json");
  CHECK(ck.model.arch.kind == models::ModelKind::VisualOnly);

  std::tie(code, out) = cli({"eval", "--checkpoint", (runs / "seed_1" / "checkpoint.json").string(), "--set", "test",
                             "--out", (dir.path() / "ev").string()});
  CHECK(code == kExitOk);
  CHECK(fs::exists(dir.path() / "ev" / "eval_numbers.csv"));
  CHECK(std::count(out.begin(), out.end(), '\n') == 1 + 1 + kNumRanges);

  std::tie(code, out) = cli({"plot", "--runs", (runs / "seed_1").string(), (runs / "seed_2").string(), "--out",
                             (dir.path() / "plot").string()});
  CHECK(code == kExitOk);
  CHECK(read_text(dir.path() / "plot" / "curve_aggregate.csv") == read_text(runs / "curve_aggregate.csv"));

  std::tie(code, out) = cli({"train", "--config", (dir.path() / "cfg.json").string(), "--curriculum", "sideways"}, &err);
  CHECK(code == kExitUsage);
}
