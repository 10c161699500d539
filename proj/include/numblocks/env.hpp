#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace numblocks::env {

inline constexpr int kMinTarget = 1;
inline constexpr int kMaxTarget = 999;

enum class BlockKind : std::uint8_t { Hundred, Ten, Unit };

inline constexpr std::array<BlockKind, 3> kAllBlockKinds = {BlockKind::Hundred, BlockKind::Ten,
                                                             BlockKind::Unit};

// Place-value column of a block kind: hundreds 0, tens 1, units 2.
constexpr int column(BlockKind kind) { return static_cast<int>(kind); }
constexpr BlockKind block_at_column(int col) { return static_cast<BlockKind>(col); }

enum class Action : std::uint8_t { PickHundred, PickTen, PickUnit, PlaceHundred, PlaceTen, PlaceUnit };

inline constexpr int kNumActions = 6;
inline constexpr std::array<Action, kNumActions> kAllActions = {
    Action::PickHundred,  Action::PickTen,  Action::PickUnit,
    Action::PlaceHundred, Action::PlaceTen, Action::PlaceUnit};

constexpr bool is_pick(Action a) { return static_cast<int>(a) < 3; }
constexpr BlockKind block_of(Action a) { return static_cast<BlockKind>(static_cast<int>(a) % 3); }
constexpr Action pick_action(BlockKind k) { return static_cast<Action>(column(k)); }
constexpr Action place_action(BlockKind k) { return static_cast<Action>(3 + column(k)); }
constexpr int action_index(Action a) { return static_cast<int>(a); }
Action action_from_index(int index);

std::string_view to_string(Action a);
std::string_view to_string(BlockKind k);

enum class RewardMode : std::uint8_t { Dense, Sparse };

enum class Status : std::uint8_t { Running, Solved, Failed };

enum class TerminalReason : std::uint8_t { None, Solved, Misplacement, Overfill, UnneededPick, Timeout };

std::string_view to_string(RewardMode m);
std::string_view to_string(TerminalReason r);
RewardMode reward_mode_from_string(std::string_view s);

struct EnvState {
  int target = 0;
  std::array<int, 3> digits{};  // hundreds, tens, units
  std::array<int, 3> placed{};
  std::optional<BlockKind> carried;
  int steps_taken = 0;
  int step_limit = 1;
  RewardMode reward_mode = RewardMode::Dense;
  Status status = Status::Running;
  TerminalReason reason = TerminalReason::None;

  // Blocks of `kind` still to be placed, not counting a carried one.
  int remaining(BlockKind kind) const { return digits[column(kind)] - placed[column(kind)]; }
  bool running() const { return status == Status::Running; }

  bool operator==(const EnvState&) const = default;
};

struct StepOutcome {
  double reward = 0.0;
  bool done = false;
  TerminalReason reason = TerminalReason::None;

  bool operator==(const StepOutcome&) const = default;
};

inline constexpr double kPlacementReward = 0.1;
inline constexpr double kCompletionReward = 1.0;
inline constexpr double kFailureReward = -1.0;

std::array<int, 3> decimal_digits(int target);
int digit_sum(int target);

// Minimum number of actions that builds `target`: one pick and one place per block.
int optimal_step_count(int target);

EnvState new_episode(int target, RewardMode mode = RewardMode::Dense);

// Pure transition function. Throws UsageError if the episode already ended.
std::pair<EnvState, StepOutcome> step(const EnvState& state, Action action);

// Hundreds-first optimal action. Throws DomainError if the state is not running or cannot be solved.
Action oracle_action(const EnvState& state);

// 3 channels x 10 rows x 3 columns of {0,1}:
//   0: placed stack, (r,c) set iff placed[c] > r
//   1: target digit one-hot, (r,c) set iff digits[c] == r
//   2: carried indicator, column c fully set iff carrying the block of column c
struct GridTensor {
  static constexpr int kChannels = 3;
  static constexpr int kRows = 10;
  static constexpr int kCols = 3;
  static constexpr int kSize = kChannels * kRows * kCols;

  std::array<double, kSize> cells{};

  static constexpr int offset(int channel, int row, int col) { return (channel * kRows + row) * kCols + col; }
  double at(int channel, int row, int col) const { return cells[offset(channel, row, col)]; }
  double& at(int channel, int row, int col) { return cells[offset(channel, row, col)]; }

  bool operator==(const GridTensor&) const = default;
};

// Every running state reachable from new_episode(target, mode), followed by the solved state.
// Failed states are omitted: they repeat the (placed, carried) pair of a running predecessor.
std::vector<EnvState> reachable_states(int target, RewardMode mode = RewardMode::Dense);

GridTensor render_grid(const EnvState& state);

// Human-readable SVG: blue hundreds, pink tens, yellow units, black carried indicator.
std::string render_debug_image(const EnvState& state);

}  // namespace numblocks::env
