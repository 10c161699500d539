#include "numblocks/env.hpp"

#include <fmt/format.h>

#include "numblocks/errors.hpp"

namespace numblocks::env {

namespace {

void check_target(int target) {
  if (target < kMinTarget || target > kMaxTarget) {
    throw DomainError(fmt::format("target {} outside [{}, {}]", target, kMinTarget, kMaxTarget));
  }
}

void finish(EnvState& s, StepOutcome& out, TerminalReason reason) {
  s.status = reason == TerminalReason::Solved ? Status::Solved : Status::Failed;
  s.reason = reason;
  out.done = true;
  out.reason = reason;
}

constexpr std::array<std::string_view, 3> kColumnColors = {"#3b6fd8", "#e58bb8", "#f2cf3a"};

}  // namespace

Action action_from_index(int index) {
  if (index < 0 || index >= kNumActions) {
    throw DomainError(fmt::format("action index {} outside [0, {})", index, kNumActions));
  }
  return static_cast<Action>(index);
}

std::string_view to_string(Action a) {
  switch (a) {
    case Action::PickHundred: return "pick-hundred";
    case Action::PickTen: return "pick-ten";
    case Action::PickUnit: return "pick-unit";
    case Action::PlaceHundred: return "place-hundred";
    case Action::PlaceTen: return "place-ten";
    case Action::PlaceUnit: return "place-unit";
  }
  return "?";
}

std::string_view to_string(BlockKind k) {
  switch (k) {
    case BlockKind::Hundred: return "hundred";
    case BlockKind::Ten: return "ten";
    case BlockKind::Unit: return "unit";
  }
  return "?";
}

std::string_view to_string(RewardMode m) { return m == RewardMode::Dense ? "dense" : "sparse"; }

RewardMode reward_mode_from_string(std::string_view s) {
  if (s == "dense") return RewardMode::Dense;
  if (s == "sparse") return RewardMode::Sparse;
  throw DomainError(fmt::format("unknown reward mode '{}'", s));
}

std::string_view to_string(TerminalReason r) {
  switch (r) {
    case TerminalReason::None: return "none";
    case TerminalReason::Solved: return "solved";
    case TerminalReason::Misplacement: return "misplacement";
    case TerminalReason::Overfill: return "overfill";
    case TerminalReason::UnneededPick: return "unneeded-pick";
    case TerminalReason::Timeout: return "timeout";
  }
  return "?";
}

std::array<int, 3> decimal_digits(int target) {
  check_target(target);
  return {target / 100, (target / 10) % 10, target % 10};
}

int digit_sum(int target) {
  const auto d = decimal_digits(target);
  return d[0] + d[1] + d[2];
}

int optimal_step_count(int target) { return 2 * digit_sum(target); }

EnvState new_episode(int target, RewardMode mode) {
  EnvState s;
  s.target = target;
  s.digits = decimal_digits(target);
  s.reward_mode = mode;
  // ceil(2.5 * n) in integer arithmetic
  s.step_limit = (5 * optimal_step_count(target) + 1) / 2;
  return s;
}

std::pair<EnvState, StepOutcome> step(const EnvState& state, Action action) {
  if (!state.running()) {
    throw UsageError(fmt::format("step called on a finished episode (target {}, reason {})", state.target,
                                 to_string(state.reason)));
  }
  EnvState s = state;
  StepOutcome out;
  s.steps_taken += 1;
  const BlockKind kind = block_of(action);

  if (is_pick(action)) {
    if (!s.carried) {
      if (s.remaining(kind) > 0) {
        s.carried = kind;
      } else {
        finish(s, out, TerminalReason::UnneededPick);
      }
    }
  } else if (s.carried) {
    const BlockKind held = *s.carried;
    if (held != kind) {
      finish(s, out, TerminalReason::Misplacement);
    } else if (s.remaining(kind) > 0) {
      s.placed[column(kind)] += 1;
      s.carried.reset();
      out.reward = kPlacementReward;
      if (s.placed == s.digits) {
        out.reward += kCompletionReward;
        finish(s, out, TerminalReason::Solved);
      }
    } else {
      finish(s, out, TerminalReason::Overfill);
    }
  }

  if (!out.done && s.steps_taken >= s.step_limit) {
    finish(s, out, TerminalReason::Timeout);
    if (out.reward == 0.0) out.reward = kFailureReward;
  } else if (out.done && out.reason != TerminalReason::Solved) {
    out.reward = kFailureReward;
  }

  if (s.reward_mode == RewardMode::Sparse) {
    if (!out.done) {
      out.reward = 0.0;
    } else {
      out.reward = out.reason == TerminalReason::Solved ? kCompletionReward : kFailureReward;
    }
  }
  return {s, out};
}

Action oracle_action(const EnvState& state) {
  if (!state.running()) {
    throw DomainError(fmt::format("oracle_action on a finished episode (target {})", state.target));
  }
  if (state.carried) {
    if (state.remaining(*state.carried) <= 0) {
      throw DomainError("oracle_action: carried block has no free slot, solution unattainable");
    }
    return place_action(*state.carried);
  }
  for (BlockKind k : kAllBlockKinds) {
    if (state.remaining(k) > 0) return pick_action(k);
  }
  throw DomainError("oracle_action: nothing left to place on a running episode");
}

std::vector<EnvState> reachable_states(int target, RewardMode mode) {
  const EnvState fresh = new_episode(target, mode);
  const auto& d = fresh.digits;
  std::vector<EnvState> out;
  for (int h = 0; h <= d[0]; ++h) {
    for (int t = 0; t <= d[1]; ++t) {
      for (int u = 0; u <= d[2]; ++u) {
        EnvState s = fresh;
        s.placed = {h, t, u};
        if (s.placed == d) continue;
        s.steps_taken = 2 * (h + t + u);
        out.push_back(s);
        for (BlockKind k : kAllBlockKinds) {
          if (s.remaining(k) > 0) {
            EnvState held = s;
            held.carried = k;
            held.steps_taken += 1;
            out.push_back(held);
          }
        }
      }
    }
  }
  EnvState solved = fresh;
  solved.placed = d;
  solved.steps_taken = optimal_step_count(target);
  solved.status = Status::Solved;
  solved.reason = TerminalReason::Solved;
  out.push_back(solved);
  return out;
}

GridTensor render_grid(const EnvState& state) {
  GridTensor g;
  for (int c = 0; c < GridTensor::kCols; ++c) {
    for (int r = 0; r < GridTensor::kRows; ++r) {
      g.at(0, r, c) = state.placed[c] > r ? 1.0 : 0.0;
      g.at(1, r, c) = state.digits[c] == r ? 1.0 : 0.0;
    }
  }
  if (state.carried) {
    const int c = column(*state.carried);
    for (int r = 0; r < GridTensor::kRows; ++r) g.at(2, r, c) = 1.0;
  }
  return g;
}

std::string render_debug_image(const EnvState& state) {
  constexpr int kColW = 60;
  constexpr int kGap = 20;
  constexpr int kBlockH = 18;
  constexpr int kTop = 70;
  constexpr int kColH = kBlockH * 9 + 4;
  constexpr int kWidth = 3 * kColW + 4 * kGap;
  constexpr int kHeight = kTop + kColH + 60;

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "  <rect x=\"0\" y=\"0\" width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "  <text x=\"{2}\" y=\"40\" font-family=\"sans-serif\" font-size=\"32\" text-anchor=\"middle\">{3}</text>\n",
      kWidth, kHeight, kWidth / 2, state.target);

  for (int c = 0; c < 3; ++c) {
    const int x = kGap + c * (kColW + kGap);
    svg += fmt::format(
        "  <rect class=\"column\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"{}\" "
        "stroke-width=\"2\"/>\n",
        x, kTop, kColW, kColH, kColumnColors[c]);
    for (int b = 0; b < state.placed[c]; ++b) {
      const int y = kTop + kColH - 2 - (b + 1) * kBlockH;
      svg += fmt::format(
          "  <rect class=\"block\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#333333\"/>\n",
          x + 4, y, kColW - 8, kBlockH - 2, kColumnColors[c]);
    }
  }
  if (state.carried) {
    const int c = column(*state.carried);
    const int x = kGap + c * (kColW + kGap);
    svg += fmt::format(
        "  <rect class=\"carried\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"20\" fill=\"black\"/>\n", x + kColW / 4,
        kTop + kColH + 20, kColW / 2);
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace numblocks::env
