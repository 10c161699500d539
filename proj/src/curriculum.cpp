#include "numblocks/curriculum.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <random>
#include <set>

#include <fmt/format.h>

#include "numblocks/env.hpp"
#include "numblocks/errors.hpp"

namespace numblocks::curriculum {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

int digit_length(int n) { return n >= 100 ? 3 : (n >= 10 ? 2 : 1); }

std::vector<int> task_ease_order(std::span<const int> numbers) {
  std::map<int, std::array<std::vector<int>, 3>> by_cost;
  for (int n : numbers) by_cost[env::optimal_step_count(n)][digit_length(n) - 1].push_back(n);

  std::vector<int> out;
  out.reserve(numbers.size());
  for (auto& [cost, groups] : by_cost) {
    for (auto& g : groups) std::sort(g.begin(), g.end());
    std::array<std::size_t, 3> cursor{};
    bool progressed = true;
    while (progressed) {
      progressed = false;
      for (std::size_t len = 0; len < 3; ++len) {
        if (cursor[len] < groups[len].size()) {
          out.push_back(groups[len][cursor[len]++]);
          progressed = true;
        }
      }
    }
  }
  return out;
}

}  // namespace

std::string to_string(const OrderingStrategy& s) {
  return std::visit(Overloaded{[](const Ascending&) { return std::string("ascending"); },
                               [](const TaskEase&) { return std::string("task-ease"); },
                               [](const Descending&) { return std::string("descending"); },
                               [](const Random&) { return std::string("random"); }},
                    s);
}

OrderingStrategy ordering_from_string(std::string_view name, std::uint64_t seed) {
  if (name == "ascending") return Ascending{};
  if (name == "task-ease") return TaskEase{};
  if (name == "descending") return Descending{};
  if (name == "random") return Random{seed};
  throw DomainError(
      fmt::format("unknown curriculum ordering '{}' (expected ascending, task-ease, descending or random)", name));
}

std::vector<int> build_training_set(int max_actions) {
  std::vector<int> out;
  for (int n = env::kMinTarget; n <= env::kMaxTarget; ++n) {
    if (env::optimal_step_count(n) <= max_actions) out.push_back(n);
  }
  return out;
}

std::vector<int> build_test_set(int max_actions) {
  std::vector<int> out;
  for (int n = env::kMinTarget; n <= env::kMaxTarget; ++n) {
    if (env::optimal_step_count(n) > max_actions) out.push_back(n);
  }
  return out;
}

std::vector<int> order(std::span<const int> numbers, const OrderingStrategy& strategy) {
  std::vector<int> out(numbers.begin(), numbers.end());
  std::visit(Overloaded{[&](const Ascending&) { std::sort(out.begin(), out.end()); },
                        [&](const Descending&) { std::sort(out.begin(), out.end(), std::greater<>()); },
                        [&](const TaskEase&) { out = task_ease_order(numbers); },
                        [&](const Random& r) {
                          std::sort(out.begin(), out.end());
                          std::mt19937_64 rng(r.seed);
                          std::shuffle(out.begin(), out.end(), rng);
                        }},
             strategy);
  return out;
}

CurriculumSchedule::CurriculumSchedule(std::vector<int> ordered_numbers, int block_size, int episodes_per_number)
    : numbers_(std::move(ordered_numbers)), block_size_(block_size), episodes_per_number_(episodes_per_number) {
  if (numbers_.empty()) throw ConfigError("curriculum needs at least one number");
  if (block_size_ < 1) throw ConfigError("curriculum block_size must be >= 1");
  if (episodes_per_number_ < 1) throw ConfigError("curriculum episodes_per_number must be >= 1");
  if (episodes_per_number_ % block_size_ != 0) {
    throw ConfigError(fmt::format("episodes_per_number ({}) must be a multiple of block_size ({})",
                                  episodes_per_number_, block_size_));
  }
  std::set<int> unique;
  for (int n : numbers_) {
    if (n < env::kMinTarget || n > env::kMaxTarget) {
      throw ConfigError(fmt::format("curriculum number {} outside [1, 999]", n));
    }
    if (!unique.insert(n).second) throw ConfigError(fmt::format("curriculum number {} listed twice", n));
  }
}

int schedule_number(const CurriculumSchedule& schedule, std::int64_t episode_index) {
  if (episode_index < 0 || episode_index >= schedule.total_episodes()) {
    throw DomainError(fmt::format("episode index {} outside [0, {})", episode_index, schedule.total_episodes()));
  }
  const auto& numbers = schedule.numbers();
  const auto block = episode_index / schedule.block_size();
  return numbers[static_cast<std::size_t>(block % static_cast<std::int64_t>(numbers.size()))];
}

}  // namespace numblocks::curriculum
