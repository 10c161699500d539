#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace numblocks::curriculum {

struct Ascending {};
struct TaskEase {};
struct Descending {};
struct Random {
  std::uint64_t seed = 0;
};

using OrderingStrategy = std::variant<Ascending, TaskEase, Descending, Random>;

std::string to_string(const OrderingStrategy& s);
// Accepts "ascending", "task-ease", "descending", "random"; `seed` is used for "random" only.
OrderingStrategy ordering_from_string(std::string_view name, std::uint64_t seed = 0);

// All n in [1, 999] buildable in at most `max_actions` actions, ascending.
std::vector<int> build_training_set(int max_actions = 10);
// Complement of the training set within [1, 999], ascending.
std::vector<int> build_test_set(int max_actions = 10);

// Permutation of `numbers` under the strategy. TaskEase sorts by optimal step count and, within
// equal cost, interleaves 1-, 2- and 3-digit numbers round-robin (each ascending).
std::vector<int> order(std::span<const int> numbers, const OrderingStrategy& strategy);

// Presents each number for `block_size` consecutive episodes, cycling through the ordered set
// until every number has had `episodes_per_number` episodes.
class CurriculumSchedule {
 public:
  CurriculumSchedule(std::vector<int> ordered_numbers, int block_size = 10, int episodes_per_number = 500);

  const std::vector<int>& numbers() const { return numbers_; }
  int block_size() const { return block_size_; }
  int episodes_per_number() const { return episodes_per_number_; }
  std::int64_t total_episodes() const {
    return static_cast<std::int64_t>(numbers_.size()) * episodes_per_number_;
  }

 private:
  std::vector<int> numbers_;
  int block_size_;
  int episodes_per_number_;
};

// Throws DomainError when episode_index is outside [0, total_episodes).
int schedule_number(const CurriculumSchedule& schedule, std::int64_t episode_index);

}  // namespace numblocks::curriculum
