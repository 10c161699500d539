#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "numblocks/harness/evaluate.hpp"
#include "numblocks/harness/train.hpp"

namespace numblocks::harness {

// Two-sided 66% normal quantile.
inline constexpr double kZ66 = 0.9542;

std::string_view version();

struct SeriesPoint {
  std::int64_t frames = 0;
  double mean = 0.0;
  double half_width = 0.0;  // kZ66 * s / sqrt(n), s the sample standard deviation
  int n = 0;
};

// Needs at least two values.
SeriesPoint mean_ci(std::span<const double> values);

// One curve per seed, each ordered by frames. Needs >= 2 curves sharing one frame grid.
std::vector<SeriesPoint> aggregate_seeds(std::span<const std::vector<CurvePoint>> curves);

// Drops points whose frame count is missing from any curve.
std::vector<std::vector<CurvePoint>> align_curves(std::span<const std::vector<CurvePoint>> curves);

// Groups rows by seed, keeping the order of first appearance.
std::vector<std::vector<CurvePoint>> split_by_seed(std::span<const CurvePoint> rows);

std::string curve_csv(std::span<const CurvePoint> points);
std::vector<CurvePoint> parse_curve_csv(std::string_view text);
std::string ranges_csv(const std::array<RangeStat, kNumRanges>& ranges);
std::array<RangeStat, kNumRanges> parse_ranges_csv(std::string_view text);
std::string numbers_csv(std::span<const NumberResult> results);
std::string aggregate_csv(std::span<const SeriesPoint> series);

// Line plot of per-seed curves; when `aggregate` is non-empty it is drawn as a mean line with a CI band.
std::string curve_svg(std::span<const std::vector<CurvePoint>> curves, std::span<const SeriesPoint> aggregate);
std::string ranges_svg(const std::array<RangeStat, kNumRanges>& ranges);

Json run_meta(const TrainConfig& cfg, const TrainResult& res);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// curve.csv, eval_ranges.csv, curve.svg, ranges.svg, run_meta.json and checkpoint.json.
void write_run(const std::filesystem::path& dir, const TrainConfig& cfg, const TrainResult& res);

// Multi-seed summary: curve.csv (all seeds), curve_aggregate.csv, curve.svg, and when every run has
// range data, eval_ranges.csv and ranges.svg averaged over runs.
void write_summary(const std::filesystem::path& dir, std::span<const std::vector<CurvePoint>> curves,
                   std::span<const std::array<RangeStat, kNumRanges>> ranges);

}  // namespace numblocks::harness
