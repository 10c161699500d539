#include "numblocks/harness/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "numblocks/errors.hpp"

#ifndef NUMBLOCKS_VERSION
#define NUMBLOCKS_VERSION "0.1.0"
#endif

namespace numblocks::harness {

namespace {

constexpr std::string_view kCurveHeader = "frames,seed,mean_reward,success_rate";
constexpr std::string_view kRangesHeader = "range_start,range_end,mean_reward,n";

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

template <class T>
T parse_field(std::string_view s, std::string_view what) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DomainError(fmt::format("cannot parse {} from '{}'", what, s));
  }
  return v;
}

std::vector<std::string_view> csv_rows(std::string_view text, std::string_view header, std::size_t columns) {
  auto lines = lines_of(text);
  if (lines.empty() || lines.front() != header) {
    throw DomainError(fmt::format("expected CSV header '{}'", header));
  }
  lines.erase(lines.begin());
  for (auto line : lines) {
    if (split(line, ',').size() != columns) throw DomainError(fmt::format("malformed CSV row '{}'", line));
  }
  return lines;
}

struct Frame {
  double x0, y0, x1, y1;  // plot area in pixels
  double xmin, xmax, ymin, ymax;

  double x(double v) const { return x0 + (v - xmin) / (xmax - xmin) * (x1 - x0); }
  double y(double v) const { return y1 - (v - ymin) / (ymax - ymin) * (y1 - y0); }
};

constexpr int kWidth = 640;
constexpr int kHeight = 400;

std::string svg_open(std::string_view title) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{3}</text>\n",
      kWidth, kHeight, kWidth / 2, title);
}

std::string axes(const Frame& f, std::string_view xlabel, std::string_view ylabel, bool numeric_x) {
  std::string s;
  s += fmt::format("<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\n");
  s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\"/>\n", f.x0, f.y1, f.x1, f.y1);
  s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\"/>\n", f.x0, f.y0, f.x0, f.y1);
  if (f.ymin < 0.0 && f.ymax > 0.0) {
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#bbbbbb\"/>\n", f.x0,
                     f.y(0.0), f.x1, f.y(0.0));
  }
  s += "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = f.ymin + (f.ymax - f.ymin) * i / 4.0;
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.2f}</text>\n", f.x0 - 6, f.y(v) + 4, v);
  }
  if (numeric_x) {
    for (int i = 0; i <= 4; ++i) {
      const double v = f.xmin + (f.xmax - f.xmin) * i / 4.0;
      s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.0f}</text>\n", f.x(v), f.y1 + 16, v);
    }
  }
  s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", (f.x0 + f.x1) / 2,
                   f.y1 + 34, xlabel);
  s += fmt::format("<text x=\"16\" y=\"{:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1f})\">{}</text>\n",
                   (f.y0 + f.y1) / 2, (f.y0 + f.y1) / 2, ylabel);
  s += "</g>\n";
  return s;
}

std::string points_attr(const Frame& f, const std::vector<std::pair<double, double>>& pts) {
  std::string s;
  for (const auto& [x, y] : pts) {
    if (!s.empty()) s += ' ';
    s += fmt::format("{:.2f},{:.2f}", f.x(x), f.y(y));
  }
  return s;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));
}

}  // namespace

std::string_view version() { return NUMBLOCKS_VERSION; }

SeriesPoint mean_ci(std::span<const double> values) {
  if (values.size() < 2) throw DomainError("confidence interval needs at least two values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double s = std::sqrt(ss / (n - 1.0));
  return {0, mean, kZ66 * s / std::sqrt(n), static_cast<int>(values.size())};
}

std::vector<SeriesPoint> aggregate_seeds(std::span<const std::vector<CurvePoint>> curves) {
  if (curves.size() < 2) throw DomainError(fmt::format("aggregation needs at least two seeds (got {})", curves.size()));
  const auto& ref = curves.front();
  for (const auto& c : curves) {
    bool same = c.size() == ref.size();
    for (std::size_t i = 0; same && i < c.size(); ++i) same = c[i].frames == ref[i].frames;
    if (!same) throw DomainError("seed curves are evaluated at different frame counts");
  }
  std::vector<SeriesPoint> out;
  std::vector<double> values(curves.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    for (std::size_t k = 0; k < curves.size(); ++k) values[k] = curves[k][i].mean_reward;
    SeriesPoint p = mean_ci(values);
    p.frames = ref[i].frames;
    out.push_back(p);
  }
  return out;
}

std::vector<std::vector<CurvePoint>> align_curves(std::span<const std::vector<CurvePoint>> curves) {
  std::map<std::int64_t, std::size_t> count;
  for (const auto& c : curves) {
    std::set<std::int64_t> frames;
    for (const auto& p : c) frames.insert(p.frames);
    for (auto f : frames) ++count[f];
  }
  std::vector<std::vector<CurvePoint>> out;
  for (const auto& c : curves) {
    auto& kept = out.emplace_back();
    for (const auto& p : c) {
      if (count[p.frames] == curves.size()) kept.push_back(p);
    }
  }
  return out;
}

std::vector<std::vector<CurvePoint>> split_by_seed(std::span<const CurvePoint> rows) {
  std::vector<std::vector<CurvePoint>> out;
  std::map<std::uint64_t, std::size_t> slot;
  for (const auto& p : rows) {
    auto [it, fresh] = slot.emplace(p.seed, out.size());
    if (fresh) out.emplace_back();
    out[it->second].push_back(p);
  }
  return out;
}

std::string curve_csv(std::span<const CurvePoint> points) {
  std::string s(kCurveHeader);
  s += '\n';
  for (const auto& p : points) s += fmt::format("{},{},{},{}\n", p.frames, p.seed, p.mean_reward, p.success_rate);
  return s;
}

std::vector<CurvePoint> parse_curve_csv(std::string_view text) {
  std::vector<CurvePoint> out;
  for (auto line : csv_rows(text, kCurveHeader, 4)) {
    const auto f = split(line, ',');
    out.push_back({parse_field<std::int64_t>(f[0], "frames"), parse_field<std::uint64_t>(f[1], "seed"),
                   parse_field<double>(f[2], "mean_reward"), parse_field<double>(f[3], "success_rate")});
  }
  return out;
}

std::string ranges_csv(const std::array<RangeStat, kNumRanges>& ranges) {
  std::string s(kRangesHeader);
  s += '\n';
  for (const auto& r : ranges) s += fmt::format("{},{},{},{}\n", r.start, r.end, r.mean_reward, r.n);
  return s;
}

std::array<RangeStat, kNumRanges> parse_ranges_csv(std::string_view text) {
  const auto rows = csv_rows(text, kRangesHeader, 4);
  if (rows.size() != kNumRanges) throw DomainError(fmt::format("expected {} range rows, got {}", kNumRanges, rows.size()));
  std::array<RangeStat, kNumRanges> out{};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto f = split(rows[i], ',');
    out[i] = {parse_field<int>(f[0], "range_start"), parse_field<int>(f[1], "range_end"),
              parse_field<double>(f[2], "mean_reward"), parse_field<int>(f[3], "n")};
  }
  return out;
}

std::string numbers_csv(std::span<const NumberResult> results) {
  std::string s = "number,reward,solved,steps\n";
  for (const auto& r : results) s += fmt::format("{},{},{},{}\n", r.number, r.reward, r.solved ? 1 : 0, r.steps);
  return s;
}

std::string aggregate_csv(std::span<const SeriesPoint> series) {
  std::string s = "frames,mean_reward,ci_half_width,n\n";
  for (const auto& p : series) s += fmt::format("{},{},{},{}\n", p.frames, p.mean, p.half_width, p.n);
  return s;
}

std::string curve_svg(std::span<const std::vector<CurvePoint>> curves, std::span<const SeriesPoint> aggregate) {
  double xmax = 1.0, ymin = -1.0, ymax = 1.5;
  auto widen = [&](double frames, double lo, double hi) {
    xmax = std::max(xmax, frames);
    if (std::isfinite(lo)) ymin = std::min(ymin, lo);
    if (std::isfinite(hi)) ymax = std::max(ymax, hi);
  };
  for (const auto& c : curves)
    for (const auto& p : c) widen(double(p.frames), p.mean_reward, p.mean_reward);
  for (const auto& p : aggregate) widen(double(p.frames), p.mean - p.half_width, p.mean + p.half_width);
  const Frame f{70, 40, kWidth - 20.0, kHeight - 50.0, 0.0, xmax, ymin, ymax};

  std::string s = svg_open("greedy mean reward on the training set");
  s += axes(f, "frames", "mean reward", true);
  if (!aggregate.empty()) {
    std::vector<std::pair<double, double>> band;
    for (const auto& p : aggregate) band.emplace_back(double(p.frames), p.mean + p.half_width);
    for (auto it = aggregate.rbegin(); it != aggregate.rend(); ++it)
      band.emplace_back(double(it->frames), it->mean - it->half_width);
    s += fmt::format("<polygon class=\"ci\" fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\" points=\"{}\"/>\n",
                     points_attr(f, band));
  }
  for (const auto& c : curves) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : c)
      if (std::isfinite(p.mean_reward)) pts.emplace_back(double(p.frames), p.mean_reward);
    if (pts.empty()) continue;
    s += fmt::format("<polyline class=\"seed\" data-seed=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" "
                     "points=\"{}\"/>\n",
                     c.front().seed, aggregate.empty() ? "#08519c" : "#999999", points_attr(f, pts));
  }
  if (!aggregate.empty()) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : aggregate) pts.emplace_back(double(p.frames), p.mean);
    s += fmt::format("<polyline class=\"mean\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\" points=\"{}\"/>\n",
                     points_attr(f, pts));
  }
  s += "</svg>\n";
  return s;
}

std::string ranges_svg(const std::array<RangeStat, kNumRanges>& ranges) {
  double ymin = -1.0, ymax = 1.0;
  for (const auto& r : ranges) {
    if (r.n == 0 || !std::isfinite(r.mean_reward)) continue;
    ymin = std::min(ymin, r.mean_reward);
    ymax = std::max(ymax, r.mean_reward);
  }
  const Frame f{70, 40, kWidth - 20.0, kHeight - 50.0, 0.0, double(kNumRanges), ymin, ymax};
  std::string s = svg_open("greedy mean reward per number range");
  s += axes(f, "target range", "mean reward", false);
  const double slot = (f.x1 - f.x0) / kNumRanges;
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    const auto& r = ranges[i];
    const double cx = f.x(double(i) + 0.5);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                     "font-size=\"10\">{}-{}</text>\n",
                     cx, f.y1 + 16, r.start, r.end);
    if (r.n == 0 || !std::isfinite(r.mean_reward)) continue;
    const double top = f.y(std::max(r.mean_reward, 0.0));
    const double bottom = f.y(std::min(r.mean_reward, 0.0));
    s += fmt::format("<rect class=\"bar\" x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" "
                     "fill=\"#3182bd\"><title>{}-{}: {} (n={})</title></rect>\n",
                     cx - slot * 0.35, top, slot * 0.7, std::max(bottom - top, 0.5), r.start, r.end, r.mean_reward,
                     r.n);
  }
  s += "</svg>\n";
  return s;
}

Json run_meta(const TrainConfig& cfg, const TrainResult& res) {
  const auto& ck = res.checkpoint;
  Json j;
  j["version"] = version();
  j["status"] = to_string(res.status);
  j["seed"] = ck.seed;
  j["frames"] = ck.frames;
  j["episodes"] = ck.episodes;
  j["updates"] = res.updates;
  j["parameter_count"] = ck.model.params.scalar_count();
  j["final_mean_reward"] = res.final_eval.mean_reward;
  j["final_success_rate"] = res.final_eval.success_rate;
  j["config"] = config_to_json(cfg);
  return j;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_run(const std::filesystem::path& dir, const TrainConfig& cfg, const TrainResult& res) {
  ensure_dir(dir);
  write_text(dir / "curve.csv", curve_csv(res.curve));
  write_text(dir / "eval_ranges.csv", ranges_csv(res.final_eval.ranges));
  const std::vector<std::vector<CurvePoint>> one{res.curve};
  write_text(dir / "curve.svg", curve_svg(one, {}));
  write_text(dir / "ranges.svg", ranges_svg(res.final_eval.ranges));
  write_text(dir / "run_meta.json", run_meta(cfg, res).dump(2) + "\n");
  save_checkpoint(res.checkpoint, dir / "checkpoint.json");
}

void write_summary(const std::filesystem::path& dir, std::span<const std::vector<CurvePoint>> curves,
                   std::span<const std::array<RangeStat, kNumRanges>> ranges) {
  ensure_dir(dir);
  std::vector<CurvePoint> rows;
  for (const auto& c : curves) rows.insert(rows.end(), c.begin(), c.end());
  write_text(dir / "curve.csv", curve_csv(rows));
  const auto aligned = align_curves(curves);
  const auto series = aggregate_seeds(aligned);
  write_text(dir / "curve_aggregate.csv", aggregate_csv(series));
  write_text(dir / "curve.svg", curve_svg(curves, series));
  if (ranges.empty()) return;
  std::array<RangeStat, kNumRanges> mean = ranges.front();
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double sum = 0.0;
    for (const auto& r : ranges) {
      if (r[i].start != mean[i].start || r[i].n != mean[i].n) {
        throw DomainError("runs were evaluated on different number sets");
      }
      sum += r[i].mean_reward;
    }
    mean[i].mean_reward = mean[i].n > 0 ? sum / double(ranges.size()) : std::numeric_limits<double>::quiet_NaN();
  }
  write_text(dir / "eval_ranges.csv", ranges_csv(mean));
  write_text(dir / "ranges.svg", ranges_svg(mean));
}

}  // namespace numblocks::harness
