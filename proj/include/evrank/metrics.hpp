#pragma once

// Evaluation metrics over ranked prediction lists: mean rank, MAP@M and
// MAR@M with j/R pseudo-counts for multi-truth records, and time RMSE, each
// with a percentile bootstrap interval.

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace evrank {

struct EvalRecord {
    std::string query_id;
    std::vector<std::string> ranked;  // best first, no duplicates
    std::vector<std::string> truths;  // at least one; duplicates are ignored
    std::optional<double> true_time;
    std::optional<double> predicted_time;
};

void validate_record(const EvalRecord& record);

/// Metrics consider the first `m` entries of each list (all when nullopt).
/// A ratio with nothing in its denominator is reported as nullopt.
std::optional<double> mean_rank(std::span<const EvalRecord> records, std::optional<std::size_t> m = std::nullopt);
std::optional<double> map_at_m(std::span<const EvalRecord> records, std::size_t m);
double mar_at_m(std::span<const EvalRecord> records, std::size_t m);
double rmse_time(std::span<const EvalRecord> records);

using MetricFn = std::function<std::optional<double>(std::span<const EvalRecord>)>;

struct Interval {
    double low = 0.0;
    double high = 0.0;
};

/// 95% percentile interval over `resamples` record-level resamples; resamples
/// where the metric is undefined are dropped. nullopt when none is defined.
std::optional<Interval> bootstrap_interval(std::span<const EvalRecord> records, const MetricFn& metric,
                                           std::size_t resamples = 1000, std::uint64_t seed = 1,
                                           double level = 0.95);

struct MetricReport {
    std::string method;
    std::string metric;  // mean_rank | map | mar | rmse
    std::optional<double> value;
    std::optional<Interval> ci;
    std::size_t m = 0;  // 0 when the metric does not depend on M
    std::size_t n_records = 0;
};

/// Mean rank, MAP and MAR for every M in `ms`, plus RMSE when every record carries both times.
std::vector<MetricReport> evaluate_records(std::span<const EvalRecord> records, std::span<const std::size_t> ms,
                                           const std::string& method, std::size_t resamples = 1000,
                                           std::uint64_t seed = 1);

nlohmann::json to_json(const MetricReport& report);
MetricReport metric_report_from_json(const nlohmann::json& j);
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricReport> reports);

nlohmann::json to_json(const EvalRecord& record);
EvalRecord eval_record_from_json(const nlohmann::json& j);

}  // namespace evrank
