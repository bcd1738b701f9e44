#include "evrank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "evrank/error.hpp"
#include "evrank/random.hpp"

namespace evrank {

namespace {

std::size_t cutoff(const EvalRecord& r, std::optional<std::size_t> m) {
    return m ? std::min(*m, r.ranked.size()) : r.ranked.size();
}

/// 1-based ranks of the distinct truths found in the first `n` entries, ascending.
std::vector<std::size_t> covered_ranks(const EvalRecord& r, std::size_t n) {
    std::vector<std::size_t> ranks;
    for (std::size_t i = 0; i < n; ++i)
        if (std::find(r.truths.begin(), r.truths.end(), r.ranked[i]) != r.truths.end()) ranks.push_back(i + 1);
    return ranks;
}

std::size_t distinct_truths(const EvalRecord& r) { return std::set<std::string>(r.truths.begin(), r.truths.end()).size(); }

void check_nonempty(std::span<const EvalRecord> records) {
    if (records.empty()) throw Error("metrics: no records");
    for (const auto& r : records) validate_record(r);
}

void check_m(std::size_t m) {
    if (m == 0) throw Error("metrics: M must be at least 1");
}

/// Adds j / R_j for each covered truth to `c`, checking R_j >= j.
void pseudo_count(double& c, const std::vector<std::size_t>& ranks, const std::string& query) {
    for (std::size_t j = 1; j <= ranks.size(); ++j) {
        if (ranks[j - 1] < j) throw Error("metrics: rank below truth index in query '" + query + "'");
        c += static_cast<double>(j) / static_cast<double>(ranks[j - 1]);
    }
}

}  // namespace

void validate_record(const EvalRecord& r) {
    if (r.ranked.empty()) throw Error("record '" + r.query_id + "' has an empty prediction list");
    if (r.truths.empty()) throw Error("record '" + r.query_id + "' has no ground truth");
    std::set<std::string> seen;
    for (const auto& p : r.ranked)
        if (!seen.insert(p).second) throw Error("record '" + r.query_id + "' lists '" + p + "' twice");
}

std::optional<double> mean_rank(std::span<const EvalRecord> records, std::optional<std::size_t> m) {
    check_nonempty(records);
    if (m) check_m(*m);
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& r : records)
        for (std::size_t rank : covered_ranks(r, cutoff(r, m))) {
            total += static_cast<double>(rank);
            ++n;
        }
    if (n == 0) return std::nullopt;
    return total / static_cast<double>(n);
}

std::optional<double> map_at_m(std::span<const EvalRecord> records, std::size_t m) {
    check_nonempty(records);
    check_m(m);
    double c = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
        const auto ranks = covered_ranks(r, cutoff(r, m));
        pseudo_count(c, ranks, r.query_id);
        n += ranks.size();
    }
    if (n == 0) return std::nullopt;
    return c / static_cast<double>(n);
}

double mar_at_m(std::span<const EvalRecord> records, std::size_t m) {
    check_nonempty(records);
    check_m(m);
    double c = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
        pseudo_count(c, covered_ranks(r, cutoff(r, m)), r.query_id);
        n += distinct_truths(r);
    }
    return c / static_cast<double>(n);
}

double rmse_time(std::span<const EvalRecord> records) {
    if (records.empty()) throw Error("metrics: no records");
    double sq = 0.0;
    for (const auto& r : records) {
        if (!r.true_time || !r.predicted_time)
            throw Error("record '" + r.query_id + "' is missing " + (r.true_time ? "a predicted" : "the true") + " time");
        const double d = *r.predicted_time - *r.true_time;
        sq += d * d;
    }
    return std::sqrt(sq / static_cast<double>(records.size()));
}

std::optional<Interval> bootstrap_interval(std::span<const EvalRecord> records, const MetricFn& metric,
                                           std::size_t resamples, std::uint64_t seed, double level) {
    if (records.empty()) throw Error("bootstrap: no records");
    if (!(level > 0.0 && level < 1.0)) throw Error("bootstrap: level must lie in (0, 1)");
    Rng rng(seed);
    std::vector<EvalRecord> sample(records.size());
    std::vector<double> values;
    for (std::size_t b = 0; b < resamples; ++b) {
        for (auto& s : sample) s = records[uniform_index(rng, records.size())];
        if (auto v = metric(sample)) values.push_back(*v);
    }
    if (values.empty()) return std::nullopt;
    std::sort(values.begin(), values.end());
    // Nearest-rank percentiles.
    auto at = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
        return values[std::min(values.size() - 1, idx == 0 ? 0 : idx - 1)];
    };
    const double tail = (1.0 - level) / 2.0;
    return Interval{at(tail), at(1.0 - tail)};
}

std::vector<MetricReport> evaluate_records(std::span<const EvalRecord> records, std::span<const std::size_t> ms,
                                           const std::string& method, std::size_t resamples, std::uint64_t seed) {
    check_nonempty(records);
    std::vector<MetricReport> out;
    auto add = [&](const std::string& name, std::size_t m, const MetricFn& fn) {
        out.push_back({method, name, fn(records), bootstrap_interval(records, fn, resamples, seed), m, records.size()});
    };
    for (std::size_t m : ms) {
        check_m(m);
        add("mean_rank", m, [m](std::span<const EvalRecord> r) { return mean_rank(r, m); });
        add("map", m, [m](std::span<const EvalRecord> r) { return map_at_m(r, m); });
        add("mar", m, [m](std::span<const EvalRecord> r) { return std::optional<double>(mar_at_m(r, m)); });
    }
    const bool timed = std::all_of(records.begin(), records.end(),
                                   [](const EvalRecord& r) { return r.true_time && r.predicted_time; });
    if (timed) add("rmse", 0, [](std::span<const EvalRecord> r) { return std::optional<double>(rmse_time(r)); });
    return out;
}

nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json j{{"method", r.method}, {"metric", r.metric}, {"M", r.m}, {"n_records", r.n_records}};
    j["value"] = r.value ? nlohmann::json(*r.value) : nlohmann::json(nullptr);
    j["ci_low"] = r.ci ? nlohmann::json(r.ci->low) : nlohmann::json(nullptr);
    j["ci_high"] = r.ci ? nlohmann::json(r.ci->high) : nlohmann::json(nullptr);
    return j;
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
    MetricReport r;
    r.method = j.value("method", "");
    r.metric = j.at("metric").get<std::string>();
    r.m = j.at("M").get<std::size_t>();
    r.n_records = j.at("n_records").get<std::size_t>();
    if (!j.at("value").is_null()) r.value = j["value"].get<double>();
    if (!j.at("ci_low").is_null() && !j.at("ci_high").is_null())
        r.ci = Interval{j["ci_low"].get<double>(), j["ci_high"].get<double>()};
    return r;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricReport> reports) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out.precision(10);
    out << "method,metric,M,value,ci_low,ci_high,n_records\n";
    for (const auto& r : reports) {
        out << r.method << ',' << r.metric << ',' << r.m << ',';
        if (r.value) out << *r.value;
        out << ',';
        if (r.ci) out << r.ci->low;
        out << ',';
        if (r.ci) out << r.ci->high;
        out << ',' << r.n_records << '\n';
    }
}

nlohmann::json to_json(const EvalRecord& r) {
    nlohmann::json j{{"query_id", r.query_id}, {"ranked", r.ranked}, {"truths", r.truths}};
    if (r.true_time) j["true_time"] = *r.true_time;
    if (r.predicted_time) j["predicted_time"] = *r.predicted_time;
    return j;
}

EvalRecord eval_record_from_json(const nlohmann::json& j) {
    EvalRecord r;
    r.query_id = j.at("query_id").get<std::string>();
    r.ranked = j.value("ranked", std::vector<std::string>{});
    r.truths = j.value("truths", std::vector<std::string>{});
    if (j.contains("true_time")) r.true_time = j["true_time"].get<double>();
    if (j.contains("predicted_time")) r.predicted_time = j["predicted_time"].get<double>();
    return r;
}

}  // namespace evrank
