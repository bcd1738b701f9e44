#pragma once

// Rule-structured multivariate Hawkes data for end-to-end experiments: each
// rule cause -> effect adds weight * g(t - t_cause) to the effect's intensity,
// where g is an exponential or gamma lag density. The rule table doubles as
// ground truth for an oracle cause generator.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "evrank/event.hpp"
#include "evrank/random.hpp"

namespace evrank {

struct LagKernel {
    enum class Kind { exponential, gamma };
    Kind kind = Kind::exponential;
    double rate = 1.0;   // exponential
    double shape = 2.0;  // gamma, >= 1 so the density is bounded
    double scale = 1.0;  // gamma

    double pdf(double lag) const;
    double max_pdf() const;
    double mean() const;
    /// Lags beyond the cutoff are dropped; the mass lost is below 1e-9.
    double cutoff() const;
    void validate() const;
};

struct Rule {
    std::uint32_t cause = 0;
    std::uint32_t effect = 0;
    double weight = 0.5;  // expected number of effects triggered by one cause
    LagKernel lag;
};

struct SyntheticSpec {
    std::vector<std::string> types;  // strictly ascending, so index == vocabulary id
    std::vector<double> base_rates;  // per type, events per day
    std::vector<Rule> rules;
    double horizon = 100.0;          // days
    std::size_t sequences = 100;
    std::uint64_t seed = 1;
    std::string epoch = "2020-01-01";

    void validate() const;
    /// Spectral radius of the expected-offspring matrix; must be < 1.
    double branching_ratio() const;
    /// Rules whose effect is `type`.
    std::vector<Rule> causes_of(std::uint32_t type) const;
};

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
void save_rule_table(const std::filesystem::path& path, const SyntheticSpec& spec);
SyntheticSpec load_rule_table(const std::filesystem::path& path);

/// Ten-ish categorical types: drivers with base rates, effects triggered by
/// drivers after delayed gamma lags, and frequent unrelated distractors.
SyntheticSpec default_synthetic_spec(std::size_t types, std::size_t sequences, double horizon, std::uint64_t seed);

/// Simulates every sequence on [0, horizon) by thinning (categorical schema).
Dataset generate_synthetic(const SyntheticSpec& spec);

/// True intensity of `type` at t given coded history (ids are spec indices).
double synthetic_intensity(const SyntheticSpec& spec, std::span<const CodedEvent> history, std::uint32_t type, double t);

}  // namespace evrank
