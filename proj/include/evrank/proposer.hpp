#pragma once

// Candidate predictions from a trained base model: the top-M types at a known
// time, and next-event time proposals drawn by thinning.

#include <optional>
#include <span>
#include <vector>

#include "evrank/intensity.hpp"

namespace evrank {

struct TypeProposal {
    TypeId type = 0;
    double at_time = 0.0;
    double base_intensity = 0.0;
    std::size_t rank = 0;  // 1-based rank under the base model
};

enum class TimeSource { mbr, thinning };
std::string_view to_string(TimeSource source);

struct TimeProposal {
    double time = 0.0;
    TimeSource source = TimeSource::thinning;
};

/// Fixed attributes of the predicted type. Structured types may pin any of
/// subject, predicate and object; categorical types may pin the category.
struct Restriction {
    std::optional<std::uint32_t> subject, predicate, object, category;

    bool empty() const { return !subject && !predicate && !object && !category; }
    bool matches(const Vocabulary& vocab, TypeId type) const;
};

/// Every type id matching `restriction`, ascending.
std::vector<TypeId> candidate_types(const Vocabulary& vocab, const Restriction& restriction);

/// The M matching types with the highest intensity at t, by intensity
/// descending and then ascending id. `evaluator` is bound to the history.
std::vector<TypeProposal> propose_types(IntensityEvaluator& evaluator, const Vocabulary& vocab, double t,
                                        std::size_t m, const Restriction& restriction = {});
std::vector<TypeProposal> propose_types(const IntensityModel& model, std::span<const CodedEvent> history, double t,
                                        std::size_t m, const Restriction& restriction = {});

struct ThinningOptions {
    double lookahead = 1.0;           // length of each bounding interval
    std::size_t max_candidates = 10'000'000;
};

/// One draw of the next event time after `t0` (Ogata thinning). Candidates
/// arrive at the local bound rate B and are kept with probability lambda/B.
double sample_next_time_thinning(IntensityEvaluator& evaluator, double t0, Rng& rng,
                                 const ThinningOptions& options = {});

/// Mean of n thinning draws.
double mbr_time(IntensityEvaluator& evaluator, double t0, std::size_t n_samples, Rng& rng,
                const ThinningOptions& options = {});

/// [MBR estimate, then M-1 independent thinning draws].
std::vector<TimeProposal> propose_times(IntensityEvaluator& evaluator, double t0, std::size_t m,
                                        std::size_t n_samples, Rng& rng, const ThinningOptions& options = {});

}  // namespace evrank
