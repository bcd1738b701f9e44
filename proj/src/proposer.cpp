#include "evrank/proposer.hpp"

#include <algorithm>
#include <cmath>

#include "evrank/error.hpp"

namespace evrank {

std::string_view to_string(TimeSource source) { return source == TimeSource::mbr ? "mbr" : "thinning"; }

bool Restriction::matches(const Vocabulary& vocab, TypeId type) const {
    if (vocab.schema() == Schema::categorical) return !category || *category == type;
    const auto ids = vocab.split(type);
    return (!subject || *subject == ids.subject) && (!predicate || *predicate == ids.predicate) &&
           (!object || *object == ids.object);
}

std::vector<TypeId> candidate_types(const Vocabulary& vocab, const Restriction& r) {
    std::vector<TypeId> out;
    if (vocab.schema() == Schema::categorical) {
        if (r.subject || r.predicate || r.object) throw Error("restriction: categorical types have no subject/predicate/object");
        if (r.category) {
            if (*r.category >= vocab.categories().size()) throw Error("restriction matches no type: unknown category id");
            out.push_back(*r.category);
        } else {
            for (TypeId k = 0; k < vocab.type_count(); ++k) out.push_back(k);
        }
        return out;
    }
    if (r.category) throw Error("restriction: structured types have no category");
    const std::uint32_t ne = static_cast<std::uint32_t>(vocab.entities().size());
    const std::uint32_t np = static_cast<std::uint32_t>(vocab.predicates().size());
    auto range = [](std::optional<std::uint32_t> fixed, std::uint32_t n) {
        return fixed ? std::pair{*fixed, std::min(*fixed + 1, n)} : std::pair{0u, n};
    };
    const auto [s0, s1] = range(r.subject, ne);
    const auto [p0, p1] = range(r.predicate, np);
    const auto [o0, o1] = range(r.object, ne);
    const double count = double(s1 > s0 ? s1 - s0 : 0) * double(p1 > p0 ? p1 - p0 : 0) * double(o1 > o0 ? o1 - o0 : 0);
    if (count > double(1u << 22))
        throw Error("restriction leaves " + std::to_string(static_cast<long long>(count)) +
                    " candidate types; pin more attributes");
    for (std::uint32_t s = s0; s < s1; ++s)
        for (std::uint32_t p = p0; p < p1; ++p)
            for (std::uint32_t o = o0; o < o1; ++o) out.push_back(vocab.join({s, p, o}));
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<TypeProposal> propose_types(IntensityEvaluator& evaluator, const Vocabulary& vocab, double t,
                                        std::size_t m, const Restriction& restriction) {
    if (m == 0) throw Error("propose_types: M must be at least 1");
    const auto cands = candidate_types(vocab, restriction);
    if (cands.empty()) throw Error("propose_types: restriction matches no type");
    std::vector<double> lam(cands.size());
    evaluator.intensities(cands, t, lam);
    std::vector<std::size_t> order(cands.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t keep = std::min(m, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::size_t a, std::size_t b) { return lam[a] != lam[b] ? lam[a] > lam[b] : cands[a] < cands[b]; });
    std::vector<TypeProposal> out;
    for (std::size_t i = 0; i < keep; ++i) out.push_back({cands[order[i]], t, lam[order[i]], i + 1});
    return out;
}

std::vector<TypeProposal> propose_types(const IntensityModel& model, std::span<const CodedEvent> history, double t,
                                        std::size_t m, const Restriction& restriction) {
    if (!history.empty() && !(t > history.back().time))
        throw Error("propose_types: time " + std::to_string(t) + " is not after the history");
    auto ev = model.bind(history);
    return propose_types(*ev, model.vocab(), t, m, restriction);
}

double sample_next_time_thinning(IntensityEvaluator& evaluator, double t0, Rng& rng, const ThinningOptions& options) {
    if (!(options.lookahead > 0.0)) throw Error("thinning: lookahead must be positive");
    double t = t0;
    for (std::size_t n = 0; n < options.max_candidates; ++n) {
        const double horizon = t + options.lookahead;
        const double bound = evaluator.upper_bound(t, horizon);
        if (!std::isfinite(bound) || bound < 0.0)
            throw Error("thinning: invalid intensity bound " + std::to_string(bound) + " at t=" + std::to_string(t));
        if (bound == 0.0) {
            t = horizon;
            continue;
        }
        const double cand = t + exponential(rng, bound);
        if (cand > horizon) {
            t = horizon;
            continue;
        }
        t = cand;
        const double lam = evaluator.total_intensity(t);
        if (lam > bound * (1.0 + 1e-9))
            throw Error("thinning: intensity " + std::to_string(lam) + " exceeds bound " + std::to_string(bound) +
                        " at t=" + std::to_string(t));
        if (uniform01(rng) * bound < lam) return t;
    }
    throw Error("thinning: no event accepted after " + std::to_string(options.max_candidates) + " candidates from t=" +
                std::to_string(t0));
}

double mbr_time(IntensityEvaluator& evaluator, double t0, std::size_t n_samples, Rng& rng,
                const ThinningOptions& options) {
    if (n_samples == 0) throw Error("mbr_time: n_samples must be at least 1");
    double total = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) total += sample_next_time_thinning(evaluator, t0, rng, options);
    return total / static_cast<double>(n_samples);
}

std::vector<TimeProposal> propose_times(IntensityEvaluator& evaluator, double t0, std::size_t m,
                                        std::size_t n_samples, Rng& rng, const ThinningOptions& options) {
    if (m == 0) throw Error("propose_times: M must be at least 1");
    std::vector<TimeProposal> out{{mbr_time(evaluator, t0, n_samples, rng, options), TimeSource::mbr}};
    for (std::size_t i = 1; i < m; ++i)
        out.push_back({sample_next_time_thinning(evaluator, t0, rng, options), TimeSource::thinning});
    return out;
}

}  // namespace evrank
