#include "evrank/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>

#include "evrank/error.hpp"

namespace evrank {

namespace {

constexpr double kTailMass = 1e-9;

LagKernel::Kind parse_kind(const std::string& s) {
    if (s == "exponential") return LagKernel::Kind::exponential;
    if (s == "gamma") return LagKernel::Kind::gamma;
    throw Error("unknown lag kernel '" + s + "' (expected exponential or gamma)");
}

}  // namespace

double LagKernel::pdf(double lag) const {
    if (lag < 0.0 || lag > cutoff()) return 0.0;
    if (kind == Kind::exponential) return rate * std::exp(-rate * lag);
    if (lag == 0.0) return shape == 1.0 ? 1.0 / scale : 0.0;
    return std::exp((shape - 1.0) * std::log(lag) - lag / scale - std::lgamma(shape) - shape * std::log(scale));
}

double LagKernel::max_pdf() const {
    if (kind == Kind::exponential) return rate;
    return pdf((shape - 1.0) * scale);
}

double LagKernel::mean() const { return kind == Kind::exponential ? 1.0 / rate : shape * scale; }

double LagKernel::cutoff() const {
    if (kind == Kind::exponential) return -std::log(kTailMass) / rate;
    // Gamma tails decay like exp(-x/scale); 25 sd past the mean is far beyond 1e-9.
    return shape * scale + 25.0 * std::sqrt(shape) * scale;
}

void LagKernel::validate() const {
    if (kind == Kind::exponential && !(rate > 0.0 && std::isfinite(rate))) throw Error("lag kernel: rate must be > 0");
    if (kind == Kind::gamma && !(shape >= 1.0 && scale > 0.0 && std::isfinite(shape) && std::isfinite(scale)))
        throw Error("lag kernel: gamma needs shape >= 1 and scale > 0");
}

void SyntheticSpec::validate() const {
    if (types.empty()) throw Error("synthetic: no types");
    for (std::size_t i = 0; i < types.size(); ++i) {
        if (types[i].empty()) throw Error("synthetic: empty type name");
        if (i > 0 && !(types[i - 1] < types[i]))
            throw Error("synthetic: type names must be unique and sorted ('" + types[i - 1] + "', '" + types[i] + "')");
    }
    if (base_rates.size() != types.size()) throw Error("synthetic: need one base rate per type");
    for (double r : base_rates)
        if (!(r >= 0.0) || !std::isfinite(r)) throw Error("synthetic: base rates must be finite and >= 0");
    for (const auto& r : rules) {
        if (r.cause >= types.size() || r.effect >= types.size()) throw Error("synthetic: rule references unknown type");
        if (!(r.weight > 0.0) || !std::isfinite(r.weight)) throw Error("synthetic: rule weight must be > 0");
        r.lag.validate();
    }
    if (!(horizon > 0.0)) throw Error("synthetic: horizon must be positive");
    if (sequences == 0) throw Error("synthetic: sequence count must be positive");
    const double rho = branching_ratio();
    if (!(rho < 1.0))
        throw Error("synthetic: rule table is explosive (branching ratio " + std::to_string(rho) + " >= 1)");
    parse_date(epoch);
}

double SyntheticSpec::branching_ratio() const {
    const std::size_t k = types.size();
    std::vector<double> w(k * k, 0.0);
    for (const auto& r : rules) w[r.cause * k + r.effect] += r.weight;
    // Power iteration on a non-negative matrix; the growth of ||W^n x|| gives the spectral radius.
    std::vector<double> x(k, 1.0), y(k);
    double rho = 0.0;
    for (int it = 0; it < 500; ++it) {
        std::fill(y.begin(), y.end(), 0.0);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) y[j] += x[i] * w[i * k + j];
        double norm = 0.0;
        for (double v : y) norm = std::max(norm, v);
        if (norm == 0.0) return 0.0;
        rho = norm;
        for (std::size_t i = 0; i < k; ++i) x[i] = y[i] / norm + 1e-12;
    }
    return rho;
}

std::vector<Rule> SyntheticSpec::causes_of(std::uint32_t type) const {
    std::vector<Rule> out;
    for (const auto& r : rules)
        if (r.effect == type) out.push_back(r);
    return out;
}

nlohmann::json to_json(const SyntheticSpec& spec) {
    nlohmann::json rules = nlohmann::json::array();
    for (const auto& r : spec.rules) {
        nlohmann::json lag;
        if (r.lag.kind == LagKernel::Kind::exponential)
            lag = {{"kind", "exponential"}, {"rate", r.lag.rate}};
        else
            lag = {{"kind", "gamma"}, {"shape", r.lag.shape}, {"scale", r.lag.scale}};
        rules.push_back({{"cause", spec.types[r.cause]}, {"effect", spec.types[r.effect]}, {"weight", r.weight}, {"lag", lag}});
    }
    return {{"types", spec.types},   {"base_rates", spec.base_rates}, {"rules", rules},
            {"horizon", spec.horizon}, {"sequences", spec.sequences},   {"seed", spec.seed},
            {"epoch", spec.epoch}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.types = j.at("types").get<std::vector<std::string>>();
    s.base_rates = j.at("base_rates").get<std::vector<double>>();
    s.horizon = j.at("horizon").get<double>();
    s.sequences = j.at("sequences").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.epoch = j.value("epoch", s.epoch);
    auto index = [&](const std::string& name) {
        auto it = std::find(s.types.begin(), s.types.end(), name);
        if (it == s.types.end()) throw Error("rule table: unknown type '" + name + "'");
        return static_cast<std::uint32_t>(it - s.types.begin());
    };
    for (const auto& r : j.at("rules")) {
        Rule rule;
        rule.cause = index(r.at("cause").get<std::string>());
        rule.effect = index(r.at("effect").get<std::string>());
        rule.weight = r.at("weight").get<double>();
        const auto& lag = r.at("lag");
        rule.lag.kind = parse_kind(lag.at("kind").get<std::string>());
        if (rule.lag.kind == LagKernel::Kind::exponential) {
            rule.lag.rate = lag.at("rate").get<double>();
        } else {
            rule.lag.shape = lag.at("shape").get<double>();
            rule.lag.scale = lag.at("scale").get<double>();
        }
        s.rules.push_back(rule);
    }
    s.validate();
    return s;
}

void save_rule_table(const std::filesystem::path& path, const SyntheticSpec& spec) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write rule table " + path.string());
    out << to_json(spec).dump(1) << '\n';
}

SyntheticSpec load_rule_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open rule table " + path.string());
    try {
        return synthetic_spec_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw Error("rule table " + path.string() + ": " + e.what());
    }
}

SyntheticSpec default_synthetic_spec(std::size_t types, std::size_t sequences, double horizon, std::uint64_t seed) {
    if (types < 4) throw Error("synthetic: the default layout needs at least 4 types");
    SyntheticSpec s;
    s.horizon = horizon;
    s.sequences = sequences;
    s.seed = seed;
    const std::size_t width = std::max<std::size_t>(2, std::to_string(types - 1).size());
    for (std::size_t i = 0; i < types; ++i) {
        std::string digits = std::to_string(i);
        s.types.push_back("T" + std::string(width - digits.size(), '0') + digits);
    }
    // Roughly 3/10 drivers, 5/10 effects, 2/10 distractors.
    const std::size_t drivers = std::max<std::size_t>(1, (types * 3) / 10);
    const std::size_t distractors = std::max<std::size_t>(1, types / 5);
    const std::size_t effects = types - drivers - distractors;
    Rng rng(seed);
    s.base_rates.assign(types, 0.0);
    for (std::size_t i = 0; i < drivers; ++i) s.base_rates[i] = uniform(rng, 0.08, 0.15);
    for (std::size_t i = drivers; i < drivers + effects; ++i) s.base_rates[i] = 0.01;
    for (std::size_t i = drivers + effects; i < types; ++i) s.base_rates[i] = uniform(rng, 0.12, 0.18);
    // Sharp lags (coefficient of variation 0.09 to 0.13) so that the timing of
    // a cause says a lot about when its effect follows.
    for (std::size_t e = drivers; e < drivers + effects; ++e) {
        const std::size_t n_causes = 1 + (e % 2);
        for (std::size_t c = 0; c < n_causes; ++c) {
            Rule r;
            r.cause = static_cast<std::uint32_t>((e + c * 2) % drivers);
            r.effect = static_cast<std::uint32_t>(e);
            r.weight = 0.9;
            r.lag.kind = LagKernel::Kind::gamma;
            const double mean = uniform(rng, 4.0, 12.0);
            r.lag.shape = uniform(rng, 60.0, 120.0);
            r.lag.scale = mean / r.lag.shape;
            s.rules.push_back(r);
        }
    }
    s.validate();
    return s;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t k = spec.types.size();
    std::vector<std::vector<Rule>> by_cause(k);
    for (const auto& r : spec.rules) by_cause[r.cause].push_back(r);
    std::vector<double> cause_bound(k, 0.0), cause_reach(k, 0.0);
    for (std::size_t c = 0; c < k; ++c)
        for (const auto& r : by_cause[c]) {
            cause_bound[c] += r.weight * r.lag.max_pdf();
            cause_reach[c] = std::max(cause_reach[c], r.lag.cutoff());
        }
    const double mu_total = std::accumulate(spec.base_rates.begin(), spec.base_rates.end(), 0.0);

    Dataset ds;
    ds.schema = Schema::categorical;
    ds.vocab = Vocabulary(Schema::categorical, spec.types);
    ds.epoch = parse_date(spec.epoch);
    Rng rng(spec.seed);
    std::vector<double> lam(k);
    for (std::size_t n = 0; n < spec.sequences; ++n) {
        Sequence seq;
        const std::string digits = std::to_string(n);
        seq.id = "s" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
        seq.window_start = 0.0;
        seq.window_end = spec.horizon;
        std::deque<CodedEvent> active;
        double t = 0.0;
        for (;;) {
            while (!active.empty() && t - active.front().time > cause_reach[active.front().type]) active.pop_front();
            double bound = mu_total;
            for (const auto& e : active) bound += cause_bound[e.type];
            if (bound <= 0.0) break;
            t += exponential(rng, bound);
            if (t >= spec.horizon) break;
            std::copy(spec.base_rates.begin(), spec.base_rates.end(), lam.begin());
            for (const auto& e : active)
                for (const auto& r : by_cause[e.type]) lam[r.effect] += r.weight * r.lag.pdf(t - e.time);
            const double total = std::accumulate(lam.begin(), lam.end(), 0.0);
            if (total > bound * (1.0 + 1e-9)) throw Error("synthetic: thinning bound violated");
            double u = uniform01(rng) * bound;
            if (u >= total) continue;
            std::size_t type = 0;
            while (type + 1 < k && u >= lam[type]) u -= lam[type++];
            seq.events.push_back({t, CategoricalType{spec.types[type]}, std::nullopt});
            if (!by_cause[type].empty()) active.push_back({t, type});
        }
        ds.sequences.push_back(std::move(seq));
    }
    return ds;
}

double synthetic_intensity(const SyntheticSpec& spec, std::span<const CodedEvent> history, std::uint32_t type, double t) {
    double lam = spec.base_rates.at(type);
    for (const auto& r : spec.rules) {
        if (r.effect != type) continue;
        for (const auto& e : history)
            if (e.type == r.cause && e.time < t) lam += r.weight * r.lag.pdf(t - e.time);
    }
    return lam;
}

}  // namespace evrank
