#include "evrank/intensity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "evrank/error.hpp"

namespace evrank {

namespace {

constexpr TypeId kEnumerationLimit = TypeId{1} << 22;

double inverse_softplus(double y) {
    return y > 30.0 ? y : std::log(std::expm1(y));
}

struct SurvivalSample {
    double time = 0.0;
    double weight = 0.0;         // interval length / mc, times the type-sampling scale
    std::vector<TypeId> types;   // empty: the full type space
};

// The Monte Carlo survival design shared by every likelihood path, so that
// the evaluator and the tape-based objective consume identical draws.
std::vector<SurvivalSample> survival_design(std::span<const CodedEvent> events, double start, double end,
                                            const LikelihoodOptions& options, TypeId type_count, Rng& rng) {
    if (options.mc_samples == 0) throw Error("likelihood: mc_samples must be at least 1");
    std::vector<double> cuts{start};
    for (const auto& e : events)
        if (e.time > start && e.time < end && e.time > cuts.back()) cuts.push_back(e.time);
    cuts.push_back(end);

    const bool sample_types = options.type_samples > 0 && options.type_samples < type_count;
    if (!sample_types && type_count > kEnumerationLimit)
        throw Error("likelihood: type space of " + std::to_string(type_count) +
                    " types is too large to enumerate; set survival type samples");
    const double type_scale =
        sample_types ? static_cast<double>(type_count) / static_cast<double>(options.type_samples) : 1.0;

    std::vector<SurvivalSample> out;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double lo = cuts[i], hi = cuts[i + 1];
        if (!(hi > lo)) continue;
        for (std::size_t s = 0; s < options.mc_samples; ++s) {
            SurvivalSample sample;
            sample.time = uniform(rng, lo, hi);
            if (!(sample.time > lo)) sample.time = std::nextafter(lo, hi);
            sample.weight = (hi - lo) / static_cast<double>(options.mc_samples) * type_scale;
            if (sample_types)
                for (std::size_t k = 0; k < options.type_samples; ++k)
                    sample.types.push_back(uniform_index(rng, type_count));
            out.push_back(std::move(sample));
        }
    }
    return out;
}

std::vector<std::size_t> events_in_window(std::span<const CodedEvent> events, double start, double end) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < events.size(); ++i)
        if (events[i].time >= start && events[i].time < end) idx.push_back(i);
    return idx;
}

void check_sorted(std::span<const CodedEvent> events) {
    for (std::size_t i = 1; i < events.size(); ++i)
        if (events[i].time < events[i - 1].time) throw Error("events are not sorted by time");
}

}  // namespace

// ------------------------------------------------------------- evaluator

void IntensityEvaluator::intensities(std::span<const TypeId> types, double t, std::span<double> out) {
    for (std::size_t i = 0; i < types.size(); ++i) out[i] = intensity(types[i], t);
}

std::span<const TypeId> IntensityEvaluator::all_types() {
    if (all_.size() != type_count_) {
        if (type_count_ > kEnumerationLimit)
            throw Error("type space of " + std::to_string(type_count_) + " types is too large to enumerate");
        all_.resize(type_count_);
        std::iota(all_.begin(), all_.end(), TypeId{0});
    }
    return all_;
}

double IntensityEvaluator::total_intensity(double t) {
    auto types = all_types();
    std::vector<double> values(types.size());
    intensities(types, t, values);
    return std::accumulate(values.begin(), values.end(), 0.0);
}

double intensity(const IntensityModel& model, std::span<const CodedEvent> history, TypeId type, double t) {
    if (!history.empty() && !(t > history.back().time))
        throw Error("intensity: query time " + std::to_string(t) + " is not after the last history event at " +
                    std::to_string(history.back().time));
    if (type >= model.vocab().type_count()) throw Error("intensity: type id out of range");
    return model.bind(history)->intensity(type, t);
}

double log_likelihood(const IntensityModel& model, std::span<const CodedEvent> events, double start, double end,
                      const LikelihoodOptions& options, Rng& rng) {
    check_sorted(events);
    if (!(end > start)) throw Error("log_likelihood: empty window");
    auto eval = model.bind(events);
    double ll = 0.0;
    for (std::size_t i : events_in_window(events, start, end)) {
        const double lam = eval->intensity(events[i].type, events[i].time);
        if (!(lam > 0.0) || !std::isfinite(lam))
            throw Error("log_likelihood: intensity " + std::to_string(lam) + " at observed event " +
                        std::to_string(i) + " (t=" + std::to_string(events[i].time) + ")");
        ll += std::log(lam);
    }
    const TypeId type_count = model.vocab().type_count();
    for (const auto& s : survival_design(events, start, end, options, type_count, rng)) {
        if (s.types.empty()) {
            ll -= s.weight * eval->total_intensity(s.time);
        } else {
            std::vector<double> lam(s.types.size());
            eval->intensities(s.types, s.time, lam);
            ll -= s.weight * std::accumulate(lam.begin(), lam.end(), 0.0);
        }
    }
    return ll;
}

// ---------------------------------------------------------------- Hawkes

void HawkesParams::validate() const {
    const std::size_t k = mu.size();
    if (k == 0) throw Error("hawkes: no event types");
    if (alpha.size() != k * k) throw Error("hawkes: alpha must be K x K");
    for (double m : mu)
        if (!(m >= 0.0) || !std::isfinite(m)) throw Error("hawkes: mu must be finite and >= 0");
    for (double a : alpha)
        if (!(a >= 0.0) || !std::isfinite(a)) throw Error("hawkes: alpha must be finite and >= 0");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw Error("hawkes: delta must be finite and > 0");
}

HawkesModel::HawkesModel(Vocabulary vocab, const HawkesParams& params) : vocab_(std::move(vocab)) {
    params.validate();
    if (vocab_.type_count() != params.types())
        throw Error("hawkes: parameters cover " + std::to_string(params.types()) + " types, vocabulary has " +
                    std::to_string(vocab_.type_count()));
    k_ = params.types();
    const auto mu = store_.add("log_mu", k_, 1);
    const auto alpha = store_.add("log_alpha", k_, k_);
    const auto delta = store_.add("log_delta", 1, 1);
    auto to_log = [](double x) { return std::log(x); };
    std::transform(params.mu.begin(), params.mu.end(), store_.values(mu).begin(), to_log);
    std::transform(params.alpha.begin(), params.alpha.end(), store_.values(alpha).begin(), to_log);
    store_.values(delta)[0] = std::log(params.delta);
}

HawkesModel HawkesModel::initial(Vocabulary vocab, double event_rate) {
    const std::size_t k = vocab.type_count();
    if (k == 0 || k > 4096) throw Error("hawkes: type space must hold between 1 and 4096 types");
    HawkesParams p;
    p.mu.assign(k, std::max(event_rate, 1e-6) / static_cast<double>(k));
    p.alpha.assign(k * k, 0.1 / static_cast<double>(k));
    p.delta = 1.0;
    return HawkesModel(std::move(vocab), p);
}

HawkesParams HawkesModel::hawkes_params() const {
    HawkesParams p;
    auto v = store_.values();
    p.mu.resize(k_);
    p.alpha.resize(k_ * k_);
    for (std::size_t i = 0; i < k_; ++i) p.mu[i] = std::exp(v[i]);
    for (std::size_t i = 0; i < k_ * k_; ++i) p.alpha[i] = std::exp(v[k_ + i]);
    p.delta = std::exp(v[k_ + k_ * k_]);
    return p;
}

namespace {

class HawkesEvaluator final : public IntensityEvaluator {
public:
    HawkesEvaluator(HawkesParams p, std::span<const CodedEvent> events)
        : IntensityEvaluator(p.types()), p_(std::move(p)), events_(events.begin(), events.end()) {
        mu_total_ = std::accumulate(p_.mu.begin(), p_.mu.end(), 0.0);
        out_total_.assign(p_.types(), 0.0);
        const std::size_t k = p_.types();
        for (std::size_t src = 0; src < k; ++src)
            for (std::size_t dst = 0; dst < k; ++dst) out_total_[src] += p_.alpha[src * k + dst];
    }

    double intensity(TypeId type, double t) override {
        const std::size_t k = p_.types();
        double lam = p_.mu[type];
        for (std::size_t j = count_before(events_, t); j-- > 0;) {
            const double x = p_.delta * (t - events_[j].time);
            if (x > 60.0) break;
            lam += p_.alpha[events_[j].type * k + type] * std::exp(-x);
        }
        return lam;
    }

    // The kernel only decays between events, so the total intensity just
    // after `from` (events at `from` included) bounds the whole interval.
    double upper_bound(double from, double /*to*/) override {
        double b = mu_total_;
        const std::size_t n = count_before(events_, std::nextafter(from, std::numeric_limits<double>::infinity()));
        for (std::size_t j = n; j-- > 0;) {
            const double x = p_.delta * (from - events_[j].time);
            if (x > 60.0) break;
            b += out_total_[events_[j].type] * std::exp(-x);
        }
        return b;
    }

private:
    HawkesParams p_;
    std::vector<CodedEvent> events_;
    double mu_total_ = 0.0;
    std::vector<double> out_total_;
};

}  // namespace

std::unique_ptr<IntensityEvaluator> HawkesModel::bind(std::span<const CodedEvent> events) const {
    check_sorted(events);
    return std::make_unique<HawkesEvaluator>(hawkes_params(), events);
}

double HawkesModel::compensator(std::span<const CodedEvent> events, double start, double end) const {
    const auto p = hawkes_params();
    double total = std::accumulate(p.mu.begin(), p.mu.end(), 0.0) * (end - start);
    for (const auto& e : events) {
        if (!(e.time < end)) break;
        const double u = std::max(start, e.time) - e.time;
        const double d = std::exp(-p.delta * u) - std::exp(-p.delta * (end - e.time));
        for (std::size_t k = 0; k < k_; ++k) total += p.alpha[e.type * k_ + k] * d / p.delta;
    }
    return total;
}

double HawkesModel::objective(std::span<const CodedEvent> events, double start, double end,
                              const LikelihoodOptions& /*options*/, Rng& /*rng*/, std::span<double> grads) const {
    check_sorted(events);
    const auto p = hawkes_params();
    const std::size_t k = k_;
    const bool want = !grads.empty();
    std::vector<double> g_mu(k, 0.0), g_alpha(k * k, 0.0), r(k, 0.0);
    double g_delta = 0.0;
    double ll = 0.0;

    for (std::size_t i : events_in_window(events, start, end)) {
        const TypeId dst = events[i].type;
        const double t = events[i].time;
        double lam = p.mu[dst];
        double slope = 0.0;  // sum alpha * dt * exp(-delta dt)
        std::fill(r.begin(), r.end(), 0.0);
        for (std::size_t j = i; j-- > 0;) {
            const double dt = t - events[j].time;
            if (dt <= 0.0) continue;
            const double x = p.delta * dt;
            if (x > 60.0) break;
            const double e = std::exp(-x);
            const double a = p.alpha[events[j].type * k + dst];
            r[events[j].type] += e;
            lam += a * e;
            slope += a * dt * e;
        }
        if (!(lam > 0.0)) throw Error("hawkes: zero intensity at observed event t=" + std::to_string(t));
        ll += std::log(lam);
        if (want) {
            g_mu[dst] += 1.0 / lam;
            for (std::size_t src = 0; src < k; ++src) g_alpha[src * k + dst] += r[src] / lam;
            g_delta -= slope / lam;
        }
    }

    const double span_len = end - start;
    for (std::size_t dst = 0; dst < k; ++dst) {
        ll -= p.mu[dst] * span_len;
        g_mu[dst] -= span_len;
    }
    for (const auto& e : events) {
        if (!(e.time < end)) break;
        const double u = std::max(start, e.time) - e.time;
        const double v = end - e.time;
        const double eu = std::exp(-p.delta * u), ev = std::exp(-p.delta * v);
        const double d = eu - ev;
        const double dd = -u * eu + v * ev;  // d(d)/d(delta)
        for (std::size_t dst = 0; dst < k; ++dst) {
            const double a = p.alpha[e.type * k + dst];
            ll -= a * d / p.delta;
            g_alpha[e.type * k + dst] -= d / p.delta;
            g_delta -= a * (dd / p.delta - d / (p.delta * p.delta));
        }
    }

    if (want) {
        for (std::size_t i = 0; i < k; ++i) grads[i] += p.mu[i] * g_mu[i];
        for (std::size_t i = 0; i < k * k; ++i) grads[k + i] += p.alpha[i] * g_alpha[i];
        grads[k + k * k] += p.delta * g_delta;
    }
    return ll;
}

nlohmann::json HawkesModel::to_json() const {
    const auto p = hawkes_params();
    return {{"mu", p.mu}, {"alpha", p.alpha}, {"delta", p.delta}};
}

HawkesModel HawkesModel::from_json(const nlohmann::json& j, Vocabulary vocab) {
    HawkesParams p;
    p.mu = j.at("mu").get<std::vector<double>>();
    p.alpha = j.at("alpha").get<std::vector<double>>();
    p.delta = j.at("delta").get<double>();
    return HawkesModel(std::move(vocab), p);
}

// -------------------------------------------------------------- Attentive

EncoderShape AttentiveConfig::encoder_shape(Schema schema) const {
    EncoderShape s;
    s.embed_dim = schema == Schema::structured ? 2 * entity_dim + predicate_dim : category_dim;
    s.time_dim = time_dim;
    s.key_dim = key_dim;
    s.heads = heads;
    s.layers = layers;
    s.time_base = time_base;
    return s;
}

AttentiveModel::AttentiveModel(Vocabulary vocab, AttentiveConfig config, std::uint64_t seed, double event_rate)
    : vocab_(std::move(vocab)), config_(config) {
    if (vocab_.type_count() == 0) throw Error("attentive: empty vocabulary");
    if (vocab_.schema() == Schema::structured) {
        entity_ = store_.add("entity", vocab_.entities().size(), config_.entity_dim);
        predicate_ = store_.add("predicate", vocab_.predicates().size(), config_.predicate_dim);
    } else {
        category_ = store_.add("category", vocab_.categories().size(), config_.category_dim);
    }
    encoder_ = AttentionEncoder(store_, "encoder", config_.encoder_shape(vocab_.schema()));
    head_w_ = store_.add("head.w", 1, encoder_.shape().output_dim());
    head_b_ = store_.add("head.b", 1, 1);
    Rng rng(seed);
    store_.init_uniform(rng, -0.1, 0.1);
    const double per_type = std::max(event_rate, 1e-6) / static_cast<double>(vocab_.type_count());
    store_.values(head_b_)[0] = inverse_softplus(per_type);
}

Var AttentiveModel::base_embedding(Tape& tape, TypeId type) const {
    if (vocab_.schema() == Schema::structured) {
        const auto ids = vocab_.split(type);
        const Var parts[] = {tape.param_row(store_.block(entity_), ids.subject),
                             tape.param_row(store_.block(predicate_), ids.predicate),
                             tape.param_row(store_.block(entity_), ids.object)};
        return tape.concat(parts);
    }
    return tape.param_row(store_.block(category_), static_cast<std::size_t>(type));
}

AttentionEncoder::History AttentiveModel::encode_history(Tape& tape, std::span<const CodedEvent> events) const {
    std::vector<double> times;
    std::vector<Var> base;
    for (const auto& e : events) {
        times.push_back(e.time);
        base.push_back(base_embedding(tape, e.type));
    }
    return encoder_.encode_history(tape, times, base);
}

Var AttentiveModel::intensity_var(Tape& tape, const AttentionEncoder::History& history, std::size_t prefix,
                                  TypeId type, double t) const {
    const Var h = encoder_.embed(tape, history, prefix, base_embedding(tape, type), t);
    const Var z = tape.add(tape.matvec(store_.block(head_w_), h), tape.param(store_.block(head_b_)));
    return tape.softplus(z);
}

std::vector<double> AttentiveModel::embed(std::span<const CodedEvent> history, TypeId type, double t) const {
    check_sorted(history);
    if (!history.empty() && !(history.back().time < t))
        throw Error("embed: history must be strictly before the query time");
    Tape tape(store_);
    const auto hist = encode_history(tape, history);
    const Var h = encoder_.embed(tape, hist, history.size(), base_embedding(tape, type), t);
    auto v = tape.value(h);
    return {v.begin(), v.end()};
}

namespace {

class AttentiveEvaluator final : public IntensityEvaluator {
public:
    AttentiveEvaluator(const AttentiveModel& model, std::span<const CodedEvent> events)
        : IntensityEvaluator(model.vocab().type_count()), model_(model), tape_(model.params()) {
        for (const auto& e : events) times_.push_back(e.time);
        history_ = model_.encode_history(tape_, events);
        mark_ = tape_.mark();
    }

    double intensity(TypeId type, double t) override {
        const std::size_t prefix =
            static_cast<std::size_t>(std::lower_bound(times_.begin(), times_.end(), t) - times_.begin());
        const Var lam = model_.intensity_var(tape_, history_, prefix, type, t);
        const double v = tape_.scalar(lam);
        tape_.rewind(mark_);
        return v;
    }

    double upper_bound(double from, double to) override {
        double m = 0.0;
        for (int i = 1; i <= 16; ++i) m = std::max(m, total_intensity(from + (to - from) * i / 16.0));
        return 2.0 * m;
    }

private:
    const AttentiveModel& model_;
    Tape tape_;
    std::vector<double> times_;
    AttentionEncoder::History history_;
    Tape::Mark mark_;
};

}  // namespace

std::unique_ptr<IntensityEvaluator> AttentiveModel::bind(std::span<const CodedEvent> events) const {
    check_sorted(events);
    return std::make_unique<AttentiveEvaluator>(*this, events);
}

double AttentiveModel::objective(std::span<const CodedEvent> events, double start, double end,
                                 const LikelihoodOptions& options, Rng& rng, std::span<double> grads) const {
    check_sorted(events);
    const std::size_t n = count_before(events, end);
    const auto scored = events_in_window(events, start, end);
    const auto design = survival_design(events, start, end, options, vocab_.type_count(), rng);

    Tape tape(store_);
    const auto hist = encode_history(tape, events.subspan(0, n));
    std::vector<Var> terms;
    for (std::size_t i : scored) {
        const Var lam = intensity_var(tape, hist, count_before(events, events[i].time), events[i].type,
                                      events[i].time);
        const double v = tape.scalar(lam);
        if (!(v > 0.0) || !std::isfinite(v))
            throw Error("attentive: intensity " + std::to_string(v) + " at observed event t=" +
                        std::to_string(events[i].time));
        terms.push_back(tape.log(lam));
    }
    std::vector<TypeId> all;
    for (const auto& s : design) {
        const std::size_t prefix = count_before(events, s.time);
        std::span<const TypeId> types = s.types;
        if (types.empty()) {
            if (all.empty()) {
                all.resize(vocab_.type_count());
                std::iota(all.begin(), all.end(), TypeId{0});
            }
            types = all;
        }
        for (TypeId k : types) terms.push_back(tape.scale(intensity_var(tape, hist, prefix, k, s.time), -s.weight));
    }
    if (terms.empty()) return 0.0;
    const Var ll = tape.sum(terms);
    if (!grads.empty()) tape.backward(ll, grads);
    return tape.scalar(ll);
}

nlohmann::json AttentiveModel::to_json() const {
    return {{"config",
             {{"entity_dim", config_.entity_dim},
              {"predicate_dim", config_.predicate_dim},
              {"category_dim", config_.category_dim},
              {"time_dim", config_.time_dim},
              {"key_dim", config_.key_dim},
              {"heads", config_.heads},
              {"layers", config_.layers},
              {"time_base", config_.time_base}}},
            {"params", store_.to_json()}};
}

AttentiveModel AttentiveModel::from_json(const nlohmann::json& j, Vocabulary vocab) {
    const auto& c = j.at("config");
    AttentiveConfig cfg;
    cfg.entity_dim = c.at("entity_dim").get<std::size_t>();
    cfg.predicate_dim = c.at("predicate_dim").get<std::size_t>();
    cfg.category_dim = c.at("category_dim").get<std::size_t>();
    cfg.time_dim = c.at("time_dim").get<std::size_t>();
    cfg.key_dim = c.at("key_dim").get<std::size_t>();
    cfg.heads = c.at("heads").get<std::size_t>();
    cfg.layers = c.at("layers").get<std::size_t>();
    cfg.time_base = c.at("time_base").get<double>();
    AttentiveModel model(std::move(vocab), cfg, 0, 1.0);
    model.store_.load_json(j.at("params"));
    return model;
}

// --------------------------------------------------------------- training

void TrainConfig::validate() const {
    if (mc_samples_per_interval == 0) throw Error("train: mc_samples_per_interval must be >= 1");
    if (batch_size == 0) throw Error("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw Error("train: learning_rate must be positive");
}

namespace {

struct Prepared {
    std::string id;
    std::vector<CodedEvent> events;
    double start = 0.0, end = 0.0;
    std::size_t scored = 0;
};

std::vector<Prepared> prepare(const IntensityModel& model, std::span<const Sequence> sequences) {
    std::vector<Prepared> out;
    for (const auto& s : sequences) {
        if (!(s.window_end > s.window_start)) continue;
        Prepared p{s.id, encode_events(s, model.vocab()), s.window_start, s.window_end, 0};
        p.scored = events_in_window(p.events, p.start, p.end).size();
        out.push_back(std::move(p));
    }
    return out;
}

double mean_ll(const IntensityModel& model, const std::vector<Prepared>& seqs, const LikelihoodOptions& options,
               std::uint64_t seed) {
    Rng rng(seed);
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& s : seqs) {
        total += model.objective(s.events, s.start, s.end, options, rng, {});
        n += s.scored;
    }
    return total / static_cast<double>(std::max<std::size_t>(n, 1));
}

}  // namespace

double mean_log_likelihood(const IntensityModel& model, std::span<const Sequence> sequences,
                           const LikelihoodOptions& options, std::uint64_t seed) {
    return mean_ll(model, prepare(model, sequences), options, seed);
}

TrainResult train_mle(IntensityModel& model, std::span<const Sequence> train, std::span<const Sequence> dev,
                      const TrainConfig& config) {
    config.validate();
    const auto train_set = prepare(model, train);
    const auto dev_set = prepare(model, dev);
    std::size_t train_events = 0;
    for (const auto& s : train_set) train_events += s.scored;
    if (train_set.empty() || train_events == 0) throw Error("train_mle: the train split has no events");

    const LikelihoodOptions options{config.mc_samples_per_interval, config.survival_type_samples};
    const std::uint64_t eval_seed = config.seed ^ 0x9e3779b97f4a7c15ULL;
    auto& store = model.params();
    auto values = store.values();
    Adam adam(values.size(), config.learning_rate);
    Rng rng(config.seed);

    TrainResult result;
    auto select_score = [&](double train_ll) { return dev_set.empty() ? train_ll : mean_ll(model, dev_set, options, eval_seed); };
    {
        const double tr = mean_ll(model, train_set, options, eval_seed);
        const double dv = select_score(tr);
        result.log.push_back({0, tr, dv});
        result.best_dev_ll = dv;
    }
    std::vector<double> best(values.begin(), values.end());
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> grads(values.size());
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        double epoch_ll = 0.0;
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            std::fill(grads.begin(), grads.end(), 0.0);
            std::size_t batch_events = 0;
            for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
                const auto& s = train_set[order[i]];
                const double ll = model.objective(s.events, s.start, s.end, options, rng, grads);
                if (!std::isfinite(ll))
                    throw Error("train_mle: non-finite log-likelihood " + std::to_string(ll) + " on sequence '" +
                                s.id + "' in epoch " + std::to_string(epoch));
                epoch_ll += ll;
                batch_events += s.scored;
            }
            const double scale = -1.0 / static_cast<double>(std::max<std::size_t>(batch_events, 1));
            for (auto& g : grads) g *= scale;
            adam.step(values, grads);
        }
        const double tr = epoch_ll / static_cast<double>(train_events);
        const double dv = select_score(tr);
        result.log.push_back({epoch, tr, dv});
        if (dv > result.best_dev_ll) {
            result.best_dev_ll = dv;
            result.best_epoch = epoch;
            best.assign(values.begin(), values.end());
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    std::copy(best.begin(), best.end(), values.begin());
    return result;
}

void write_training_log(const std::filesystem::path& path, const TrainResult& result) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write training log " + path.string());
    out.precision(17);
    out << "epoch,train_ll,dev_ll\n";
    for (const auto& e : result.log) out << e.epoch << ',' << e.train_ll << ',' << e.dev_ll << '\n';
}

// ------------------------------------------------------------- checkpoint

nlohmann::json vocab_to_json(const Vocabulary& vocab) {
    return {{"schema", std::string(to_string(vocab.schema()))},
            {"entities", vocab.entities()},
            {"predicates", vocab.predicates()},
            {"categories", vocab.categories()}};
}

Vocabulary vocab_from_json(const nlohmann::json& j) {
    const Schema schema = parse_schema(j.at("schema").get<std::string>());
    if (schema == Schema::structured)
        return Vocabulary(schema, j.at("entities").get<std::vector<std::string>>(),
                          j.at("predicates").get<std::vector<std::string>>());
    return Vocabulary(schema, j.at("categories").get<std::vector<std::string>>());
}

void save_model(const std::filesystem::path& path, const IntensityModel& model) {
    nlohmann::json j{{"format", "evrank-intensity"},
                     {"version", 1},
                     {"kind", model.kind()},
                     {"vocab", vocab_to_json(model.vocab())},
                     {"model", model.to_json()}};
    std::ofstream out(path);
    if (!out) throw Error("cannot write model checkpoint " + path.string());
    out << j.dump(1) << '\n';
}

std::unique_ptr<IntensityModel> load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open model checkpoint " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("model checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    if (j.value("format", "") != "evrank-intensity" || j.value("version", 0) != 1)
        throw Error("model checkpoint " + path.string() + " has an unsupported format/version");
    auto vocab = vocab_from_json(j.at("vocab"));
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "hawkes") return std::make_unique<HawkesModel>(HawkesModel::from_json(j.at("model"), std::move(vocab)));
    if (kind == "attentive")
        return std::make_unique<AttentiveModel>(AttentiveModel::from_json(j.at("model"), std::move(vocab)));
    throw Error("model checkpoint " + path.string() + " has unknown kind '" + kind + "'");
}

}  // namespace evrank
