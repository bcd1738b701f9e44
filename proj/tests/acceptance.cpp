// Acceptance run: one PASS/FAIL line per criterion. Tolerances are the
// constants at the top of each check. Usage: acceptance [N ...] to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "evrank/abduction.hpp"
#include "evrank/error.hpp"
#include "evrank/intensity.hpp"
#include "evrank/metrics.hpp"
#include "evrank/pipeline.hpp"
#include "evrank/proposer.hpp"
#include "evrank/ranker.hpp"
#include "evrank/retrieval.hpp"
#include "evrank/synthetic.hpp"
#include "metric_oracle.hpp"
#include "support.hpp"

using namespace evrank;
using testing_support::central_difference;
using testing_support::letters;
using testing_support::relative_error;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = EVRANK_SOURCE_DIR;

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
        }
    }
    void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

/// Cumulative trapezoid of f on `nodes` equally spaced points over [a, b].
std::vector<double> cumulative_trapezoid(const std::function<double(double)>& f, double a, double b, std::size_t nodes) {
    const double h = (b - a) / static_cast<double>(nodes - 1);
    std::vector<double> out(nodes, 0.0);
    double prev = f(a);
    for (std::size_t i = 1; i < nodes; ++i) {
        const double cur = f(a + h * static_cast<double>(i));
        out[i] = out[i - 1] + 0.5 * h * (prev + cur);
        prev = cur;
    }
    return out;
}

HawkesModel hawkes_model(std::vector<double> mu, std::vector<double> alpha, double delta) {
    HawkesParams p;
    p.mu = std::move(mu);
    p.alpha = std::move(alpha);
    p.delta = delta;
    return HawkesModel(letters(p.mu.size()), p);
}

// ------------------------------------------------------------------ 1

Outcome sampler_law() {
    constexpr int kDraws = 100000;
    constexpr double kMeanTol = 0.02, kKsTol = 0.01, kCpuBudget = 30.0;
    constexpr std::size_t kNodes = 10000;
    Outcome o;
    const double start = cpu_seconds();

    const auto flat = hawkes_model({1.5, 0.5}, {0, 0, 0, 0}, 1.0);
    auto ev = flat.bind({});
    Rng rng(101);
    double sum = 0.0;
    for (int i = 0; i < kDraws; ++i) sum += sample_next_time_thinning(*ev, 2.0, rng) - 2.0;
    const double mean_err = std::abs(sum / kDraws - 0.5) / 0.5;
    o.require(mean_err < kMeanTol, "constant-rate mean");
    o.note(fmt("mean rel err %.4f", mean_err));

    // One prior event, so the intensity decays from mu + alpha toward mu.
    const auto decay = hawkes_model({0.2}, {3.0}, 1.5);
    const std::vector<CodedEvent> hist{{0.0, 0}};
    auto hv = decay.bind(hist);
    std::vector<double> s(kDraws);
    for (auto& x : s) x = sample_next_time_thinning(*hv, 0.0, rng);
    std::sort(s.begin(), s.end());
    const double t_max = 60.0, h = t_max / static_cast<double>(kNodes - 1);
    const auto lam = cumulative_trapezoid([&](double t) { return t == 0.0 ? 3.2 : hv->intensity(0, t); }, 0.0, t_max, kNodes);
    auto cdf = [&](double t) {
        double big;
        if (t >= t_max) {
            big = lam.back() + 0.2 * (t - t_max);
        } else {
            const double u = t / h;
            const auto i = static_cast<std::size_t>(u);
            big = lam[i] + (u - static_cast<double>(i)) * (lam[i + 1] - lam[i]);
        }
        return 1.0 - std::exp(-big);
    };
    double ks = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double f = cdf(s[i]);
        ks = std::max({ks, std::abs(f - double(i) / double(s.size())), std::abs(f - double(i + 1) / double(s.size()))});
    }
    o.require(ks < kKsTol, "hawkes Kolmogorov distance");
    const double cpu = cpu_seconds() - start;
    o.require(cpu < kCpuBudget, "runtime");
    o.note(fmt("KS %.4f; cpu %.2fs", ks, cpu));
    return o;
}

// ------------------------------------------------------------------ 2

Outcome likelihood() {
    constexpr double kMcTol = 0.01, kExact = 1e-12;
    constexpr std::size_t kNodes = 10000;
    Outcome o;
    const auto m = hawkes_model({0.5, 0.5}, {1, 1, 1, 1}, 2.0);
    const std::vector<CodedEvent> fixture{{0.5, 0}, {1.0, 1}, {2.0, 0}};
    auto ev = m.bind(fixture);
    const double T = 4.0;
    const double quad = cumulative_trapezoid([&](double t) { return ev->total_intensity(t); }, 0.0, T, kNodes).back();
    double events = 0.0;
    for (const auto& e : fixture) events += std::log(ev->intensity(e.type, e.time));
    Rng rng(11);
    const double ll = log_likelihood(m, fixture, 0.0, T, {2000, 0}, rng);
    const double err = relative_error(events - ll, quad);
    o.require(err < kMcTol, "MC survival vs quadrature");

    const auto flat = hawkes_model({0.7, 0.7, 0.7}, std::vector<double>(9, 0.0), 1.0);
    const std::vector<CodedEvent> ev2{{0.3, 0}, {1.7, 2}, {1.7, 1}, {4.2, 0}};
    const double got = log_likelihood(flat, ev2, 0.0, 5.0, {4, 0}, rng);
    const double want = 4 * std::log(0.7) - 0.7 * 3 * 5.0;
    o.require(std::abs(got - want) < kExact, "constant-rate LL");
    o.note(fmt("MC rel err %.5f; constant-rate abs err %.2e", err, std::abs(got - want)));
    return o;
}

// ------------------------------------------------------------------ 3

RankerConfig small_ranker() {
    RankerConfig c;
    c.category_dim = 4;
    c.time_dim = 4;
    c.key_dim = 2;
    c.heads = 2;
    c.layers = 2;
    c.hidden = 5;
    c.time_base = 50.0;
    return c;
}

RankTrainItem ranker_item() {
    RankTrainItem item;
    item.positive = {5.0, 0, {{1.0, 1}, {3.5, 2}}};
    item.negatives = {{5.0, 1, {{2.0, 0}}}, {5.0, 2, {}}, {5.0, 1, {{0.5, 2}, {4.0, 1}}}};
    item.noise = {{{2.5, 0, {{1.0, 1}}}, {2.5, 2, {}}}, {{4.2, 1, {{3.0, 2}}}}};
    return item;
}

/// Worst relative error over `probes` random coordinates.
double probe_gradient(ParamStore& store, const std::function<double(std::span<double>)>& f, std::size_t probes,
                      std::uint64_t seed, double h, double floor) {
    auto values = store.values();
    std::vector<double> g(values.size(), 0.0);
    f(g);
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t n = 0; n < probes; ++n) {
        const std::size_t i = uniform_index(rng, values.size());
        const double fd = central_difference(values, i, [&] { return f({}); }, h);
        worst = std::max(worst, relative_error(g[i], fd, floor));
    }
    return worst;
}

Outcome gradients() {
    constexpr std::size_t kProbes = 100;
    constexpr double kTol = 1e-4;
    // Denominator floor: coordinates whose gradient is below this are compared absolutely.
    constexpr double kFloor = 1e-6;
    Outcome o;

    Vocabulary vocab(Schema::structured, {"A", "B", "C"}, {"P", "Q"});
    AttentiveConfig cfg;
    cfg.entity_dim = 4;
    cfg.predicate_dim = 2;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.time_base = 20.0;
    AttentiveModel att(vocab, cfg, 3, 2.0);
    Rng init(8);
    att.params().init_uniform(init, -0.8, 0.8);
    std::vector<CodedEvent> hist;
    Rng hr(21);
    for (int i = 0; i < 7; ++i) hist.push_back({uniform(hr, 0.0, 4.0), static_cast<TypeId>(uniform_index(hr, vocab.type_count()))});
    std::sort(hist.begin(), hist.end(), [](auto& a, auto& b) { return a.time < b.time; });
    const LikelihoodOptions opt{2, 5};
    const double w_att = probe_gradient(
        att.params(),
        [&](std::span<double> g) {
            Rng r(99);
            return att.objective(hist, 0.5, 4.5, opt, r, g);
        },
        kProbes, 1, 1e-5, kFloor);

    RankerModel ranker(letters(3), small_ranker(), 4);
    Rng rinit(9);
    ranker.params().init_uniform(rinit, -0.5, 0.5);
    const auto item = ranker_item();
    const double w_c = probe_gradient(
        ranker.params(),
        [&](std::span<double> g) {
            Tape tape(ranker.params());
            const Var v = ranker.compatibility_var(tape, item.positive);
            if (!g.empty()) tape.backward(v, g);
            return tape.scalar(v);
        },
        kProbes, 2, 1e-6, kFloor);
    const double w_ja = probe_gradient(
        ranker.params(), [&](std::span<double> g) { return j_actual(ranker, item, g); }, kProbes, 3, 1e-6, kFloor);
    const double w_jn = probe_gradient(
        ranker.params(), [&](std::span<double> g) { return j_no(ranker, item.noise, g); }, kProbes, 4, 1e-6, kFloor);

    o.require(w_att < kTol, "attentive");
    o.require(w_c < kTol, "compatibility");
    o.require(w_ja < kTol, "J_actual");
    o.require(w_jn < kTol, "J_no");
    char buf[200];
    std::snprintf(buf, sizeof buf, "worst rel err: attentive %.2e, c %.2e, J_actual %.2e, J_no %.2e", w_att, w_c, w_ja,
                  w_jn);
    o.note(buf);
    return o;
}

// ------------------------------------------------------------------ 4

Outcome simulate_then_fit() {
    constexpr double kRelTol = 0.15;
    constexpr double kMleTol = 1e-12;
    Outcome o;
    const double mu[2] = {0.3, 0.2}, alpha[4] = {0.5, 0.3, 0.2, 0.4}, delta = 1.0, horizon = 50.0;
    SyntheticSpec spec;
    spec.types = {"a", "b"};
    spec.base_rates = {mu[0], mu[1]};
    spec.horizon = horizon;
    spec.sequences = 500;
    spec.seed = 42;
    // An exponential lag with weight alpha / delta and rate delta is the kernel alpha exp(-delta s).
    for (std::uint32_t i = 0; i < 2; ++i)
        for (std::uint32_t j = 0; j < 2; ++j) {
            Rule r;
            r.cause = i;
            r.effect = j;
            r.weight = alpha[i * 2 + j] / delta;
            r.lag.kind = LagKernel::Kind::exponential;
            r.lag.rate = delta;
            spec.rules.push_back(r);
        }
    const auto ds = generate_synthetic(spec);
    auto m = HawkesModel::initial(ds.vocab, double(ds.event_count()) / (horizon * 500.0));
    TrainConfig tc;
    tc.learning_rate = 0.05;
    tc.epochs = 60;
    tc.patience = 60;
    tc.batch_size = 50;
    train_mle(m, ds.sequences, ds.sequences, tc);
    const auto p = m.hawkes_params();
    double worst = std::abs(p.delta - delta) / delta;
    for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(p.mu[k] - mu[k]) / mu[k]);
    for (int k = 0; k < 4; ++k) worst = std::max(worst, std::abs(p.alpha[k] - alpha[k]) / alpha[k]);
    o.require(worst < kRelTol, "hawkes recovery");

    // Constant rate: at mu = count / T the score n / mu - T vanishes.
    Rng rng(5);
    const auto flat = hawkes_model({1.0}, {0.0}, 1.0);
    std::vector<CodedEvent> ev;
    double t = 0.0;
    const double T = 200.0;
    while ((t += exponential(rng, 1.3)) < T) ev.push_back({t, 0});
    const double n = static_cast<double>(ev.size());
    const double mle = n / T;
    auto at = hawkes_model({mle}, {0.0}, 1.0);
    std::vector<double> g(at.params().size(), 0.0);
    const double ll = at.objective(ev, 0.0, T, {}, rng, g);
    const double score = g[at.params().block(at.params().find("log_mu")).offset] / mle;  // d/dmu = (d/dlog mu) / mu
    o.require(std::abs(score) < kMleTol * n, "constant-rate score at count/T");
    o.require(std::abs(ll - (n * std::log(mle) - n)) < kMleTol * n, "constant-rate LL at count/T");
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "worst rel err %.3f (mu %.3f %.3f, alpha %.3f %.3f %.3f %.3f, delta %.3f); score at n/T %.1e", worst,
                  p.mu[0], p.mu[1], p.alpha[0], p.alpha[1], p.alpha[2], p.alpha[3], p.delta, score);
    o.note(buf);
    return o;
}

// ------------------------------------------------------------------ 5

Outcome objective_identities() {
    constexpr double kExact = 1e-12;
    constexpr int kDraws = 10000;
    Outcome o;
    RankerModel model(letters(3), small_ranker(), 7);
    double worst_id = 0.0;
    for (std::size_t m = 1; m <= 10; ++m) {
        const RankCandidate same{5.0, 1, {{2.0, 0}}};
        RankTrainItem item{same, std::vector<RankCandidate>(m, same), {}};
        worst_id = std::max(worst_id, std::abs(j_actual(model, item) + std::log(double(m + 1))));
    }
    o.require(worst_id < kExact, "-log(M+1) under equal scores");

    Rng rng(31);
    double max_j = -1e300;
    for (int d = 0; d < kDraws; ++d) {
        model.params().init_uniform(rng, -2.0, 2.0);
        RankTrainItem item;
        const double t = uniform(rng, 1.0, 10.0);
        auto cand = [&] {
            RankCandidate c{t, static_cast<TypeId>(uniform_index(rng, 3)), {}};
            const std::size_t n = uniform_index(rng, 4);
            for (std::size_t i = 0; i < n; ++i) c.evidence.push_back({uniform(rng, 0.0, t - 0.01), static_cast<TypeId>(uniform_index(rng, 3))});
            std::sort(c.evidence.begin(), c.evidence.end(), [](auto& a, auto& b) { return a.time < b.time; });
            return c;
        };
        item.positive = cand();
        const std::size_t negs = 1 + uniform_index(rng, 6);
        for (std::size_t i = 0; i < negs; ++i) item.negatives.push_back(cand());
        max_j = std::max(max_j, j_actual(model, item));
    }
    o.require(max_j <= 0.0, "J_actual <= 0");

    std::vector<RankTrainItem> with_noise, without;
    for (int i = 0; i < 11; ++i) {
        auto item = ranker_item();
        item.positive.time += 0.1 * i;
        with_noise.push_back(item);
        item.noise.clear();
        without.push_back(item);
    }
    RankerTrainConfig cfg;
    cfg.beta = 0.0;
    cfg.epochs = 4;
    cfg.patience = 100;
    cfg.learning_rate = 0.01;
    RankerModel a(letters(3), small_ranker(), 11), b(letters(3), small_ranker(), 11);
    const auto ra = train_ranker(a, with_noise, {}, cfg);
    const auto rb = train_ranker(b, without, {}, cfg);
    bool same = ra.log.size() == rb.log.size();
    for (std::size_t i = 0; same && i < ra.log.size(); ++i) same = ra.log[i].j_actual == rb.log[i].j_actual;
    const auto va = a.params().values(), vb = b.params().values();
    same = same && std::equal(va.begin(), va.end(), vb.begin(), vb.end());
    o.require(same, "beta = 0 bitwise");
    o.note(fmt("identity err %.1e; max J_actual over draws %.3e", worst_id, max_j));
    o.note(same ? "beta=0 trajectory bitwise equal" : "beta=0 trajectory differs");
    return o;
}

// ------------------------------------------------------------------ 6

Outcome metric_oracles() {
    constexpr int kInstances = 1000;
    Outcome o;
    std::mt19937_64 rng(17);
    int mismatches = 0, mar_drops = 0;
    for (int trial = 0; trial < kInstances; ++trial) {
        const auto records = metric_oracle::random_records(rng, true);
        const std::size_t m = 1 + rng() % 5;
        const auto b = metric_oracle::brute(records, m);
        const auto mr = mean_rank(records, m);
        const auto mp = map_at_m(records, m);
        if (mr.has_value() != (b.rank_n > 0) || mp.has_value() != (b.covered > 0)) ++mismatches;
        if (mr && *mr != b.rank_sum / b.rank_n) ++mismatches;
        if (mp && *mp != b.c / b.covered) ++mismatches;
        if (mar_at_m(records, m) != b.c / b.truths) ++mismatches;
        if (rmse_time(records) != metric_oracle::rmse(records)) ++mismatches;
        double prev = 0.0;
        for (std::size_t k = 1; k <= 5; ++k) {
            const double v = mar_at_m(records, k);
            if (v < prev) ++mar_drops;
            prev = v;
        }
    }
    o.require(mismatches == 0, "exact agreement");
    o.require(mar_drops == 0, "MAR monotone in M");
    o.note(std::to_string(kInstances) + " instances, " + std::to_string(mismatches) + " mismatches, " +
           std::to_string(mar_drops) + " MAR decreases");
    return o;
}

// ------------------------------------------------------------------ 7

Outcome prompt_fidelity() {
    Outcome o;
    const fs::path assets = kSource / "assets/prompts", data = kSource / "tests/data";
    {
        const auto t = load_template(assets / "gdelt/template.txt", assets / "gdelt/demos_p1.txt");
        const Date epoch = parse_date("2022-01-01");
        const Event e{days_between(epoch, parse_date("2022-03-08")) + 0.25, StructuredType{"US", "COOPERATE", "UKRAINE"},
                      std::nullopt};
        o.require(t.demonstrations.size() == 10, "GDELT has 10 demonstrations");
        o.require(build_prompt(t, e, epoch) == slurp(data / "golden_gdelt_10shot.txt"), "GDELT golden bytes");
    }
    {
        const auto t = load_template(assets / "amazon/template.txt", assets / "amazon/demos_p1.txt");
        const Date epoch = parse_date("2013-01-01");
        const Event e{days_between(epoch, parse_date("2013-11-02")), CategoricalType{"Luggage & Travel Gear"}, std::nullopt};
        o.require(t.demonstrations.size() == 8, "Amazon has 8 demonstrations");
        o.require(build_prompt(t, e, epoch) == slurp(data / "golden_amazon_8shot.txt"), "Amazon golden bytes");
    }
    std::size_t blocks = 0;
    for (const auto& [dir, schema] : std::vector<std::pair<std::string, Schema>>{{"gdelt", Schema::structured},
                                                                                 {"amazon", Schema::categorical}}) {
        for (const char* set : {"demos_p1.txt", "demos_p2.txt"}) {
            const auto t = load_template(assets / dir / "template.txt", assets / dir / set);
            for (const auto& demo : t.demonstrations) {
                std::string text;
                for (std::size_t i = 0; i < demo.causes.size(); ++i)
                    text += "cause event " + std::to_string(i + 1) + "\n" + demo.causes[i] + "\n\n";
                const auto first = parse_causes(text, schema);
                const auto second = parse_causes(render_causes(t.labels, first.causes), schema);
                o.require(first.causes.size() == demo.causes.size() && second.causes == first.causes,
                          dir + "/" + set + " round trip");
                blocks += demo.causes.size();
            }
        }
    }
    o.note("golden prompts byte-equal; " + std::to_string(blocks) + " cause blocks round-tripped");
    return o;
}

// ------------------------------------------------------------------ 8

Outcome retrieval() {
    constexpr int kQueries = 10000;
    Outcome o;
    std::mt19937_64 gen(23);
    Rng rng(23);
    const std::vector<std::string> words{"alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"};
    auto word = [&] { return words[gen() % words.size()] + std::to_string(gen() % 3); };
    int causality = 0, monotone = 0, sym = 0, self = 0;
    for (int q = 0; q < kQueries; ++q) {
        std::vector<Event> hist;
        const std::size_t n = gen() % 25;
        for (std::size_t i = 0; i < n; ++i) hist.push_back({std::floor(uniform(rng, 0.0, 20.0) * 4) / 4, CategoricalType{word()}, std::nullopt});
        std::stable_sort(hist.begin(), hist.end(), [](auto& a, auto& b) { return a.time < b.time; });
        HistoryIndex index(hist, SimKind::edit);
        std::vector<std::string> hyps(1 + gen() % 4);
        for (auto& h : hyps) h = word();
        const double t = std::floor(uniform(rng, 0.0, 22.0) * 4) / 4;
        std::set<std::size_t> prev;
        for (std::size_t d = 1; d <= 5; ++d) {
            const auto ev = index.retrieve(hyps, d, t);
            for (const auto& e : ev.events)
                if (!(e.time < t)) ++causality;
            const std::set<std::size_t> cur(ev.history_index.begin(), ev.history_index.end());
            if (!std::includes(cur.begin(), cur.end(), prev.begin(), prev.end())) ++monotone;
            prev = cur;
        }
        const auto a = word() + word(), b = word();
        if (similarity(SimKind::edit, a, b) != similarity(SimKind::edit, b, a)) ++sym;
        if (similarity(SimKind::edit, a, a) != 1.0) ++self;
    }
    o.require(causality == 0, "causality");
    o.require(monotone == 0, "D-monotonicity");
    o.require(sym == 0, "symmetry");
    o.require(self == 0, "sim(a,a) = 1");
    o.note(std::to_string(kQueries) + " queries: " + std::to_string(causality) + " causality violations, " +
           std::to_string(monotone) + " D-monotonicity violations, " + std::to_string(sym + self) +
           " similarity violations");
    return o;
}

// --------------------------------------------------------------- 9, 10

struct EndToEnd {
    fs::path out;
    bool ran = false;
    std::string error;
    double cpu = 0.0, wall = 0.0;
};

EndToEnd& end_to_end() {
    static EndToEnd e;
    if (e.ran) return e;
    e.ran = true;
    e.out = fs::temp_directory_path() / "evrank_acceptance_run";
    fs::remove_all(e.out);
    try {
        auto config = Config::load(kSource / "configs/synthetic.cfg");
        config.set("out", e.out.string());
        const double c0 = cpu_seconds();
        const auto w0 = std::chrono::steady_clock::now();
        for (const auto& r : run_all(config))
            for (const auto& line : r.lines) std::printf("    %s\n", line.c_str());
        e.cpu = cpu_seconds() - c0;
        e.wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - w0).count();
    } catch (const std::exception& ex) {
        e.error = ex.what();
    }
    return e;
}

Outcome directional() {
    constexpr double kMinGain = 0.10;
    constexpr std::size_t kM = 5;
    constexpr double kCpuBudget = 600.0;
    Outcome o;
    const auto& e = end_to_end();
    if (!e.error.empty()) {
        o.require(false, "pipeline: " + e.error);
        return o;
    }
    const auto metrics = nlohmann::json::parse(slurp(e.out / "metrics.json"));
    std::optional<MetricReport> base, reranked;
    for (const auto& j : metrics["reports"]) {
        const auto r = metric_report_from_json(j);
        if (r.metric != "mean_rank" || r.m != kM) continue;
        (r.method == "base" ? base : reranked) = r;
    }
    if (!base || !reranked || !base->value || !reranked->value || !base->ci || !reranked->ci) {
        o.require(false, "mean_rank@5 present for both methods");
        return o;
    }
    const double gain = (*base->value - *reranked->value) / *base->value;
    o.require(gain >= kMinGain, "relative mean-rank reduction >= 10%");
    o.require(reranked->ci->high < base->ci->low, "non-overlapping 95% intervals");
    o.require(e.cpu < kCpuBudget, "runtime");
    char buf[300];
    std::snprintf(buf, sizeof buf,
                  "mean rank@5 base %.4f [%.4f, %.4f] vs reranked %.4f [%.4f, %.4f]; gain %.1f%%; cpu %.0fs",
                  *base->value, base->ci->low, base->ci->high, *reranked->value, reranked->ci->low, reranked->ci->high,
                  100.0 * gain, e.cpu);
    o.note(buf);
    return o;
}

Outcome cache_economics() {
    Outcome o;
    const auto& e = end_to_end();
    if (!e.error.empty()) {
        o.require(false, "pipeline: " + e.error);
        return o;
    }
    auto config = Config::load(kSource / "configs/synthetic.cfg");
    config.set("out", e.out.string());
    const auto path = e.out / "abduction/hypotheses.jsonl";
    const auto before = slurp(path);
    const auto r = run_stage(Stage::abduce, config);
    o.require(r.backend_calls == 0, "zero backend calls");
    o.require(slurp(path) == before, "byte-identical hypotheses");
    o.note(std::to_string(r.backend_calls) + " backend calls on rerun; " + std::to_string(before.size()) +
           " bytes unchanged");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
        {"sampler law", sampler_law},
        {"likelihood", likelihood},
        {"gradients", gradients},
        {"simulate-then-fit", simulate_then_fit},
        {"objective identities", objective_identities},
        {"metric oracles", metric_oracles},
        {"prompt fidelity", prompt_fidelity},
        {"retrieval", retrieval},
        {"end-to-end directional", directional},
        {"cache economics", cache_economics},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i + 1);
        if (!only.empty() && !only.count(n)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        failed += o.pass ? 0 : 1;
        std::printf("criterion %2d %-24s %s  %s\n", n, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
