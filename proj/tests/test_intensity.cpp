#include <cmath>
#include <numeric>

#include "doctest.h"
#include "evrank/error.hpp"
#include "evrank/intensity.hpp"
#include "evrank/synthetic.hpp"
#include "support.hpp"

using namespace evrank;
using testing_support::central_difference;
using testing_support::letters;
using testing_support::relative_error;

namespace {

HawkesModel fixture_hawkes() {
    HawkesParams p;
    p.mu = {0.5, 0.5};
    p.alpha = {1.0, 1.0, 1.0, 1.0};
    p.delta = 2.0;
    return HawkesModel(letters(2), p);
}

const std::vector<CodedEvent> kFixture{{0.5, 0}, {1.0, 1}, {2.0, 0}};

double trapezoid(const std::function<double(double)>& f, double a, double b, std::size_t nodes) {
    const double h = (b - a) / static_cast<double>(nodes - 1);
    double s = 0.5 * (f(a) + f(b));
    for (std::size_t i = 1; i + 1 < nodes; ++i) s += f(a + h * static_cast<double>(i));
    return s * h;
}

std::vector<CodedEvent> random_history(Rng& rng, std::size_t n, TypeId k, double t_max) {
    std::vector<CodedEvent> h;
    for (std::size_t i = 0; i < n; ++i) h.push_back({uniform(rng, 0.0, t_max), uniform_index(rng, k)});
    std::sort(h.begin(), h.end(), [](auto& a, auto& b) { return a.time < b.time; });
    return h;
}

}  // namespace

TEST_CASE("hawkes closed forms") {
    HawkesParams p;
    p.mu = {0.5};
    p.alpha = {1.0};
    p.delta = 2.0;
    HawkesModel m(letters(1), p);
    CHECK(intensity(m, {}, 0, 3.0) == doctest::Approx(0.5).epsilon(1e-15));
    const std::vector<CodedEvent> one{{1.0, 0}};
    CHECK(intensity(m, one, 0, 2.0) == doctest::Approx(0.5 + std::exp(-2.0)).epsilon(1e-14));
    CHECK(intensity(m, one, 0, 2.0) == doctest::Approx(0.6353).epsilon(1e-4));
    CHECK_THROWS_AS(intensity(m, one, 0, 1.0), Error);
    CHECK_THROWS_AS(intensity(m, one, 0, 0.5), Error);
}

TEST_CASE("constant rate likelihood is analytic") {
    HawkesParams p;
    p.mu = {0.7, 0.7, 0.7};
    p.alpha.assign(9, 0.0);
    HawkesModel m(letters(3), p);
    Rng rng(3);
    const std::vector<CodedEvent> ev{{0.3, 0}, {1.7, 2}, {1.7, 1}, {4.2, 0}};
    const double ll = log_likelihood(m, ev, 0.0, 5.0, {4, 0}, rng);
    CHECK(std::abs(ll - (4 * std::log(0.7) - 0.7 * 3 * 5.0)) < 1e-12);
    CHECK(std::abs(m.objective(ev, 0.0, 5.0, {}, rng, {}) - ll) < 1e-12);
    const double empty = log_likelihood(m, {}, 0.0, 5.0, {1, 0}, rng);
    CHECK(std::abs(empty + 0.7 * 3 * 5.0) < 1e-12);
}

TEST_CASE("monte carlo survival matches quadrature on the hawkes fixture") {
    const auto m = fixture_hawkes();
    auto ev = m.bind(kFixture);
    const double T = 4.0;
    const double quad = trapezoid([&](double t) { return ev->total_intensity(t); }, 0.0, T, 10000);
    CHECK(relative_error(quad, m.compensator(kFixture, 0.0, T)) < 1e-3);
    double events = 0.0;
    for (const auto& e : kFixture) events += std::log(ev->intensity(e.type, e.time));
    Rng rng(11);
    const double ll = log_likelihood(m, kFixture, 0.0, T, {2000, 0}, rng);
    CHECK(relative_error(events - ll, quad) < 0.01);
    // The closed-form objective agrees with the exact compensator.
    CHECK(std::abs(m.objective(kFixture, 0.0, T, {}, rng, {}) - (events - m.compensator(kFixture, 0.0, T))) < 1e-12);
}

TEST_CASE("zero intensity at an observed event is an error") {
    HawkesParams p;
    p.mu = {0.0, 1.0};
    p.alpha = {0.0, 0.0, 0.0, 0.0};
    HawkesModel m(letters(2), p);
    Rng rng(1);
    const std::vector<CodedEvent> ev{{1.0, 0}};
    CHECK_THROWS_AS(log_likelihood(m, ev, 0.0, 2.0, {}, rng), Error);
}

TEST_CASE("hawkes gradients match finite differences") {
    HawkesParams p;
    p.mu = {0.4, 0.9, 0.2};
    p.alpha = {0.3, 0.1, 0.5, 0.2, 0.6, 0.1, 0.05, 0.3, 0.2};
    p.delta = 1.3;
    HawkesModel m(letters(3), p);
    Rng rng(5);
    const auto hist = random_history(rng, 12, 3, 6.0);
    std::vector<double> g(m.params().size(), 0.0);
    m.objective(hist, 1.0, 6.5, {}, rng, g);
    auto values = m.params().values();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double fd = central_difference(values, i, [&] { return m.objective(hist, 1.0, 6.5, {}, rng, {}); });
        CHECK(relative_error(g[i], fd) < 1e-6);
    }
}

TEST_CASE("attentive encoder properties") {
    const auto vocab = letters(4);
    AttentiveConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    AttentiveModel m(vocab, cfg, 7, 1.0);
    SUBCASE("empty history leaves every layer at the layer-0 embedding") {
        const auto e = m.embed({}, 2, 1.5);
        const std::size_t d = m.encoder().shape().embed_dim;
        REQUIRE(e.size() == d * 3);
        for (std::size_t l = 1; l <= 2; ++l)
            for (std::size_t i = 0; i < d; ++i) CHECK(e[l * d + i] == e[i]);
    }
    SUBCASE("appending a future event leaves the encoding unchanged") {
        Rng rng(2);
        auto hist = random_history(rng, 8, 4, 5.0);
        const auto before = m.embed(hist, 1, 5.5);
        auto eval = m.bind(hist);
        const double lam = eval->intensity(1, 5.5);
        hist.push_back({6.0, 3});
        CHECK(m.bind(hist)->intensity(1, 5.5) == lam);
        hist.pop_back();
        CHECK(m.embed(hist, 1, 5.5) == before);
    }
    SUBCASE("intensity is positive across random draws") {
        Rng rng(9);
        std::size_t positive = 0;
        for (int i = 0; i < 1000; ++i) {
            const auto hist = random_history(rng, uniform_index(rng, 12), 4, 10.0);
            const double t = (hist.empty() ? 0.0 : hist.back().time) + uniform(rng, 1e-6, 3.0);
            const double lam = intensity(m, hist, uniform_index(rng, 4), t);
            positive += (lam > 0.0 && std::isfinite(lam));
        }
        CHECK(positive == 1000);
    }
    SUBCASE("tied events can be reordered without changing the likelihood") {
        const std::vector<CodedEvent> a{{0.5, 0}, {1.0, 1}, {1.0, 2}, {1.0, 3}, {2.0, 1}};
        const std::vector<CodedEvent> b{{0.5, 0}, {1.0, 3}, {1.0, 1}, {1.0, 2}, {2.0, 1}};
        Rng r1(4), r2(4);
        CHECK(std::abs(log_likelihood(m, a, 0.0, 3.0, {3, 0}, r1) - log_likelihood(m, b, 0.0, 3.0, {3, 0}, r2)) < 1e-12);
    }
}

TEST_CASE("attentive objective equals the generic likelihood and its gradients match finite differences") {
    Vocabulary vocab(Schema::structured, {"A", "B", "C"}, {"P", "Q"});
    AttentiveConfig cfg;
    cfg.entity_dim = 4;
    cfg.predicate_dim = 2;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.time_base = 20.0;
    AttentiveModel m(vocab, cfg, 3, 2.0);
    Rng init(8);
    m.params().init_uniform(init, -0.8, 0.8);
    Rng rng(21);
    const auto hist = random_history(rng, 7, vocab.type_count(), 4.0);
    const LikelihoodOptions opt{2, 5};
    Rng a(99), b(99);
    const double generic = log_likelihood(m, hist, 0.5, 4.5, opt, a);
    const double tape = m.objective(hist, 0.5, 4.5, opt, b, {});
    CHECK(std::abs(generic - tape) < 1e-10 * std::max(1.0, std::abs(generic)));

    std::vector<double> g(m.params().size(), 0.0);
    Rng c(99);
    m.objective(hist, 0.5, 4.5, opt, c, g);
    auto values = m.params().values();
    Rng probe(1234);
    std::size_t bad = 0;
    for (int n = 0; n < 100; ++n) {
        const std::size_t i = uniform_index(probe, values.size());
        const double fd = central_difference(values, i, [&] {
            Rng d(99);
            return m.objective(hist, 0.5, 4.5, opt, d, {});
        });
        if (relative_error(g[i], fd) >= 1e-4) ++bad;
    }
    CHECK(bad == 0);
}

TEST_CASE("constant rate mle is count over window") {
    SyntheticSpec spec;
    spec.types = {"a"};
    spec.base_rates = {2.0};
    spec.horizon = 20.0;
    spec.sequences = 50;
    spec.seed = 17;
    const auto ds = generate_synthetic(spec);
    const double n = static_cast<double>(ds.event_count());
    const double exposure = spec.horizon * static_cast<double>(spec.sequences);

    // The analytic log-likelihood n log mu - mu T peaks at n / T.
    auto ll = [&](double mu) { return n * std::log(mu) - mu * exposure; };
    const double mle = n / exposure;
    CHECK(ll(mle) > ll(mle * 1.001));
    CHECK(ll(mle) > ll(mle * 0.999));

    auto m = HawkesModel::initial(ds.vocab, 1.0);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 150;
    cfg.patience = 150;
    cfg.batch_size = 50;
    const auto res = train_mle(m, ds.sequences, ds.sequences, cfg);
    // At the optimum the expected count equals the observed count.
    double comp = 0.0;
    for (const auto& s : ds.sequences) comp += m.compensator(encode_events(s, ds.vocab), 0.0, spec.horizon);
    CHECK(relative_error(comp, n) < 0.01);
    CHECK(relative_error(m.hawkes_params().mu[0], mle) < 0.1);
    CHECK(res.best_dev_ll >= res.log.front().dev_ll);
}

TEST_CASE("checkpoint round trip") {
    const auto path = std::filesystem::temp_directory_path() / "evrank_ckpt_test.json";
    AttentiveModel a(letters(3), {}, 5, 1.0);
    save_model(path, a);
    const auto b = load_model(path);
    CHECK(b->kind() == "attentive");
    const std::vector<CodedEvent> hist{{0.2, 0}, {1.0, 2}};
    CHECK(intensity(a, hist, 1, 1.5) == intensity(*b, hist, 1, 1.5));
    save_model(path, fixture_hawkes());
    const auto h = load_model(path);
    CHECK(intensity(*h, kFixture, 1, 3.0) == doctest::Approx(intensity(fixture_hawkes(), kFixture, 1, 3.0)).epsilon(1e-14));
    std::filesystem::remove(path);
}
