#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"

#include "evrank/error.hpp"
#include "evrank/retrieval.hpp"

using namespace evrank;

namespace {

// Plain recursion over suffixes with memoization; independent of the
// two-row table used by the library.
std::size_t edit_oracle(const std::string& a, const std::string& b) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
    std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
        if (i == a.size()) return b.size() - j;
        if (j == b.size()) return a.size() - i;
        const auto key = std::make_pair(i, j);
        if (auto it = memo.find(key); it != memo.end()) return it->second;
        std::size_t best = go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
        best = std::min(best, go(i + 1, j) + 1);
        best = std::min(best, go(i, j + 1) + 1);
        return memo[key] = best;
    };
    return go(0, 0);
}

std::string random_text(std::mt19937_64& rng, std::size_t max_len = 8) {
    std::uniform_int_distribution<std::size_t> len(1, max_len);
    std::uniform_int_distribution<int> ch('a', 'e');
    std::string s(len(rng), 'a');
    for (auto& c : s) c = static_cast<char>(ch(rng));
    return s;
}

Event cat_event(double t, std::string name) { return Event{t, CategoricalType{std::move(name)}, std::nullopt}; }

}  // namespace

TEST_CASE("edit similarity values") {
    CHECK(levenshtein("kitten", "sitting") == 3);
    CHECK(similarity(SimKind::edit, "kitten", "sitting") == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(similarity(SimKind::edit, "same", "same") == 1.0);
    CHECK_THROWS_AS(similarity(SimKind::edit, "", "x"), evrank::Error);
}

TEST_CASE("edit distance agrees with a recursive oracle, and similarity is symmetric") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 1000; ++i) {
        const auto a = random_text(rng), b = random_text(rng);
        REQUIRE(levenshtein(a, b) == edit_oracle(a, b));
        CHECK(similarity(SimKind::edit, a, b) == similarity(SimKind::edit, b, a));
        CHECK(similarity(SimKind::edit, a, a) >= similarity(SimKind::edit, a, b));
    }
}

TEST_CASE("hashed embedder is unit norm, deterministic and self-maximal") {
    HashedNgramEmbedder emb;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 500; ++i) {
        const auto a = random_text(rng, 30), b = random_text(rng, 30);
        const auto va = emb.embed_one(a);
        double n = 0.0;
        for (double x : va) n += x * x;
        CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
        CHECK(emb.embed_one(a) == va);
        const double self = similarity(SimKind::embedding, a, a, &emb);
        CHECK(std::abs(self - 1.0) < 1e-6);
        CHECK(self + 1e-12 >= similarity(SimKind::embedding, a, b, &emb));
    }
    // Case folding: the embedder lowercases its input.
    CHECK(emb.embed_one("Luggage") == emb.embed_one("luggage"));
    CHECK_THROWS_AS(emb.embed_one(""), evrank::Error);
}

TEST_CASE("hashed embedder output is pinned") {
    // Guards against platform- or build-dependent hashing.
    HashedNgramEmbedder emb({3, 16, 0x5eedULL});
    const auto v = emb.embed_one("abc");
    const double r = 1.0 / std::sqrt(3.0);
    std::vector<double> expected(16, 0.0);
    expected[4] = r;
    expected[8] = r;
    expected[9] = -r;
    for (std::size_t i = 0; i < 16; ++i) CHECK(v[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("union of two hypotheses sharing a top match") {
    // Hypothesis texts "ab" and "ac" both rank "a" first; D = 2 gives {a, ab} and {a, ac}.
    std::vector<Event> history{cat_event(1, "zzzz"), cat_event(2, "ab"), cat_event(3, "a"), cat_event(4, "ac")};
    std::vector<CauseHypothesis> hyps{{"ab", parse_date("2020-01-01"), {}, {}, {}},
                                      {"ac", parse_date("2020-01-01"), {}, {}, {}}};
    const auto ev = retrieve_evidence(history, hyps, 2, SimKind::edit, 10.0, Schema::categorical);
    REQUIRE(ev.events.size() == 3);
    CHECK(std::get<CategoricalType>(ev.events[0].type).category == "ab");
    CHECK(std::get<CategoricalType>(ev.events[1].type).category == "a");
    CHECK(std::get<CategoricalType>(ev.events[2].type).category == "ac");
    CHECK(ev.provenance[0].hypothesis == 0);
    CHECK(ev.provenance[2].hypothesis == 1);
    CHECK(ev.provenance[0].score == 1.0);
}

TEST_CASE("empty history and events at the proposal time are excluded") {
    std::vector<CauseHypothesis> hyps{{"a", parse_date("2020-01-01"), {}, {}, {}}};
    CHECK(retrieve_evidence({}, hyps, 2, SimKind::edit, 1.0, Schema::categorical).events.empty());
    std::vector<Event> history{cat_event(1, "a"), cat_event(2, "a")};
    const auto ev = retrieve_evidence(history, hyps, 5, SimKind::edit, 2.0, Schema::categorical);
    REQUIRE(ev.events.size() == 1);
    CHECK(ev.events[0].time == 1.0);
    CHECK_THROWS_AS(retrieve_evidence(history, hyps, 0, SimKind::edit, 2.0, Schema::categorical), evrank::Error);
}

TEST_CASE("ties in similarity go to the later event") {
    std::vector<Event> history{cat_event(1, "x"), cat_event(2, "x"), cat_event(3, "x"), cat_event(4, "y")};
    std::vector<CauseHypothesis> hyps{{"x", parse_date("2020-01-01"), {}, {}, {}}};
    const auto ev = retrieve_evidence(history, hyps, 2, SimKind::edit, 10.0, Schema::categorical);
    REQUIRE(ev.events.size() == 2);
    CHECK(ev.events[0].time == 2.0);
    CHECK(ev.events[1].time == 3.0);
}

TEST_CASE("structured hypotheses render like events, headline included") {
    const Event e{1.0, StructuredType{"US", "COOPERATE", "UKRAINE"}, std::string("aid talks")};
    CauseHypothesis h{"COOPERATE", parse_date("2020-01-01"), std::string("US"), std::string("UKRAINE"),
                      std::string("aid talks")};
    CHECK(render_hypothesis_text(h, Schema::structured) == render_type_text(e.type, e.mark));
    const std::vector<Event> history{e};
    const auto ev = retrieve_evidence(history, std::span(&h, 1), 2, SimKind::edit, 2.0, Schema::structured);
    REQUIRE(ev.events.size() == 1);
    CHECK(ev.provenance[0].score == 1.0);
}

TEST_CASE("retrieval properties on random instances") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> time(0.0, 50.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Event> history;
        const std::size_t n = rng() % 40;
        std::vector<double> times;
        for (std::size_t i = 0; i < n; ++i) times.push_back(std::round(time(rng) * 2) / 2);  // ties on purpose
        std::sort(times.begin(), times.end());
        for (double t : times) history.push_back(cat_event(t, random_text(rng, 4)));
        std::vector<std::string> hyps(1 + rng() % 5);
        for (auto& h : hyps) h = random_text(rng, 4);
        const SimKind kind = trial % 2 ? SimKind::edit : SimKind::embedding;
        HistoryIndex index(history, kind);
        for (int q = 0; q < 50; ++q) {
            const double t = time(rng);
            std::vector<std::size_t> prev;
            for (std::size_t d = 1; d <= 6; ++d) {
                const auto ev = index.retrieve(hyps, d, t);
                std::set<std::size_t> seen(ev.history_index.begin(), ev.history_index.end());
                REQUIRE(seen.size() == ev.events.size());
                REQUIRE(ev.events.size() <= d * hyps.size());
                for (std::size_t i = 0; i < ev.events.size(); ++i) {
                    REQUIRE(ev.events[i].time < t);
                    if (i) REQUIRE(ev.history_index[i - 1] < ev.history_index[i]);
                    const auto& text = index.texts()[ev.history_index[i]];
                    HashedNgramEmbedder emb;
                    const double s = similarity(kind, hyps[ev.provenance[i].hypothesis], text, &emb);
                    REQUIRE(std::abs(s - ev.provenance[i].score) < 1e-12);
                }
                REQUIRE(std::includes(ev.history_index.begin(), ev.history_index.end(), prev.begin(), prev.end()));
                prev = ev.history_index;
                const auto capped = index.retrieve(hyps, d, t, std::size_t{2});
                REQUIRE(capped.events.size() == std::min<std::size_t>(2, ev.events.size()));
                REQUIRE(std::includes(ev.history_index.begin(), ev.history_index.end(), capped.history_index.begin(),
                                      capped.history_index.end()));
            }
        }
    }
}

TEST_CASE("remote embedder posts batches, normalizes and caches") {
    httplib::Server server;
    std::vector<nlohmann::json> bodies;
    std::string auth;
    server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        bodies.push_back(nlohmann::json::parse(req.body));
        auth = req.get_header_value("Authorization");
        nlohmann::json data = nlohmann::json::array();
        std::size_t i = 0;
        for (const auto& text : bodies.back()["input"]) {
            const double len = static_cast<double>(text.get<std::string>().size());
            data.push_back({{"index", i++}, {"embedding", {3.0 * len, 4.0 * len}}});
        }
        res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const auto cache = std::filesystem::temp_directory_path() / ("evrank_embed_" + std::to_string(port));
    std::filesystem::remove_all(cache);
    ::setenv("EVRANK_TEST_EMBED_KEY", "k123", 1);
    RemoteEmbedderConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    cfg.model = "m";
    cfg.api_key_env = "EVRANK_TEST_EMBED_KEY";
    cfg.batch_size = 2;
    cfg.cache_dir = cache;
    {
        RemoteEmbedder emb(cfg);
        const std::vector<std::string> texts{"a", "bb", "ccc"};
        const auto v = emb.embed(texts);
        CHECK(emb.requests() == 2);
        REQUIRE(bodies.size() == 2);
        CHECK(bodies[0]["model"] == "m");
        CHECK(bodies[0]["input"].size() == 2);
        CHECK(auth == "Bearer k123");
        for (const auto& x : v) {
            CHECK(x[0] == doctest::Approx(0.6));
            CHECK(x[1] == doctest::Approx(0.8));
        }
    }
    {
        RemoteEmbedder emb(cfg);
        const std::vector<std::string> texts{"ccc", "a"};
        emb.embed(texts);
        CHECK(emb.requests() == 0);
    }
    server.stop();
    worker.join();
    std::filesystem::remove_all(cache);
}
