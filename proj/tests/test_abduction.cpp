#include <fstream>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "evrank/abduction.hpp"
#include "evrank/error.hpp"
#include "httplib.h"

using namespace evrank;

namespace {

const std::filesystem::path kAssets = EVRANK_SOURCE_DIR "/assets/prompts";
const std::filesystem::path kData = EVRANK_SOURCE_DIR "/tests/data";

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class CountingBackend final : public LlmBackend {
public:
    std::string complete(const std::string& model, double temperature, const std::string& prompt) override {
        ++calls;
        return model + "|" + std::to_string(temperature) + "|" + std::to_string(prompt.size());
    }
    std::atomic<int> calls{0};
};

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("golden prompts") {
    {
        const auto t = load_template(kAssets / "gdelt/template.txt", kAssets / "gdelt/demos_p1.txt");
        REQUIRE(t.demonstrations.size() == 10);
        const Date epoch = parse_date("2022-01-01");
        const Event e{days_between(epoch, parse_date("2022-03-08")) + 0.25, StructuredType{"US", "COOPERATE", "UKRAINE"},
                      std::nullopt};
        CHECK(build_prompt(t, e, epoch) == slurp(kData / "golden_gdelt_10shot.txt"));
    }
    {
        const auto t = load_template(kAssets / "amazon/template.txt", kAssets / "amazon/demos_p1.txt");
        REQUIRE(t.demonstrations.size() == 8);
        const Date epoch = parse_date("2013-01-01");
        const Event e{days_between(epoch, parse_date("2013-11-02")), CategoricalType{"Luggage & Travel Gear"}, std::nullopt};
        CHECK(build_prompt(t, e, epoch) == slurp(kData / "golden_amazon_8shot.txt"));
    }
}

TEST_CASE("zero-shot prompts drop the examples section") {
    auto t = load_template(kAssets / "gdelt/template.txt", {});
    const Event e{10.0, StructuredType{"US", "COOPERATE", "UKRAINE"}, std::nullopt};
    const auto p = build_prompt(t, e, parse_date("2022-03-01"));
    CHECK(p.find("## Example") == std::string::npos);
    CHECK(p.find("examples") == std::string::npos);
    CHECK(p.find("effect\npredicate: COOPERATE\ntime: 2022-03-11\nsubject: US\nobject: UKRAINE\n") != std::string::npos);
}

TEST_CASE("the second demonstration set has the same shape") {
    CHECK(load_template(kAssets / "gdelt/template.txt", kAssets / "gdelt/demos_p2.txt").demonstrations.size() == 10);
    CHECK(load_template(kAssets / "amazon/template.txt", kAssets / "amazon/demos_p2.txt").demonstrations.size() == 8);
}

TEST_CASE("template without a vocabulary section numbers the fallback names") {
    const auto t = load_template(kAssets / "synthetic/template.txt", kAssets / "synthetic/demos_p1.txt", {"T00", "T01"});
    const Event e{3.0, CategoricalType{"T01"}, std::nullopt};
    const auto p = build_prompt(t, e, parse_date("2020-01-01"));
    CHECK(p.find("restricted to the 2 options below.\n1. T00\n2. T01\n") != std::string::npos);
}

TEST_CASE("unresolvable placeholders are errors") {
    auto t = load_template(kAssets / "gdelt/template.txt", {});
    t.query += "\n{headline_of_effect}";
    const Event e{1.0, StructuredType{"US", "COOPERATE", "UKRAINE"}, std::nullopt};
    CHECK_THROWS_AS(build_prompt(t, e, parse_date("2022-03-01")), Error);
}

TEST_CASE("parse the published cause block") {
    const std::string text =
        "reasoning:\n\ncause event 1\npredicate: THREATEN\ntime: 2022-03-06\nsubject: RUSSIA\nobject: UKRAINE \n"
        "headline: Putin says Ukraine's future is in doubt as cease-fires collapse\n";
    const auto r = parse_causes(text, Schema::structured);
    REQUIRE(r.causes.size() == 1);
    const auto& h = r.causes[0];
    CHECK(h.type == "THREATEN");
    CHECK(h.time == parse_date("2022-03-06"));
    CHECK(h.subject == std::optional<std::string>("RUSSIA"));
    CHECK(h.object == std::optional<std::string>("UKRAINE"));
    CHECK(h.text == std::optional<std::string>("Putin says Ukraine's future is in doubt as cease-fires collapse"));
}

TEST_CASE("parser tolerates drift") {
    const std::string text =
        "Sure! Here are some causes.\n\n**Cause Event 1:**\nEvent Type: Threaten\nEvent Time: 2022-03-06\n"
        "Subject Name: RUSSIA\nObject Name: UKRAINE\nconfidence: high\n\n"
        "cause event 2\npredicate: DEMAND\nsubject: X\n\n"
        "CAUSE EVENT 3\n  PREDICATE:  MAKE STATEMENT \n  TIME: 2022-03-05T10:00\n";
    const auto r = parse_causes(text, Schema::structured);
    REQUIRE(r.causes.size() == 2);
    CHECK(r.causes[0].type == "Threaten");
    CHECK(r.causes[1].type == "MAKE STATEMENT");
    CHECK(r.causes[1].time == parse_date("2022-03-05"));
    CHECK(r.warnings.size() == 1);
    const auto none = parse_causes("I cannot help with that.", Schema::categorical);
    CHECK(none.causes.empty());
    CHECK(none.warnings.size() == 1);
    const auto cat = parse_causes("cause event 1\nproduct category: Men Shoes\nevent time: 2014-04-28\nsummary text: x\n"
                                  "review text: Great dress shoes.\n",
                                  Schema::categorical);
    REQUIRE(cat.causes.size() == 1);
    CHECK(cat.causes[0].type == "Men Shoes");
    CHECK(cat.causes[0].text == std::optional<std::string>("Great dress shoes."));
}

TEST_CASE("every demonstration cause block round trips through render and parse") {
    for (const auto& [dir, schema] : std::vector<std::pair<std::string, Schema>>{
             {"gdelt", Schema::structured}, {"amazon", Schema::categorical}, {"synthetic", Schema::categorical}}) {
        for (const char* set : {"demos_p1.txt", "demos_p2.txt"}) {
            if (!std::filesystem::exists(kAssets / dir / set)) continue;
            const auto t = load_template(kAssets / dir / "template.txt", kAssets / dir / set, {"T00"});
            for (const auto& demo : t.demonstrations) {
                std::string text;
                for (std::size_t i = 0; i < demo.causes.size(); ++i)
                    text += "cause event " + std::to_string(i + 1) + "\n" + demo.causes[i] + "\n\n";
                const auto first = parse_causes(text, schema);
                REQUIRE(first.causes.size() == demo.causes.size());
                const auto second = parse_causes(render_causes(t.labels, first.causes), schema);
                CHECK(second.causes == first.causes);
            }
        }
    }
}

TEST_CASE("hypothesis rendering follows the event convention") {
    CauseHypothesis h{"THREATEN", parse_date("2022-03-06"), "RUSSIA", "UKRAINE", "headline"};
    CHECK(render_hypothesis_text(h, Schema::structured) == "THREATEN(RUSSIA, UKRAINE): headline");
    h.object.reset();
    h.text.reset();
    CHECK(render_hypothesis_text(h, Schema::structured) == "THREATEN(RUSSIA, )");
    CHECK(render_hypothesis_text({"Men Shoes", {}, {}, {}, {}}, Schema::categorical) == "Men Shoes");
}

TEST_CASE("cache makes repeated generations free") {
    auto backend = std::make_shared<CountingBackend>();
    LlmConfig cfg;
    cfg.model = "m";
    cfg.cache_dir = fresh_dir("evrank_cache_test");
    LlmClient client(cfg, backend);
    const auto a = client.generate("hello");
    for (int i = 0; i < 5; ++i) CHECK(client.generate("hello") == a);
    CHECK(backend->calls == 1);
    CHECK(client.backend_calls() == 1);
    LlmClient again(cfg, backend);
    CHECK(again.generate("hello") == a);
    CHECK(again.backend_calls() == 0);

    const auto out = client.generate_all({"x", "y", "x", "hello", "z", "y"});
    CHECK(out[0] == out[2]);
    CHECK(backend->calls == 4);

    LlmConfig hot = cfg;
    hot.temperature = 0.7;
    LlmClient warm(hot, backend);
    warm.generate("hello");
    CHECK(backend->calls == 5);

    const auto file = cfg.cache_dir / (LlmClient::cache_key("m", 0.0, "hello") + ".json");
    REQUIRE(std::filesystem::exists(file));
    std::ofstream(file) << "{broken";
    try {
        client.generate("hello");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find(file.filename().string()) != std::string::npos);
    }
    std::filesystem::remove_all(cfg.cache_dir);
}

TEST_CASE("scripted backend returns its fixture verbatim") {
    const auto path = std::filesystem::temp_directory_path() / "evrank_fixture.txt";
    std::ofstream(path, std::ios::binary) << "cause event 1\r\npredicate: X\n  trailing  ";
    ScriptedBackend b(path);
    CHECK(b.complete("m", 0, "anything") == "cause event 1\r\npredicate: X\n  trailing  ");
    std::filesystem::remove(path);
}

TEST_CASE("oracle backend answers with the rule table's causes") {
    auto spec = default_synthetic_spec(10, 1, 10.0, 3);
    const auto t = load_template(kAssets / "synthetic/template.txt", {}, spec.types);
    const Date epoch = parse_date(spec.epoch);
    OracleBackend oracle(spec, t.labels, epoch);
    const std::uint32_t effect = spec.rules.front().effect;
    const Event e{40.3, CategoricalType{spec.types[effect]}, std::nullopt};
    const auto parsed = parse_causes(oracle.complete("m", 0, build_prompt(t, e, epoch)), Schema::categorical);
    const auto rules = spec.causes_of(effect);
    REQUIRE(parsed.causes.size() == rules.size());
    for (std::size_t i = 0; i < rules.size(); ++i) {
        CHECK(parsed.causes[i].type == spec.types[rules[i].cause]);
        CHECK(parsed.causes[i].time < parse_date("2020-02-10"));
    }
}

TEST_CASE("http chat backend speaks the chat-completion shape") {
    httplib::Server server;
    std::string seen_auth, seen_body;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        seen_body = req.body;
        const auto j = nlohmann::json::parse(req.body);
        if (j["messages"][0]["content"] == "fail") {
            res.status = 400;
            res.set_content("{\"error\": \"bad prompt\"}", "application/json");
            return;
        }
        nlohmann::json out{{"choices", {{{"message", {{"role", "assistant"}, {"content", "cause event 1\npredicate: X"}}}}}}};
        res.set_content(out.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    setenv("EVRANK_TEST_KEY", "secret", 1);
    LlmConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    cfg.model = "test-model";
    cfg.api_key_env = "EVRANK_TEST_KEY";
    cfg.retries = 0;
    HttpChatBackend backend(cfg);
    CHECK(backend.complete("test-model", 0.0, "hello") == "cause event 1\npredicate: X");
    CHECK(seen_auth == "Bearer secret");
    const auto body = nlohmann::json::parse(seen_body);
    CHECK(body["model"] == "test-model");
    CHECK(body["temperature"] == 0.0);
    CHECK(body["messages"][0]["role"] == "user");
    try {
        backend.complete("test-model", 0.0, "fail");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("bad prompt") != std::string::npos);
    }
    server.stop();
    th.join();

    cfg.endpoint = "http://127.0.0.1:1/v1";
    cfg.timeout_seconds = 1;
    HttpChatBackend dead(cfg);
    CHECK_THROWS_AS(dead.complete("m", 0, "x"), Error);
}
