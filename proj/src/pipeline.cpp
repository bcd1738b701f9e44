#include "evrank/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "evrank/error.hpp"
#include "evrank/metrics.hpp"
#include "evrank/proposer.hpp"
#include "evrank/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace evrank {

void write_report_files(const fs::path& dir, std::span<const MetricReport> reports);  // report.cpp

namespace {

constexpr int kStageVersion = 1;

struct Paths {
    fs::path out;
    fs::path manifest() const { return out / "manifest.json"; }
    fs::path events() const { return out / "data" / "events.jsonl"; }
    fs::path split() const { return out / "data" / "split.json"; }
    fs::path rules() const { return out / "data" / "rules.json"; }
    fs::path base_model() const { return out / "base" / "model.json"; }
    fs::path base_log() const { return out / "base" / "train_log.csv"; }
    fs::path proposals() const { return out / "proposals.jsonl"; }
    fs::path hypotheses() const { return out / "abduction" / "hypotheses.jsonl"; }
    fs::path evidence() const { return out / "evidence.jsonl"; }
    fs::path ranker_model() const { return out / "ranker" / "model.json"; }
    fs::path ranker_log() const { return out / "ranker" / "train_log.csv"; }
    fs::path predictions() const { return out / "predictions.jsonl"; }
    fs::path metrics_json() const { return out / "metrics.json"; }
    fs::path metrics_csv() const { return out / "metrics.csv"; }
    fs::path report_dir() const { return out / "report"; }
};

// ------------------------------------------------------------------ files

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write " + path.string());
        out << text;
        if (!out) throw Error("write failed for " + path.string());
    }
    fs::rename(tmp, path);
}

void write_jsonl(const fs::path& path, const std::vector<json>& lines) {
    std::string text;
    for (const auto& l : lines) text += l.dump() + "\n";
    write_text(path, text);
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    std::vector<json> out;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw Error(path.string() + ":" + std::to_string(no) + ": " + e.what());
        }
    }
    return out;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

// --------------------------------------------------------------- manifest

void stamp(const Paths& p, const Config& config, const RunConfig& rc, Stage stage) {
    json m = fs::exists(p.manifest())
                 ? read_json(p.manifest())
                 : json{{"format", "evrank-run"}, {"version", 1}, {"config_hash", config.hash()}, {"seed", rc.seed},
                        {"stages", json::object()}};
    m["stages"][std::string(to_string(stage))] = {{"version", kStageVersion}, {"config_hash", config.hash()}};
    write_text(p.manifest(), m.dump(2) + "\n");
}

/// Checks that `upstream` has run in this output directory and its artifacts exist.
void require(const Paths& p, const Config& config, Stage current, std::initializer_list<Stage> upstream,
             std::initializer_list<fs::path> artifacts, StageReport& report) {
    const std::string names = [&] {
        std::string s;
        for (Stage u : upstream) s += (s.empty() ? "" : "' or '") + std::string(to_string(u));
        return s;
    }();
    auto missing = [&](const std::string& what) {
        return Error(std::string(to_string(current)) + " needs the output of '" + names + "' (" + what +
                     "); run `engine " + std::string(to_string(*upstream.begin())) + "` first");
    };
    if (!fs::exists(p.manifest())) throw missing("no manifest in " + p.out.string());
    const json m = read_json(p.manifest());
    const json* stage = nullptr;
    for (Stage u : upstream)
        if (m["stages"].contains(std::string(to_string(u)))) stage = &m["stages"][std::string(to_string(u))];
    if (!stage) throw missing("not recorded in manifest.json");
    if ((*stage)["version"].get<int>() != kStageVersion)
        throw Error("artifacts of '" + names + "' were written by an incompatible version; rerun `engine " +
                    std::string(to_string(*upstream.begin())) + "`");
    for (const auto& a : artifacts)
        if (!fs::exists(a)) throw missing(a.string() + " is missing");
    if ((*stage)["config_hash"].get<std::string>() != config.hash())
        report.lines.push_back("warning: '" + names + "' ran with a different configuration");
}

// ------------------------------------------------------------------- data

json type_to_json(const EventType& type) {
    if (const auto* s = std::get_if<StructuredType>(&type))
        return {{"subject", s->subject}, {"predicate", s->predicate}, {"object", s->object}};
    return {{"category", std::get<CategoricalType>(type).category}};
}

EventType type_from_json(const json& j) {
    if (j.contains("category")) return CategoricalType{j["category"].get<std::string>()};
    return StructuredType{j.at("subject").get<std::string>(), j.at("predicate").get<std::string>(),
                          j.at("object").get<std::string>()};
}

struct SplitSeq {
    std::string id;
    std::vector<Event> events;  // everything before the window end, context included
    std::vector<CodedEvent> coded;
    double start = 0.0, end = 0.0;

    Sequence sequence() const { return {id, events, start, end}; }
};

struct RunData {
    Schema schema = Schema::categorical;
    Date epoch{};
    Vocabulary vocab;
    std::map<std::string, std::vector<SplitSeq>> splits;
    std::map<std::string, std::map<std::string, std::size_t>> position;  // split -> id -> index

    const SplitSeq& find(const std::string& split, const std::string& id) const {
        const auto& ids = position.at(split);
        const auto it = ids.find(id);
        if (it == ids.end()) throw Error("unknown sequence '" + id + "' in split " + split);
        return splits.at(split)[it->second];
    }
};

const char* const kSplits[] = {"train", "dev", "test"};

json split_entry(const Sequence& s) { return {{"id", s.id}, {"start", s.window_start}, {"end", s.window_end}}; }

void write_split(const Paths& p, const Dataset& ds, const std::map<std::string, std::vector<json>>& entries) {
    json j{{"schema", std::string(to_string(ds.schema))}, {"epoch", format_date(ds.epoch)}, {"vocab", vocab_to_json(ds.vocab)}};
    for (const auto& [name, list] : entries) j["splits"][name] = list;
    write_text(p.split(), j.dump(1) + "\n");
}

RunData load_run_data(const Paths& p) {
    const json split = read_json(p.split());
    RunData d;
    d.schema = parse_schema(split.at("schema").get<std::string>());
    d.epoch = parse_date(split.at("epoch").get<std::string>());
    d.vocab = vocab_from_json(split.at("vocab"));
    LoadOptions opts;
    opts.epoch = d.epoch;
    const Dataset full = load_dataset(p.events(), d.schema, opts);
    std::map<std::string, const Sequence*> by_id;
    for (const auto& s : full.sequences) by_id[s.id] = &s;
    for (const char* name : kSplits) {
        auto& list = d.splits[name];
        for (const auto& e : split.at("splits").at(name)) {
            SplitSeq s;
            s.id = e.at("id").get<std::string>();
            s.start = e.at("start").get<double>();
            s.end = e.at("end").get<double>();
            if (const auto it = by_id.find(s.id); it != by_id.end())
                for (const auto& ev : it->second->events) {
                    if (ev.time >= s.end) break;
                    s.events.push_back(ev);
                }
            s.coded = encode_events(s.sequence(), d.vocab);
            d.position[name][s.id] = list.size();
            list.push_back(std::move(s));
        }
    }
    return d;
}

// ---------------------------------------------------------------- stages

StageReport stage_synth(const Paths& p, const RunConfig& rc) {
    SyntheticSpec spec = rc.synthetic_rules.empty()
                             ? default_synthetic_spec(rc.synthetic_types, rc.synthetic_sequences, rc.synthetic_horizon,
                                                      rc.synthetic_seed)
                             : load_rule_table(rc.synthetic_rules);
    const Dataset ds = generate_synthetic(spec);
    fs::create_directories(p.out / "data");
    save_dataset(p.events(), ds);
    save_rule_table(p.rules(), spec);
    const std::size_t n = ds.sequences.size();
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * rc.train_fraction));
    const auto n_dev = static_cast<std::size_t>(std::llround(static_cast<double>(n) * rc.dev_fraction));
    std::map<std::string, std::vector<json>> entries;
    for (std::size_t i = 0; i < n; ++i)
        entries[i < n_train ? "train" : i < n_train + n_dev ? "dev" : "test"].push_back(split_entry(ds.sequences[i]));
    for (const char* name : kSplits) entries[name];
    write_split(p, ds, entries);
    StageReport r;
    r.lines.push_back("synth: " + std::to_string(n) + " sequences, " + std::to_string(ds.event_count()) + " events, " +
                      std::to_string(spec.rules.size()) + " rules");
    return r;
}

StageReport stage_ingest(const Paths& p, const RunConfig& rc) {
    LoadOptions opts;
    opts.epoch = parse_date(rc.epoch);
    opts.window_end = rc.window_end;
    const Dataset ds = load_dataset(rc.data_path, rc.schema, opts);
    const auto split = split_by_date(ds, parse_date(rc.train_end), parse_date(rc.dev_end));
    fs::create_directories(p.out / "data");
    save_dataset(p.events(), ds);
    std::map<std::string, std::vector<json>> entries;
    const std::pair<const char*, const Dataset*> parts[] = {{"train", &split.train}, {"dev", &split.dev}, {"test", &split.test}};
    for (const auto& [name, part] : parts) {
        auto& list = entries[name];
        for (const auto& s : part->sequences)
            if (s.window_end > s.window_start) list.push_back(split_entry(s));
    }
    write_split(p, ds, entries);
    StageReport r;
    r.lines.push_back("ingest: " + std::to_string(ds.sequences.size()) + " sequences, " +
                      std::to_string(ds.event_count()) + " events, " + std::to_string(ds.vocab.type_count()) + " types");
    for (const auto& w : split.warnings) r.lines.push_back("warning: " + w);
    return r;
}

StageReport stage_train_base(const Paths& p, const RunConfig& rc) {
    const RunData d = load_run_data(p);
    std::vector<Sequence> train, dev;
    double events = 0.0, span = 0.0;
    for (const auto& s : d.splits.at("train")) {
        train.push_back(s.sequence());
        for (const auto& e : s.events) events += (e.time >= s.start) ? 1.0 : 0.0;
        span += s.end - s.start;
    }
    for (const auto& s : d.splits.at("dev")) dev.push_back(s.sequence());
    if (!(events > 0.0 && span > 0.0)) throw Error("train-base: the train split has no events");
    const double rate = events / span;
    std::unique_ptr<IntensityModel> model;
    if (rc.base_kind == "hawkes")
        model = std::make_unique<HawkesModel>(HawkesModel::initial(d.vocab, rate));
    else
        model = std::make_unique<AttentiveModel>(d.vocab, rc.attentive, rc.seed, rate);
    TrainConfig tc = rc.base_train;
    tc.seed = rc.seed;
    const auto result = train_mle(*model, train, dev, tc);
    fs::create_directories(p.base_model().parent_path());
    save_model(p.base_model(), *model);
    write_training_log(p.base_log(), result);
    StageReport r;
    char buf[160];
    std::snprintf(buf, sizeof buf, "train-base: %s, %zu epochs run, best epoch %zu, dev log-likelihood %.4f per event",
                  rc.base_kind.c_str(), result.log.size() - 1, result.best_epoch, result.best_dev_ll);
    r.lines.push_back(buf);
    return r;
}

/// Evenly spaced deterministic subsample of at most `cap` items.
template <class T>
std::vector<T> thin_out(std::vector<T> items, std::size_t cap) {
    if (cap == 0 || items.size() <= cap) return items;
    std::vector<T> out;
    const double step = static_cast<double>(items.size()) / static_cast<double>(cap);
    for (std::size_t i = 0; i < cap; ++i) out.push_back(items[static_cast<std::size_t>(static_cast<double>(i) * step)]);
    return out;
}

StageReport stage_propose(const Paths& p, const RunConfig& rc) {
    const RunData d = load_run_data(p);
    const auto model = load_model(p.base_model());
    Rng rng(rc.seed ^ 0x70726f706f7365ULL);
    std::vector<json> lines;
    std::size_t n_type = 0, n_time = 0;
    const std::size_t k = d.vocab.type_count();

    for (const char* split : kSplits) {
        const std::string name = split;
        struct At {
            std::size_t seq, first;
        };
        std::vector<At> at;
        const auto& seqs = d.splits.at(name);
        for (std::size_t s = 0; s < seqs.size(); ++s) {
            const auto& ev = seqs[s].coded;
            for (std::size_t i = 0; i < ev.size(); ++i)
                if ((i == 0 || ev[i].time > ev[i - 1].time) && ev[i].time >= seqs[s].start + rc.warmup &&
                    ev[i].time < seqs[s].end)
                    at.push_back({s, i});
        }
        const std::size_t cap = name == "train" ? rc.max_train_queries : name == "dev" ? rc.max_dev_queries : rc.max_test_queries;
        const auto chosen = thin_out(at, cap);
        std::unique_ptr<IntensityEvaluator> evaluator;
        std::size_t bound = SIZE_MAX;
        for (const auto& q : chosen) {
            const auto& s = seqs[q.seq];
            if (bound != q.seq) {
                evaluator = model->bind(s.coded);
                bound = q.seq;
            }
            const double t = s.coded[q.first].time;
            json truths = json::array();
            std::set<TypeId> truth_ids;
            for (std::size_t i = q.first; i < s.coded.size() && s.coded[i].time == t; ++i)
                if (truth_ids.insert(s.coded[i].type).second) truths.push_back(type_to_json(s.events[i].type));
            const std::size_t m = name == "train" ? std::min(k, rc.negatives + truth_ids.size()) : rc.m;
            json cands = json::array();
            for (const auto& prop : propose_types(*evaluator, d.vocab, t, m))
                cands.push_back({{"type", type_to_json(d.vocab.decode(prop.type))}, {"intensity", prop.base_intensity}});
            json line{{"query_id", name + "/" + s.id + "/" + std::to_string(q.first)},
                      {"kind", "type"},
                      {"split", name},
                      {"sequence", s.id},
                      {"time", t},
                      {"history_size", q.first},
                      {"truths", truths},
                      {"candidates", cands}};
            if (name == "train" && rc.ranker_train.noise_times > 0) {
                json noise = json::array();
                for (double nt : sample_noise_times(s.start, s.end, rc.ranker_train.noise_times, rng)) {
                    json types = json::array();
                    for (TypeId nk : sample_noise_types(*evaluator, d.vocab, nt, rc.m, rc.ranker_train.noise_types, rng))
                        types.push_back(type_to_json(d.vocab.decode(nk)));
                    noise.push_back({{"time", nt}, {"types", types}});
                }
                line["noise"] = noise;
            }
            lines.push_back(std::move(line));
            ++n_type;
        }

        if (name != "test" || !rc.time_queries) continue;
        std::vector<At> timed;
        for (const auto& q : chosen)
            if (q.first > 0) timed.push_back(q);
        for (const auto& q : thin_out(timed, rc.max_time_queries)) {
            const auto& s = seqs[q.seq];
            const std::span<const CodedEvent> prefix(s.coded.data(), q.first);
            auto ev = model->bind(prefix);
            const double t_prev = prefix.back().time;
            json cands = json::array();
            ThinningOptions opts;
            opts.lookahead = rc.lookahead;
            for (const auto& tp : propose_times(*ev, t_prev, rc.m, rc.mbr_samples, rng, opts)) {
                json types = json::array();
                for (const auto& prop : propose_types(*ev, d.vocab, tp.time, rc.m_prime))
                    types.push_back(type_to_json(d.vocab.decode(prop.type)));
                cands.push_back({{"time", tp.time}, {"source", std::string(to_string(tp.source))}, {"types", types}});
            }
            lines.push_back({{"query_id", name + "/" + s.id + "/" + std::to_string(q.first) + "/time"},
                             {"kind", "time"},
                             {"split", name},
                             {"sequence", s.id},
                             {"history_end", t_prev},
                             {"history_size", q.first},
                             {"true_time", s.coded[q.first].time},
                             {"candidates", cands}});
            ++n_time;
        }
    }
    write_jsonl(p.proposals(), lines);
    StageReport r;
    r.lines.push_back("propose: " + std::to_string(n_type) + " type queries, " + std::to_string(n_time) +
                      " time queries");
    return r;
}

/// Prompts depend on an effect only through its type and calendar day.
std::string effect_key(const EventType& type, double time, Date epoch) {
    return render_type_text(type) + "@" + format_date(date_at(epoch, time));
}

/// Calls `f(type, time)` for every (type, time) pair that needs evidence.
template <class F>
void for_each_effect(const json& q, F&& f) {
    if (q["kind"] == "type") {
        const double t = q["time"].get<double>();
        for (const auto& c : q["candidates"]) f(c["type"], t);
        if (q["split"] == "train") {
            for (const auto& tr : q["truths"]) f(tr, t);
            if (q.contains("noise"))
                for (const auto& n : q["noise"])
                    for (const auto& ty : n["types"]) f(ty, n["time"].get<double>());
        }
    } else {
        for (const auto& c : q["candidates"])
            for (const auto& ty : c["types"]) f(ty, c["time"].get<double>());
    }
}

StageReport stage_abduce(const Paths& p, const RunConfig& rc) {
    const RunData d = load_run_data(p);
    const auto queries = read_jsonl(p.proposals());
    if (rc.prompt_template.empty() || rc.prompt_demos.empty())
        throw Error("abduce: prompt.template and prompt.demos must be configured");
    const auto& fallback = d.schema == Schema::structured ? d.vocab.predicates() : d.vocab.categories();
    const PromptTemplate tmpl = load_template(rc.prompt_template, rc.prompt_demos, fallback);

    std::shared_ptr<LlmBackend> backend;
    if (rc.llm_backend == "oracle") {
        if (!fs::exists(p.rules()))
            throw Error("abduce: llm.backend = oracle needs the synthetic rule table " + p.rules().string() +
                        "; run `engine synth` first");
        backend = std::make_shared<OracleBackend>(load_rule_table(p.rules()), tmpl.labels, d.epoch);
    } else if (rc.llm_backend == "scripted") {
        backend = std::make_shared<ScriptedBackend>(rc.llm_fixture);
    } else {
        backend = std::make_shared<HttpChatBackend>(rc.llm);
    }
    LlmClient client(rc.llm, backend);

    std::map<std::string, Event> effects;
    for (const auto& q : queries)
        for_each_effect(q, [&](const json& type, double t) {
            const EventType ty = type_from_json(type);
            effects.emplace(effect_key(ty, t, d.epoch), Event{t, ty, std::nullopt});
        });
    std::vector<std::string> prompts;
    for (const auto& [key, e] : effects) prompts.push_back(build_prompt(tmpl, e, d.epoch));
    const auto completions = client.generate_all(prompts);

    std::vector<json> lines;
    std::size_t i = 0, n_causes = 0, n_warnings = 0, empty = 0;
    for (const auto& [key, e] : effects) {
        const auto parsed = parse_causes(completions[i], d.schema);
        json causes = json::array();
        for (const auto& c : parsed.causes) {
            json cj{{"type", c.type}, {"time", format_date(c.time)}};
            if (c.subject) cj["subject"] = *c.subject;
            if (c.object) cj["object"] = *c.object;
            if (c.text) cj["text"] = *c.text;
            causes.push_back(cj);
        }
        n_causes += parsed.causes.size();
        n_warnings += parsed.warnings.size();
        empty += parsed.causes.empty() ? 1 : 0;
        lines.push_back({{"effect", key},
                         {"prompt_key", LlmClient::cache_key(rc.llm.model, rc.llm.temperature, prompts[i])},
                         {"causes", causes},
                         {"warnings", parsed.warnings}});
        ++i;
    }
    write_jsonl(p.hypotheses(), lines);
    StageReport r;
    r.backend_calls = client.backend_calls();
    r.lines.push_back("abduce: " + std::to_string(prompts.size()) + " distinct prompts, " +
                      std::to_string(r.backend_calls) + " backend calls, " + std::to_string(n_causes) +
                      " cause hypotheses, " + std::to_string(empty) + " effects without causes, " +
                      std::to_string(n_warnings) + " parser warnings");
    return r;
}

std::map<std::string, std::vector<std::string>> load_hypotheses(const Paths& p, Schema schema) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& line : read_jsonl(p.hypotheses())) {
        auto& texts = out[line.at("effect").get<std::string>()];
        for (const auto& c : line.at("causes")) {
            CauseHypothesis h;
            h.type = c.at("type").get<std::string>();
            h.time = parse_date(c.at("time").get<std::string>());
            if (c.contains("subject")) h.subject = c["subject"].get<std::string>();
            if (c.contains("object")) h.object = c["object"].get<std::string>();
            if (c.contains("text")) h.text = c["text"].get<std::string>();
            texts.push_back(render_hypothesis_text(h, schema));
        }
    }
    return out;
}

StageReport stage_retrieve(const Paths& p, const RunConfig& rc) {
    const RunData d = load_run_data(p);
    const auto queries = read_jsonl(p.proposals());
    const auto hyps = load_hypotheses(p, d.schema);
    std::shared_ptr<EmbeddingProvider> provider;
    if (rc.sim == SimKind::embedding) {
        if (rc.embedder == "remote")
            provider = std::make_shared<RemoteEmbedder>(rc.remote);
        else
            provider = std::make_shared<HashedNgramEmbedder>(rc.hashed);
    }
    const std::size_t depth = rc.retrieval_depth();
    const std::optional<std::size_t> cap = rc.total_cap ? std::optional<std::size_t>(rc.total_cap) : std::nullopt;

    std::unique_ptr<HistoryIndex> index;
    std::string indexed;  // split/sequence/history size of `index`
    std::size_t total = 0, n_candidates = 0;
    auto evidence = [&](const json& type, double t) {
        const EventType ty = type_from_json(type);
        const auto it = hyps.find(effect_key(ty, t, d.epoch));
        if (it == hyps.end())
            throw Error("retrieve: no hypotheses for effect " + effect_key(ty, t, d.epoch) + "; rerun `engine abduce`");
        const auto ev = index->retrieve(it->second, depth, t, cap);
        json scores = json::array(), from = json::array();
        for (const auto& pr : ev.provenance) {
            scores.push_back(pr.score);
            from.push_back(pr.hypothesis);
        }
        total += ev.events.size();
        ++n_candidates;
        return json{{"events", ev.history_index}, {"scores", scores}, {"hypotheses", from}};
    };

    std::vector<json> lines;
    for (const auto& q : queries) {
        const auto& s = d.find(q["split"].get<std::string>(), q["sequence"].get<std::string>());
        // Type queries may see the whole past; time queries only what precedes the last observed event.
        const std::size_t limit = q["kind"] == "type" ? s.events.size() : q["history_size"].get<std::size_t>();
        const std::string tag = q["split"].get<std::string>() + "/" + s.id + "/" + std::to_string(limit);
        if (tag != indexed) {
            index = std::make_unique<HistoryIndex>(std::vector<Event>(s.events.begin(), s.events.begin() + static_cast<std::ptrdiff_t>(limit)),
                                                   rc.sim, provider);
            indexed = tag;
        }
        json line{{"query_id", q["query_id"]}};
        if (q["kind"] == "type") {
            const double t = q["time"].get<double>();
            json cands = json::array();
            for (const auto& c : q["candidates"]) cands.push_back(evidence(c["type"], t));
            line["candidates"] = cands;
            if (q["split"] == "train") {
                json truths = json::array();
                for (const auto& tr : q["truths"]) truths.push_back(evidence(tr, t));
                line["truths"] = truths;
                if (q.contains("noise")) {
                    json noise = json::array();
                    for (const auto& n : q["noise"]) {
                        json group = json::array();
                        for (const auto& ty : n["types"]) group.push_back(evidence(ty, n["time"].get<double>()));
                        noise.push_back(group);
                    }
                    line["noise"] = noise;
                }
            }
        } else {
            json cands = json::array();
            for (const auto& c : q["candidates"]) {
                json subs = json::array();
                for (const auto& ty : c["types"]) subs.push_back(evidence(ty, c["time"].get<double>()));
                cands.push_back(subs);
            }
            line["candidates"] = cands;
        }
        lines.push_back(std::move(line));
    }
    write_jsonl(p.evidence(), lines);
    StageReport r;
    char buf[160];
    std::snprintf(buf, sizeof buf, "retrieve: %zu candidates, mean evidence length %.2f (D = %zu, %s similarity)",
                  n_candidates, n_candidates ? static_cast<double>(total) / static_cast<double>(n_candidates) : 0.0,
                  depth, std::string(to_string(rc.sim)).c_str());
    r.lines.push_back(buf);
    return r;
}

/// Proposals and their evidence, matched line by line.
struct Joined {
    std::vector<json> queries, evidence;
};

Joined load_joined(const Paths& p) {
    Joined j{read_jsonl(p.proposals()), read_jsonl(p.evidence())};
    if (j.queries.size() != j.evidence.size())
        throw Error("evidence.jsonl does not match proposals.jsonl; rerun `engine retrieve`");
    for (std::size_t i = 0; i < j.queries.size(); ++i)
        if (j.queries[i]["query_id"] != j.evidence[i]["query_id"])
            throw Error("evidence.jsonl does not match proposals.jsonl at query " +
                        j.queries[i]["query_id"].get<std::string>() + "; rerun `engine retrieve`");
    return j;
}

RankCandidate make_candidate(const RunData& d, const SplitSeq& s, const json& type, double t, const json& ev) {
    RankCandidate c{t, d.vocab.encode(type_from_json(type)), {}};
    for (const auto& idx : ev["events"]) c.evidence.push_back(s.coded.at(idx.get<std::size_t>()));
    return c;
}

std::vector<RankCandidate> type_candidates(const RunData& d, const SplitSeq& s, const json& q, const json& e) {
    std::vector<RankCandidate> out;
    const double t = q["time"].get<double>();
    for (std::size_t i = 0; i < q["candidates"].size(); ++i)
        out.push_back(make_candidate(d, s, q["candidates"][i]["type"], t, e["candidates"][i]));
    return out;
}

StageReport stage_train_ranker(const Paths& p, const RunConfig& rc) {
    const RunData d = load_run_data(p);
    const Joined j = load_joined(p);
    std::vector<RankTrainItem> items;
    std::vector<RankQuery> dev;
    for (std::size_t i = 0; i < j.queries.size(); ++i) {
        const auto& q = j.queries[i];
        const auto& e = j.evidence[i];
        if (q["kind"] != "type") continue;
        const auto& s = d.find(q["split"].get<std::string>(), q["sequence"].get<std::string>());
        const auto cands = type_candidates(d, s, q, e);
        if (q["split"] == "train") {
            std::vector<RankCandidate> negatives;
            for (std::size_t c = 0; c < cands.size() && negatives.size() < rc.negatives; ++c)
                if (std::find(q["truths"].begin(), q["truths"].end(), q["candidates"][c]["type"]) == q["truths"].end())
                    negatives.push_back(cands[c]);
            if (negatives.empty()) continue;
            std::vector<std::vector<RankCandidate>> noise;
            if (q.contains("noise"))
                for (std::size_t n = 0; n < q["noise"].size(); ++n) {
                    std::vector<RankCandidate> group;
                    const double nt = q["noise"][n]["time"].get<double>();
                    for (std::size_t m = 0; m < q["noise"][n]["types"].size(); ++m)
                        group.push_back(make_candidate(d, s, q["noise"][n]["types"][m], nt, e["noise"][n][m]));
                    noise.push_back(std::move(group));
                }
            for (std::size_t t = 0; t < q["truths"].size(); ++t)
                items.push_back({make_candidate(d, s, q["truths"][t], q["time"].get<double>(), e["truths"][t]), negatives, noise});
        } else if (q["split"] == "dev") {
            RankQuery rq{cands, std::nullopt};
            for (std::size_t c = 0; c < cands.size() && !rq.truth; ++c)
                if (std::find(q["truths"].begin(), q["truths"].end(), q["candidates"][c]["type"]) != q["truths"].end())
                    rq.truth = c;
            dev.push_back(std::move(rq));
        }
    }
    if (items.empty()) throw Error("train-ranker: no training items (the train split produced no usable queries)");
    RankerModel ranker(d.vocab, rc.ranker, rc.seed);
    RankerTrainConfig tc = rc.ranker_train;
    tc.seed = rc.seed;
    const auto result = train_ranker(ranker, items, dev, tc);
    fs::create_directories(p.ranker_model().parent_path());
    save_ranker(p.ranker_model(), ranker);
    write_ranker_log(p.ranker_log(), result);
    StageReport r;
    char buf[200];
    std::snprintf(buf, sizeof buf, "train-ranker: %zu items, %zu dev queries, beta %g, best epoch %zu, dev mean rank %.4f -> %.4f",
                  items.size(), dev.size(), tc.beta, result.best_epoch, result.log.front().dev_mean_rank,
                  result.best_dev_mean_rank);
    r.lines.push_back(buf);
    return r;
}

StageReport stage_predict(const Paths& p, const RunConfig&) {
    const RunData d = load_run_data(p);
    const Joined j = load_joined(p);
    const RankerModel ranker = load_ranker(p.ranker_model());
    std::vector<json> lines;
    for (std::size_t i = 0; i < j.queries.size(); ++i) {
        const auto& q = j.queries[i];
        const auto& e = j.evidence[i];
        if (q["split"] != "test") continue;
        const auto& s = d.find("test", q["sequence"].get<std::string>());
        json line{{"query_id", q["query_id"]}, {"kind", q["kind"]}};
        std::vector<double> scores;
        json base = json::array(), reranked = json::array();
        if (q["kind"] == "type") {
            for (const auto& c : type_candidates(d, s, q, e)) scores.push_back(ranker.compatibility(c));
            for (const auto& c : q["candidates"]) base.push_back(render_type_text(type_from_json(c["type"])));
            for (std::size_t k : rerank(scores)) reranked.push_back(base[k]);
            json truths = json::array();
            for (const auto& t : q["truths"]) truths.push_back(render_type_text(type_from_json(t)));
            line["truths"] = truths;
        } else {
            for (std::size_t c = 0; c < q["candidates"].size(); ++c) {
                const auto& cand = q["candidates"][c];
                std::vector<RankCandidate> subs;
                for (std::size_t m = 0; m < cand["types"].size(); ++m)
                    subs.push_back(make_candidate(d, s, cand["types"][m], cand["time"].get<double>(), e["candidates"][c][m]));
                scores.push_back(score_time(ranker, subs));
                base.push_back(cand["time"]);
            }
            for (std::size_t k : rerank(scores)) reranked.push_back(base[k]);
            line["true_time"] = q["true_time"];
        }
        line["base"] = base;
        line["reranked"] = reranked;
        line["scores"] = scores;
        lines.push_back(std::move(line));
    }
    write_jsonl(p.predictions(), lines);
    StageReport r;
    r.lines.push_back("predict: " + std::to_string(lines.size()) + " test queries scored");
    return r;
}

StageReport stage_evaluate(const Paths& p, const RunConfig& rc) {
    std::vector<EvalRecord> base, reranked, base_time, reranked_time;
    for (const auto& line : read_jsonl(p.predictions())) {
        EvalRecord r;
        r.query_id = line["query_id"].get<std::string>();
        if (line["kind"] == "type") {
            r.truths = line["truths"].get<std::vector<std::string>>();
            r.ranked = line["base"].get<std::vector<std::string>>();
            base.push_back(r);
            r.ranked = line["reranked"].get<std::vector<std::string>>();
            reranked.push_back(r);
        } else {
            r.ranked = {"time"};
            r.truths = {"time"};
            r.true_time = line["true_time"].get<double>();
            r.predicted_time = line["base"][0].get<double>();
            base_time.push_back(r);
            r.predicted_time = line["reranked"][0].get<double>();
            reranked_time.push_back(r);
        }
    }
    if (base.empty() && base_time.empty()) throw Error("evaluate: predictions.jsonl holds no test queries");
    std::vector<MetricReport> reports;
    const std::uint64_t seed = rc.seed ^ 0x626f6f74ULL;
    auto add_all = [&](const std::vector<EvalRecord>& records, const std::string& method) {
        if (records.empty()) return;
        for (auto& r : evaluate_records(records, rc.eval_m, method, rc.bootstrap, seed)) reports.push_back(r);
    };
    add_all(base, "base");
    add_all(reranked, "reranked");
    auto add_rmse = [&](const std::vector<EvalRecord>& records, const std::string& method) {
        if (records.empty()) return;
        const MetricFn fn = [](std::span<const EvalRecord> r) { return std::optional<double>(rmse_time(r)); };
        reports.push_back({method, "rmse", rmse_time(records), bootstrap_interval(records, fn, rc.bootstrap, seed), 0,
                           records.size()});
    };
    add_rmse(base_time, "base");
    add_rmse(reranked_time, "reranked");

    json arr = json::array();
    for (const auto& r : reports) arr.push_back(to_json(r));
    write_text(p.metrics_json(), json{{"reports", arr}}.dump(2) + "\n");
    write_metrics_csv(p.metrics_csv(), reports);
    StageReport out;
    for (const auto& r : reports) {
        if (r.metric != "mean_rank" && r.metric != "rmse") continue;
        if (r.metric == "mean_rank" && r.m != rc.eval_m.back()) continue;
        char buf[200];
        if (r.value && r.ci)
            std::snprintf(buf, sizeof buf, "evaluate: %-8s %s@%zu = %.4f  [%.4f, %.4f]  (%zu queries)", r.method.c_str(),
                          r.metric.c_str(), r.m, *r.value, r.ci->low, r.ci->high, r.n_records);
        else
            std::snprintf(buf, sizeof buf, "evaluate: %-8s %s@%zu: no covered queries", r.method.c_str(), r.metric.c_str(), r.m);
        out.lines.push_back(buf);
    }
    return out;
}

StageReport stage_report(const Paths& p, const RunConfig&) {
    std::vector<MetricReport> reports;
    const json metrics = read_json(p.metrics_json());
    for (const auto& j : metrics.at("reports")) reports.push_back(metric_report_from_json(j));
    write_report_files(p.report_dir(), reports);
    StageReport r;
    r.lines.push_back("report: wrote " + (p.report_dir() / "report.csv").string() + " and plots");
    return r;
}

}  // namespace

StageReport run_stage(Stage stage, const Config& config) {
    const RunConfig rc = RunConfig::from(config);
    const Paths p{rc.out_dir};
    fs::create_directories(p.out);
    StageReport pre;
    const auto data = {p.events(), p.split()};
    switch (stage) {
        case Stage::synth:
        case Stage::ingest:
            break;
        case Stage::train_base:
            require(p, config, stage, {Stage::synth, Stage::ingest}, data, pre);
            break;
        case Stage::propose:
            require(p, config, stage, {Stage::train_base}, {p.base_model()}, pre);
            break;
        case Stage::abduce:
            require(p, config, stage, {Stage::propose}, {p.proposals()}, pre);
            break;
        case Stage::retrieve:
            require(p, config, stage, {Stage::abduce}, {p.hypotheses()}, pre);
            break;
        case Stage::train_ranker:
            require(p, config, stage, {Stage::retrieve}, {p.evidence()}, pre);
            break;
        case Stage::predict:
            require(p, config, stage, {Stage::train_ranker}, {p.ranker_model()}, pre);
            break;
        case Stage::evaluate:
            require(p, config, stage, {Stage::predict}, {p.predictions()}, pre);
            break;
        case Stage::report:
            require(p, config, stage, {Stage::evaluate}, {p.metrics_json()}, pre);
            break;
    }
    StageReport r;
    switch (stage) {
        case Stage::synth: r = stage_synth(p, rc); break;
        case Stage::ingest: r = stage_ingest(p, rc); break;
        case Stage::train_base: r = stage_train_base(p, rc); break;
        case Stage::propose: r = stage_propose(p, rc); break;
        case Stage::abduce: r = stage_abduce(p, rc); break;
        case Stage::retrieve: r = stage_retrieve(p, rc); break;
        case Stage::train_ranker: r = stage_train_ranker(p, rc); break;
        case Stage::predict: r = stage_predict(p, rc); break;
        case Stage::evaluate: r = stage_evaluate(p, rc); break;
        case Stage::report: r = stage_report(p, rc); break;
    }
    stamp(p, config, rc, stage);
    r.lines.insert(r.lines.begin(), pre.lines.begin(), pre.lines.end());
    return r;
}

std::vector<StageReport> run_all(const Config& config) {
    const RunConfig rc = RunConfig::from(config);
    std::vector<StageReport> out;
    out.push_back(run_stage(rc.source == "synthetic" ? Stage::synth : Stage::ingest, config));
    for (Stage s : {Stage::train_base, Stage::propose, Stage::abduce, Stage::retrieve, Stage::train_ranker,
                    Stage::predict, Stage::evaluate, Stage::report})
        out.push_back(run_stage(s, config));
    return out;
}

}  // namespace evrank
