#include <charconv>
#include <fstream>
#include <sstream>

#include "evrank/error.hpp"
#include "evrank/pipeline.hpp"

namespace evrank {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

Config Config::parse(std::istream& in, const std::string& source, const std::filesystem::path& base_dir) {
    Config c;
    c.base_dir_ = base_dir;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw Error(source + ":" + std::to_string(no) + ": expected 'key = value', got '" + body + "'");
        const std::string key = trim(std::string_view(body).substr(0, eq));
        if (key.empty()) throw Error(source + ":" + std::to_string(no) + ": empty key");
        if (c.values_.count(key)) throw Error(source + ":" + std::to_string(no) + ": duplicate key '" + key + "'");
        c.values_[key] = trim(std::string_view(body).substr(eq + 1));
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config file " + path.string());
    return parse(in, path.string(), std::filesystem::absolute(path).parent_path());
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::string Config::require(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end() || it->second.empty()) throw Error("config: '" + key + "' is required");
    return it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw Error("config: '" + key + "' must be a number, got '" + v + "'");
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw Error("config: '" + key + "' must be a non-negative integer, got '" + v + "'");
    return out;
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(get_u64(key, fallback));
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error("config: '" + key + "' must be true or false, got '" + v + "'");
}

std::vector<std::size_t> Config::get_size_list(const std::string& key, const std::vector<std::size_t>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::size_t> out;
    std::stringstream ss(values_.at(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        Config one;
        one.set(key, trim(item));
        out.push_back(one.get_size(key, 0));
    }
    if (out.empty()) throw Error("config: '" + key + "' is an empty list");
    return out;
}

std::filesystem::path Config::get_path(const std::string& key, const std::filesystem::path& fallback) const {
    if (!has(key) || values_.at(key).empty()) return fallback;
    std::filesystem::path p(values_.at(key));
    if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
    return p.lexically_normal();
}

std::string Config::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

std::string Config::hash() const { return sha256_hex(canonical()); }

Stage parse_stage(std::string_view name) {
    for (Stage s : {Stage::synth, Stage::ingest, Stage::train_base, Stage::propose, Stage::abduce, Stage::retrieve,
                    Stage::train_ranker, Stage::predict, Stage::evaluate, Stage::report})
        if (to_string(s) == name) return s;
    throw Error("unknown stage '" + std::string(name) + "'");
}

std::string_view to_string(Stage stage) {
    switch (stage) {
        case Stage::synth: return "synth";
        case Stage::ingest: return "ingest";
        case Stage::train_base: return "train-base";
        case Stage::propose: return "propose";
        case Stage::abduce: return "abduce";
        case Stage::retrieve: return "retrieve";
        case Stage::train_ranker: return "train-ranker";
        case Stage::predict: return "predict";
        case Stage::evaluate: return "evaluate";
        case Stage::report: return "report";
    }
    return "?";
}

RunConfig RunConfig::from(const Config& c) {
    static const char* known[] = {
        "seed", "out", "data.source", "data.path", "data.schema", "data.epoch", "data.window_end", "split.train_end",
        "split.dev_end", "synthetic.types", "synthetic.sequences", "synthetic.horizon", "synthetic.seed",
        "synthetic.rules", "synthetic.train_fraction", "synthetic.dev_fraction", "base.kind", "base.epochs",
        "base.learning_rate", "base.batch_size", "base.patience", "base.mc_samples", "base.type_samples",
        "attentive.entity_dim", "attentive.predicate_dim", "attentive.category_dim", "attentive.time_dim",
        "attentive.key_dim", "attentive.heads", "attentive.layers", "attentive.time_base", "propose.M",
        "propose.M_prime", "propose.mbr_samples", "propose.lookahead", "propose.warmup", "queries.max_train",
        "queries.max_dev", "queries.max_test", "queries.time", "queries.max_time", "prompt.template", "prompt.demos",
        "llm.backend", "llm.fixture", "llm.endpoint", "llm.model", "llm.api_key_env", "llm.temperature",
        "llm.max_in_flight", "llm.retries", "llm.retry_backoff", "llm.timeout", "llm.cache_dir", "retrieval.D",
        "retrieval.total_cap", "retrieval.sim", "embedder.kind", "embedder.ngram", "embedder.dim", "embedder.seed",
        "embedder.endpoint", "embedder.model", "embedder.api_key_env", "embedder.batch_size", "embedder.cache_dir",
        "ranker.entity_dim", "ranker.predicate_dim", "ranker.category_dim", "ranker.time_dim", "ranker.key_dim",
        "ranker.heads", "ranker.layers", "ranker.hidden", "ranker.time_base", "ranker.beta", "ranker.learning_rate",
        "ranker.epochs", "ranker.batch_size", "ranker.patience", "ranker.negatives", "ranker.noise_times",
        "ranker.noise_types", "eval.M", "eval.bootstrap"};
    for (const auto& [k, v] : c.values())
        if (std::find(std::begin(known), std::end(known), k) == std::end(known))
            throw Error("config: unknown key '" + k + "'");

    RunConfig r;
    r.seed = c.get_u64("seed", r.seed);
    r.out_dir = c.get_path("out", r.out_dir);

    r.source = c.get("data.source", r.source);
    if (r.source != "synthetic" && r.source != "file")
        throw Error("config: data.source must be synthetic or file, got '" + r.source + "'");
    r.data_path = c.get_path("data.path");
    r.schema = parse_schema(c.get("data.schema", "categorical"));
    r.epoch = c.get("data.epoch", r.source == "synthetic" ? "2020-01-01" : r.epoch);
    if (c.has("data.window_end")) r.window_end = c.get_double("data.window_end", 0.0);
    r.train_end = c.get("split.train_end", "");
    r.dev_end = c.get("split.dev_end", "");
    r.synthetic_types = c.get_size("synthetic.types", r.synthetic_types);
    r.synthetic_sequences = c.get_size("synthetic.sequences", r.synthetic_sequences);
    r.synthetic_horizon = c.get_double("synthetic.horizon", r.synthetic_horizon);
    r.synthetic_seed = c.get_u64("synthetic.seed", r.synthetic_seed);
    r.synthetic_rules = c.get_path("synthetic.rules");
    r.train_fraction = c.get_double("synthetic.train_fraction", r.train_fraction);
    r.dev_fraction = c.get_double("synthetic.dev_fraction", r.dev_fraction);
    if (r.source == "synthetic") {
        if (r.schema != Schema::categorical) throw Error("config: synthetic data is categorical");
        if (!(r.train_fraction > 0.0 && r.dev_fraction >= 0.0 && r.train_fraction + r.dev_fraction < 1.0))
            throw Error("config: synthetic train/dev fractions must be positive and sum below 1");
    } else {
        if (r.data_path.empty()) throw Error("config: data.path is required when data.source = file");
        if (r.train_end.empty() || r.dev_end.empty())
            throw Error("config: split.train_end and split.dev_end are required when data.source = file");
    }

    r.base_kind = c.get("base.kind", r.base_kind);
    if (r.base_kind != "attentive" && r.base_kind != "hawkes")
        throw Error("config: base.kind must be attentive or hawkes, got '" + r.base_kind + "'");
    auto& bt = r.base_train;
    bt.epochs = c.get_size("base.epochs", 30);
    bt.learning_rate = c.get_double("base.learning_rate", bt.learning_rate);
    bt.batch_size = c.get_size("base.batch_size", bt.batch_size);
    bt.patience = c.get_size("base.patience", 3);
    bt.mc_samples_per_interval = c.get_size("base.mc_samples", bt.mc_samples_per_interval);
    bt.survival_type_samples = c.get_size("base.type_samples", bt.survival_type_samples);
    bt.validate();
    auto& a = r.attentive;
    a.entity_dim = c.get_size("attentive.entity_dim", a.entity_dim);
    a.predicate_dim = c.get_size("attentive.predicate_dim", a.predicate_dim);
    a.category_dim = c.get_size("attentive.category_dim", a.category_dim);
    a.time_dim = c.get_size("attentive.time_dim", a.time_dim);
    a.key_dim = c.get_size("attentive.key_dim", a.key_dim);
    a.heads = c.get_size("attentive.heads", a.heads);
    a.layers = c.get_size("attentive.layers", a.layers);
    a.time_base = c.get_double("attentive.time_base", a.time_base);

    r.m = c.get_size("propose.M", r.m);
    r.m_prime = c.get_size("propose.M_prime", r.m_prime);
    r.mbr_samples = c.get_size("propose.mbr_samples", r.mbr_samples);
    r.lookahead = c.get_double("propose.lookahead", r.lookahead);
    r.warmup = c.get_double("propose.warmup", r.warmup);
    if (r.m == 0 || r.m_prime == 0 || r.mbr_samples == 0) throw Error("config: M, M_prime and mbr_samples must be positive");
    r.max_train_queries = c.get_size("queries.max_train", r.max_train_queries);
    r.max_dev_queries = c.get_size("queries.max_dev", r.max_dev_queries);
    r.max_test_queries = c.get_size("queries.max_test", r.max_test_queries);
    r.time_queries = c.get_bool("queries.time", r.time_queries);
    r.max_time_queries = c.get_size("queries.max_time", r.max_time_queries);

    r.prompt_template = c.get_path("prompt.template");
    r.prompt_demos = c.get_path("prompt.demos");
    r.llm_backend = c.get("llm.backend", r.llm_backend);
    if (r.llm_backend != "oracle" && r.llm_backend != "scripted" && r.llm_backend != "http")
        throw Error("config: llm.backend must be oracle, scripted or http, got '" + r.llm_backend + "'");
    r.llm_fixture = c.get_path("llm.fixture");
    auto& l = r.llm;
    l.endpoint = c.get("llm.endpoint", l.endpoint);
    l.model = c.get("llm.model", l.model);
    l.api_key_env = c.get("llm.api_key_env", l.api_key_env);
    l.temperature = c.get_double("llm.temperature", l.temperature);
    l.max_in_flight = c.get_size("llm.max_in_flight", l.max_in_flight);
    l.retries = c.get_size("llm.retries", l.retries);
    l.retry_backoff_seconds = c.get_double("llm.retry_backoff", l.retry_backoff_seconds);
    l.timeout_seconds = c.get_double("llm.timeout", l.timeout_seconds);
    l.cache_dir = c.get_path("llm.cache_dir", r.out_dir / "cache" / "llm");
    l.validate();

    r.depth = c.get_size("retrieval.D", r.depth);
    r.total_cap = c.get_size("retrieval.total_cap", r.total_cap);
    r.sim = parse_sim_kind(c.get("retrieval.sim", "edit"));
    r.embedder = c.get("embedder.kind", r.embedder);
    if (r.embedder != "hashed" && r.embedder != "remote")
        throw Error("config: embedder.kind must be hashed or remote, got '" + r.embedder + "'");
    r.hashed.ngram = c.get_size("embedder.ngram", r.hashed.ngram);
    r.hashed.dim = c.get_size("embedder.dim", r.hashed.dim);
    r.hashed.seed = c.get_u64("embedder.seed", r.hashed.seed);
    r.remote.endpoint = c.get("embedder.endpoint", "");
    r.remote.model = c.get("embedder.model", r.remote.model);
    r.remote.api_key_env = c.get("embedder.api_key_env", r.remote.api_key_env);
    r.remote.batch_size = c.get_size("embedder.batch_size", r.remote.batch_size);
    r.remote.cache_dir = c.get_path("embedder.cache_dir", r.out_dir / "cache" / "embeddings");

    auto& k = r.ranker;
    k.entity_dim = c.get_size("ranker.entity_dim", k.entity_dim);
    k.predicate_dim = c.get_size("ranker.predicate_dim", k.predicate_dim);
    k.category_dim = c.get_size("ranker.category_dim", k.category_dim);
    k.time_dim = c.get_size("ranker.time_dim", k.time_dim);
    k.key_dim = c.get_size("ranker.key_dim", k.key_dim);
    k.heads = c.get_size("ranker.heads", k.heads);
    k.layers = c.get_size("ranker.layers", k.layers);
    k.hidden = c.get_size("ranker.hidden", k.hidden);
    k.time_base = c.get_double("ranker.time_base", k.time_base);
    auto& rt = r.ranker_train;
    rt.beta = c.get_double("ranker.beta", rt.beta);
    rt.learning_rate = c.get_double("ranker.learning_rate", 3e-3);
    rt.epochs = c.get_size("ranker.epochs", 30);
    rt.batch_size = c.get_size("ranker.batch_size", rt.batch_size);
    rt.patience = c.get_size("ranker.patience", 4);
    rt.noise_times = c.get_size("ranker.noise_times", rt.noise_times);
    rt.noise_types = c.get_size("ranker.noise_types", rt.noise_types);
    rt.seed = r.seed;
    rt.validate();
    r.negatives = c.get_size("ranker.negatives", r.negatives);
    if (r.negatives == 0) throw Error("config: ranker.negatives must be at least 1");

    r.eval_m = c.get_size_list("eval.M", r.eval_m);
    for (std::size_t m : r.eval_m)
        if (m == 0 || m > r.m) throw Error("config: eval.M entries must lie in [1, propose.M]");
    r.bootstrap = c.get_size("eval.bootstrap", r.bootstrap);
    return r;
}

}  // namespace evrank
