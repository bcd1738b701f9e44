#include "evrank/abduction.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "evrank/error.hpp"
#include "evrank/http.hpp"

namespace evrank {

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string s = ss.str();
    s.erase(std::remove(s.begin(), s.end(), '\r'), s.end());
    return s;
}

std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < text.size()) lines.emplace_back(text.substr(start));
            break;
        }
        lines.emplace_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

// Lowercased label with markdown decoration and repeated spaces removed.
std::string normalize_label(std::string_view raw) {
    std::string out;
    for (char c : raw) {
        if (c == '*' || c == '#' || c == '_' || c == '`') continue;
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!out.empty() && out.back() != ' ') out += ' ';
            continue;
        }
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    while (!out.empty() && (out.back() == ' ' || out.back() == ':')) out.pop_back();
    std::size_t a = 0;
    while (a < out.size() && (out[a] == '-' || out[a] == ' ')) ++a;
    return out.substr(a);
}

std::string join_lines(const std::vector<std::string>& lines, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (i > begin) out += '\n';
        out += lines[i];
    }
    return out;
}

std::string trim_trailing_newlines(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
    return s;
}

using Values = std::map<std::string, std::string>;

std::string fill(const std::string& text, const Values& values, std::string_view section) {
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '{') {
            std::size_t j = i + 1;
            while (j < text.size() && (std::islower(static_cast<unsigned char>(text[j])) || text[j] == '_')) ++j;
            if (j < text.size() && text[j] == '}' && j > i + 1) {
                const std::string name = text.substr(i + 1, j - i - 1);
                const auto it = values.find(name);
                if (it == values.end())
                    throw Error("prompt template section '" + std::string(section) + "': unresolvable placeholder {" +
                                name + "}");
                out += it->second;
                i = j + 1;
                continue;
            }
        }
        out += text[i++];
    }
    return out;
}

Field parse_field(const std::string& name) {
    if (name == "type") return Field::type;
    if (name == "time") return Field::time;
    if (name == "subject") return Field::subject;
    if (name == "object") return Field::object;
    if (name == "text") return Field::text;
    throw Error("prompt template: unknown field '" + name + "'");
}

std::optional<Field> field_for_label(const std::string& label, const FieldLabels* labels) {
    static const std::map<std::string, Field> aliases{
        {"predicate", Field::type},     {"event type", Field::type},   {"type", Field::type},
        {"product category", Field::type}, {"category", Field::type},  {"time", Field::time},
        {"event time", Field::time},    {"date", Field::time},         {"subject", Field::subject},
        {"subject name", Field::subject}, {"object", Field::object},   {"object name", Field::object},
        {"headline", Field::text},      {"event headline", Field::text}, {"review text", Field::text},
        {"review", Field::text},        {"text", Field::text}};
    if (labels)
        for (Field f : {Field::type, Field::time, Field::subject, Field::object, Field::text})
            if (normalize_label(labels->label(f)) == label) return f;
    const auto it = aliases.find(label);
    if (it == aliases.end()) return std::nullopt;
    return it->second;
}

// "label: value" lines; unknown labels and unlabelled lines are ignored.
std::map<Field, std::string> read_fields(const std::vector<std::string>& lines, std::size_t begin, std::size_t end,
                                         const FieldLabels* labels) {
    std::map<Field, std::string> out;
    for (std::size_t i = begin; i < end; ++i) {
        const auto colon = lines[i].find(':');
        if (colon == std::string::npos) continue;
        const auto f = field_for_label(normalize_label(lines[i].substr(0, colon)), labels);
        if (!f || out.count(*f)) continue;
        std::string v = trim(lines[i].substr(colon + 1));
        while (!v.empty() && v.front() == '*') v.erase(v.begin());
        while (!v.empty() && v.back() == '*') v.pop_back();
        out[*f] = trim(v);
    }
    return out;
}

std::optional<Date> read_date(const std::string& value) {
    if (value.size() < 10) return std::nullopt;
    try {
        return parse_date(std::string_view(value).substr(0, 10));
    } catch (const Error&) {
        return std::nullopt;
    }
}

bool is_cause_header(const std::string& line) {
    static const std::regex re("^cause event ?[0-9]*$");
    return std::regex_match(normalize_label(line), re);
}

bool ends_block(const std::string& line) {
    const auto n = normalize_label(line);
    return n == "effect" || n == "effect event" || n.rfind("example ", 0) == 0;
}

std::string header(const std::string& pattern, std::size_t n) {
    return fill(pattern, {{"n", std::to_string(n)}}, "labels");
}

}  // namespace

const std::string& FieldLabels::label(Field f) const {
    switch (f) {
        case Field::type: return type;
        case Field::time: return time;
        case Field::subject: return subject;
        case Field::object: return object;
        case Field::text: return text;
    }
    return type;
}

std::string render_hypothesis_text(const CauseHypothesis& h, Schema schema) {
    if (schema == Schema::structured)
        return render_type_text(StructuredType{h.subject.value_or(""), h.type, h.object.value_or("")}, h.text);
    return render_type_text(CategoricalType{h.type}, h.text);
}

std::vector<Demonstration> load_demonstrations(const std::filesystem::path& path, const FieldLabels& labels) {
    const auto lines = split_lines(read_file(path));
    std::vector<Demonstration> demos;
    std::size_t i = 0;
    auto block_end = [&](std::size_t from) {
        while (from < lines.size() && lines[from].rfind("@@", 0) != 0) ++from;
        return from;
    };
    while (i < lines.size()) {
        const std::string marker = trim(lines[i]);
        if (marker.empty()) {
            ++i;
            continue;
        }
        const std::size_t end = block_end(i + 1);
        const std::string body = trim_trailing_newlines(join_lines(lines, i + 1, end));
        if (marker == "@@ demo") {
            demos.push_back({body, {}});
        } else if (marker == "@@ cause") {
            if (demos.empty()) throw Error(path.string() + ":" + std::to_string(i + 1) + ": cause before any demo");
            demos.back().causes.push_back(body);
        } else {
            throw Error(path.string() + ":" + std::to_string(i + 1) + ": expected '@@ demo' or '@@ cause'");
        }
        i = end;
    }
    for (std::size_t d = 0; d < demos.size(); ++d) {
        const auto where = path.string() + ": demonstration " + std::to_string(d + 1);
        if (demos[d].causes.empty()) throw Error(where + " has no cause blocks");
        const auto effect_lines = split_lines(demos[d].effect);
        const auto effect = read_fields(effect_lines, 0, effect_lines.size(), &labels);
        const auto et = effect.count(Field::time) ? read_date(effect.at(Field::time)) : std::nullopt;
        if (!et) throw Error(where + ": effect has no parseable time");
        for (const auto& c : demos[d].causes) {
            const auto cl = split_lines(c);
            const auto cf = read_fields(cl, 0, cl.size(), &labels);
            const auto ct = cf.count(Field::time) ? read_date(cf.at(Field::time)) : std::nullopt;
            if (!ct) throw Error(where + ": cause has no parseable time");
            if (!(*ct < *et)) throw Error(where + ": cause dated " + format_date(*ct) + " is not before the effect");
        }
    }
    return demos;
}

PromptTemplate load_template(const std::filesystem::path& template_path, const std::filesystem::path& demos_path,
                             const std::vector<std::string>& fallback_vocabulary) {
    const auto lines = split_lines(read_file(template_path));
    std::map<std::string, std::string> sections;
    std::map<std::string, std::vector<std::string>> section_lines;
    std::string current;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].rfind("@@ ", 0) == 0) {
            current = trim(lines[i].substr(3));
            if (section_lines.count(current))
                throw Error(template_path.string() + ": duplicate section '" + current + "'");
            section_lines[current];
            continue;
        }
        if (current.empty()) {
            if (!trim(lines[i]).empty())
                throw Error(template_path.string() + ":" + std::to_string(i + 1) + ": text before the first section");
            continue;
        }
        section_lines[current].push_back(lines[i]);
    }
    for (const auto& [name, ls] : section_lines) sections[name] = trim_trailing_newlines(join_lines(ls, 0, ls.size()));
    auto need = [&](const char* name) -> std::string {
        const auto it = sections.find(name);
        if (it == sections.end()) throw Error(template_path.string() + ": missing section '" + name + "'");
        return it->second;
    };

    PromptTemplate t;
    t.preamble = need("preamble");
    t.examples = need("examples");
    t.example = need("example");
    t.query = need("query");
    for (const auto& line : section_lines["labels"]) {
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(template_path.string() + ": labels line without '=': " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto fields = [&] {
            std::vector<Field> out;
            std::istringstream ss(value);
            for (std::string w; ss >> w;) out.push_back(parse_field(w));
            return out;
        };
        if (key == "effect") t.labels.effect = value;
        else if (key == "cause") t.labels.cause = value;
        else if (key == "type") t.labels.type = value;
        else if (key == "time") t.labels.time = value;
        else if (key == "subject") t.labels.subject = value;
        else if (key == "object") t.labels.object = value;
        else if (key == "text") t.labels.text = value;
        else if (key == "effect_fields") t.labels.effect_fields = fields();
        else if (key == "cause_fields") t.labels.cause_fields = fields();
        else throw Error(template_path.string() + ": unknown label key '" + key + "'");
    }
    if (section_lines.count("vocabulary")) {
        for (const auto& line : section_lines["vocabulary"])
            if (!trim(line).empty()) t.vocabulary.push_back(line);
    } else {
        for (std::size_t i = 0; i < fallback_vocabulary.size(); ++i)
            t.vocabulary.push_back(std::to_string(i + 1) + ". " + fallback_vocabulary[i]);
    }
    if (!demos_path.empty()) t.demonstrations = load_demonstrations(demos_path, t.labels);
    return t;
}

std::string render_effect_block(const PromptTemplate& tmpl, const Event& effect, Date epoch) {
    std::string out = tmpl.labels.effect;
    const auto* s = std::get_if<StructuredType>(&effect.type);
    for (Field f : tmpl.labels.effect_fields) {
        std::string value;
        switch (f) {
            case Field::type: value = s ? s->predicate : std::get<CategoricalType>(effect.type).category; break;
            case Field::time: value = format_date(date_at(epoch, effect.time)); break;
            case Field::subject:
                if (!s) continue;
                value = s->subject;
                break;
            case Field::object:
                if (!s) continue;
                value = s->object;
                break;
            case Field::text:
                if (!effect.mark) continue;
                value = *effect.mark;
                break;
        }
        out += "\n" + tmpl.labels.label(f) + ": " + value;
    }
    return out;
}

std::string render_cause_block(const FieldLabels& labels, const CauseHypothesis& h, std::size_t n) {
    std::string out = header(labels.cause, n);
    for (Field f : labels.cause_fields) {
        std::optional<std::string> value;
        switch (f) {
            case Field::type: value = h.type; break;
            case Field::time: value = format_date(h.time); break;
            case Field::subject: value = h.subject; break;
            case Field::object: value = h.object; break;
            case Field::text: value = h.text; break;
        }
        if (value) out += "\n" + labels.label(f) + ": " + *value;
    }
    return out;
}

std::string render_causes(const FieldLabels& labels, const std::vector<CauseHypothesis>& causes) {
    std::string out;
    for (std::size_t i = 0; i < causes.size(); ++i) {
        if (i > 0) out += "\n\n";
        out += render_cause_block(labels, causes[i], i + 1);
    }
    return out;
}

std::string build_prompt(const PromptTemplate& tmpl, const Event& effect, Date epoch) {
    std::string vocabulary;
    for (std::size_t i = 0; i < tmpl.vocabulary.size(); ++i) vocabulary += (i ? "\n" : "") + tmpl.vocabulary[i];
    std::vector<std::string> parts{fill(
        tmpl.preamble, {{"vocabulary", vocabulary}, {"vocabulary_size", std::to_string(tmpl.vocabulary.size())}},
        "preamble")};
    if (!tmpl.demonstrations.empty()) {
        std::string examples;
        for (std::size_t d = 0; d < tmpl.demonstrations.size(); ++d) {
            const auto& demo = tmpl.demonstrations[d];
            std::string causes;
            for (std::size_t c = 0; c < demo.causes.size(); ++c)
                causes += (c ? "\n\n" : "") + header(tmpl.labels.cause, c + 1) + "\n" + demo.causes[c];
            if (d > 0) examples += "\n\n";
            examples += fill(tmpl.example,
                             {{"n", std::to_string(d + 1)},
                              {"effect", tmpl.labels.effect + "\n" + demo.effect},
                              {"causes", causes}},
                             "example");
        }
        parts.push_back(fill(tmpl.examples,
                             {{"num_examples", std::to_string(tmpl.demonstrations.size())}, {"examples", examples}},
                             "examples"));
    }
    parts.push_back(fill(tmpl.query, {{"effect", render_effect_block(tmpl, effect, epoch)}}, "query"));
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "\n\n" : "") + trim_trailing_newlines(parts[i]);
    return out + "\n";
}

ParsedCauses parse_causes(std::string_view text, Schema schema) {
    std::string clean(text);
    clean.erase(std::remove(clean.begin(), clean.end(), '\r'), clean.end());
    const auto lines = split_lines(clean);
    ParsedCauses out;
    std::size_t blocks = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (!is_cause_header(lines[i])) continue;
        std::size_t end = i + 1;
        while (end < lines.size() && !is_cause_header(lines[end]) && !ends_block(lines[end])) ++end;
        ++blocks;
        const auto fields = read_fields(lines, i + 1, end, nullptr);
        const std::string where = "cause block " + std::to_string(blocks) + " (line " + std::to_string(i + 1) + ")";
        auto get = [&](Field f) -> std::optional<std::string> {
            const auto it = fields.find(f);
            if (it == fields.end() || it->second.empty()) return std::nullopt;
            return it->second;
        };
        const auto type = get(Field::type);
        const auto time = get(Field::time);
        const auto date = time ? read_date(*time) : std::nullopt;
        if (!type) {
            out.warnings.push_back(where + ": no event type; skipped");
        } else if (!date) {
            out.warnings.push_back(where + (time ? ": unparseable time '" + *time + "'" : std::string(": no time")) +
                                   "; skipped");
        } else {
            CauseHypothesis h{*type, *date, std::nullopt, std::nullopt, get(Field::text)};
            if (schema == Schema::structured) {
                h.subject = get(Field::subject);
                h.object = get(Field::object);
            }
            out.causes.push_back(std::move(h));
        }
        i = end - 1;
    }
    if (blocks == 0) out.warnings.push_back("no cause blocks found");
    return out;
}

// ------------------------------------------------------------------- client

void LlmConfig::validate() const {
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw Error("llm: temperature must be >= 0");
    if (max_in_flight == 0) throw Error("llm: max_in_flight must be >= 1");
    if (model.empty()) throw Error("llm: model name is empty");
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256: digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

HttpChatBackend::HttpChatBackend(LlmConfig config) : config_(std::move(config)) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
}

std::string HttpChatBackend::complete(const std::string& model, double temperature, const std::string& prompt) {
    const nlohmann::json body{{"model", model},
                              {"temperature", temperature},
                              {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
    const std::string raw = post_json(config_.endpoint, "/chat/completions", body.dump(),
                                      {api_key_, config_.timeout_seconds, config_.retries, config_.retry_backoff_seconds});
    try {
        const auto j = nlohmann::json::parse(raw);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("chat completion response has no choices[0].message.content: " + raw.substr(0, 300));
    }
}

ScriptedBackend::ScriptedBackend(const std::filesystem::path& fixture) {
    std::ifstream in(fixture, std::ios::binary);
    if (!in) throw Error("cannot open mock completion fixture " + fixture.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text_ = ss.str();
}

OracleBackend::OracleBackend(SyntheticSpec spec, FieldLabels labels, Date epoch)
    : spec_(std::move(spec)), labels_(std::move(labels)), epoch_(epoch) {}

std::string OracleBackend::complete(const std::string&, double, const std::string& prompt) {
    const auto lines = split_lines(prompt);
    const std::string effect_label = normalize_label(labels_.effect);
    std::size_t start = lines.size();
    for (std::size_t i = lines.size(); i-- > 0;)
        if (normalize_label(lines[i]) == effect_label) {
            start = i;
            break;
        }
    if (start == lines.size()) throw Error("oracle: prompt has no effect block");
    std::size_t end = start + 1;
    while (end < lines.size() && !trim(lines[end]).empty()) ++end;
    const auto fields = read_fields(lines, start + 1, end, &labels_);
    if (!fields.count(Field::type) || !fields.count(Field::time)) throw Error("oracle: effect block lacks type or time");
    const auto it = std::find(spec_.types.begin(), spec_.types.end(), fields.at(Field::type));
    if (it == spec_.types.end()) throw Error("oracle: unknown effect type '" + fields.at(Field::type) + "'");
    const auto date = read_date(fields.at(Field::time));
    if (!date) throw Error("oracle: unparseable effect time");
    const double t = days_between(epoch_, *date);
    std::vector<CauseHypothesis> causes;
    for (const auto& r : spec_.causes_of(static_cast<std::uint32_t>(it - spec_.types.begin())))
        causes.push_back({spec_.types[r.cause], date_at(epoch_, t - std::round(r.lag.mean())), std::nullopt,
                          std::nullopt, std::nullopt});
    if (causes.empty()) return "No specific cause events.\n";
    return render_causes(labels_, causes) + "\n";
}

LlmClient::LlmClient(LlmConfig config, std::shared_ptr<LlmBackend> backend)
    : config_(std::move(config)), backend_(std::move(backend)) {
    config_.validate();
    if (!backend_) throw Error("llm: no backend");
    if (!config_.cache_dir.empty()) std::filesystem::create_directories(config_.cache_dir);
}

std::string LlmClient::cache_key(const std::string& model, double temperature, const std::string& prompt) {
    char temp[64];
    std::snprintf(temp, sizeof temp, "%.17g", temperature);
    std::string data = model;
    data += '\0';
    data += temp;
    data += '\0';
    data += prompt;
    return sha256_hex(data);
}

std::mutex& LlmClient::key_mutex(const std::string& key) {
    std::lock_guard lock(keys_mutex_);
    auto& m = key_mutexes_[key];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
}

std::string LlmClient::generate(const std::string& prompt) {
    if (config_.cache_dir.empty()) {
        ++calls_;
        return backend_->complete(config_.model, config_.temperature, prompt);
    }
    const std::string key = cache_key(config_.model, config_.temperature, prompt);
    std::lock_guard lock(key_mutex(key));
    const auto path = config_.cache_dir / (key + ".json");
    if (std::filesystem::exists(path)) {
        std::ifstream in(path, std::ios::binary);
        try {
            const auto j = nlohmann::json::parse(in);
            return j.at("completion").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw Error("cache file " + path.string() + " is corrupt: " + e.what());
        }
    }
    ++calls_;
    const std::string completion = backend_->complete(config_.model, config_.temperature, prompt);
    const nlohmann::json record{{"key", key},
                                {"model", config_.model},
                                {"temperature", config_.temperature},
                                {"prompt", prompt},
                                {"completion", completion}};
    std::ostringstream tid;
    tid << std::this_thread::get_id();
    const auto tmp = path.string() + ".tmp." + tid.str();
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write cache file " + tmp);
        out << record.dump(1) << '\n';
        if (!out) throw Error("cannot write cache file " + tmp);
    }
    std::filesystem::rename(tmp, path);
    return completion;
}

std::vector<std::string> LlmClient::generate_all(const std::vector<std::string>& prompts) {
    std::vector<std::string> unique;
    std::map<std::string, std::size_t> slot;
    for (const auto& p : prompts)
        if (slot.emplace(p, unique.size()).second) unique.push_back(p);
    std::vector<std::string> results(unique.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&] {
        for (std::size_t i; (i = next++) < unique.size();) {
            try {
                results[i] = generate(unique[i]);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::min(config_.max_in_flight, unique.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
    std::vector<std::string> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) out.push_back(results[slot[p]]);
    return out;
}

}  // namespace evrank
