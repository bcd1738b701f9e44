#include "evrank/event.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "evrank/error.hpp"

namespace evrank {

using nlohmann::json;

Schema parse_schema(std::string_view name) {
    if (name == "structured") return Schema::structured;
    if (name == "categorical") return Schema::categorical;
    throw Error("unknown schema '" + std::string(name) + "' (expected structured or categorical)");
}

std::string_view to_string(Schema schema) {
    return schema == Schema::structured ? "structured" : "categorical";
}

// ---------------------------------------------------------------- vocabulary

Vocabulary::Index Vocabulary::make_index(const std::vector<std::string>& names) {
    Index index;
    for (std::uint32_t i = 0; i < names.size(); ++i) index.emplace(names[i], i);
    return index;
}

Vocabulary::Vocabulary(Schema schema, std::vector<std::string> names_a, std::vector<std::string> names_b)
    : schema_(schema) {
    auto canonical = [](std::vector<std::string> v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        return v;
    };
    if (schema == Schema::structured) {
        entities_ = canonical(std::move(names_a));
        predicates_ = canonical(std::move(names_b));
        entity_index_ = make_index(entities_);
        predicate_index_ = make_index(predicates_);
    } else {
        categories_ = canonical(std::move(names_a));
        category_index_ = make_index(categories_);
    }
}

Vocabulary Vocabulary::from_events(Schema schema, std::span<const Sequence> sequences) {
    std::vector<std::string> a, b;
    for (const auto& seq : sequences) {
        for (const auto& ev : seq.events) {
            if (schema == Schema::structured) {
                const auto& st = std::get<StructuredType>(ev.type);
                a.push_back(st.subject);
                a.push_back(st.object);
                b.push_back(st.predicate);
            } else {
                a.push_back(std::get<CategoricalType>(ev.type).category);
            }
        }
    }
    return Vocabulary(schema, std::move(a), std::move(b));
}

namespace {
std::optional<std::uint32_t> lookup(const std::unordered_map<std::string, std::uint32_t>& index,
                                    std::string_view name) {
    auto it = index.find(std::string(name));
    if (it == index.end()) return std::nullopt;
    return it->second;
}
}  // namespace

std::optional<std::uint32_t> Vocabulary::entity_id(std::string_view name) const {
    return lookup(entity_index_, name);
}
std::optional<std::uint32_t> Vocabulary::predicate_id(std::string_view name) const {
    return lookup(predicate_index_, name);
}
std::optional<std::uint32_t> Vocabulary::category_id(std::string_view name) const {
    return lookup(category_index_, name);
}

TypeId Vocabulary::type_count() const {
    if (schema_ == Schema::structured) {
        const TypeId e = entities_.size();
        return e * e * predicates_.size();
    }
    return categories_.size();
}

std::optional<TypeId> Vocabulary::find(const EventType& type) const {
    if (schema_ == Schema::structured) {
        const auto* st = std::get_if<StructuredType>(&type);
        if (!st) return std::nullopt;
        auto s = entity_id(st->subject);
        auto p = predicate_id(st->predicate);
        auto o = entity_id(st->object);
        if (!s || !p || !o) return std::nullopt;
        return join({*s, *p, *o});
    }
    const auto* ct = std::get_if<CategoricalType>(&type);
    if (!ct) return std::nullopt;
    auto c = category_id(ct->category);
    if (!c) return std::nullopt;
    return TypeId{*c};
}

TypeId Vocabulary::encode(const EventType& type) const {
    if (auto id = find(type)) return *id;
    throw Error("event type '" + render_type_text(type) + "' is not in the vocabulary");
}

EventType Vocabulary::decode(TypeId id) const {
    if (id >= type_count()) throw Error("type id " + std::to_string(id) + " out of range");
    if (schema_ == Schema::structured) {
        const auto ids = split(id);
        return StructuredType{entities_[ids.subject], predicates_[ids.predicate], entities_[ids.object]};
    }
    return CategoricalType{categories_[id]};
}

StructuredIds Vocabulary::split(TypeId id) const {
    const TypeId e = entities_.size();
    const TypeId p = predicates_.size();
    StructuredIds out;
    out.object = static_cast<std::uint32_t>(id % e);
    id /= e;
    out.predicate = static_cast<std::uint32_t>(id % p);
    out.subject = static_cast<std::uint32_t>(id / p);
    return out;
}

TypeId Vocabulary::join(StructuredIds ids) const {
    const TypeId e = entities_.size();
    const TypeId p = predicates_.size();
    return (TypeId{ids.subject} * p + ids.predicate) * e + ids.object;
}

// --------------------------------------------------------------------- dates

Date parse_date(std::string_view text) {
    auto fail = [&] { return Error("invalid date '" + std::string(text) + "' (expected YYYY-MM-DD)"); };
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw fail();
    int y = 0;
    unsigned m = 0, d = 0;
    auto parse = [&](std::string_view part, auto& out) {
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
        if (ec != std::errc{} || ptr != part.data() + part.size()) throw fail();
    };
    parse(text.substr(0, 4), y);
    parse(text.substr(5, 2), m);
    parse(text.substr(8, 2), d);
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw fail();
    return Date{ymd};
}

std::string format_date(Date date) {
    const std::chrono::year_month_day ymd{date};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

double days_between(Date epoch, Date date) {
    return static_cast<double>((date - epoch).count());
}

Date date_at(Date epoch, double days) {
    return epoch + std::chrono::days{static_cast<long>(std::floor(days))};
}

// ------------------------------------------------------------------- dataset

std::size_t Dataset::event_count() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.events.size();
    return n;
}

namespace {

std::string required_string(const json& obj, const char* field, std::string_view source, std::size_t line) {
    auto it = obj.find(field);
    if (it == obj.end())
        throw Error(std::string(source) + ":" + std::to_string(line) + ": missing field \"" + field + "\"");
    if (!it->is_string() || it->get_ref<const std::string&>().empty())
        throw Error(std::string(source) + ":" + std::to_string(line) + ": field \"" + field +
                    "\" must be a non-empty string");
    return it->get<std::string>();
}

Event parse_event(const json& obj, Schema schema, std::string_view source, std::size_t line) {
    const std::string where = std::string(source) + ":" + std::to_string(line) + ": ";
    if (!obj.is_object()) throw Error(where + "expected a JSON object");
    auto t = obj.find("time");
    if (t == obj.end()) throw Error(where + "missing field \"time\"");
    if (!t->is_number()) throw Error(where + "field \"time\" must be a number");
    Event ev;
    ev.time = t->get<double>();
    if (!std::isfinite(ev.time) || ev.time < 0.0) throw Error(where + "field \"time\" must be finite and >= 0");

    auto ty = obj.find("type");
    if (ty == obj.end()) throw Error(where + "missing field \"type\"");
    if (!ty->is_object()) throw Error(where + "field \"type\" must be an object");
    if (schema == Schema::structured) {
        ev.type = StructuredType{required_string(*ty, "subject", source, line),
                                 required_string(*ty, "predicate", source, line),
                                 required_string(*ty, "object", source, line)};
    } else {
        ev.type = CategoricalType{required_string(*ty, "category", source, line)};
    }
    if (auto m = obj.find("mark"); m != obj.end() && !m->is_null()) {
        if (!m->is_string() || m->get_ref<const std::string&>().empty())
            throw Error(where + "field \"mark\" must be a non-empty string when present");
        ev.mark = m->get<std::string>();
    }
    return ev;
}

}  // namespace

Dataset read_dataset(std::istream& in, Schema schema, const LoadOptions& options, std::string_view source) {
    Dataset ds;
    ds.schema = schema;
    ds.epoch = options.epoch;
    std::unordered_map<std::string, std::size_t> seq_index;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(std::string(source) + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        Event ev = parse_event(obj, schema, source, line_no);
        std::string seq_id = "0";
        if (auto s = obj.find("seq_id"); s != obj.end()) {
            if (s->is_string()) seq_id = s->get<std::string>();
            else if (s->is_number_integer()) seq_id = std::to_string(s->get<long long>());
            else throw Error(std::string(source) + ":" + std::to_string(line_no) + ": field \"seq_id\" must be a string");
        }
        auto [it, inserted] = seq_index.emplace(seq_id, ds.sequences.size());
        if (inserted) ds.sequences.push_back(Sequence{seq_id, {}, 0.0, 0.0});
        ds.sequences[it->second].events.push_back(std::move(ev));
    }
    if (ds.sequences.empty()) throw Error(std::string(source) + ": no events (empty file)");

    double last = 0.0;
    for (auto& seq : ds.sequences) {
        std::stable_sort(seq.events.begin(), seq.events.end(),
                         [](const Event& a, const Event& b) { return a.time < b.time; });
        last = std::max(last, seq.events.back().time);
    }
    const double end = options.window_end.value_or(std::floor(last) + 1.0);
    if (end <= last) throw Error(std::string(source) + ": window end must be after the last event");
    for (auto& seq : ds.sequences) seq.window_end = end;
    ds.vocab = Vocabulary::from_events(schema, ds.sequences);
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path, Schema schema, const LoadOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open dataset file " + path.string());
    return read_dataset(in, schema, options, path.string());
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
    for (const auto& seq : dataset.sequences) {
        for (const auto& ev : seq.events) {
            json obj;
            obj["time"] = ev.time;
            if (const auto* st = std::get_if<StructuredType>(&ev.type)) {
                obj["type"] = {{"subject", st->subject}, {"predicate", st->predicate}, {"object", st->object}};
            } else {
                obj["type"] = {{"category", std::get<CategoricalType>(ev.type).category}};
            }
            if (ev.mark) obj["mark"] = *ev.mark;
            obj["seq_id"] = seq.id;
            out << obj.dump() << '\n';
        }
    }
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write dataset file " + path.string());
    write_dataset(out, dataset);
}

DatasetSplit split_by_date(const Dataset& dataset, Date train_end, Date dev_end) {
    if (!(train_end < dev_end))
        throw Error("split_by_date: train_end " + format_date(train_end) + " must precede dev_end " +
                    format_date(dev_end));
    const double a = days_between(dataset.epoch, train_end);
    const double b = days_between(dataset.epoch, dev_end);

    DatasetSplit out;
    for (Dataset* part : {&out.train, &out.dev, &out.test}) {
        part->schema = dataset.schema;
        part->vocab = dataset.vocab;
        part->epoch = dataset.epoch;
    }
    double first = std::numeric_limits<double>::infinity(), last = -first;
    for (const auto& seq : dataset.sequences) {
        const double end = seq.window_end;
        Sequence tr{seq.id, {}, seq.window_start, std::min(a, end)};
        Sequence dv{seq.id, {}, std::max(a, seq.window_start), std::min(b, end)};
        Sequence te{seq.id, {}, std::max(b, seq.window_start), end};
        for (const auto& ev : seq.events) {
            first = std::min(first, ev.time);
            last = std::max(last, ev.time);
            if (ev.time < a) tr.events.push_back(ev);
            else if (ev.time < b) dv.events.push_back(ev);
            else te.events.push_back(ev);
        }
        out.train.sequences.push_back(std::move(tr));
        out.dev.sequences.push_back(std::move(dv));
        out.test.sequences.push_back(std::move(te));
    }
    auto warn_if_empty = [&](const Dataset& part, const char* name) {
        if (part.event_count() == 0)
            out.warnings.push_back(std::string(name) + " split is empty (boundaries " + format_date(train_end) +
                                   " / " + format_date(dev_end) + " vs data range " +
                                   format_date(date_at(dataset.epoch, first)) + " .. " +
                                   format_date(date_at(dataset.epoch, last)) + ")");
    };
    warn_if_empty(out.train, "train");
    warn_if_empty(out.dev, "dev");
    warn_if_empty(out.test, "test");
    return out;
}

Sequence with_context(const Sequence& segment, const Sequence& full) {
    Sequence out{segment.id, {}, segment.window_start, segment.window_end};
    for (const auto& ev : full.events) {
        if (ev.time >= segment.window_end) break;
        out.events.push_back(ev);
    }
    return out;
}

std::string render_type_text(const EventType& type, const std::optional<std::string>& mark) {
    std::string text;
    if (const auto* st = std::get_if<StructuredType>(&type)) {
        text = st->predicate + "(" + st->subject + ", " + st->object + ")";
    } else {
        text = std::get<CategoricalType>(type).category;
    }
    if (mark) {
        text += ": ";
        text += *mark;
    }
    return text;
}

IngestSummary summarize(const Dataset& dataset) {
    IngestSummary s;
    s.sequences = dataset.sequences.size();
    s.events = dataset.event_count();
    s.entities = dataset.vocab.entities().size();
    s.predicates = dataset.vocab.predicates().size();
    s.categories = dataset.vocab.categories().size();
    bool any = false;
    for (const auto& seq : dataset.sequences) {
        if (seq.events.empty()) continue;
        s.first_time = any ? std::min(s.first_time, seq.events.front().time) : seq.events.front().time;
        s.last_time = any ? std::max(s.last_time, seq.events.back().time) : seq.events.back().time;
        any = true;
    }
    return s;
}

std::vector<CodedEvent> encode_events(const Sequence& sequence, const Vocabulary& vocab) {
    std::vector<CodedEvent> out;
    out.reserve(sequence.events.size());
    for (const auto& ev : sequence.events) out.push_back({ev.time, vocab.encode(ev.type)});
    return out;
}

std::size_t count_before(std::span<const CodedEvent> events, double t) {
    auto it = std::lower_bound(events.begin(), events.end(), t,
                               [](const CodedEvent& e, double v) { return e.time < v; });
    return static_cast<std::size_t>(it - events.begin());
}

}  // namespace evrank
