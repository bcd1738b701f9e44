#pragma once

// Event data model: typed, timestamped events grouped into sequences, the
// vocabularies that map type names to dense ids, JSONL ingestion, and the
// chronological train/dev/test split.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace evrank {

enum class Schema { structured, categorical };

Schema parse_schema(std::string_view name);
std::string_view to_string(Schema schema);

/// predicate(subject, object), e.g. a GDELT event.
struct StructuredType {
    std::string subject;
    std::string predicate;
    std::string object;

    friend auto operator<=>(const StructuredType&, const StructuredType&) = default;
};

/// A single category name, e.g. an Amazon product category.
struct CategoricalType {
    std::string category;

    friend auto operator<=>(const CategoricalType&, const CategoricalType&) = default;
};

using EventType = std::variant<StructuredType, CategoricalType>;

struct Event {
    double time = 0.0;  // days since the dataset epoch
    EventType type;
    std::optional<std::string> mark;

    friend bool operator==(const Event&, const Event&) = default;
};

/// Events of one sequence in weakly increasing time order. Only events with
/// time in [window_start, window_end) belong to the sequence's observation
/// window; split segments carry their own window.
struct Sequence {
    std::string id;
    std::vector<Event> events;
    double window_start = 0.0;
    double window_end = 0.0;
};

using TypeId = std::uint64_t;

struct StructuredIds {
    std::uint32_t subject = 0;
    std::uint32_t predicate = 0;
    std::uint32_t object = 0;

    friend bool operator==(const StructuredIds&, const StructuredIds&) = default;
};

/// Dense, lexicographically assigned ids for entities, predicates and
/// categories. Structured type ids are flattened as
/// (subject * |P| + predicate) * |E| + object.
class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(Schema schema, std::vector<std::string> names_a, std::vector<std::string> names_b = {});

    static Vocabulary from_events(Schema schema, std::span<const Sequence> sequences);

    Schema schema() const { return schema_; }
    const std::vector<std::string>& entities() const { return entities_; }
    const std::vector<std::string>& predicates() const { return predicates_; }
    const std::vector<std::string>& categories() const { return categories_; }

    std::optional<std::uint32_t> entity_id(std::string_view name) const;
    std::optional<std::uint32_t> predicate_id(std::string_view name) const;
    std::optional<std::uint32_t> category_id(std::string_view name) const;

    TypeId type_count() const;
    std::optional<TypeId> find(const EventType& type) const;
    TypeId encode(const EventType& type) const;  // throws on unknown names
    EventType decode(TypeId id) const;

    StructuredIds split(TypeId id) const;
    TypeId join(StructuredIds ids) const;

private:
    using Index = std::unordered_map<std::string, std::uint32_t>;
    static Index make_index(const std::vector<std::string>& names);

    Schema schema_ = Schema::categorical;
    std::vector<std::string> entities_;
    std::vector<std::string> predicates_;
    std::vector<std::string> categories_;
    Index entity_index_;
    Index predicate_index_;
    Index category_index_;
};

using Date = std::chrono::sys_days;

Date parse_date(std::string_view text);  // YYYY-MM-DD
std::string format_date(Date date);
double days_between(Date epoch, Date date);
Date date_at(Date epoch, double days);  // calendar day containing epoch + days

struct Dataset {
    Schema schema = Schema::categorical;
    std::vector<Sequence> sequences;
    Vocabulary vocab;
    Date epoch{};

    std::size_t event_count() const;
};

struct LoadOptions {
    Date epoch = Date{};  // 1970-01-01 unless configured
    /// Observation window end shared by all sequences. When unset, the end of
    /// the calendar day holding the last event is used.
    std::optional<double> window_end;
};

Dataset load_dataset(const std::filesystem::path& path, Schema schema, const LoadOptions& options = {});
Dataset read_dataset(std::istream& in, Schema schema, const LoadOptions& options = {},
                     std::string_view source = "<stream>");
void write_dataset(std::ostream& out, const Dataset& dataset);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);

struct DatasetSplit {
    Dataset train;
    Dataset dev;
    Dataset test;
    std::vector<std::string> warnings;
};

/// Partitions every sequence into [epoch, train_end), [train_end, dev_end)
/// and [dev_end, end). Sequence ids are preserved in all three parts, so a
/// segment can be matched back to its full sequence for history context.
DatasetSplit split_by_date(const Dataset& dataset, Date train_end, Date dev_end);

/// The full history of `full` up to the segment's window end, with the
/// segment's window. Used to evaluate dev/test segments with their past.
Sequence with_context(const Sequence& segment, const Sequence& full);

/// "PREDICATE(SUBJECT, OBJECT)" or "CATEGORY", followed by ": mark" when a
/// mark is given.
std::string render_type_text(const EventType& type, const std::optional<std::string>& mark = std::nullopt);

struct IngestSummary {
    std::size_t sequences = 0;
    std::size_t events = 0;
    std::size_t entities = 0;
    std::size_t predicates = 0;
    std::size_t categories = 0;
    double first_time = 0.0;
    double last_time = 0.0;
};

IngestSummary summarize(const Dataset& dataset);

/// Events reduced to (time, type id), the form the models consume.
struct CodedEvent {
    double time = 0.0;
    TypeId type = 0;
};

std::vector<CodedEvent> encode_events(const Sequence& sequence, const Vocabulary& vocab);

/// Number of leading events with time strictly before `t`.
std::size_t count_before(std::span<const CodedEvent> events, double t);

}  // namespace evrank
