#pragma once

// Few-shot abductive prompting: template and demonstration assets, prompt
// assembly, a cache-first chat-completion client with pluggable backends, and
// a tolerant parser for generated cause blocks.

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "evrank/event.hpp"
#include "evrank/synthetic.hpp"

namespace evrank {

struct CauseHypothesis {
    std::string type;  // predicate, or category for the categorical schema
    Date time{};
    std::optional<std::string> subject;
    std::optional<std::string> object;
    std::optional<std::string> text;  // headline or review text

    friend bool operator==(const CauseHypothesis&, const CauseHypothesis&) = default;
};

/// Text rendering used for similarity search: "TYPE(SUBJECT, OBJECT): text",
/// with absent parts left empty, or "TYPE: text" for categorical hypotheses.
std::string render_hypothesis_text(const CauseHypothesis& h, Schema schema);

enum class Field { type, time, subject, object, text };

struct FieldLabels {
    std::string effect = "effect";
    std::string cause = "cause event {n}";
    std::string type = "predicate";
    std::string time = "time";
    std::string subject = "subject";
    std::string object = "object";
    std::string text = "headline";
    std::vector<Field> effect_fields{Field::type, Field::time, Field::subject, Field::object};
    std::vector<Field> cause_fields{Field::type, Field::time, Field::subject, Field::object, Field::text};

    const std::string& label(Field f) const;
};

/// A demonstration as stored in the asset: field lines of the effect block
/// and of each cause block, without their header lines.
struct Demonstration {
    std::string effect;
    std::vector<std::string> causes;
};

struct PromptTemplate {
    std::string preamble;  // placeholders: {vocabulary}, {vocabulary_size}
    std::string examples;  // {num_examples}, {examples}
    std::string example;   // {n}, {effect}, {causes}
    std::string query;     // {effect}
    FieldLabels labels;
    std::vector<std::string> vocabulary;  // numbered list lines
    std::vector<Demonstration> demonstrations;
};

/// Reads a template file ("@@ section" blocks) and a demonstration file
/// ("@@ demo" / "@@ cause" blocks). When the template has no vocabulary
/// section, `fallback_vocabulary` is numbered instead.
PromptTemplate load_template(const std::filesystem::path& template_path, const std::filesystem::path& demos_path,
                             const std::vector<std::string>& fallback_vocabulary = {});
std::vector<Demonstration> load_demonstrations(const std::filesystem::path& path, const FieldLabels& labels);

/// Header line plus field lines; blocks carry no trailing newline.
std::string render_effect_block(const PromptTemplate& tmpl, const Event& effect, Date epoch);
std::string render_cause_block(const FieldLabels& labels, const CauseHypothesis& h, std::size_t n);
std::string render_causes(const FieldLabels& labels, const std::vector<CauseHypothesis>& causes);

/// Preamble, examples section (omitted without demonstrations) and query.
std::string build_prompt(const PromptTemplate& tmpl, const Event& effect, Date epoch);

struct ParsedCauses {
    std::vector<CauseHypothesis> causes;
    std::vector<std::string> warnings;
};

/// Scans free text for "cause event N" blocks and reads labelled fields,
/// case-insensitively. Blocks without a type or a parseable date are skipped.
ParsedCauses parse_causes(std::string_view text, Schema schema);

// ------------------------------------------------------------------- client

struct LlmConfig {
    std::string endpoint = "https://api.openai.com/v1";
    std::string model = "gpt-3.5-turbo";
    std::string api_key_env = "OPENAI_API_KEY";
    double temperature = 0.0;
    std::size_t max_in_flight = 4;
    std::size_t retries = 3;
    double retry_backoff_seconds = 1.0;
    double timeout_seconds = 60.0;
    std::filesystem::path cache_dir;  // empty disables the cache

    void validate() const;
};

class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    /// Must be safe to call from several threads at once.
    virtual std::string complete(const std::string& model, double temperature, const std::string& prompt) = 0;
};

/// POST {endpoint}/chat/completions with one user message; returns the first
/// choice's message content.
class HttpChatBackend final : public LlmBackend {
public:
    explicit HttpChatBackend(LlmConfig config);
    std::string complete(const std::string& model, double temperature, const std::string& prompt) override;

private:
    LlmConfig config_;
    std::string api_key_;
};

/// Returns the content of a fixture file verbatim for every prompt.
class ScriptedBackend final : public LlmBackend {
public:
    explicit ScriptedBackend(const std::filesystem::path& fixture);
    std::string complete(const std::string&, double, const std::string&) override { return text_; }

private:
    std::string text_;
};

/// Answers with the true causes of the queried effect from a synthetic rule
/// table: one block per rule into the effect's type, dated one mean lag
/// before the effect.
class OracleBackend final : public LlmBackend {
public:
    OracleBackend(SyntheticSpec spec, FieldLabels labels, Date epoch);
    std::string complete(const std::string& model, double temperature, const std::string& prompt) override;

private:
    SyntheticSpec spec_;
    FieldLabels labels_;
    Date epoch_;
};

class LlmClient {
public:
    LlmClient(LlmConfig config, std::shared_ptr<LlmBackend> backend);

    /// Cache first; on a miss one backend call whose result is persisted
    /// before returning.
    std::string generate(const std::string& prompt);
    /// Distinct prompts run concurrently, at most max_in_flight at a time.
    std::vector<std::string> generate_all(const std::vector<std::string>& prompts);

    std::size_t backend_calls() const { return calls_.load(); }
    const LlmConfig& config() const { return config_; }

    /// Hex SHA-256 of model, NUL, temperature (%.17g), NUL, prompt.
    static std::string cache_key(const std::string& model, double temperature, const std::string& prompt);

private:
    std::mutex& key_mutex(const std::string& key);

    LlmConfig config_;
    std::shared_ptr<LlmBackend> backend_;
    std::atomic<std::size_t> calls_{0};
    std::mutex keys_mutex_;
    std::map<std::string, std::unique_ptr<std::mutex>> key_mutexes_;
};

std::string sha256_hex(std::string_view data);

}  // namespace evrank
