#pragma once

// Staged pipeline: data -> base model -> proposals -> abduction -> retrieval
// -> ranker -> predictions -> metrics -> report. Stages talk only through
// files in the output directory, so the expensive abduction stage can be
// reused by many ranker experiments.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evrank/abduction.hpp"
#include "evrank/intensity.hpp"
#include "evrank/ranker.hpp"
#include "evrank/retrieval.hpp"

namespace evrank {

/// `key = value` lines; `#` starts a comment. Relative paths in values are
/// resolved against the directory of the file they came from.
class Config {
public:
    static Config parse(std::istream& in, const std::string& source = "<config>",
                        const std::filesystem::path& base_dir = {});
    static Config load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::size_t> get_size_list(const std::string& key, const std::vector<std::size_t>& fallback) const;
    std::filesystem::path get_path(const std::string& key, const std::filesystem::path& fallback = {}) const;

    /// Sorted `key=value` lines; its SHA-256 is the configuration hash.
    std::string canonical() const;
    std::string hash() const;
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::filesystem::path base_dir_;
};

enum class Stage { synth, ingest, train_base, propose, abduce, retrieve, train_ranker, predict, evaluate, report };

Stage parse_stage(std::string_view name);
std::string_view to_string(Stage stage);

/// Every option the pipeline reads, with its default. Keys are listed in the README.
struct RunConfig {
    std::uint64_t seed = 1;
    std::filesystem::path out_dir = "run";

    // data
    std::string source = "synthetic";  // synthetic | file
    std::filesystem::path data_path;
    Schema schema = Schema::categorical;
    std::string epoch = "1970-01-01";
    std::optional<double> window_end;
    std::string train_end, dev_end;
    std::size_t synthetic_types = 10;
    std::size_t synthetic_sequences = 1000;
    double synthetic_horizon = 40.0;
    std::uint64_t synthetic_seed = 7;
    std::filesystem::path synthetic_rules;  // optional rule table replacing the default layout
    double train_fraction = 0.6;
    double dev_fraction = 0.2;

    // base model
    std::string base_kind = "attentive";
    AttentiveConfig attentive;
    TrainConfig base_train;

    // proposals
    std::size_t m = 5;
    std::size_t m_prime = 5;
    std::size_t mbr_samples = 100;
    double lookahead = 1.0;
    double warmup = 0.0;  // queries start this long after each window start
    std::size_t max_train_queries = 16000;
    std::size_t max_dev_queries = 1500;
    std::size_t max_test_queries = 3000;
    bool time_queries = false;
    std::size_t max_time_queries = 200;

    // abduction
    std::filesystem::path prompt_template, prompt_demos;
    std::string llm_backend = "oracle";  // oracle | scripted | http
    std::filesystem::path llm_fixture;
    LlmConfig llm;

    // retrieval
    std::size_t depth = 0;  // 0: per-schema default
    std::size_t total_cap = 0;  // 0: none
    SimKind sim = SimKind::edit;
    std::string embedder = "hashed";  // hashed | remote
    HashedEmbedderConfig hashed;
    RemoteEmbedderConfig remote;

    // ranker
    RankerConfig ranker;
    RankerTrainConfig ranker_train;
    std::size_t negatives = 5;

    // evaluation
    std::vector<std::size_t> eval_m{1, 2, 3, 4, 5};
    std::size_t bootstrap = 1000;

    static RunConfig from(const Config& config);
    std::size_t retrieval_depth() const { return depth ? depth : default_retrieval_depth(schema); }
};

struct StageReport {
    std::vector<std::string> lines;  // human-readable summary
    std::size_t backend_calls = 0;   // abduce only
};

/// Runs one stage. Upstream artifacts must exist; otherwise the error names
/// the stage to run first.
StageReport run_stage(Stage stage, const Config& config);

/// The data stage chosen by `data.source`, then every later stage in order.
std::vector<StageReport> run_all(const Config& config);

}  // namespace evrank
