#pragma once

// Evidence retrieval: cause hypotheses are matched against the actual history
// by text similarity, and the best matches form the evidence for a proposal.

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evrank/abduction.hpp"
#include "evrank/event.hpp"

namespace evrank {

enum class SimKind { embedding, edit };
SimKind parse_sim_kind(std::string_view name);
std::string_view to_string(SimKind kind);

/// Maps texts to unit-norm vectors of a fixed dimension.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) = 0;
};

struct HashedEmbedderConfig {
    std::size_t ngram = 3;
    std::size_t dim = 256;
    std::uint64_t seed = 0x5eedULL;
};

/// Signed feature hashing of lowercased character n-grams (FNV-1a), with the
/// text padded by one boundary mark on each side. Platform independent.
class HashedNgramEmbedder final : public EmbeddingProvider {
public:
    explicit HashedNgramEmbedder(HashedEmbedderConfig config = {});
    std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;
    std::vector<double> embed_one(std::string_view text) const;

private:
    HashedEmbedderConfig config_;
};

struct RemoteEmbedderConfig {
    std::string endpoint;
    std::string model = "text-embedding-3-small";
    std::string api_key_env = "OPENAI_API_KEY";
    std::size_t batch_size = 64;
    std::size_t retries = 3;
    double timeout_seconds = 60.0;
    std::filesystem::path cache_dir;  // empty disables the cache
};

/// POST {endpoint}/embeddings {"model", "input": [...]}; vectors are
/// normalized on arrival and cached per (model, text).
class RemoteEmbedder final : public EmbeddingProvider {
public:
    explicit RemoteEmbedder(RemoteEmbedderConfig config);
    std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;
    std::size_t requests() const { return requests_; }

private:
    RemoteEmbedderConfig config_;
    std::string api_key_;
    std::size_t requests_ = 0;
};

std::size_t levenshtein(std::string_view a, std::string_view b);

/// edit: 1 / (1 + Levenshtein); embedding: dot product of unit vectors.
double similarity(SimKind kind, std::string_view a, std::string_view b, EmbeddingProvider* provider = nullptr);

struct Provenance {
    std::size_t hypothesis = 0;
    double score = 0.0;
};

struct EvidenceSet {
    std::vector<Event> events;              // chronological
    std::vector<std::size_t> history_index;  // position of each event in the history
    std::vector<Provenance> provenance;
};

/// One sequence's history with its texts (and embeddings) computed once, so
/// that many proposals can be matched against it.
class HistoryIndex {
public:
    HistoryIndex(std::vector<Event> history, SimKind kind, std::shared_ptr<EmbeddingProvider> provider = nullptr);

    const std::vector<Event>& events() const { return history_; }
    const std::vector<std::string>& texts() const { return texts_; }

    /// Top-D history events before `proposal_time` per hypothesis text
    /// (ties: the later event wins), merged without duplicates. With a total
    /// cap, the highest scoring merged events are kept.
    EvidenceSet retrieve(std::span<const std::string> hypothesis_texts, std::size_t d, double proposal_time,
                         std::optional<std::size_t> total_cap = std::nullopt) const;

private:
    std::vector<Event> history_;
    std::vector<std::string> texts_;
    SimKind kind_;
    std::shared_ptr<EmbeddingProvider> provider_;
    std::vector<std::vector<double>> embeddings_;
};

EvidenceSet retrieve_evidence(std::span<const Event> history, std::span<const CauseHypothesis> hypotheses, std::size_t d,
                              SimKind kind, double proposal_time, Schema schema,
                              std::shared_ptr<EmbeddingProvider> provider = nullptr,
                              std::optional<std::size_t> total_cap = std::nullopt);

/// Per-cause retrieval depth used when none is configured.
std::size_t default_retrieval_depth(Schema schema);

}  // namespace evrank
