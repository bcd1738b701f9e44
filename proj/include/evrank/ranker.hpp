#pragma once

// Compatibility ranker: scores a proposal (t, k) against its retrieved
// evidence with a continuous-time attention encoder and a small MLP head,
// trained contrastively against base-model negatives and sampled noise.

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "evrank/encoder.hpp"
#include "evrank/event.hpp"
#include "evrank/intensity.hpp"
#include "evrank/params.hpp"
#include "evrank/random.hpp"

namespace evrank {

struct RankerConfig {
    std::size_t entity_dim = 8;
    std::size_t predicate_dim = 4;
    std::size_t category_dim = 16;
    std::size_t time_dim = 8;
    std::size_t key_dim = 8;
    std::size_t heads = 2;
    std::size_t layers = 2;
    std::size_t hidden = 16;  // width of both hidden MLP layers
    double time_base = 100.0;

    EncoderShape encoder_shape(Schema schema) const;
};

/// A proposal with the evidence retrieved for it.
struct RankCandidate {
    double time = 0.0;
    TypeId type = 0;
    std::vector<CodedEvent> evidence;  // chronological, all strictly before `time`
};

struct RankTrainItem {
    RankCandidate positive;
    std::vector<RankCandidate> negatives;
    std::vector<std::vector<RankCandidate>> noise;  // per sampled time, its sampled types
};

/// One ranking query: candidates in base-model order and the index of the
/// actual event among them, if it was proposed at all.
struct RankQuery {
    std::vector<RankCandidate> candidates;
    std::optional<std::size_t> truth;
};

class RankerModel {
public:
    RankerModel(Vocabulary vocab, RankerConfig config, std::uint64_t seed);

    const Vocabulary& vocab() const { return vocab_; }
    const RankerConfig& config() const { return config_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    /// c((t, k), e). Evidence is encoded on a clock whose origin is the
    /// proposal time, so only the gaps to the proposal matter.
    double compatibility(const RankCandidate& candidate) const;
    Var compatibility_var(Tape& tape, const RankCandidate& candidate) const;

    nlohmann::json to_json() const;
    static RankerModel from_json(const nlohmann::json& j);

private:
    Var base_embedding(Tape& tape, TypeId type) const;

    Vocabulary vocab_;
    RankerConfig config_;
    ParamStore store_;
    AttentionEncoder encoder_;
    std::size_t entity_ = 0, predicate_ = 0, category_ = 0;
    std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0, w3_ = 0, b3_ = 0;
};

double score_type(const RankerModel& model, const RankCandidate& candidate);

/// Sum of s_type over the sub-proposals of one time proposal.
double score_time(const RankerModel& model, std::span<const RankCandidate> sub_proposals);

/// Indices of `scores` by descending score; equal scores keep their order.
std::vector<std::size_t> rerank(std::span<const double> scores);

/// c(pos) - logsumexp(c(pos), c(neg_1), ...). Adds d/dparams to `grads` when non-empty.
double j_actual(const RankerModel& model, const RankTrainItem& item, std::span<double> grads = {}, double seed = 1.0);

/// -sum_n logsumexp_m c(t_n, k_n^m).
double j_no(const RankerModel& model, std::span<const std::vector<RankCandidate>> noise, std::span<double> grads = {},
            double seed = 1.0);

/// 1-based rank of the truth after reranking by compatibility, if proposed.
std::optional<std::size_t> reranked_position(const RankerModel& model, const RankQuery& query);

struct RankerTrainConfig {
    double beta = 1.0;
    double learning_rate = 1e-3;
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    std::size_t patience = 3;
    std::size_t noise_times = 5;  // N sampled times per item; may be 0 when beta is 0
    std::size_t noise_types = 5;  // types drawn per sampled time
    std::uint64_t seed = 1;

    void validate() const;
};

struct RankerEpochLog {
    std::size_t epoch = 0;
    double j_actual = 0.0;  // per item
    double j_no = 0.0;      // per item
    double dev_mean_rank = 0.0;
};

struct RankerTrainResult {
    std::vector<RankerEpochLog> log;
    std::size_t best_epoch = 0;
    double best_dev_mean_rank = 0.0;
};

/// Adam ascent on sum(J_actual + beta J_no) with early stopping on dev mean
/// rank (train items stand in when `dev` has no covered query). The model is
/// left at its best epoch.
RankerTrainResult train_ranker(RankerModel& model, std::span<const RankTrainItem> items, std::span<const RankQuery> dev,
                               const RankerTrainConfig& config);

/// Mean reranked position over queries whose truth was proposed; nullopt when none was.
std::optional<double> ranker_mean_rank(const RankerModel& model, std::span<const RankQuery> queries);

/// Noise times uniform on [start, end).
std::vector<double> sample_noise_times(double start, double end, std::size_t n, Rng& rng);

/// `count` draws from lambda_k(t) / sum lambda restricted to the base model's top-`m` types at t.
std::vector<TypeId> sample_noise_types(IntensityEvaluator& evaluator, const Vocabulary& vocab, double t, std::size_t m,
                                       std::size_t count, Rng& rng);

void write_ranker_log(const std::filesystem::path& path, const RankerTrainResult& result);

/// {"format": "evrank-ranker", "version": 1, ...}
void save_ranker(const std::filesystem::path& path, const RankerModel& model);
RankerModel load_ranker(const std::filesystem::path& path);

}  // namespace evrank
