#pragma once

// Intensity models lambda_k(t | history): a multivariate exponential-kernel
// Hawkes process and the continuous-time attentive model, sharing one
// evaluation/training interface.

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evrank/encoder.hpp"
#include "evrank/event.hpp"
#include "evrank/params.hpp"
#include "evrank/random.hpp"

namespace evrank {

/// Intensities of one model bound to one event list. A query at time t
/// conditions on the bound events strictly before t.
class IntensityEvaluator {
public:
    virtual ~IntensityEvaluator() = default;

    virtual double intensity(TypeId type, double t) = 0;
    virtual void intensities(std::span<const TypeId> types, double t, std::span<double> out);

    /// lambda(t) summed over the whole type space.
    double total_intensity(double t);

    /// An upper bound of the total intensity on [from, to] assuming no event
    /// occurs in between.
    virtual double upper_bound(double from, double to) = 0;

    std::span<const TypeId> all_types();

protected:
    explicit IntensityEvaluator(TypeId type_count) : type_count_(type_count) {}

private:
    TypeId type_count_;
    std::vector<TypeId> all_;
};

struct LikelihoodOptions {
    std::size_t mc_samples = 1;  // uniform survival samples per inter-event interval
    /// Types evaluated per survival sample; 0 sums over the full type space.
    /// Otherwise that many types are drawn uniformly and the sum is rescaled.
    std::size_t type_samples = 0;
};

class IntensityModel {
public:
    virtual ~IntensityModel() = default;

    virtual std::string kind() const = 0;
    virtual const Vocabulary& vocab() const = 0;
    virtual std::unique_ptr<IntensityEvaluator> bind(std::span<const CodedEvent> events) const = 0;

    virtual ParamStore& params() = 0;
    virtual const ParamStore& params() const = 0;

    /// Training objective for the window [start, end) of `events`: the
    /// log-likelihood (or the model's preferred unbiased estimate of it).
    /// When `grads` is non-empty, d(objective)/d(params) is added to it.
    virtual double objective(std::span<const CodedEvent> events, double start, double end,
                             const LikelihoodOptions& options, Rng& rng, std::span<double> grads) const = 0;

    virtual nlohmann::json to_json() const = 0;
};

/// lambda_k(t); `t` must be strictly after every history event.
double intensity(const IntensityModel& model, std::span<const CodedEvent> history, TypeId type, double t);

/// Exact event term plus Monte Carlo survival term over [start, end).
double log_likelihood(const IntensityModel& model, std::span<const CodedEvent> events, double start, double end,
                      const LikelihoodOptions& options, Rng& rng);

// ---------------------------------------------------------------- Hawkes

struct HawkesParams {
    std::vector<double> mu;     // K base rates
    std::vector<double> alpha;  // K x K, alpha[src * K + dst]
    double delta = 1.0;         // shared decay rate

    std::size_t types() const { return mu.size(); }
    void validate() const;
};

/// lambda_k(t) = mu_k + sum_{t_j < t} alpha[k_j, k] exp(-delta (t - t_j)).
/// Trained in log-parameter space with the closed-form compensator.
class HawkesModel final : public IntensityModel {
public:
    HawkesModel(Vocabulary vocab, const HawkesParams& params);

    /// mu = (global event rate) / K, alpha = 0.1 / K, delta = 1.
    static HawkesModel initial(Vocabulary vocab, double event_rate);

    std::string kind() const override { return "hawkes"; }
    const Vocabulary& vocab() const override { return vocab_; }
    std::unique_ptr<IntensityEvaluator> bind(std::span<const CodedEvent> events) const override;
    ParamStore& params() override { return store_; }
    const ParamStore& params() const override { return store_; }
    double objective(std::span<const CodedEvent> events, double start, double end, const LikelihoodOptions& options,
                     Rng& rng, std::span<double> grads) const override;
    nlohmann::json to_json() const override;
    static HawkesModel from_json(const nlohmann::json& j, Vocabulary vocab);

    HawkesParams hawkes_params() const;

    /// Exact integral of the total intensity over [start, end) given `events`.
    double compensator(std::span<const CodedEvent> events, double start, double end) const;

private:
    Vocabulary vocab_;
    ParamStore store_;  // log_mu, log_alpha, log_delta
    std::size_t k_ = 0;
};

// -------------------------------------------------------------- Attentive

struct AttentiveConfig {
    std::size_t entity_dim = 8;     // structured schema
    std::size_t predicate_dim = 4;  // structured schema
    std::size_t category_dim = 16;  // categorical schema
    std::size_t time_dim = 8;
    std::size_t key_dim = 8;
    std::size_t heads = 1;
    std::size_t layers = 1;
    double time_base = 10000.0;

    EncoderShape encoder_shape(Schema schema) const;
};

/// Continuous-time attentive intensity: lambda_k(t) = softplus(w . enc(k, t) + b)
/// where enc concatenates all encoder layers. Structured types embed as
/// [entity(subject); predicate; entity(object)].
class AttentiveModel final : public IntensityModel {
public:
    /// Parameters uniform in [-0.1, 0.1]; the head bias is set so that the
    /// initial per-type intensity is about event_rate / K.
    AttentiveModel(Vocabulary vocab, AttentiveConfig config, std::uint64_t seed, double event_rate);

    std::string kind() const override { return "attentive"; }
    const Vocabulary& vocab() const override { return vocab_; }
    std::unique_ptr<IntensityEvaluator> bind(std::span<const CodedEvent> events) const override;
    ParamStore& params() override { return store_; }
    const ParamStore& params() const override { return store_; }
    double objective(std::span<const CodedEvent> events, double start, double end, const LikelihoodOptions& options,
                     Rng& rng, std::span<double> grads) const override;
    nlohmann::json to_json() const override;
    static AttentiveModel from_json(const nlohmann::json& j, Vocabulary vocab);

    const AttentiveConfig& config() const { return config_; }
    const AttentionEncoder& encoder() const { return encoder_; }

    /// Encoder output for `type` at `t` given `history` (all strictly before t).
    std::vector<double> embed(std::span<const CodedEvent> history, TypeId type, double t) const;

    // Graph-building pieces, public for gradient checks.
    Var base_embedding(Tape& tape, TypeId type) const;
    AttentionEncoder::History encode_history(Tape& tape, std::span<const CodedEvent> events) const;
    Var intensity_var(Tape& tape, const AttentionEncoder::History& history, std::size_t prefix, TypeId type,
                      double t) const;

private:
    Vocabulary vocab_;
    AttentiveConfig config_;
    ParamStore store_;
    AttentionEncoder encoder_;
    std::size_t entity_ = 0, predicate_ = 0, category_ = 0, head_w_ = 0, head_b_ = 0;
};

// --------------------------------------------------------------- training

struct TrainConfig {
    double learning_rate = 0.01;
    std::size_t epochs = 50;
    std::size_t batch_size = 8;
    std::size_t mc_samples_per_interval = 1;
    std::size_t survival_type_samples = 0;
    std::size_t patience = 5;  // epochs without dev improvement before stopping
    std::uint64_t seed = 1;

    void validate() const;
};

struct EpochLog {
    std::size_t epoch = 0;  // 0 is the initial model
    double train_ll = 0.0;  // per event
    double dev_ll = 0.0;    // per event
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_dev_ll = 0.0;
};

/// Adam ascent on the log-likelihood. Each element of `train`/`dev` is a
/// sequence whose window [window_start, window_end) is scored; events before
/// the window serve as history. The model is left at the parameters of the
/// best dev epoch (epoch 0 included).
TrainResult train_mle(IntensityModel& model, std::span<const Sequence> train, std::span<const Sequence> dev,
                      const TrainConfig& config);

/// Mean per-event log-likelihood over the windows of `sequences`, with a
/// fixed-seed Monte Carlo survival estimate.
double mean_log_likelihood(const IntensityModel& model, std::span<const Sequence> sequences,
                           const LikelihoodOptions& options, std::uint64_t seed);

void write_training_log(const std::filesystem::path& path, const TrainResult& result);

// ------------------------------------------------------------- checkpoint

/// Writes {"format": "evrank-intensity", "version": 1, "kind", "vocab", ...}.
void save_model(const std::filesystem::path& path, const IntensityModel& model);
std::unique_ptr<IntensityModel> load_model(const std::filesystem::path& path);

nlohmann::json vocab_to_json(const Vocabulary& vocab);
Vocabulary vocab_from_json(const nlohmann::json& j);

}  // namespace evrank
