#include "evrank/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "evrank/error.hpp"
#include "evrank/proposer.hpp"

namespace evrank {

EncoderShape RankerConfig::encoder_shape(Schema schema) const {
    EncoderShape s;
    s.embed_dim = schema == Schema::structured ? 2 * entity_dim + predicate_dim : category_dim;
    s.time_dim = time_dim;
    s.key_dim = key_dim;
    s.heads = heads;
    s.layers = layers;
    s.time_base = time_base;
    return s;
}

namespace {

nlohmann::json config_to_json(const RankerConfig& c) {
    return {{"entity_dim", c.entity_dim}, {"predicate_dim", c.predicate_dim}, {"category_dim", c.category_dim},
            {"time_dim", c.time_dim},     {"key_dim", c.key_dim},             {"heads", c.heads},
            {"layers", c.layers},         {"hidden", c.hidden},               {"time_base", c.time_base}};
}

RankerConfig config_from_json(const nlohmann::json& j) {
    RankerConfig c;
    c.entity_dim = j.at("entity_dim").get<std::size_t>();
    c.predicate_dim = j.at("predicate_dim").get<std::size_t>();
    c.category_dim = j.at("category_dim").get<std::size_t>();
    c.time_dim = j.at("time_dim").get<std::size_t>();
    c.key_dim = j.at("key_dim").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.time_base = j.at("time_base").get<double>();
    return c;
}

void require_finite(double c, const char* what) {
    if (!std::isfinite(c)) throw Error(std::string(what) + ": non-finite compatibility score " + std::to_string(c));
}

}  // namespace

RankerModel::RankerModel(Vocabulary vocab, RankerConfig config, std::uint64_t seed)
    : vocab_(std::move(vocab)), config_(config) {
    if (vocab_.type_count() == 0) throw Error("ranker: empty vocabulary");
    if (config_.hidden == 0) throw Error("ranker: hidden width must be positive");
    if (vocab_.schema() == Schema::structured) {
        entity_ = store_.add("entity", vocab_.entities().size(), config_.entity_dim);
        predicate_ = store_.add("predicate", vocab_.predicates().size(), config_.predicate_dim);
    } else {
        category_ = store_.add("category", vocab_.categories().size(), config_.category_dim);
    }
    encoder_ = AttentionEncoder(store_, "encoder", config_.encoder_shape(vocab_.schema()));
    const std::size_t in = encoder_.shape().output_dim(), h = config_.hidden;
    w1_ = store_.add("mlp.w1", h, in);
    b1_ = store_.add("mlp.b1", h, 1);
    w2_ = store_.add("mlp.w2", h, h);
    b2_ = store_.add("mlp.b2", h, 1);
    w3_ = store_.add("mlp.w3", 1, h);
    b3_ = store_.add("mlp.b3", 1, 1);
    Rng rng(seed);
    store_.init_uniform(rng, -0.1, 0.1);
    for (std::size_t b : {w1_, w2_, w3_}) {
        const auto& blk = store_.block(b);
        const double r = std::sqrt(6.0 / static_cast<double>(blk.rows + blk.cols));
        for (double& v : store_.values(b)) v = uniform(rng, -r, r);
    }
    for (std::size_t b : {b1_, b2_, b3_})
        for (double& v : store_.values(b)) v = 0.0;
}

Var RankerModel::base_embedding(Tape& tape, TypeId type) const {
    if (type >= vocab_.type_count()) throw Error("ranker: type id " + std::to_string(type) + " out of range");
    if (vocab_.schema() == Schema::structured) {
        const auto ids = vocab_.split(type);
        const Var parts[] = {tape.param_row(store_.block(entity_), ids.subject),
                             tape.param_row(store_.block(predicate_), ids.predicate),
                             tape.param_row(store_.block(entity_), ids.object)};
        return tape.concat(parts);
    }
    return tape.param_row(store_.block(category_), static_cast<std::size_t>(type));
}

Var RankerModel::compatibility_var(Tape& tape, const RankCandidate& candidate) const {
    std::vector<double> times;
    std::vector<Var> base;
    for (std::size_t i = 0; i < candidate.evidence.size(); ++i) {
        const auto& e = candidate.evidence[i];
        if (!(e.time < candidate.time))
            throw Error("ranker: evidence event at " + std::to_string(e.time) + " is not before the proposal at " +
                        std::to_string(candidate.time));
        if (i > 0 && e.time < candidate.evidence[i - 1].time) throw Error("ranker: evidence is not chronological");
        times.push_back(e.time - candidate.time);
        base.push_back(base_embedding(tape, e.type));
    }
    const auto history = encoder_.encode_history(tape, times, base);
    const Var enc = encoder_.embed(tape, history, times.size(), base_embedding(tape, candidate.type), 0.0);
    const Var z1 = tape.tanh(tape.add(tape.matvec(store_.block(w1_), enc), tape.param(store_.block(b1_))));
    const Var z2 = tape.tanh(tape.add(tape.matvec(store_.block(w2_), z1), tape.param(store_.block(b2_))));
    return tape.add(tape.matvec(store_.block(w3_), z2), tape.param(store_.block(b3_)));
}

double RankerModel::compatibility(const RankCandidate& candidate) const {
    Tape tape(store_);
    return tape.scalar(compatibility_var(tape, candidate));
}

nlohmann::json RankerModel::to_json() const {
    return {{"vocab", vocab_to_json(vocab_)}, {"config", config_to_json(config_)}, {"params", store_.to_json()}};
}

RankerModel RankerModel::from_json(const nlohmann::json& j) {
    RankerModel m(vocab_from_json(j.at("vocab")), config_from_json(j.at("config")), 0);
    m.store_.load_json(j.at("params"));
    return m;
}

double score_type(const RankerModel& model, const RankCandidate& candidate) {
    return std::exp(model.compatibility(candidate));
}

double score_time(const RankerModel& model, std::span<const RankCandidate> sub_proposals) {
    if (sub_proposals.empty()) throw Error("score_time: at least one sub-proposal is required");
    double s = 0.0;
    for (const auto& c : sub_proposals) s += score_type(model, c);
    return s;
}

std::vector<std::size_t> rerank(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

double j_actual(const RankerModel& model, const RankTrainItem& item, std::span<double> grads, double seed) {
    if (item.negatives.empty()) throw Error("j_actual: a training item needs at least one negative");
    Tape tape(model.params());
    std::vector<Var> scores{model.compatibility_var(tape, item.positive)};
    for (const auto& n : item.negatives) scores.push_back(model.compatibility_var(tape, n));
    for (Var v : scores) require_finite(tape.scalar(v), "j_actual");
    const Var j = tape.sub(scores[0], tape.logsumexp(scores));
    if (!grads.empty()) tape.backward(j, grads, seed);
    return tape.scalar(j);
}

double j_no(const RankerModel& model, std::span<const std::vector<RankCandidate>> noise, std::span<double> grads,
            double seed) {
    if (noise.empty()) throw Error("j_no: at least one sampled time is required");
    Tape tape(model.params());
    std::vector<Var> terms;
    for (const auto& group : noise) {
        if (group.empty()) throw Error("j_no: a sampled time has no sampled types");
        std::vector<Var> scores;
        for (const auto& c : group) {
            scores.push_back(model.compatibility_var(tape, c));
            require_finite(tape.scalar(scores.back()), "j_no");
        }
        terms.push_back(tape.logsumexp(scores));
    }
    const Var j = tape.scale(tape.sum(terms), -1.0);
    if (!grads.empty()) tape.backward(j, grads, seed);
    return tape.scalar(j);
}

std::optional<std::size_t> reranked_position(const RankerModel& model, const RankQuery& query) {
    if (!query.truth) return std::nullopt;
    if (*query.truth >= query.candidates.size()) throw Error("rank query: truth index out of range");
    std::vector<double> scores;
    for (const auto& c : query.candidates) scores.push_back(model.compatibility(c));
    const auto order = rerank(scores);
    return static_cast<std::size_t>(std::find(order.begin(), order.end(), *query.truth) - order.begin()) + 1;
}

std::optional<double> ranker_mean_rank(const RankerModel& model, std::span<const RankQuery> queries) {
    double total = 0.0;
    std::size_t covered = 0;
    for (const auto& q : queries)
        if (auto r = reranked_position(model, q)) {
            total += static_cast<double>(*r);
            ++covered;
        }
    if (covered == 0) return std::nullopt;
    return total / static_cast<double>(covered);
}

void RankerTrainConfig::validate() const {
    if (!std::isfinite(beta) || beta < 0.0) throw Error("ranker training: beta must be finite and non-negative");
    if (!(learning_rate > 0.0)) throw Error("ranker training: learning rate must be positive");
    if (batch_size == 0) throw Error("ranker training: batch size must be positive");
    if (noise_types == 0) throw Error("ranker training: noise_types must be positive");
    if (beta > 0.0 && noise_times == 0) throw Error("ranker training: beta > 0 needs noise_times > 0");
}

RankerTrainResult train_ranker(RankerModel& model, std::span<const RankTrainItem> items, std::span<const RankQuery> dev,
                               const RankerTrainConfig& config) {
    config.validate();
    if (items.empty()) throw Error("train_ranker: no training items");
    for (const auto& item : items)
        if (config.beta > 0.0 && item.noise.empty()) throw Error("train_ranker: beta > 0 but an item has no noise samples");

    auto values = model.params().values();
    Adam adam(values.size(), config.learning_rate);
    Rng rng(config.seed);
    std::vector<double> grads(values.size());
    const double n_items = static_cast<double>(items.size());

    // Lower is better: dev mean rank, or the negated training objective when
    // no dev query has its truth among the candidates.
    const bool dev_usable = ranker_mean_rank(model, dev).has_value();
    auto evaluate = [&](double objective) {
        return dev_usable ? *ranker_mean_rank(model, dev) : -objective / n_items;
    };
    auto objective_now = [&](double& ja, double& jn) {
        ja = jn = 0.0;
        for (const auto& item : items) {
            ja += j_actual(model, item);
            if (!item.noise.empty()) jn += j_no(model, item.noise);
        }
    };

    RankerTrainResult result;
    double ja0, jn0;
    objective_now(ja0, jn0);
    double best = evaluate(ja0 + config.beta * jn0);
    result.log.push_back({0, ja0 / n_items, jn0 / n_items, dev_usable ? best : 0.0});
    result.best_dev_mean_rank = best;
    std::vector<double> best_values(values.begin(), values.end());
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        double ja = 0.0, jn = 0.0;
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            std::fill(grads.begin(), grads.end(), 0.0);
            const std::size_t e = std::min(order.size(), b + config.batch_size);
            for (std::size_t i = b; i < e; ++i) {
                const auto& item = items[order[i]];
                const double a = j_actual(model, item, grads);
                double n = 0.0;
                if (config.beta > 0.0) {
                    n = j_no(model, item.noise, grads, config.beta);
                } else if (!item.noise.empty()) {
                    n = j_no(model, item.noise);  // logged only
                }
                if (!std::isfinite(a) || !std::isfinite(n))
                    throw Error("train_ranker: non-finite objective (J_actual " + std::to_string(a) + ", J_no " +
                                std::to_string(n) + ") on item " + std::to_string(order[i]) + " in epoch " +
                                std::to_string(epoch));
                ja += a;
                jn += n;
            }
            const double scale = -1.0 / static_cast<double>(e - b);
            for (auto& g : grads) g *= scale;
            adam.step(values, grads);
        }
        const double score = evaluate(ja + config.beta * jn);
        result.log.push_back({epoch, ja / n_items, jn / n_items, dev_usable ? score : 0.0});
        if (score < best) {
            best = score;
            result.best_epoch = epoch;
            best_values.assign(values.begin(), values.end());
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    std::copy(best_values.begin(), best_values.end(), values.begin());
    result.best_dev_mean_rank = best;
    return result;
}

std::vector<double> sample_noise_times(double start, double end, std::size_t n, Rng& rng) {
    if (!(end > start)) throw Error("noise times: empty window");
    std::vector<double> out(n);
    for (auto& t : out) t = uniform(rng, start, end);
    return out;
}

std::vector<TypeId> sample_noise_types(IntensityEvaluator& evaluator, const Vocabulary& vocab, double t, std::size_t m,
                                       std::size_t count, Rng& rng) {
    const auto top = propose_types(evaluator, vocab, t, m);
    double total = 0.0;
    for (const auto& p : top) total += p.base_intensity;
    if (!(total > 0.0)) throw Error("noise types: zero intensity over the top proposals");
    std::vector<TypeId> out;
    for (std::size_t i = 0; i < count; ++i) {
        double u = uniform01(rng) * total;
        std::size_t k = 0;
        while (k + 1 < top.size() && u >= top[k].base_intensity) u -= top[k++].base_intensity;
        out.push_back(top[k].type);
    }
    return out;
}

void write_ranker_log(const std::filesystem::path& path, const RankerTrainResult& result) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write ranker log " + path.string());
    out.precision(17);
    out << "epoch,j_actual,j_no,dev_mean_rank\n";
    for (const auto& e : result.log)
        out << e.epoch << ',' << e.j_actual << ',' << e.j_no << ',' << e.dev_mean_rank << '\n';
}

void save_ranker(const std::filesystem::path& path, const RankerModel& model) {
    nlohmann::json j{{"format", "evrank-ranker"}, {"version", 1}, {"model", model.to_json()}};
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw Error("cannot write ranker checkpoint " + path.string());
        out << j.dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
}

RankerModel load_ranker(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read ranker checkpoint " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("ranker checkpoint " + path.string() + " is not valid JSON: " + e.what());
    }
    if (j.value("format", "") != "evrank-ranker") throw Error(path.string() + " is not a ranker checkpoint");
    if (j.value("version", 0) != 1)
        throw Error("ranker checkpoint " + path.string() + " has unsupported version " + j["version"].dump());
    return RankerModel::from_json(j.at("model"));
}

}  // namespace evrank
