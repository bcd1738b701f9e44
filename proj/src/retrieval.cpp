#include "evrank/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "evrank/error.hpp"
#include "evrank/http.hpp"

namespace evrank {

namespace {

void normalize(std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (!(n > 0.0) || !std::isfinite(n)) throw Error("embedding: zero or non-finite vector");
    for (double& x : v) x /= n;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("embedding: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

SimKind parse_sim_kind(std::string_view name) {
    if (name == "embedding") return SimKind::embedding;
    if (name == "edit") return SimKind::edit;
    throw Error("unknown similarity '" + std::string(name) + "' (expected embedding or edit)");
}

std::string_view to_string(SimKind kind) { return kind == SimKind::embedding ? "embedding" : "edit"; }

std::size_t default_retrieval_depth(Schema schema) { return schema == Schema::structured ? 2 : 4; }

HashedNgramEmbedder::HashedNgramEmbedder(HashedEmbedderConfig config) : config_(config) {
    if (config_.ngram == 0 || config_.dim == 0) throw Error("hashed embedder: ngram and dim must be positive");
}

std::vector<double> HashedNgramEmbedder::embed_one(std::string_view text) const {
    if (text.empty()) throw Error("embedding: empty text");
    std::string padded = "\x02";
    for (char c : text) padded += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    padded += '\x03';
    std::vector<double> v(config_.dim, 0.0);
    const std::size_t n = std::min(config_.ngram, padded.size());
    for (std::size_t i = 0; i + n <= padded.size(); ++i) {
        std::uint64_t h = 1469598103934665603ULL;
        for (int b = 0; b < 8; ++b) {
            h ^= (config_.seed >> (8 * b)) & 0xff;
            h *= 1099511628211ULL;
        }
        for (std::size_t j = 0; j < n; ++j) {
            h ^= static_cast<unsigned char>(padded[i + j]);
            h *= 1099511628211ULL;
        }
        v[h % config_.dim] += (h >> 63) ? -1.0 : 1.0;
    }
    normalize(v);
    return v;
}

std::vector<std::vector<double>> HashedNgramEmbedder::embed(std::span<const std::string> texts) {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw Error("remote embedder: no endpoint configured");
    if (config_.batch_size == 0) throw Error("remote embedder: batch_size must be positive");
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
    if (!config_.cache_dir.empty()) std::filesystem::create_directories(config_.cache_dir);
}

std::vector<std::vector<double>> RemoteEmbedder::embed(std::span<const std::string> texts) {
    std::vector<std::vector<double>> out(texts.size());
    std::vector<std::size_t> missing;
    auto cache_path = [&](const std::string& text) {
        std::string key = "embedding";
        key += '\0';
        key += config_.model;
        key += '\0';
        key += text;
        return config_.cache_dir / (sha256_hex(key) + ".json");
    };
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (texts[i].empty()) throw Error("embedding: empty text");
        if (!config_.cache_dir.empty()) {
            const auto p = cache_path(texts[i]);
            if (std::filesystem::exists(p)) {
                std::ifstream in(p);
                try {
                    out[i] = nlohmann::json::parse(in).at("embedding").get<std::vector<double>>();
                    continue;
                } catch (const nlohmann::json::exception& e) {
                    throw Error("cache file " + p.string() + " is corrupt: " + e.what());
                }
            }
        }
        missing.push_back(i);
    }
    for (std::size_t b = 0; b < missing.size(); b += config_.batch_size) {
        const std::size_t e = std::min(missing.size(), b + config_.batch_size);
        nlohmann::json input = nlohmann::json::array();
        for (std::size_t i = b; i < e; ++i) input.push_back(texts[missing[i]]);
        ++requests_;
        const auto raw = post_json(config_.endpoint, "/embeddings",
                                   nlohmann::json{{"model", config_.model}, {"input", input}}.dump(),
                                   {api_key_, config_.timeout_seconds, config_.retries, 1.0});
        nlohmann::json data;
        try {
            data = nlohmann::json::parse(raw).at("data");
        } catch (const nlohmann::json::exception&) {
            throw Error("embedding response has no data array: " + raw.substr(0, 300));
        }
        if (data.size() != e - b) throw Error("embedding response has " + std::to_string(data.size()) + " vectors for " +
                                              std::to_string(e - b) + " inputs");
        for (std::size_t i = b; i < e; ++i) {
            const auto& item = data[i - b];
            const std::size_t at = item.contains("index") ? item["index"].get<std::size_t>() : i - b;
            if (at >= e - b) throw Error("embedding response index out of range");
            auto v = item.at("embedding").get<std::vector<double>>();
            normalize(v);
            out[missing[b + at]] = v;
        }
        if (!config_.cache_dir.empty())
            for (std::size_t i = b; i < e; ++i) {
                const auto p = cache_path(texts[missing[i]]);
                const auto tmp = p.string() + ".tmp";
                std::ofstream(tmp) << nlohmann::json{{"model", config_.model}, {"text", texts[missing[i]]}, {"embedding", out[missing[i]]}}.dump() << '\n';
                std::filesystem::rename(tmp, p);
            }
    }
    return out;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
    if (a.size() < b.size()) std::swap(a, b);
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double similarity(SimKind kind, std::string_view a, std::string_view b, EmbeddingProvider* provider) {
    if (a.empty() || b.empty()) throw Error("similarity: texts must be non-empty");
    if (kind == SimKind::edit) return 1.0 / (1.0 + static_cast<double>(levenshtein(a, b)));
    HashedNgramEmbedder fallback;
    EmbeddingProvider& p = provider ? *provider : fallback;
    const std::string texts[] = {std::string(a), std::string(b)};
    const auto v = p.embed(texts);
    return dot(v[0], v[1]);
}

HistoryIndex::HistoryIndex(std::vector<Event> history, SimKind kind, std::shared_ptr<EmbeddingProvider> provider)
    : history_(std::move(history)), kind_(kind), provider_(std::move(provider)) {
    for (std::size_t i = 1; i < history_.size(); ++i)
        if (history_[i].time < history_[i - 1].time) throw Error("retrieval: history is not sorted by time");
    texts_.reserve(history_.size());
    for (const auto& e : history_) texts_.push_back(render_type_text(e.type, e.mark));
    if (kind_ == SimKind::embedding) {
        if (!provider_) provider_ = std::make_shared<HashedNgramEmbedder>();
        embeddings_ = provider_->embed(texts_);
    }
}

EvidenceSet HistoryIndex::retrieve(std::span<const std::string> hypothesis_texts, std::size_t d, double proposal_time,
                                   std::optional<std::size_t> total_cap) const {
    if (d == 0) throw Error("retrieval: D must be at least 1");
    const auto limit = static_cast<std::size_t>(
        std::lower_bound(history_.begin(), history_.end(), proposal_time,
                         [](const Event& e, double t) { return e.time < t; }) -
        history_.begin());
    std::vector<std::optional<Provenance>> chosen(limit);
    std::vector<std::pair<double, std::size_t>> scored(limit);
    std::vector<std::vector<double>> hyp_emb;
    if (kind_ == SimKind::embedding && !hypothesis_texts.empty() && limit > 0)
        hyp_emb = provider_->embed(hypothesis_texts);
    for (std::size_t h = 0; h < hypothesis_texts.size(); ++h) {
        if (limit == 0) break;
        if (hypothesis_texts[h].empty()) throw Error("retrieval: empty hypothesis text");
        for (std::size_t i = 0; i < limit; ++i) {
            const double s = kind_ == SimKind::edit
                                 ? 1.0 / (1.0 + static_cast<double>(levenshtein(hypothesis_texts[h], texts_[i])))
                                 : dot(hyp_emb[h], embeddings_[i]);
            scored[i] = {s, i};
        }
        // Higher score first; among equal scores the later event (larger index) first.
        const std::size_t keep = std::min(d, limit);
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                          [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second > b.second; });
        for (std::size_t k = 0; k < keep; ++k) {
            auto& slot = chosen[scored[k].second];
            if (!slot || scored[k].first > slot->score) slot = Provenance{h, scored[k].first};
        }
    }
    std::vector<std::size_t> picked;
    for (std::size_t i = 0; i < limit; ++i)
        if (chosen[i]) picked.push_back(i);
    if (total_cap && picked.size() > *total_cap) {
        std::stable_sort(picked.begin(), picked.end(), [&](std::size_t a, std::size_t b) {
            return chosen[a]->score != chosen[b]->score ? chosen[a]->score > chosen[b]->score : a > b;
        });
        picked.resize(*total_cap);
        std::sort(picked.begin(), picked.end());
    }
    EvidenceSet out;
    for (std::size_t i : picked) {
        out.events.push_back(history_[i]);
        out.history_index.push_back(i);
        out.provenance.push_back(*chosen[i]);
    }
    return out;
}

EvidenceSet retrieve_evidence(std::span<const Event> history, std::span<const CauseHypothesis> hypotheses, std::size_t d,
                              SimKind kind, double proposal_time, Schema schema,
                              std::shared_ptr<EmbeddingProvider> provider, std::optional<std::size_t> total_cap) {
    HistoryIndex index(std::vector<Event>(history.begin(), history.end()), kind, std::move(provider));
    std::vector<std::string> texts;
    for (const auto& h : hypotheses) texts.push_back(render_hypothesis_text(h, schema));
    return index.retrieve(texts, d, proposal_time, total_cap);
}

}  // namespace evrank
