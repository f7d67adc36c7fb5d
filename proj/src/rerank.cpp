#include "xmcgen/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "xmcgen/llm/parsing.hpp"
#include "xmcgen/util.hpp"

namespace xmcgen {

using nlohmann::json;

RerankStrategy rerank_strategy_from_string(const std::string& s) {
    if (s == "heuristic") return RerankStrategy::heuristic;
    if (s == "scorer") return RerankStrategy::scorer;
    if (s == "llm") return RerankStrategy::llm;
    throw std::invalid_argument("unknown rerank strategy: " + s);
}

std::string to_string(RerankStrategy strategy) {
    switch (strategy) {
        case RerankStrategy::heuristic: return "heuristic";
        case RerankStrategy::scorer: return "scorer";
        case RerankStrategy::llm: return "llm";
    }
    return "?";
}

std::string strategy_string(const RankedPrediction& pred) {
    std::string s = to_string(pred.strategy);
    if (pred.fallback) s += "+fallback";
    return s;
}

double TokenOverlapScorer::score(const std::string& query, const std::string& candidate) const {
    std::unordered_set<std::string> q;
    for (auto& t : tokenize(query)) q.insert(std::move(t));
    std::unordered_set<std::string> c;
    for (auto& t : tokenize(candidate)) c.insert(std::move(t));
    if (q.empty() && c.empty()) return 0.0;
    std::size_t common = 0;
    for (const auto& t : c) common += q.count(t);
    return static_cast<double>(common) / static_cast<double>(q.size() + c.size() - common);
}

namespace {

// Full round-robin emission order over the matrix (every unique lid).
std::vector<std::string> heuristic_order(const NeighborMatrix& neighbors) {
    std::vector<std::string> order;
    std::unordered_set<std::string> emitted;
    std::vector<std::size_t> cursor(neighbors.rows.size(), 0);
    bool progressed = true;
    while (progressed) {
        progressed = false;
        for (std::size_t j = 0; j < neighbors.rows.size(); ++j) {
            const auto& row = neighbors.rows[j];
            std::size_t& cur = cursor[j];
            while (cur < row.size() && emitted.count(row[cur].lid)) ++cur;
            if (cur < row.size()) {
                order.push_back(row[cur].lid);
                emitted.insert(row[cur].lid);
                ++cur;
                progressed = true;
            }
        }
    }
    return order;
}

} // namespace

RankedPrediction rerank_heuristic(const NeighborMatrix& neighbors, std::size_t K,
                                  std::string uid) {
    if (neighbors.rows.empty()) throw std::invalid_argument("empty neighbor matrix");
    if (K == 0) throw std::invalid_argument("K must be positive");
    RankedPrediction pred;
    pred.uid = std::move(uid);
    pred.strategy = RerankStrategy::heuristic;
    pred.lids = heuristic_order(neighbors);
    if (pred.lids.size() > K) pred.lids.resize(K);
    return pred;
}

RankedPrediction rerank_llm(const Instance& x, const Shortlist& shortlist,
                            const NeighborMatrix& neighbors, std::size_t K,
                            llm::LLMBackend& backend, const llm::RequestOptions& opts,
                            llm::Domain domain, const LabelSpace& space) {
    if (shortlist.entries.empty()) throw std::invalid_argument("empty shortlist");
    if (K == 0) throw std::invalid_argument("K must be positive");

    RankedPrediction pred;
    pred.uid = shortlist.uid.empty() ? x.uid : shortlist.uid;
    pred.strategy = RerankStrategy::llm;

    std::vector<std::string> candidate_texts;
    candidate_texts.reserve(shortlist.entries.size());
    for (const auto& e : shortlist.entries) {
        candidate_texts.push_back(space.at(space.ordinal_of(e.lid)).text);
    }

    std::vector<std::string> picked;
    try {
        const std::string prompt = llm::build_t4_prompt(domain, x, candidate_texts, K);
        const llm::LLMResponse resp = backend.complete(llm::make_request(prompt, opts));
        const auto indices =
            llm::parse_index_list(resp.text, shortlist.entries.size(), K);
        picked.reserve(indices.size());
        for (auto idx : indices) picked.push_back(shortlist.entries[idx - 1].lid);
    } catch (const llm::BackendError&) {
        pred.fallback = true;
    }

    const std::size_t want = std::min(K, shortlist.entries.size());
    if (picked.size() < want) {
        std::unordered_set<std::string> have(picked.begin(), picked.end());
        for (const auto& lid : heuristic_order(neighbors)) {
            if (picked.size() == want) break;
            if (have.insert(lid).second) {
                picked.push_back(lid);
                if (!pred.fallback) ++pred.padded;
            }
        }
    }
    pred.lids = std::move(picked);
    return pred;
}

RankedPrediction rerank_scorer(const Instance& x, const Shortlist& shortlist, std::size_t K,
                               const RelevanceScorer& scorer, const LabelSpace& space,
                               QueryTextPolicy policy) {
    if (shortlist.entries.empty()) throw std::invalid_argument("empty shortlist");
    if (K == 0) throw std::invalid_argument("K must be positive");

    RankedPrediction pred;
    pred.uid = shortlist.uid;
    pred.strategy = RerankStrategy::scorer;

    const std::string query = query_text(x, policy);
    std::vector<double> scores(shortlist.entries.size());
    for (std::size_t i = 0; i < shortlist.entries.size(); ++i) {
        const auto& text = space.at(space.ordinal_of(shortlist.entries[i].lid)).text;
        try {
            scores[i] = scorer.score(query, text);
        } catch (const std::exception&) {
            scores[i] = -std::numeric_limits<double>::infinity();
            ++pred.warnings;
        }
    }

    std::vector<std::size_t> idx(shortlist.entries.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const std::size_t take = std::min(K, idx.size());
    pred.lids.reserve(take);
    for (std::size_t i = 0; i < take; ++i) pred.lids.push_back(shortlist.entries[idx[i]].lid);
    return pred;
}

std::string prediction_json_line(const RankedPrediction& pred) {
    // Hand-ordered keys; nlohmann would sort them.
    json lids = json::array();
    for (const auto& lid : pred.lids) lids.push_back(lid);
    std::string out = "{\"uid\": " + json(pred.uid).dump();
    out += ", \"lids\": " + lids.dump();
    out += ", \"strategy\": " + json(strategy_string(pred)).dump();
    out += ", \"padded\": " + std::to_string(pred.padded);
    out += "}";
    return out;
}

RankedPrediction parse_prediction_line(const std::string& line) {
    const json rec = json::parse(line);
    RankedPrediction pred;
    pred.uid = rec.at("uid").get<std::string>();
    for (const auto& lid : rec.at("lids")) pred.lids.push_back(lid.get<std::string>());
    std::string strategy = rec.at("strategy").get<std::string>();
    if (const auto plus = strategy.find("+fallback"); plus != std::string::npos) {
        pred.fallback = true;
        strategy.resize(plus);
    }
    pred.strategy = rerank_strategy_from_string(strategy);
    pred.padded = rec.at("padded").get<std::size_t>();
    return pred;
}

} // namespace xmcgen
