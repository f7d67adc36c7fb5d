#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xmcgen/corpus.hpp"
#include "xmcgen/llm/backend.hpp"
#include "xmcgen/llm/templates.hpp"
#include "xmcgen/shortlist.hpp"

namespace xmcgen {

enum class RerankStrategy { heuristic, scorer, llm };

RerankStrategy rerank_strategy_from_string(const std::string& s);
std::string to_string(RerankStrategy strategy);

/// Final top-K prediction. lids are duplicate-free and always a subset of
/// the shortlist the reranker was given.
struct RankedPrediction {
    std::string uid;
    std::vector<std::string> lids;  // length ≤ K
    RerankStrategy strategy = RerankStrategy::heuristic;
    bool fallback = false;          // llm strategy degraded to heuristic order
    std::size_t padded = 0;         // lids appended from heuristic order
    std::size_t warnings = 0;       // scorer failures
};

/// "heuristic" | "scorer" | "llm" | "llm+fallback"
std::string strategy_string(const RankedPrediction& pred);

/// Deterministic relevance model: score(query, candidate), higher is more
/// relevant. Implementations must be safe for concurrent score() calls.
class RelevanceScorer {
public:
    virtual ~RelevanceScorer() = default;
    virtual double score(const std::string& query, const std::string& candidate) const = 0;
};

/// Jaccard overlap of the token sets. A stand-in with the same interface a
/// neural cross-encoder would use.
class TokenOverlapScorer final : public RelevanceScorer {
public:
    double score(const std::string& query, const std::string& candidate) const override;
};

/// Round-robin over rows (all rows at depth 1, then depth 2, ...): each
/// visit to a row emits its highest-ranked lid not yet emitted anywhere.
/// Stops at K lids or when every row is exhausted.
RankedPrediction rerank_heuristic(const NeighborMatrix& neighbors, std::size_t K,
                                  std::string uid = "");

/// Listwise selection: renders t4 over the 1-indexed candidate texts, maps
/// the parsed indices back to lids, then pads from heuristic order (padded
/// records how many). A backend error degrades to pure heuristic order with
/// the fallback flag set. neighbors must be the matrix the shortlist was
/// unioned from.
RankedPrediction rerank_llm(const Instance& x, const Shortlist& shortlist,
                            const NeighborMatrix& neighbors, std::size_t K,
                            llm::LLMBackend& backend, const llm::RequestOptions& opts,
                            llm::Domain domain, const LabelSpace& space);

/// Scores every candidate text against query_text(x, policy) and stable
/// sorts descending (ties keep shortlist order). A scorer exception sinks
/// that candidate to the bottom and counts a warning.
RankedPrediction rerank_scorer(const Instance& x, const Shortlist& shortlist, std::size_t K,
                               const RelevanceScorer& scorer, const LabelSpace& space,
                               QueryTextPolicy policy);

/// One prediction as a JSON line {"uid","lids","strategy","padded"}.
std::string prediction_json_line(const RankedPrediction& pred);
RankedPrediction parse_prediction_line(const std::string& line);

} // namespace xmcgen
