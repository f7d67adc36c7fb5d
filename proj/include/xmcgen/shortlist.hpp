#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xmcgen/corpus.hpp"
#include "xmcgen/demogen.hpp"
#include "xmcgen/llm/backend.hpp"
#include "xmcgen/llm/templates.hpp"
#include "xmcgen/retrieval.hpp"

namespace xmcgen {

/// Label texts generated by the model for one instance, before mapping.
struct RawGeneration {
    std::vector<std::string> texts;  // ≤ k, each non-empty
    std::string prompt_digest;       // cache key of the producing request
};

struct ScoredLid {
    std::string lid;
    double score;
};

/// Per raw-label index j, the s nearest labels (score desc, ordinal asc
/// tie-break), kept before the union for rerankers that need row structure.
struct NeighborMatrix {
    std::vector<std::vector<ScoredLid>> rows;
};

/// (j, r): first occurrence was rank r of row j, both 0-based.
struct ShortlistEntry {
    std::string lid;
    std::uint32_t j;
    std::uint32_t r;
    double score;
};

struct Shortlist {
    std::string uid;
    std::vector<ShortlistEntry> entries;  // unique lids, first-occurrence order
};

/// Renders t3 with x and D (free-generation prompt when D is empty) and
/// parses up to k label texts. An empty parse yields empty texts; the
/// caller decides the fallback.
RawGeneration infer_raw_labels(const Instance& x, const DemonstrationSet& demos, std::size_t k,
                               llm::LLMBackend& backend, const llm::RequestOptions& opts,
                               llm::Domain domain, const LabelSpace& space);

/// Like infer_raw_labels with an empty demonstration set, plus the hint
/// label texts bound as a hint block. Throws std::invalid_argument when
/// hints is empty.
RawGeneration hint_generation(const Instance& x, const Shortlist& hints, std::size_t k,
                              llm::LLMBackend& backend, const llm::RequestOptions& opts,
                              llm::Domain domain, const LabelSpace& space);

/// Row j = the s labels nearest raw.texts[j]; the shortlist is the union of
/// rows in row-major (j outer, rank inner) first-occurrence order, each
/// entry carrying its (j, r, score) provenance. |shortlist| ≤ |texts|·s.
std::pair<Shortlist, NeighborMatrix> map_to_label_space(const RawGeneration& raw, std::size_t s,
                                                        const RetrieverIndex& label_index,
                                                        const LabelSpace& space,
                                                        std::string uid = "");

/// Retrieval-only shortlist: the budget labels nearest the instance text,
/// as a single-row NeighborMatrix.
std::pair<Shortlist, NeighborMatrix> retriever_shortlist(const Instance& x, std::size_t budget,
                                                         const RetrieverIndex& label_index,
                                                         const LabelSpace& space,
                                                         QueryTextPolicy policy);

} // namespace xmcgen
