#include "xmcgen/shortlist.hpp"

#include <stdexcept>
#include <unordered_set>

#include "xmcgen/llm/cache.hpp"
#include "xmcgen/llm/parsing.hpp"

namespace xmcgen {

namespace {

std::vector<llm::DemoPair> to_demo_pairs(const DemonstrationSet& demos, const LabelSpace& space) {
    std::vector<llm::DemoPair> pairs;
    pairs.reserve(demos.items.size());
    for (const auto& item : demos.items) {
        std::vector<std::string> texts;
        texts.reserve(item.lids.size());
        for (const auto& lid : item.lids) texts.push_back(space.at(space.ordinal_of(lid)).text);
        pairs.push_back({item.input_text, std::move(texts)});
    }
    return pairs;
}

RawGeneration run_t3(const Instance& x, const std::vector<llm::DemoPair>& pairs,
                     const std::vector<std::string>& hint_texts, std::size_t k,
                     llm::LLMBackend& backend, const llm::RequestOptions& opts,
                     llm::Domain domain) {
    if (k == 0) throw std::invalid_argument("k must be positive");
    const std::string prompt = llm::build_t3_prompt(domain, x, pairs, k, hint_texts);
    const llm::LLMRequest request = llm::make_request(prompt, opts);
    const llm::LLMResponse resp = backend.complete(request);

    RawGeneration raw;
    raw.prompt_digest = llm::cache_key(request);
    raw.texts = llm::parse_label_list(resp.text, k);
    return raw;
}

} // namespace

RawGeneration infer_raw_labels(const Instance& x, const DemonstrationSet& demos, std::size_t k,
                               llm::LLMBackend& backend, const llm::RequestOptions& opts,
                               llm::Domain domain, const LabelSpace& space) {
    return run_t3(x, to_demo_pairs(demos, space), {}, k, backend, opts, domain);
}

RawGeneration hint_generation(const Instance& x, const Shortlist& hints, std::size_t k,
                              llm::LLMBackend& backend, const llm::RequestOptions& opts,
                              llm::Domain domain, const LabelSpace& space) {
    if (hints.entries.empty()) throw std::invalid_argument("hint shortlist is empty");
    std::vector<std::string> hint_texts;
    hint_texts.reserve(hints.entries.size());
    for (const auto& e : hints.entries) {
        hint_texts.push_back(space.at(space.ordinal_of(e.lid)).text);
    }
    return run_t3(x, {}, hint_texts, k, backend, opts, domain);
}

std::pair<Shortlist, NeighborMatrix> map_to_label_space(const RawGeneration& raw, std::size_t s,
                                                        const RetrieverIndex& label_index,
                                                        const LabelSpace& space,
                                                        std::string uid) {
    if (s == 0) throw std::invalid_argument("s must be positive");

    NeighborMatrix matrix;
    matrix.rows.reserve(raw.texts.size());
    for (const auto& text : raw.texts) {
        std::vector<ScoredLid> row;
        for (const auto& hit : label_index.top_n(text, s)) {
            row.push_back({space.at(hit.doc_ordinal).lid, hit.score});
        }
        matrix.rows.push_back(std::move(row));
    }

    Shortlist shortlist;
    shortlist.uid = std::move(uid);
    std::unordered_set<std::string> seen;
    for (std::size_t j = 0; j < matrix.rows.size(); ++j) {
        const auto& row = matrix.rows[j];
        for (std::size_t r = 0; r < row.size(); ++r) {
            if (seen.insert(row[r].lid).second) {
                shortlist.entries.push_back({row[r].lid, static_cast<std::uint32_t>(j),
                                             static_cast<std::uint32_t>(r), row[r].score});
            }
        }
    }
    return {std::move(shortlist), std::move(matrix)};
}

std::pair<Shortlist, NeighborMatrix> retriever_shortlist(const Instance& x, std::size_t budget,
                                                         const RetrieverIndex& label_index,
                                                         const LabelSpace& space,
                                                         QueryTextPolicy policy) {
    if (budget == 0) throw std::invalid_argument("budget must be positive");
    RawGeneration raw;
    raw.texts.push_back(query_text(x, policy));
    return map_to_label_space(raw, budget, label_index, space, x.uid);
}

} // namespace xmcgen
