#include "xmcgen/demogen.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "xmcgen/llm/parsing.hpp"
#include "xmcgen/util.hpp"

namespace xmcgen {

DemoStrategy demo_strategy_from_string(const std::string& s) {
    if (s == "content") return DemoStrategy::content;
    if (s == "label_centric") return DemoStrategy::label_centric;
    if (s == "retrieval") return DemoStrategy::retrieval;
    if (s == "none") return DemoStrategy::none;
    throw std::invalid_argument("unknown demonstration strategy: " + s);
}

std::string to_string(DemoStrategy strategy) {
    switch (strategy) {
        case DemoStrategy::content: return "content";
        case DemoStrategy::label_centric: return "label_centric";
        case DemoStrategy::retrieval: return "retrieval";
        case DemoStrategy::none: return "none";
    }
    return "?";
}

CorruptMode corrupt_mode_from_string(const std::string& s) {
    if (s == "random_inputs") return CorruptMode::random_inputs;
    if (s == "random_labels") return CorruptMode::random_labels;
    throw std::invalid_argument("unknown corruption mode: " + s);
}

std::string to_string(CorruptMode mode) {
    return mode == CorruptMode::random_inputs ? "random_inputs" : "random_labels";
}

Demonstration checked_demonstration(std::string input_text, std::vector<std::string> lids,
                                    const LabelSpace& space) {
    if (input_text.empty()) throw std::invalid_argument("demonstration input text is empty");
    if (lids.empty()) throw std::invalid_argument("demonstration has no labels");
    std::unordered_set<std::string> seen;
    for (const auto& lid : lids) {
        if (!space.contains(lid)) {
            throw std::invalid_argument("demonstration label not in space: " + lid);
        }
        if (!seen.insert(lid).second) {
            throw std::invalid_argument("duplicate demonstration label: " + lid);
        }
    }
    return Demonstration{std::move(input_text), std::move(lids)};
}

namespace {

std::vector<std::string> hit_lids(const std::vector<ScoredHit>& hits, const LabelSpace& space) {
    std::vector<std::string> lids;
    lids.reserve(hits.size());
    for (const auto& h : hits) lids.push_back(space.at(h.doc_ordinal).lid);
    return lids;
}

std::string trim_fold(const std::string& s) {
    std::size_t begin = 0;
    std::size_t end = s.size();
    auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (begin < end && is_ws(s[begin])) ++begin;
    while (end > begin && is_ws(s[end - 1])) --end;
    std::string out = s.substr(begin, end - begin);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::size_t ws_token_count(const std::string& s) {
    std::size_t count = 0;
    bool in_token = false;
    for (char c : s) {
        const bool ws = c == ' ' || c == '\t' || c == '\r' || c == '\n';
        if (!ws && !in_token) ++count;
        in_token = !ws;
    }
    return count;
}

} // namespace

DemonstrationSet generate_content_based(const Instance& x, std::size_t m, std::size_t n,
                                        llm::LLMBackend& backend, const llm::RequestOptions& opts,
                                        llm::Domain domain, const RetrieverIndex& label_index,
                                        const LabelSpace& space) {
    if (m == 0 || n == 0) throw std::invalid_argument("m and n must be positive");
    DemonstrationSet out;
    out.strategy = DemoStrategy::content;

    const std::string prompt = llm::build_t1_prompt(domain, x, m);
    const llm::LLMResponse resp = backend.complete(llm::make_request(prompt, opts));
    const std::vector<std::string> zs = llm::parse_label_list(resp.text, m);

    for (const auto& z : zs) {
        const auto hits = label_index.top_n(z, n);
        if (hits.empty()) {
            ++out.warning_count;
            continue;
        }
        out.items.push_back(checked_demonstration(z, hit_lids(hits, space), space));
    }
    out.degraded = out.items.empty();
    return out;
}

DemonstrationSet generate_label_centric(const Instance& x, std::size_t n,
                                        llm::LLMBackend& backend, const llm::RequestOptions& opts,
                                        llm::Domain domain, QueryTextPolicy policy,
                                        const RetrieverIndex& label_index,
                                        const LabelSpace& space) {
    if (n == 0) throw std::invalid_argument("n must be positive");
    DemonstrationSet out;
    out.strategy = DemoStrategy::label_centric;

    const auto hits = label_index.top_n(query_text(x, policy), n);
    if (hits.empty()) {
        out.degraded = true;
        return out;
    }
    std::vector<std::string> label_texts;
    label_texts.reserve(hits.size());
    for (const auto& h : hits) label_texts.push_back(space.at(h.doc_ordinal).text);

    const std::string prompt = llm::build_t2_prompt(domain, x, label_texts, label_texts.size());
    const llm::LLMResponse resp = backend.complete(llm::make_request(prompt, opts));
    const std::vector<std::string> zs = llm::parse_label_list(resp.text, label_texts.size());
    if (zs.empty()) {
        out.degraded = true;
        return out;
    }
    if (zs.size() != label_texts.size()) ++out.warning_count;
    const std::size_t aligned = std::min(zs.size(), label_texts.size());

    // Positional pairing, then first-occurrence merge of duplicate inputs.
    std::vector<std::pair<std::string, std::vector<std::string>>> groups;
    std::unordered_map<std::string, std::size_t> group_of;
    for (std::size_t j = 0; j < aligned; ++j) {
        const std::string key = trim_fold(zs[j]);
        if (key.empty()) {
            ++out.warning_count;
            continue;
        }
        auto [it, inserted] = group_of.try_emplace(key, groups.size());
        if (inserted) groups.push_back({zs[j], {}});
        groups[it->second].second.push_back(space.at(hits[j].doc_ordinal).lid);
    }
    for (auto& [z, lids] : groups) {
        out.items.push_back(checked_demonstration(std::move(z), std::move(lids), space));
    }
    out.degraded = out.items.empty();
    return out;
}

DemonstrationSet retrieve_demonstrations(const Instance& x, std::size_t m, std::size_t n,
                                         const RetrieverIndex& train_index,
                                         const std::vector<Instance>& train,
                                         QueryTextPolicy policy,
                                         const RetrieverIndex& label_index,
                                         const LabelSpace& space,
                                         llm::LLMBackend* backend) {
    (void)backend;  // interface symmetry; this strategy makes no model calls
    if (train.empty()) throw std::invalid_argument("empty train corpus");
    if (train.size() != train_index.doc_count()) {
        throw std::invalid_argument("train corpus and train index sizes differ");
    }
    DemonstrationSet out;
    out.strategy = DemoStrategy::retrieval;

    const auto neighbors = train_index.top_n(query_text(x, policy), m);
    for (const auto& nb : neighbors) {
        const Instance& t = train[nb.doc_ordinal];
        const auto hits = label_index.top_n(query_text(t, policy), n);
        if (hits.empty()) {
            ++out.warning_count;
            continue;
        }
        out.items.push_back(checked_demonstration(t.title, hit_lids(hits, space), space));
    }
    out.degraded = out.items.empty();
    return out;
}

DemonstrationSet corrupt(const DemonstrationSet& demos, CorruptMode mode, std::uint64_t seed,
                         const LabelSpace& space) {
    if (demos.items.empty()) throw std::invalid_argument("cannot corrupt an empty set");
    DemonstrationSet out = demos;
    SplitMix64 rng(seed);
    const auto& wl = builtin_wordlist();

    for (auto& item : out.items) {
        if (mode == CorruptMode::random_inputs) {
            const std::size_t count = std::max<std::size_t>(1, ws_token_count(item.input_text));
            std::string text;
            for (std::size_t i = 0; i < count; ++i) {
                if (i) text += ' ';
                text += wl[static_cast<std::size_t>(rng.bounded(wl.size()))];
            }
            item.input_text = std::move(text);
        } else {
            const std::size_t want = item.lids.size();
            std::unordered_set<std::size_t> drawn;
            std::vector<std::string> lids;
            lids.reserve(want);
            while (lids.size() < want) {
                const auto ord = static_cast<std::size_t>(rng.bounded(space.size()));
                if (drawn.insert(ord).second) lids.push_back(space.at(ord).lid);
            }
            item.lids = std::move(lids);
        }
    }
    return out;
}

} // namespace xmcgen
