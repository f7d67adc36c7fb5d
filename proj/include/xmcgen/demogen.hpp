#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xmcgen/corpus.hpp"
#include "xmcgen/llm/backend.hpp"
#include "xmcgen/llm/templates.hpp"
#include "xmcgen/retrieval.hpp"

namespace xmcgen {

/// One pseudo input with its attached labels.
struct Demonstration {
    std::string input_text;        // non-empty
    std::vector<std::string> lids; // non-empty, duplicate-free, all in the space
};

enum class DemoStrategy { content, label_centric, retrieval, none };

DemoStrategy demo_strategy_from_string(const std::string& s);
std::string to_string(DemoStrategy strategy);

struct DemonstrationSet {
    std::vector<Demonstration> items;
    DemoStrategy strategy = DemoStrategy::none;
    bool degraded = false;         // generation yielded nothing usable
    std::size_t warning_count = 0; // soft events (count mismatch, dropped items)
};

/// Validates the Demonstration invariants against the space; throws
/// std::invalid_argument on violation.
Demonstration checked_demonstration(std::string input_text, std::vector<std::string> lids,
                                    const LabelSpace& space);

/// Prompts for pseudo inputs resembling x (at least m of them), then pairs
/// each with its top-n labels by retrieval over the label texts. Pseudo
/// inputs whose retrieval comes back empty are dropped. An empty result is
/// flagged degraded, not an error.
DemonstrationSet generate_content_based(const Instance& x, std::size_t m, std::size_t n,
                                        llm::LLMBackend& backend, const llm::RequestOptions& opts,
                                        llm::Domain domain, const RetrieverIndex& label_index,
                                        const LabelSpace& space);

/// Retrieves the n labels nearest to x, prompts for one pseudo input per
/// label (positionally aligned), then merges demonstrations whose pseudo
/// inputs are identical after whitespace-trim and ASCII case-fold, keeping
/// first-occurrence order. A count mismatch truncates to the shorter side
/// and bumps warning_count.
DemonstrationSet generate_label_centric(const Instance& x, std::size_t n,
                                        llm::LLMBackend& backend, const llm::RequestOptions& opts,
                                        llm::Domain domain, QueryTextPolicy policy,
                                        const RetrieverIndex& label_index,
                                        const LabelSpace& space);

/// Takes the m train instances nearest to x as pseudo inputs and pairs each
/// with its top-n labels, exactly as the content-based pairing does. The
/// backend parameter is accepted for interface symmetry and never invoked.
/// train_index must have been built over query_text(train[i], policy).
/// Throws std::invalid_argument on an empty train corpus.
DemonstrationSet retrieve_demonstrations(const Instance& x, std::size_t m, std::size_t n,
                                         const RetrieverIndex& train_index,
                                         const std::vector<Instance>& train,
                                         QueryTextPolicy policy,
                                         const RetrieverIndex& label_index,
                                         const LabelSpace& space,
                                         llm::LLMBackend* backend = nullptr);

enum class CorruptMode { random_inputs, random_labels };

CorruptMode corrupt_mode_from_string(const std::string& s);
std::string to_string(CorruptMode mode);

/// random_inputs: each input_text becomes equally many whitespace tokens of
/// seeded wordlist words. random_labels: each lid list becomes a same-size
/// distinct uniform sample of the space. One seeded stream, items in order,
/// so equal seeds give equal results. Throws std::invalid_argument on an
/// empty set.
DemonstrationSet corrupt(const DemonstrationSet& demos, CorruptMode mode, std::uint64_t seed,
                         const LabelSpace& space);

} // namespace xmcgen
