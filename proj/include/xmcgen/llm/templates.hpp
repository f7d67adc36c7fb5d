#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xmcgen/corpus.hpp"

namespace xmcgen::llm {

enum class Domain { product, wiki };

Domain domain_from_string(const std::string& s);
std::string to_string(Domain domain);

enum class TemplateId { t1, t2, t3, t4 };

std::string to_string(TemplateId id);

/// Slot bindings for render_prompt. Values may be empty strings (an empty
/// demonstration block is the free-generation prompt); a missing key is an
/// error naming the slot and template.
using SlotMap = std::vector<std::pair<std::string, std::string>>;

/// Substitute every {{slot}} marker in the template variant. Throws
/// std::invalid_argument when a required slot is unbound. Single-pass, so
/// marker-like text inside bound values is data, not a slot.
std::string render_prompt(TemplateId id, Domain domain, const SlotMap& bindings);

/// Raw template text with {{slot}} markers, as registered.
const std::string& template_text(TemplateId id, Domain domain);

/// Which template a rendered prompt came from, by instruction-text
/// markers. Used by the mock backend and by per-template call accounting.
std::optional<TemplateId> detect_template(std::string_view prompt);

/// A demonstration as it appears in prompts: (input text, label texts).
using DemoPair = std::pair<std::string, std::vector<std::string>>;

/// Test-instance content is truncated to this many whitespace tokens before
/// it is bound into any prompt.
inline constexpr std::size_t kContentTokenBudget = 1000;

std::string serialize_demonstrations(Domain domain, const std::vector<DemoPair>& demos);
std::string serialize_hints(Domain domain, const std::vector<std::string>& hint_texts);
/// 1-indexed candidate lines: "1. text\n2. text\n...".
std::string serialize_candidates(const std::vector<std::string>& texts);
/// "[1, 2, ..., k]" — the index-output example line body.
std::string index_example(std::size_t k);

// Prompt builders used by the pipeline stages. All bind the instance title
// verbatim and the content through the token budget.
std::string build_t1_prompt(Domain domain, const Instance& x, std::size_t m);
std::string build_t2_prompt(Domain domain, const Instance& x,
                            const std::vector<std::string>& label_texts, std::size_t n);
std::string build_t3_prompt(Domain domain, const Instance& x, const std::vector<DemoPair>& demos,
                            std::size_t k, const std::vector<std::string>& hint_texts = {});
std::string build_t4_prompt(Domain domain, const Instance& x,
                            const std::vector<std::string>& candidate_texts, std::size_t top_k);

} // namespace xmcgen::llm
