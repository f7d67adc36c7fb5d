#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace xmcgen::llm {

/// Total parser for generated label text. Cascade: a JSON array of strings
/// anywhere in the text wins; otherwise lines are split and leading
/// enumeration markers ("1.", "-", "*", quotes) stripped. Empties dropped,
/// result truncated to `expected`. Never throws; an empty result signals
/// generation failure upstream.
std::vector<std::string> parse_label_list(std::string_view raw, std::size_t expected);

/// Total parser for index selections. Integers are taken in textual order
/// (JSON array preferred, digit-run fallback), values outside
/// [1, candidate_count] dropped, duplicates removed keeping the first
/// occurrence, result truncated to `want`. Never throws.
std::vector<std::size_t> parse_index_list(std::string_view raw, std::size_t candidate_count,
                                          std::size_t want);

} // namespace xmcgen::llm
