#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace xmcgen {

/// Lowercasing tokenizer shared by every retriever and scorer: ASCII
/// alphanumerics are token characters (uppercase folded), bytes >= 0x80 are
/// kept verbatim so multi-byte UTF-8 sequences stay inside one token, and
/// every other byte splits. No stemming, no stopwords.
std::vector<std::string> tokenize(std::string_view text);

/// The prefix holding the first max_tokens whitespace-delimited tokens,
/// separators preserved, trailing whitespace trimmed. Returns the input
/// unchanged when it is short enough.
std::string truncate_tokens(std::string_view text, std::size_t max_tokens);

std::uint64_t fnv1a64(std::string_view data);

/// Seeded 64-bit stream with stable output across platforms and compilers.
/// std distributions are not pinned by the standard, so bounded draws go
/// through multiply-shift reduction here instead.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next();

    /// Uniform-ish draw in [0, n). n must be > 0.
    std::uint64_t bounded(std::uint64_t n);

private:
    std::uint64_t state_;
};

/// Hex-encoded SHA-256 of data.
std::string sha256_hex(std::string_view data);

std::string read_file(const std::string& path);

/// Write via temp file + rename so readers never observe partial content.
void write_file_atomic(const std::string& path, std::string_view content);

/// Fixed 64-word vocabulary shared by the mock backend, demonstration
/// corruption, and the synthetic fixture generator. Never reordered:
/// committed goldens depend on the indices.
const std::vector<std::string>& builtin_wordlist();

} // namespace xmcgen
