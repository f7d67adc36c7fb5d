#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "support.hpp"
#include "xmcgen/util.hpp"

using namespace xmcgen;

TEST_CASE("tokenize lowercases and splits on non-alphanumerics") {
    CHECK(tokenize("Red-Apple 123") == std::vector<std::string>{"red", "apple", "123"});
    CHECK(tokenize("  a,,b..c  ") == std::vector<std::string>{"a", "b", "c"});
    CHECK(tokenize("MiXeD CaSe") == std::vector<std::string>{"mixed", "case"});
    CHECK(tokenize("") == std::vector<std::string>{});
    CHECK(tokenize("!!! ---") == std::vector<std::string>{});
    CHECK(tokenize("x") == std::vector<std::string>{"x"});
}

TEST_CASE("tokenize keeps multi-byte UTF-8 sequences inside one token") {
    CHECK(tokenize("h\xc3\xa9llo") == std::vector<std::string>{"h\xc3\xa9llo"});
    CHECK(tokenize("caf\xc3\xa9 au lait") ==
          std::vector<std::string>{"caf\xc3\xa9", "au", "lait"});
}

TEST_CASE("truncate_tokens keeps the prefix with original separators") {
    CHECK(truncate_tokens("a  b\tc d", 3) == "a  b\tc");
    CHECK(truncate_tokens("one two three", 2) == "one two");
    CHECK(truncate_tokens("one two three", 3) == "one two three");
    CHECK(truncate_tokens("one two three", 10) == "one two three");
    CHECK(truncate_tokens("  padded   text  ", 1) == "  padded");
    CHECK(truncate_tokens("", 5) == "");
    CHECK(truncate_tokens("a b c", 0) == "");
}

TEST_CASE("truncate_tokens counts whitespace-delimited chunks, not tokenizer tokens") {
    // "red-apple" is one whitespace chunk even though tokenize splits it.
    CHECK(truncate_tokens("red-apple blue", 1) == "red-apple");
}

TEST_CASE("fnv1a64 matches the published test vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

namespace {

// Reference splitmix64 (public-domain constants), written independently.
struct RefSplitMix {
    std::uint64_t x;
    std::uint64_t operator()() {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
};

} // namespace

TEST_CASE("SplitMix64 reproduces the reference stream") {
    for (const std::uint64_t seed : {0ULL, 1ULL, 42ULL, 0xdeadbeefULL}) {
        SplitMix64 rng(seed);
        RefSplitMix ref{seed};
        for (int i = 0; i < 1000; ++i) CHECK(rng.next() == ref());
    }
}

TEST_CASE("SplitMix64 bounded draws stay in range and cover small ranges") {
    SplitMix64 rng(99);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const std::uint64_t v = rng.bounded(7);
        CHECK(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);

    SplitMix64 a(5), b(5);
    for (int i = 0; i < 100; ++i) CHECK(a.bounded(1000) == b.bounded(1000));
}

TEST_CASE("sha256_hex matches NIST vectors") {
    CHECK(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("write_file_atomic round-trips binary content") {
    const auto dir = testsupport::make_temp_dir("util");
    const std::string path = (dir / "f.bin").string();
    const std::string payload("a\0b\nc", 5);
    write_file_atomic(path, payload);
    CHECK(read_file(path) == payload);
    write_file_atomic(path, "second");
    CHECK(read_file(path) == "second");
    CHECK(!std::filesystem::exists(path + ".tmp"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("read_file on a missing path throws") {
    CHECK_THROWS_AS((void)read_file("/nonexistent/x/y/z"), std::runtime_error);
}

TEST_CASE("builtin wordlist is 64 distinct non-empty words, order pinned") {
    const auto& words = builtin_wordlist();
    CHECK(words.size() == 64);
    CHECK(std::set<std::string>(words.begin(), words.end()).size() == 64);
    for (const auto& w : words) CHECK(!w.empty());
    CHECK(words.front() == "apple");
    CHECK(words.back() == "curtain");
    CHECK(&builtin_wordlist() == &words);
}
