#include "xmcgen/util.hpp"

#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <openssl/evp.h>

namespace xmcgen {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if ((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || c >= 0x80) {
            cur.push_back(static_cast<char>(c));
        } else if (c >= 'A' && c <= 'Z') {
            cur.push_back(static_cast<char>(c - 'A' + 'a'));
        } else {
            if (!cur.empty()) tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

namespace {

bool is_space_byte(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

} // namespace

std::string truncate_tokens(std::string_view text, std::size_t max_tokens) {
    std::size_t count = 0;
    bool in_token = false;
    std::size_t end = text.size();
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (!is_space_byte(text[i])) {
            if (!in_token) {
                if (count == max_tokens) {
                    end = i;
                    break;
                }
                ++count;
                in_token = true;
            }
        } else {
            in_token = false;
        }
    }
    if (end == text.size()) return std::string(text);
    // Trim trailing whitespace off the kept prefix.
    while (end > 0 && is_space_byte(text[end - 1])) --end;
    return std::string(text.substr(0, end));
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t SplitMix64::next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t SplitMix64::bounded(std::uint64_t n) {
    // Lemire multiply-shift; bias negligible for the small n used here.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open file for writing: " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

const std::vector<std::string>& builtin_wordlist() {
    static const std::vector<std::string> words = {
        "apple",   "banana",  "cherry",  "grape",   "lemon",   "mango",   "melon",   "peach",
        "copper",  "steel",   "brass",   "carbon",  "cotton",  "leather", "marble",  "walnut",
        "red",     "green",   "blue",    "amber",   "silver",  "violet",  "crimson", "ivory",
        "cable",   "adapter", "charger", "speaker", "monitor", "keyboard", "printer", "battery",
        "river",   "harbor",  "meadow",  "summit",  "valley",  "canyon",  "glacier", "island",
        "novel",   "atlas",   "journal", "manual",  "poster",  "ledger",  "charter", "gazette",
        "engine",  "turbine", "piston",  "gearbox", "dynamo",  "filter",  "sensor",  "bracket",
        "lantern", "kettle",  "basket",  "blanket", "mirror",  "candle",  "carpet",  "curtain",
    };
    return words;
}

} // namespace xmcgen
