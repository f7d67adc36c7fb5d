#include "xmcgen/llm/cache.hpp"

#include <fstream>
#include <stdexcept>

#include "xmcgen/util.hpp"

namespace xmcgen::llm {

namespace fs = std::filesystem;

std::string cache_key(const LLMRequest& request) {
    return sha256_hex(canonical_request(request));
}

DiskCache::DiskCache(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
}

fs::path DiskCache::path_for(const std::string& key) const {
    // Keys are hex digests; anything else would be a path-injection bug.
    for (char c : key) {
        if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) {
            throw std::invalid_argument("cache key is not a hex digest: " + key);
        }
    }
    if (key.empty()) throw std::invalid_argument("empty cache key");
    return dir_ / key;
}

std::optional<std::string> DiskCache::get(const std::string& key) {
    const fs::path path = path_for(key);
    std::error_code ec;
    if (!fs::exists(path, ec)) return std::nullopt;
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        ++io_failures_;
        return std::nullopt;
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) {
        ++io_failures_;
        return std::nullopt;
    }
    return text;
}

void DiskCache::put(const std::string& key, const std::string& text) {
    const fs::path path = path_for(key);
    try {
        write_file_atomic(path, text);
    } catch (const std::exception&) {
        ++io_failures_;
    }
}

LLMResponse CachedBackend::complete(const LLMRequest& request) {
    const std::string key = cache_key(request);
    if (auto stored = cache_->get(key)) {
        ++hits_;
        LLMResponse resp;
        resp.text = std::move(*stored);
        resp.cached = true;
        return resp;
    }
    LLMResponse resp = inner_->complete(request);
    cache_->put(key, resp.text);
    ++misses_;
    return resp;
}

} // namespace xmcgen::llm
