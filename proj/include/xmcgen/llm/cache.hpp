#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "xmcgen/llm/backend.hpp"

namespace xmcgen::llm {

/// SHA-256 hex digest of the canonical request serialization. Requests that
/// differ in model, temperature, or any message differ in key.
std::string cache_key(const LLMRequest& request);

/// One directory, one file per key, filename = hex digest, content =
/// response text. Writes are atomic (temp file + rename), so concurrent
/// readers and writers are safe. I/O failures degrade to uncached
/// operation and are counted, never thrown.
class DiskCache {
public:
    explicit DiskCache(std::filesystem::path dir);

    std::optional<std::string> get(const std::string& key);
    void put(const std::string& key, const std::string& text);

    std::size_t io_failures() const { return io_failures_.load(); }
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path path_for(const std::string& key) const;

    std::filesystem::path dir_;
    std::atomic<std::size_t> io_failures_{0};
};

/// Wraps a backend with a DiskCache: hits return the stored text with
/// cached=true and zero usage, misses delegate and store the result.
class CachedBackend final : public LLMBackend {
public:
    CachedBackend(std::shared_ptr<LLMBackend> inner, std::shared_ptr<DiskCache> cache)
        : inner_(std::move(inner)), cache_(std::move(cache)) {}

    LLMResponse complete(const LLMRequest& request) override;

    std::size_t hits() const { return hits_.load(); }
    std::size_t misses() const { return misses_.load(); }

private:
    std::shared_ptr<LLMBackend> inner_;
    std::shared_ptr<DiskCache> cache_;
    std::atomic<std::size_t> hits_{0};
    std::atomic<std::size_t> misses_{0};
};

} // namespace xmcgen::llm
