#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmcgen::llm {

struct Message {
    std::string role;
    std::string content;
};

struct LLMRequest {
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_output_tokens = 512;
    std::string model_name;
};

struct Usage {
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
};

struct LLMResponse {
    std::string text;  // empty string for an empty completion
    Usage usage;
    bool cached = false;
    int retries = 0;
};

enum class BackendErrorKind { transport, credential, protocol };

class BackendError : public std::runtime_error {
public:
    BackendError(BackendErrorKind kind, const std::string& what, int http_status = 0)
        : std::runtime_error(what), kind_(kind), http_status_(http_status) {}

    BackendErrorKind kind() const { return kind_; }
    int http_status() const { return http_status_; }

private:
    BackendErrorKind kind_;
    int http_status_;
};

/// The language model behind every prompt. Implementations must tolerate
/// concurrent complete() calls.
class LLMBackend {
public:
    virtual ~LLMBackend() = default;
    virtual LLMResponse complete(const LLMRequest& request) = 0;
};

/// Per-run request parameters applied to every prompt.
struct RequestOptions {
    std::string model_name = "mock";
    double temperature = 0.0;
    int max_output_tokens = 512;
};

LLMRequest make_request(std::string prompt, const RequestOptions& opts);

/// Canonical JSON serialization of (model, temperature, messages) — the
/// cache-key input. Key order is normalized, so equal requests serialize
/// identically.
std::string canonical_request(const LLMRequest& request);

/// Deterministic stand-in for the real model. Output is a pure function of
/// (canonical request bytes, seed): pseudo-title arrays for generation
/// prompts, echoed demonstration labels as numbered lines for inference
/// prompts, a seeded index permutation for rerank prompts.
class MockBackend final : public LLMBackend {
public:
    explicit MockBackend(std::uint64_t seed) : seed_(seed) {}
    LLMResponse complete(const LLMRequest& request) override;

private:
    std::uint64_t seed_;
};

/// Test helper: completion text from a plain function.
class FunctionBackend final : public LLMBackend {
public:
    explicit FunctionBackend(std::function<std::string(const LLMRequest&)> fn)
        : fn_(std::move(fn)) {}
    LLMResponse complete(const LLMRequest& request) override {
        return LLMResponse{fn_(request), {}, false, 0};
    }

private:
    std::function<std::string(const LLMRequest&)> fn_;
};

struct HttpBackendConfig {
    std::string base_url;                 // e.g. "https://api.openai.com/v1"
    std::string credential_env = "OPENAI_API_KEY";
    int retries = 3;                      // transient failures retried this many times
    int backoff_ms = 1000;                // 1s, 2s, 4s, ...
    int timeout_s = 60;
    int concurrency = 4;                  // max in-flight requests
    int min_interval_ms = 0;              // global rate limit between request starts
};

/// OpenAI-compatible chat-completions client:
/// POST {base_url}/chat/completions, reads choices[0].message.content.
/// 429 and 5xx and connection failures are retried with exponential
/// backoff; 401/403 raise a credential error immediately.
class HttpBackend final : public LLMBackend {
public:
    explicit HttpBackend(HttpBackendConfig config);
    ~HttpBackend() override;
    LLMResponse complete(const LLMRequest& request) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace xmcgen::llm
