#include "xmcgen/llm/backend.hpp"

// CPPHTTPLIB_OPENSSL_SUPPORT comes from the build so every translation unit
// sees the same httplib configuration.
#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "xmcgen/llm/templates.hpp"
#include "xmcgen/util.hpp"

namespace xmcgen::llm {

using nlohmann::json;

LLMRequest make_request(std::string prompt, const RequestOptions& opts) {
    LLMRequest req;
    req.messages.push_back({"user", std::move(prompt)});
    req.temperature = opts.temperature;
    req.max_output_tokens = opts.max_output_tokens;
    req.model_name = opts.model_name;
    return req;
}

std::string canonical_request(const LLMRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"content", m.content}, {"role", m.role}});
    }
    // nlohmann objects serialize keys in sorted order, which is the
    // canonical form here.
    json body = {
        {"messages", messages},
        {"model", request.model_name},
        {"temperature", request.temperature},
    };
    return body.dump();
}

namespace {

std::string prompt_of(const LLMRequest& request) {
    std::string all;
    for (const auto& m : request.messages) all += m.content;
    return all;
}

// Parses the first unsigned integer following `anchor`, or `fallback`.
std::size_t number_after(const std::string& text, const std::string& anchor, std::size_t fallback) {
    const std::size_t at = text.find(anchor);
    if (at == std::string::npos) return fallback;
    std::size_t pos = at + anchor.size();
    std::size_t value = 0;
    bool any = false;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
        value = value * 10 + static_cast<std::size_t>(text[pos] - '0');
        any = true;
        ++pos;
    }
    return any ? value : fallback;
}

std::string pseudo_title(SplitMix64& rng, std::size_t words) {
    const auto& wl = builtin_wordlist();
    std::string out;
    for (std::size_t i = 0; i < words; ++i) {
        if (i) out += ' ';
        out += wl[static_cast<std::size_t>(rng.bounded(wl.size()))];
    }
    return out;
}

// Collects the comma-separated payloads of every line starting with `tag`.
void collect_tagged(const std::string& prompt, const std::string& tag,
                    std::vector<std::string>& out) {
    std::size_t pos = 0;
    while (pos < prompt.size()) {
        std::size_t eol = prompt.find('\n', pos);
        if (eol == std::string::npos) eol = prompt.size();
        if (prompt.compare(pos, tag.size(), tag) == 0) {
            std::string payload = prompt.substr(pos + tag.size(), eol - pos - tag.size());
            std::size_t start = 0;
            while (start <= payload.size()) {
                std::size_t comma = payload.find(", ", start);
                if (comma == std::string::npos) comma = payload.size();
                std::string item = payload.substr(start, comma - start);
                if (!item.empty()) out.push_back(item);
                if (comma == payload.size()) break;
                start = comma + 2;
            }
        }
        pos = eol + 1;
    }
}

std::size_t count_numbered_lines(const std::string& prompt) {
    std::size_t count = 0;
    std::size_t pos = 0;
    while (pos < prompt.size()) {
        std::size_t eol = prompt.find('\n', pos);
        if (eol == std::string::npos) eol = prompt.size();
        std::size_t p = pos;
        while (p < eol && prompt[p] >= '0' && prompt[p] <= '9') ++p;
        if (p > pos && p < eol && prompt[p] == '.') ++count;
        pos = eol + 1;
    }
    return count;
}

std::string mock_rerank(const std::string& prompt, SplitMix64& rng) {
    const std::size_t count = count_numbered_lines(prompt);
    const std::size_t top_k = number_after(prompt, "top ", 10);
    std::vector<std::size_t> indices(count);
    for (std::size_t i = 0; i < count; ++i) indices[i] = i + 1;
    for (std::size_t i = count; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.bounded(i));
        std::swap(indices[i - 1], indices[j]);
    }
    const std::size_t take = std::min(top_k, count);
    std::string out = "[";
    for (std::size_t i = 0; i < take; ++i) {
        if (i) out += ", ";
        out += std::to_string(indices[i]);
    }
    out += "]";
    return out;
}

std::string mock_infer(const std::string& prompt, SplitMix64& rng) {
    std::vector<std::string> labels;
    collect_tagged(prompt, "**Relevant product**: ", labels);
    collect_tagged(prompt, "**'See Also' pages**: ", labels);
    collect_tagged(prompt, "**Hints**: ", labels);
    // first-occurrence dedup; echoing a label twice would be wasted output
    std::vector<std::string> uniq;
    for (auto& s : labels) {
        bool seen = false;
        for (const auto& u : uniq) {
            if (u == s) { seen = true; break; }
        }
        if (!seen) uniq.push_back(std::move(s));
    }
    const std::size_t k = number_after(prompt, "at least ", 10);
    while (uniq.size() < k) uniq.push_back(pseudo_title(rng, 2));
    std::string out;
    for (std::size_t i = 0; i < uniq.size(); ++i) {
        out += std::to_string(i + 1);
        out += ". ";
        out += uniq[i];
        out += '\n';
    }
    if (!out.empty()) out.pop_back();
    return out;
}

std::string mock_titles(const std::string& prompt, SplitMix64& rng, const std::string& anchor,
                        std::size_t word_count) {
    const std::size_t n = number_after(prompt, anchor, 5);
    json arr = json::array();
    for (std::size_t i = 0; i < n; ++i) arr.push_back(pseudo_title(rng, word_count));
    return arr.dump();
}

} // namespace

LLMResponse MockBackend::complete(const LLMRequest& request) {
    const std::string canon = canonical_request(request);
    SplitMix64 rng(seed_ ^ fnv1a64(canon));
    const std::string prompt = prompt_of(request);

    std::string text;
    const auto id = detect_template(prompt);
    if (!id) {
        text = pseudo_title(rng, 4);
    } else if (*id == TemplateId::t4) {
        text = mock_rerank(prompt, rng);
    } else if (*id == TemplateId::t2) {
        text = mock_titles(prompt, rng, "of size ", 2);
    } else if (*id == TemplateId::t3) {
        text = mock_infer(prompt, rng);
    } else {
        text = mock_titles(prompt, rng, "at least ", 3);
    }

    LLMResponse resp;
    resp.usage.prompt_tokens = tokenize(prompt).size();
    resp.usage.completion_tokens = tokenize(text).size();
    resp.text = std::move(text);
    return resp;
}

struct HttpBackend::Impl {
    HttpBackendConfig config;
    std::string origin;       // scheme://host[:port]
    std::string path_prefix;  // e.g. "/v1", possibly empty
    std::string credential;

    std::mutex mu;
    std::condition_variable cv;
    int in_flight = 0;
    std::chrono::steady_clock::time_point next_start = std::chrono::steady_clock::now();

    void acquire() {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return in_flight < config.concurrency; });
        ++in_flight;
        if (config.min_interval_ms > 0) {
            const auto now = std::chrono::steady_clock::now();
            const auto start = std::max(now, next_start);
            next_start = start + std::chrono::milliseconds(config.min_interval_ms);
            lock.unlock();
            std::this_thread::sleep_until(start);
        }
    }

    void release() {
        {
            std::lock_guard lock(mu);
            --in_flight;
        }
        cv.notify_one();
    }
};

HttpBackend::HttpBackend(HttpBackendConfig config) : impl_(std::make_unique<Impl>()) {
    impl_->config = std::move(config);

    const std::string& url = impl_->config.base_url;
    const std::size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw BackendError(BackendErrorKind::transport, "base_url has no scheme: " + url);
    }
    const std::size_t path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        impl_->origin = url;
    } else {
        impl_->origin = url.substr(0, path_start);
        impl_->path_prefix = url.substr(path_start);
        while (!impl_->path_prefix.empty() && impl_->path_prefix.back() == '/') {
            impl_->path_prefix.pop_back();
        }
    }

    if (!impl_->config.credential_env.empty()) {
        const char* value = std::getenv(impl_->config.credential_env.c_str());
        if (value == nullptr || *value == '\0') {
            throw BackendError(BackendErrorKind::credential,
                               "credential environment variable is not set: " +
                                   impl_->config.credential_env);
        }
        impl_->credential = value;
    }
}

HttpBackend::~HttpBackend() = default;

LLMResponse HttpBackend::complete(const LLMRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", m.role}, {"content", m.content}});
    }
    const json body = {
        {"model", request.model_name},
        {"messages", messages},
        {"temperature", request.temperature},
        {"max_tokens", request.max_output_tokens},
    };
    const std::string payload = body.dump();
    const std::string path = impl_->path_prefix + "/chat/completions";

    httplib::Headers headers;
    if (!impl_->credential.empty()) {
        headers.emplace("Authorization", "Bearer " + impl_->credential);
    }

    std::string last_error;
    int last_status = 0;
    for (int attempt = 0; attempt <= impl_->config.retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(
                std::chrono::milliseconds(impl_->config.backoff_ms << (attempt - 1)));
        }

        impl_->acquire();
        httplib::Client client(impl_->origin);
        client.set_connection_timeout(impl_->config.timeout_s, 0);
        client.set_read_timeout(impl_->config.timeout_s, 0);
        client.set_write_timeout(impl_->config.timeout_s, 0);
        auto result = client.Post(path, headers, payload, "application/json");
        impl_->release();

        if (!result) {
            last_error = "connection failed: " + httplib::to_string(result.error());
            last_status = 0;
            continue;
        }
        const int status = result->status;
        if (status == 401 || status == 403) {
            throw BackendError(BackendErrorKind::credential,
                               "credential rejected (HTTP " + std::to_string(status) + ")",
                               status);
        }
        if (status == 429 || status >= 500) {
            last_error = "HTTP " + std::to_string(status);
            last_status = status;
            continue;
        }
        if (status != 200) {
            throw BackendError(BackendErrorKind::protocol,
                               "unexpected HTTP status " + std::to_string(status), status);
        }

        json parsed = json::parse(result->body, nullptr, false);
        if (parsed.is_discarded()) {
            throw BackendError(BackendErrorKind::protocol, "response body is not JSON", status);
        }
        const json* message = nullptr;
        if (parsed.contains("choices") && parsed["choices"].is_array() &&
            !parsed["choices"].empty() && parsed["choices"][0].contains("message")) {
            message = &parsed["choices"][0]["message"];
        }
        if (message == nullptr || !message->contains("content") ||
            !(*message)["content"].is_string()) {
            throw BackendError(BackendErrorKind::protocol,
                               "response has no choices[0].message.content", status);
        }

        LLMResponse resp;
        resp.text = (*message)["content"].get<std::string>();
        resp.retries = attempt;
        if (parsed.contains("usage") && parsed["usage"].is_object()) {
            const json& u = parsed["usage"];
            if (u.contains("prompt_tokens") && u["prompt_tokens"].is_number_unsigned()) {
                resp.usage.prompt_tokens = u["prompt_tokens"].get<std::size_t>();
            }
            if (u.contains("completion_tokens") && u["completion_tokens"].is_number_unsigned()) {
                resp.usage.completion_tokens = u["completion_tokens"].get<std::size_t>();
            }
        }
        return resp;
    }

    throw BackendError(BackendErrorKind::transport,
                       "request failed after " + std::to_string(impl_->config.retries) +
                           " retries: " + last_error,
                       last_status);
}

} // namespace xmcgen::llm
