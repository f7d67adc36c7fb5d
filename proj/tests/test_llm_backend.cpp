#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "support.hpp"
#include "xmcgen/corpus.hpp"
#include "xmcgen/llm/backend.hpp"
#include "xmcgen/llm/cache.hpp"
#include "xmcgen/llm/parsing.hpp"
#include "xmcgen/llm/templates.hpp"
#include "xmcgen/util.hpp"

using namespace xmcgen;
using namespace xmcgen::llm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

LLMRequest simple_request(std::string prompt, double temperature = 0.0,
                          std::string model = "mock") {
    LLMRequest req;
    req.messages.push_back({"user", std::move(prompt)});
    req.temperature = temperature;
    req.model_name = std::move(model);
    return req;
}

Instance test_instance() {
    Instance x;
    x.uid = "T0001";
    x.title = "wireless ergonomic keyboard";
    x.content = "a quiet keyboard with a split layout";
    return x;
}

bool in_wordlist(const std::string& word) {
    for (const auto& w : builtin_wordlist()) {
        if (w == word) return true;
    }
    return false;
}

/// Loopback chat-completions stub. Each test installs a handler; the
/// server records how many requests it saw.
struct StubServer {
    httplib::Server svr;
    int port = 0;
    std::thread thread;
    std::atomic<int> calls{0};

    explicit StubServer(httplib::Server::Handler handler) {
        svr.Post("/v1/chat/completions", [this, handler](const httplib::Request& req,
                                                         httplib::Response& res) {
            ++calls;
            handler(req, res);
        });
        port = svr.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        thread = std::thread([this] { svr.listen_after_bind(); });
        svr.wait_until_ready();
    }

    ~StubServer() {
        svr.stop();
        thread.join();
    }

    HttpBackendConfig config() const {
        HttpBackendConfig cfg;
        cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
        cfg.credential_env = "XMCGEN_TEST_KEY";
        cfg.retries = 2;
        cfg.backoff_ms = 1;
        cfg.timeout_s = 5;
        return cfg;
    }
};

void respond_ok(httplib::Response& res, const std::string& text) {
    const json body = {
        {"choices", json::array({json{{"message", json{{"content", text}}}}})},
        {"usage", json{{"prompt_tokens", 12}, {"completion_tokens", 3}}},
    };
    res.set_content(body.dump(), "application/json");
}

struct EnvGuard {
    std::string name;
    explicit EnvGuard(std::string var, const char* value) : name(std::move(var)) {
        if (value) {
            ::setenv(name.c_str(), value, 1);
        } else {
            ::unsetenv(name.c_str());
        }
    }
    ~EnvGuard() { ::unsetenv(name.c_str()); }
};

} // namespace

TEST_CASE("canonical_request is key-sorted JSON of model, temperature, messages") {
    LLMRequest req = simple_request("hi", 0.0, "m");
    CHECK(canonical_request(req) ==
          R"({"messages":[{"content":"hi","role":"user"}],"model":"m","temperature":0.0})");

    // max_output_tokens is a transport knob, not part of the request identity
    LLMRequest req2 = req;
    req2.max_output_tokens = 9999;
    CHECK(canonical_request(req2) == canonical_request(req));
}

TEST_CASE("cache_key is the sha256 of the canonical serialization") {
    LLMRequest req = simple_request("prompt body");
    CHECK(cache_key(req) == sha256_hex(canonical_request(req)));
    CHECK(cache_key(req).size() == 64);

    LLMRequest warm = req;
    warm.temperature = 0.7;
    CHECK(cache_key(warm) != cache_key(req));

    LLMRequest other = req;
    other.messages[0].content = "prompt body!";
    CHECK(cache_key(other) != cache_key(req));

    LLMRequest renamed = req;
    renamed.model_name = "other-model";
    CHECK(cache_key(renamed) != cache_key(req));
}

TEST_CASE("mock backend is a pure function of request and seed") {
    const LLMRequest req = simple_request(build_t1_prompt(Domain::product, test_instance(), 5));
    MockBackend a(42);
    MockBackend b(42);
    MockBackend c(43);
    const LLMResponse ra = a.complete(req);
    CHECK(ra.text == b.complete(req).text);
    CHECK(ra.text == a.complete(req).text);
    CHECK(ra.text != c.complete(req).text);
    CHECK_FALSE(ra.cached);
    CHECK(ra.retries == 0);
    CHECK(ra.usage.prompt_tokens == tokenize(req.messages[0].content).size());
    CHECK(ra.usage.completion_tokens == tokenize(ra.text).size());
}

TEST_CASE("mock t1 output is a JSON array of m three-word titles") {
    for (std::size_t m : {3, 5, 8}) {
        const LLMRequest req =
            simple_request(build_t1_prompt(Domain::product, test_instance(), m));
        const LLMResponse resp = MockBackend(1).complete(req);
        const json arr = json::parse(resp.text);
        REQUIRE(arr.is_array());
        REQUIRE(arr.size() == m);
        for (const auto& item : arr) {
            const auto words = tokenize(item.get<std::string>());
            CHECK(words.size() == 3);
            for (const auto& w : words) CHECK(in_wordlist(w));
        }
    }
}

TEST_CASE("mock t2 output is a JSON array of n two-word titles") {
    const std::vector<std::string> label_texts = {"outdoor lamp", "garden hose"};
    const LLMRequest req =
        simple_request(build_t2_prompt(Domain::product, test_instance(), label_texts, 30));
    const LLMResponse resp = MockBackend(7).complete(req);
    const json arr = json::parse(resp.text);
    REQUIRE(arr.is_array());
    REQUIRE(arr.size() == 30);
    for (const auto& item : arr) CHECK(tokenize(item.get<std::string>()).size() == 2);
}

TEST_CASE("mock t3 echoes demonstration labels in order, deduped, padded to k") {
    const std::vector<DemoPair> demos = {
        {"first pseudo input", {"alpha label", "beta label"}},
        {"second pseudo input", {"beta label", "gamma label"}},
    };
    const LLMRequest req =
        simple_request(build_t3_prompt(Domain::product, test_instance(), demos, 10));
    const LLMResponse resp = MockBackend(3).complete(req);
    const auto labels = parse_label_list(resp.text, 10);
    REQUIRE(labels.size() == 10);
    CHECK(labels[0] == "alpha label");
    CHECK(labels[1] == "beta label");
    CHECK(labels[2] == "gamma label");
    for (std::size_t i = 3; i < labels.size(); ++i) {
        CHECK(tokenize(labels[i]).size() == 2);
    }
    // numbered-echo shape: "1. alpha label\n2. beta label\n..."
    CHECK(resp.text.substr(0, 15) == "1. alpha label\n");
}

TEST_CASE("mock t3 echoes hint lines too") {
    const std::vector<std::string> hints = {"hint one", "hint two"};
    const LLMRequest req =
        simple_request(build_t3_prompt(Domain::product, test_instance(), {}, 10, hints));
    const auto labels = parse_label_list(MockBackend(3).complete(req).text, 10);
    REQUIRE(labels.size() == 10);
    CHECK(labels[0] == "hint one");
    CHECK(labels[1] == "hint two");
}

TEST_CASE("mock t4 output is a permutation prefix of the candidate indices") {
    const std::vector<std::string> candidates = {"cand one", "cand two", "cand three",
                                                 "cand four", "cand five"};
    SUBCASE("top_k below candidate count truncates") {
        const LLMRequest req =
            simple_request(build_t4_prompt(Domain::product, test_instance(), candidates, 3));
        const auto indices = parse_index_list(MockBackend(11).complete(req).text,
                                              candidates.size(), 3);
        REQUIRE(indices.size() == 3);
        std::set<std::size_t> seen(indices.begin(), indices.end());
        CHECK(seen.size() == 3);
        for (std::size_t i : indices) {
            CHECK(i >= 1);
            CHECK(i <= candidates.size());
        }
    }
    SUBCASE("top_k above candidate count yields the full permutation") {
        const LLMRequest req =
            simple_request(build_t4_prompt(Domain::product, test_instance(), candidates, 10));
        const auto indices = parse_index_list(MockBackend(11).complete(req).text,
                                              candidates.size(), 10);
        REQUIRE(indices.size() == candidates.size());
        std::set<std::size_t> seen(indices.begin(), indices.end());
        CHECK(seen.size() == candidates.size());
    }
}

TEST_CASE("mock falls back to a four-word title on unrecognized prompts") {
    const LLMResponse resp = MockBackend(5).complete(simple_request("what is the weather"));
    CHECK(tokenize(resp.text).size() == 4);
}

TEST_CASE("disk cache round-trips and misses cleanly") {
    const fs::path dir = testsupport::make_temp_dir("cache");
    DiskCache cache(dir);
    const std::string key = sha256_hex("k1");
    CHECK_FALSE(cache.get(key).has_value());
    cache.put(key, "stored text\nwith newline");
    REQUIRE(cache.get(key).has_value());
    CHECK(*cache.get(key) == "stored text\nwith newline");
    CHECK(cache.io_failures() == 0);

    // empty completions are still cache entries
    const std::string key2 = sha256_hex("k2");
    cache.put(key2, "");
    REQUIRE(cache.get(key2).has_value());
    CHECK(cache.get(key2)->empty());
    fs::remove_all(dir);
}

TEST_CASE("disk cache rejects keys that are not hex digests") {
    const fs::path dir = testsupport::make_temp_dir("cache_keys");
    DiskCache cache(dir);
    CHECK_THROWS_AS((void)cache.get(""), std::invalid_argument);
    CHECK_THROWS_AS((void)cache.get("ABCDEF"), std::invalid_argument);
    CHECK_THROWS_AS((void)cache.get("../etc/passwd"), std::invalid_argument);
    CHECK_THROWS_AS(cache.put("zz", "x"), std::invalid_argument);
    fs::remove_all(dir);
}

TEST_CASE("disk cache counts io failures instead of throwing") {
    const fs::path dir = testsupport::make_temp_dir("cache_io");
    DiskCache cache(dir);
    // Yank the directory out from under the cache; writes now have no
    // valid parent and must degrade, not throw.
    fs::remove_all(dir);
    std::ofstream(dir) << "not a directory";
    const std::string key = sha256_hex("k");
    CHECK_NOTHROW(cache.put(key, "text"));
    CHECK(cache.io_failures() == 1);
    CHECK_NOTHROW((void)cache.get(key));
    CHECK_FALSE(cache.get(key).has_value());
    fs::remove(dir);
}

TEST_CASE("cached backend serves repeats from disk with zero usage") {
    const fs::path dir = testsupport::make_temp_dir("cache_backend");
    std::atomic<int> calls{0};
    auto inner = std::make_shared<FunctionBackend>([&](const LLMRequest& req) {
        ++calls;
        return "reply to " + req.messages[0].content;
    });
    CachedBackend backend(inner, std::make_shared<DiskCache>(dir));

    const LLMRequest req = simple_request("q1");
    const LLMResponse first = backend.complete(req);
    CHECK(first.text == "reply to q1");
    CHECK_FALSE(first.cached);
    CHECK(calls == 1);
    CHECK(backend.misses() == 1);
    CHECK(backend.hits() == 0);

    const LLMResponse second = backend.complete(req);
    CHECK(second.text == "reply to q1");
    CHECK(second.cached);
    CHECK(second.usage.prompt_tokens == 0);
    CHECK(second.usage.completion_tokens == 0);
    CHECK(second.retries == 0);
    CHECK(calls == 1);
    CHECK(backend.hits() == 1);

    // different temperature means a different key, so the inner runs again
    LLMRequest warm = req;
    warm.temperature = 1.0;
    backend.complete(warm);
    CHECK(calls == 2);
    CHECK(backend.misses() == 2);
    fs::remove_all(dir);
}

TEST_CASE("cached backend hits on every repeat across many requests") {
    const fs::path dir = testsupport::make_temp_dir("cache_many");
    std::atomic<int> calls{0};
    auto inner = std::make_shared<FunctionBackend>([&](const LLMRequest& req) {
        ++calls;
        return req.messages[0].content + "!";
    });
    CachedBackend backend(inner, std::make_shared<DiskCache>(dir));
    for (int i = 0; i < 100; ++i) {
        const LLMRequest req = simple_request("prompt " + std::to_string(i));
        CHECK(backend.complete(req).text == "prompt " + std::to_string(i) + "!");
        const LLMResponse again = backend.complete(req);
        CHECK(again.cached);
        CHECK(again.text == "prompt " + std::to_string(i) + "!");
    }
    CHECK(calls == 100);
    CHECK(backend.misses() == 100);
    CHECK(backend.hits() == 100);
    fs::remove_all(dir);
}

TEST_CASE("http backend posts an openai-style body with bearer auth") {
    json seen_body;
    std::string seen_auth;
    StubServer server([&](const httplib::Request& req, httplib::Response& res) {
        seen_body = json::parse(req.body);
        seen_auth = req.get_header_value("Authorization");
        respond_ok(res, "the completion");
    });
    EnvGuard env("XMCGEN_TEST_KEY", "test-key-123");
    HttpBackend backend(server.config());

    LLMRequest req = simple_request("say hello", 0.25, "gpt-test");
    req.max_output_tokens = 77;
    const LLMResponse resp = backend.complete(req);

    CHECK(resp.text == "the completion");
    CHECK(resp.retries == 0);
    CHECK_FALSE(resp.cached);
    CHECK(resp.usage.prompt_tokens == 12);
    CHECK(resp.usage.completion_tokens == 3);
    CHECK(server.calls == 1);
    CHECK(seen_auth == "Bearer test-key-123");
    CHECK(seen_body["model"] == "gpt-test");
    CHECK(seen_body["temperature"] == 0.25);
    CHECK(seen_body["max_tokens"] == 77);
    REQUIRE(seen_body["messages"].is_array());
    REQUIRE(seen_body["messages"].size() == 1);
    CHECK(seen_body["messages"][0]["role"] == "user");
    CHECK(seen_body["messages"][0]["content"] == "say hello");
}

TEST_CASE("http backend omits auth when no credential env is configured") {
    std::string seen_auth = "unset";
    StubServer server([&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        respond_ok(res, "ok");
    });
    HttpBackendConfig cfg = server.config();
    cfg.credential_env.clear();
    HttpBackend backend(cfg);
    CHECK(backend.complete(simple_request("x")).text == "ok");
    CHECK(seen_auth.empty());
}

TEST_CASE("http backend tolerates a response without usage") {
    StubServer server([&](const httplib::Request&, httplib::Response& res) {
        const json body = {
            {"choices", json::array({json{{"message", json{{"content", "bare"}}}}})},
        };
        res.set_content(body.dump(), "application/json");
    });
    EnvGuard env("XMCGEN_TEST_KEY", "k");
    HttpBackend backend(server.config());
    const LLMResponse resp = backend.complete(simple_request("x"));
    CHECK(resp.text == "bare");
    CHECK(resp.usage.prompt_tokens == 0);
    CHECK(resp.usage.completion_tokens == 0);
}

TEST_CASE("http backend retries 429 and reports the attempt count") {
    StubServer server([&](const httplib::Request&, httplib::Response& res) {
        if (server.calls <= 1) {
            res.status = 429;
            return;
        }
        respond_ok(res, "after retry");
    });
    EnvGuard env("XMCGEN_TEST_KEY", "k");
    HttpBackend backend(server.config());
    const LLMResponse resp = backend.complete(simple_request("x"));
    CHECK(resp.text == "after retry");
    CHECK(resp.retries == 1);
    CHECK(server.calls == 2);
}

TEST_CASE("http backend gives up after the configured retries on 5xx") {
    StubServer server([&](const httplib::Request&, httplib::Response& res) {
        res.status = 503;
    });
    EnvGuard env("XMCGEN_TEST_KEY", "k");
    HttpBackend backend(server.config());
    try {
        backend.complete(simple_request("x"));
        FAIL("expected a transport error");
    } catch (const BackendError& e) {
        CHECK(e.kind() == BackendErrorKind::transport);
        CHECK(e.http_status() == 503);
        CHECK(std::string(e.what()).find("after 2 retries") != std::string::npos);
    }
    CHECK(server.calls == 3);  // initial attempt + 2 retries
}

TEST_CASE("http backend fails fast on credential rejection") {
    for (int status : {401, 403}) {
        StubServer server([&](const httplib::Request&, httplib::Response& res) {
            res.status = status;
        });
        EnvGuard env("XMCGEN_TEST_KEY", "bad-key");
        HttpBackend backend(server.config());
        try {
            backend.complete(simple_request("x"));
            FAIL("expected a credential error");
        } catch (const BackendError& e) {
            CHECK(e.kind() == BackendErrorKind::credential);
            CHECK(e.http_status() == status);
        }
        CHECK(server.calls == 1);
    }
}

TEST_CASE("http backend treats unexpected statuses and bodies as protocol errors") {
    SUBCASE("unexpected status") {
        StubServer server([&](const httplib::Request&, httplib::Response& res) {
            res.status = 404;
        });
        EnvGuard env("XMCGEN_TEST_KEY", "k");
        HttpBackend backend(server.config());
        try {
            backend.complete(simple_request("x"));
            FAIL("expected a protocol error");
        } catch (const BackendError& e) {
            CHECK(e.kind() == BackendErrorKind::protocol);
            CHECK(e.http_status() == 404);
        }
        CHECK(server.calls == 1);
    }
    SUBCASE("non-json body") {
        StubServer server([&](const httplib::Request&, httplib::Response& res) {
            res.set_content("<html>oops</html>", "text/html");
        });
        EnvGuard env("XMCGEN_TEST_KEY", "k");
        HttpBackend backend(server.config());
        CHECK_THROWS_WITH_AS(backend.complete(simple_request("x")),
                             "response body is not JSON", BackendError);
    }
    SUBCASE("json without message content") {
        StubServer server([&](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"choices":[{"message":{}}]})", "application/json");
        });
        EnvGuard env("XMCGEN_TEST_KEY", "k");
        HttpBackend backend(server.config());
        CHECK_THROWS_WITH_AS(backend.complete(simple_request("x")),
                             "response has no choices[0].message.content", BackendError);
    }
}

TEST_CASE("http backend rejects bad configuration at construction") {
    SUBCASE("missing credential env") {
        EnvGuard env("XMCGEN_TEST_KEY", nullptr);
        HttpBackendConfig cfg;
        cfg.base_url = "http://127.0.0.1:1/v1";
        cfg.credential_env = "XMCGEN_TEST_KEY";
        try {
            HttpBackend backend(cfg);
            FAIL("expected a credential error");
        } catch (const BackendError& e) {
            CHECK(e.kind() == BackendErrorKind::credential);
        }
    }
    SUBCASE("empty credential value") {
        EnvGuard env("XMCGEN_TEST_KEY", "");
        HttpBackendConfig cfg;
        cfg.base_url = "http://127.0.0.1:1/v1";
        cfg.credential_env = "XMCGEN_TEST_KEY";
        CHECK_THROWS_AS(HttpBackend{cfg}, BackendError);
    }
    SUBCASE("base url without scheme") {
        EnvGuard env("XMCGEN_TEST_KEY", "k");
        HttpBackendConfig cfg;
        cfg.base_url = "api.example.com/v1";
        cfg.credential_env = "XMCGEN_TEST_KEY";
        try {
            HttpBackend backend(cfg);
            FAIL("expected a transport error");
        } catch (const BackendError& e) {
            CHECK(e.kind() == BackendErrorKind::transport);
        }
    }
}

TEST_CASE("http backend connection failure is a transport error after retries") {
    EnvGuard env("XMCGEN_TEST_KEY", "k");
    HttpBackendConfig cfg;
    // reserved port, nothing listens there
    cfg.base_url = "http://127.0.0.1:1/v1";
    cfg.credential_env = "XMCGEN_TEST_KEY";
    cfg.retries = 1;
    cfg.backoff_ms = 1;
    cfg.timeout_s = 1;
    HttpBackend backend(cfg);
    try {
        backend.complete(simple_request("x"));
        FAIL("expected a transport error");
    } catch (const BackendError& e) {
        CHECK(e.kind() == BackendErrorKind::transport);
        CHECK(e.http_status() == 0);
        CHECK(std::string(e.what()).find("connection failed") != std::string::npos);
    }
}

TEST_CASE("http backend spaces request starts by min_interval_ms") {
    StubServer server([&](const httplib::Request&, httplib::Response& res) {
        respond_ok(res, "ok");
    });
    EnvGuard env("XMCGEN_TEST_KEY", "k");
    HttpBackendConfig cfg = server.config();
    cfg.min_interval_ms = 60;
    HttpBackend backend(cfg);
    const auto start = std::chrono::steady_clock::now();
    backend.complete(simple_request("a"));
    backend.complete(simple_request("b"));
    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    // The second start waits out the interval opened by the first.
    CHECK(elapsed.count() >= 55);
}

TEST_CASE("http backend caps in-flight requests at the configured concurrency") {
    std::atomic<int> active{0};
    std::atomic<int> peak{0};
    StubServer server([&](const httplib::Request&, httplib::Response& res) {
        const int now = ++active;
        int prev = peak.load();
        while (now > prev && !peak.compare_exchange_weak(prev, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(40));
        --active;
        respond_ok(res, "ok");
    });
    EnvGuard env("XMCGEN_TEST_KEY", "k");
    HttpBackendConfig cfg = server.config();
    cfg.concurrency = 2;
    HttpBackend backend(cfg);
    std::vector<std::thread> workers;
    for (int i = 0; i < 6; ++i) {
        workers.emplace_back([&backend, i] {
            CHECK(backend.complete(simple_request("q" + std::to_string(i))).text == "ok");
        });
    }
    for (auto& w : workers) w.join();
    CHECK(peak.load() <= 2);
    CHECK(server.calls == 6);
}
