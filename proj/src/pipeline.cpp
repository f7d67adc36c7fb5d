#include "xmcgen/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "xmcgen/llm/cache.hpp"
#include "xmcgen/shortlist.hpp"
#include "xmcgen/util.hpp"

namespace xmcgen {

namespace fs = std::filesystem;
using nlohmann::json;

RunStrategy run_strategy_from_string(const std::string& s) {
    if (s == "content") return RunStrategy::content;
    if (s == "label_centric") return RunStrategy::label_centric;
    if (s == "retrieval") return RunStrategy::retrieval;
    if (s == "free") return RunStrategy::free_gen;
    if (s == "hint") return RunStrategy::hint;
    throw std::invalid_argument("unknown strategy: " + s);
}

std::string to_string(RunStrategy strategy) {
    switch (strategy) {
        case RunStrategy::content: return "content";
        case RunStrategy::label_centric: return "label_centric";
        case RunStrategy::retrieval: return "retrieval";
        case RunStrategy::free_gen: return "free";
        case RunStrategy::hint: return "hint";
    }
    return "?";
}

namespace {

void validate(const PipelineConfig& cfg) {
    if (cfg.labels_path.empty()) throw ConfigError("data.labels is required");
    if (cfg.test_path.empty()) throw ConfigError("data.test is required");
    if (cfg.output_dir.empty()) throw ConfigError("output_dir is required");
    if (cfg.strategy == RunStrategy::retrieval && cfg.train_path.empty()) {
        throw ConfigError("data.train is required for strategy=retrieval");
    }
    const std::pair<const char*, std::size_t> count_fields[] = {
        {"m", cfg.m},         {"n", cfg.n},
        {"k", cfg.k},         {"s", cfg.s},
        {"K", cfg.top_K},     {"budget", cfg.budget},
        {"concurrency", cfg.concurrency}, {"dense_dim", cfg.dense_dim}};
    for (const auto& [name, value] : count_fields) {
        if (value == 0) throw ConfigError(std::string("count must be >= 1: ") + name);
    }
    if (cfg.backend.kind != "mock" && cfg.backend.kind != "http") {
        throw ConfigError("backend.kind must be mock or http: " + cfg.backend.kind);
    }
    if (cfg.backend.kind == "http" && cfg.backend.base_url.empty()) {
        throw ConfigError("backend.base_url is required for backend.kind=http");
    }
    if (cfg.corrupt_mode != "none") corrupt_mode_from_string(cfg.corrupt_mode);
    if (cfg.failure_threshold < 0.0 || cfg.failure_threshold > 1.0) {
        throw ConfigError("failure_threshold must be in [0, 1]");
    }
    if (cfg.eval_ks.empty()) throw ConfigError("eval_ks must be non-empty");
    for (auto k : cfg.eval_ks) {
        if (k == 0) throw ConfigError("eval_ks entries must be >= 1");
    }
    if (cfg.bm25.k1 < 0.0) throw ConfigError("retriever.k1 must be >= 0");
    if (cfg.bm25.b < 0.0 || cfg.bm25.b > 1.0) throw ConfigError("retriever.b must be in [0, 1]");
    if (cfg.temperature < 0.0) throw ConfigError("temperature must be >= 0");
    if (cfg.max_output_tokens < 1) throw ConfigError("max_output_tokens must be >= 1");
}

} // namespace

PipelineConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    PipelineConfig cfg;
    try {
        const json data = j.value("data", json::object());
        cfg.labels_path = data.value("labels", "");
        cfg.test_path = data.value("test", "");
        cfg.train_path = data.value("train", "");
        cfg.truth_path = data.value("truth", "");

        const json retr = j.value("retriever", json::object());
        cfg.retriever = retriever_kind_from_string(retr.value("kind", "bm25"));
        cfg.bm25.k1 = retr.value("k1", 1.2);
        cfg.bm25.b = retr.value("b", 0.75);
        cfg.policy = query_text_policy_from_string(retr.value("query_text", "title_content"));
        cfg.dense_dim = retr.value("dense_dim", std::size_t{64});
        cfg.dense_seed = retr.value("dense_seed", std::uint64_t{17});

        cfg.strategy = run_strategy_from_string(j.value("strategy", "free"));
        cfg.domain = llm::domain_from_string(j.value("domain", "product"));

        const json counts = j.value("counts", json::object());
        cfg.m = counts.value("m", std::size_t{5});
        cfg.n = counts.value(
            "n", cfg.strategy == RunStrategy::label_centric ? std::size_t{30} : std::size_t{5});
        cfg.k = counts.value("k", std::size_t{10});
        cfg.s = counts.value("s", std::size_t{10});
        cfg.top_K = counts.value("K", std::size_t{10});
        cfg.budget = counts.value("budget", std::size_t{100});

        const json corrupt = j.value("corrupt", json::object());
        cfg.corrupt_mode = corrupt.value("mode", "none");
        cfg.corrupt_seed = corrupt.value("seed", std::uint64_t{0});

        const json backend = j.value("backend", json::object());
        cfg.backend.kind = backend.value("kind", "mock");
        cfg.backend.seed = backend.value("seed", std::uint64_t{42});
        cfg.backend.base_url = backend.value("base_url", "");
        cfg.backend.model = backend.value("model", "gpt-3.5-turbo");
        cfg.backend.credential_env = backend.value("credential_env", "OPENAI_API_KEY");
        cfg.backend.retries = backend.value("retries", 3);
        cfg.backend.backoff_ms = backend.value("backoff_ms", 1000);
        cfg.backend.timeout_s = backend.value("timeout_s", 60);
        cfg.backend.min_interval_ms = backend.value("min_interval_ms", 0);

        cfg.temperature = j.value("temperature", 0.0);
        cfg.max_output_tokens = j.value("max_output_tokens", 512);
        cfg.concurrency = j.value("concurrency", std::size_t{4});
        cfg.rerank = rerank_strategy_from_string(j.value("rerank", "heuristic"));
        cfg.output_dir = j.value("output_dir", "");

        const json cache = j.value("cache", json::object());
        cfg.cache_enabled = cache.value("enabled", true);
        cfg.cache_dir = cache.value("dir", "");

        cfg.failure_threshold = j.value("failure_threshold", 0.01);
        if (j.contains("eval_ks")) {
            cfg.eval_ks.clear();
            for (const auto& k : j.at("eval_ks")) cfg.eval_ks.push_back(k.get<std::size_t>());
        }
        const json dumps = j.value("dumps", json::object());
        cfg.dump_demos = dumps.value("demos", false);
        cfg.dump_shortlists = dumps.value("shortlists", false);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    validate(cfg);
    return cfg;
}

PipelineConfig load_config_file(const std::string& path,
                                const std::vector<std::string>& overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
    for (const auto& assignment : overrides) apply_override(j, assignment);
    return config_from_json(j);
}

void apply_override(json& j, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must look like key.path=value: " + assignment);
    }
    const std::string path = assignment.substr(0, eq);
    const std::string value_str = assignment.substr(eq + 1);

    json value = json::parse(value_str, nullptr, false);
    if (value.is_discarded()) value = value_str;  // bare strings stay strings

    json* cur = &j;
    std::size_t pos = 0;
    while (true) {
        const std::size_t dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (key.empty()) throw ConfigError("empty key segment in override: " + assignment);
        if (dot == std::string::npos) {
            (*cur)[key] = std::move(value);
            break;
        }
        cur = &((*cur)[key]);
        if (!cur->is_object()) *cur = json::object();
        pos = dot + 1;
    }
}

json effective_config_json(const PipelineConfig& cfg) {
    // Output locations, dump switches, worker count and the failure
    // threshold cannot change predictions or reports, so they stay out.
    return json{
        {"data",
         {{"labels", cfg.labels_path},
          {"test", cfg.test_path},
          {"train", cfg.train_path},
          {"truth", cfg.truth_path}}},
        {"retriever",
         {{"kind", to_string(cfg.retriever)},
          {"k1", cfg.bm25.k1},
          {"b", cfg.bm25.b},
          {"query_text", to_string(cfg.policy)},
          {"dense_dim", cfg.dense_dim},
          {"dense_seed", cfg.dense_seed}}},
        {"strategy", to_string(cfg.strategy)},
        {"domain", llm::to_string(cfg.domain)},
        {"counts",
         {{"m", cfg.m},
          {"n", cfg.n},
          {"k", cfg.k},
          {"s", cfg.s},
          {"K", cfg.top_K},
          {"budget", cfg.budget}}},
        {"corrupt", {{"mode", cfg.corrupt_mode}, {"seed", cfg.corrupt_seed}}},
        {"backend",
         {{"kind", cfg.backend.kind},
          {"seed", cfg.backend.seed},
          {"base_url", cfg.backend.base_url},
          {"model", cfg.backend.model},
          {"credential_env", cfg.backend.credential_env},
          {"retries", cfg.backend.retries},
          {"backoff_ms", cfg.backend.backoff_ms},
          {"timeout_s", cfg.backend.timeout_s},
          {"min_interval_ms", cfg.backend.min_interval_ms}}},
        {"temperature", cfg.temperature},
        {"max_output_tokens", cfg.max_output_tokens},
        {"rerank", to_string(cfg.rerank)},
        {"eval_ks", cfg.eval_ks},
    };
}

std::string config_digest(const PipelineConfig& cfg) {
    return sha256_hex(effective_config_json(cfg).dump());
}

json manifest_to_json(const RunManifest& m) {
    json calls = json::object();
    for (const auto& [k, v] : m.calls_by_template) calls[k] = v;
    json timings = json::object();
    for (const auto& [k, v] : m.timings_ms) timings[k] = v;
    return json{
        {"config_digest", m.config_digest},
        {"code_version", m.code_version},
        {"n_instances", m.n_instances},
        {"n_resumed", m.n_resumed},
        {"n_failed", m.n_failed},
        {"llm_requests", m.llm_requests},
        {"backend_calls", m.backend_calls},
        {"cache_hits", m.cache_hits},
        {"calls_by_template", calls},
        {"fallbacks",
         {{"free_generation", m.fallback_free_generation},
          {"retriever_shortlist", m.fallback_retriever_shortlist},
          {"rerank_heuristic", m.fallback_rerank_heuristic}}},
        {"usage", {{"prompt_tokens", m.prompt_tokens}, {"completion_tokens", m.completion_tokens}}},
        {"timings_ms", timings},
    };
}

namespace {

std::string json_str(const std::string& s) { return json(s).dump(); }

struct TemplateCounters {
    std::atomic<std::size_t> t1{0}, t2{0}, t3{0}, t4{0}, other{0};
};

/// Counts prompts per template and accumulates reported token usage around
/// any inner backend.
class InstrumentedBackend final : public llm::LLMBackend {
public:
    InstrumentedBackend(llm::LLMBackend& inner, TemplateCounters& counters,
                        std::atomic<std::size_t>& prompt_tokens,
                        std::atomic<std::size_t>& completion_tokens)
        : inner_(inner),
          counters_(counters),
          prompt_tokens_(prompt_tokens),
          completion_tokens_(completion_tokens) {}

    llm::LLMResponse complete(const llm::LLMRequest& request) override {
        std::string prompt;
        for (const auto& msg : request.messages) prompt += msg.content;
        const auto id = llm::detect_template(prompt);
        if (!id) {
            ++counters_.other;
        } else {
            switch (*id) {
                case llm::TemplateId::t1: ++counters_.t1; break;
                case llm::TemplateId::t2: ++counters_.t2; break;
                case llm::TemplateId::t3: ++counters_.t3; break;
                case llm::TemplateId::t4: ++counters_.t4; break;
            }
        }
        llm::LLMResponse resp = inner_.complete(request);
        prompt_tokens_ += resp.usage.prompt_tokens;
        completion_tokens_ += resp.usage.completion_tokens;
        return resp;
    }

private:
    llm::LLMBackend& inner_;
    TemplateCounters& counters_;
    std::atomic<std::size_t>& prompt_tokens_;
    std::atomic<std::size_t>& completion_tokens_;
};

struct Context {
    PipelineConfig cfg;
    LabelSpace space;
    std::vector<Instance> test;
    std::vector<Instance> train;
    std::optional<GroundTruth> truth;
    std::shared_ptr<const Embedder> embedder;
    std::optional<RetrieverIndex> label_index;
    std::optional<RetrieverIndex> train_index;

    std::shared_ptr<llm::LLMBackend> raw_backend;
    std::shared_ptr<llm::DiskCache> cache;
    std::shared_ptr<llm::CachedBackend> cached;
    std::unique_ptr<InstrumentedBackend> backend;
    llm::RequestOptions opts;

    TemplateCounters counters;
    std::atomic<std::size_t> prompt_tokens{0};
    std::atomic<std::size_t> completion_tokens{0};
    std::atomic<std::size_t> fb_free{0};
    std::atomic<std::size_t> fb_retriever{0};
    std::atomic<std::size_t> fb_rerank{0};
    TokenOverlapScorer scorer;

    double load_ms = 0.0;
    double index_ms = 0.0;
};

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

// Heap-allocated: Context holds atomics (non-movable) and the instrumented
// backend keeps references into it.
std::unique_ptr<Context> make_context(const PipelineConfig& cfg, bool need_backend) {
    auto ctx_ptr = std::make_unique<Context>();
    Context& ctx = *ctx_ptr;
    ctx.cfg = cfg;

    auto t0 = std::chrono::steady_clock::now();
    ctx.space = load_label_space(cfg.labels_path);
    ctx.test = load_instances(cfg.test_path);
    if (cfg.strategy == RunStrategy::retrieval) ctx.train = load_instances(cfg.train_path);
    if (!cfg.truth_path.empty()) ctx.truth = load_ground_truth(cfg.truth_path, ctx.space);
    ctx.load_ms = ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    if (cfg.retriever == RetrieverKind::dense) {
        ctx.embedder = std::make_shared<HashingEmbedder>(cfg.dense_dim, cfg.dense_seed);
    }
    std::vector<std::string> label_docs;
    label_docs.reserve(ctx.space.size());
    for (const auto& label : ctx.space.labels()) label_docs.push_back(label.text);
    ctx.label_index = RetrieverIndex::build(label_docs, cfg.retriever, ctx.embedder, cfg.bm25);
    if (cfg.strategy == RunStrategy::retrieval) {
        if (ctx.train.empty()) throw ConfigError("train corpus is empty: " + cfg.train_path);
        std::vector<std::string> train_docs;
        train_docs.reserve(ctx.train.size());
        for (const auto& t : ctx.train) train_docs.push_back(query_text(t, cfg.policy));
        ctx.train_index = RetrieverIndex::build(train_docs, cfg.retriever, ctx.embedder, cfg.bm25);
    }
    ctx.index_ms = ms_since(t0);

    if (need_backend) {
        if (cfg.backend.kind == "mock") {
            ctx.raw_backend = std::make_shared<llm::MockBackend>(cfg.backend.seed);
            ctx.opts.model_name = "mock";
        } else {
            llm::HttpBackendConfig hc;
            hc.base_url = cfg.backend.base_url;
            hc.credential_env = cfg.backend.credential_env;
            hc.retries = cfg.backend.retries;
            hc.backoff_ms = cfg.backend.backoff_ms;
            hc.timeout_s = cfg.backend.timeout_s;
            hc.concurrency = static_cast<int>(cfg.concurrency);
            hc.min_interval_ms = cfg.backend.min_interval_ms;
            try {
                ctx.raw_backend = std::make_shared<llm::HttpBackend>(hc);
            } catch (const llm::BackendError& e) {
                throw ConfigError(e.what());
            }
            ctx.opts.model_name = cfg.backend.model;
        }
        ctx.opts.temperature = cfg.temperature;
        ctx.opts.max_output_tokens = cfg.max_output_tokens;

        llm::LLMBackend* entry = ctx.raw_backend.get();
        if (cfg.cache_enabled) {
            const fs::path dir = cfg.cache_dir.empty()
                                     ? fs::path(cfg.output_dir) / "cache"
                                     : fs::path(cfg.cache_dir);
            ctx.cache = std::make_shared<llm::DiskCache>(dir);
            ctx.cached = std::make_shared<llm::CachedBackend>(ctx.raw_backend, ctx.cache);
            entry = ctx.cached.get();
        }
        ctx.backend = std::make_unique<InstrumentedBackend>(*entry, ctx.counters,
                                                            ctx.prompt_tokens,
                                                            ctx.completion_tokens);
    }
    return ctx_ptr;
}

DemonstrationSet make_demos(Context& ctx, const Instance& x) {
    const PipelineConfig& cfg = ctx.cfg;
    DemonstrationSet demos;
    switch (cfg.strategy) {
        case RunStrategy::content:
            demos = generate_content_based(x, cfg.m, cfg.n, *ctx.backend, ctx.opts, cfg.domain,
                                           *ctx.label_index, ctx.space);
            break;
        case RunStrategy::label_centric:
            demos = generate_label_centric(x, cfg.n, *ctx.backend, ctx.opts, cfg.domain,
                                           cfg.policy, *ctx.label_index, ctx.space);
            break;
        case RunStrategy::retrieval:
            demos = retrieve_demonstrations(x, cfg.m, cfg.n, *ctx.train_index, ctx.train,
                                            cfg.policy, *ctx.label_index, ctx.space,
                                            ctx.backend.get());
            break;
        case RunStrategy::free_gen:
        case RunStrategy::hint:
            break;  // no demonstrations by design
    }
    if (cfg.corrupt_mode != "none" && !demos.items.empty()) {
        demos = corrupt(demos, corrupt_mode_from_string(cfg.corrupt_mode),
                        cfg.corrupt_seed ^ fnv1a64(x.uid), ctx.space);
    }
    return demos;
}

std::pair<Shortlist, NeighborMatrix> make_shortlist(Context& ctx, const Instance& x,
                                                    const DemonstrationSet& demos) {
    const PipelineConfig& cfg = ctx.cfg;
    RawGeneration raw;
    if (cfg.strategy == RunStrategy::hint) {
        const auto hints =
            retriever_shortlist(x, cfg.budget, *ctx.label_index, ctx.space, cfg.policy).first;
        if (hints.entries.empty()) throw std::runtime_error("retriever produced no hints");
        raw = hint_generation(x, hints, cfg.k, *ctx.backend, ctx.opts, cfg.domain, ctx.space);
    } else {
        if (cfg.strategy != RunStrategy::free_gen && demos.items.empty()) ++ctx.fb_free;
        raw = infer_raw_labels(x, demos, cfg.k, *ctx.backend, ctx.opts, cfg.domain, ctx.space);
    }
    if (raw.texts.empty()) {
        ++ctx.fb_retriever;
        return retriever_shortlist(x, cfg.k * cfg.s, *ctx.label_index, ctx.space, cfg.policy);
    }
    return map_to_label_space(raw, cfg.s, *ctx.label_index, ctx.space, x.uid);
}

RankedPrediction make_prediction(Context& ctx, const Instance& x, const Shortlist& shortlist,
                                 const NeighborMatrix& matrix) {
    const PipelineConfig& cfg = ctx.cfg;
    if (shortlist.entries.empty()) throw std::runtime_error("empty shortlist");
    RankedPrediction pred;
    switch (cfg.rerank) {
        case RerankStrategy::heuristic:
            pred = rerank_heuristic(matrix, cfg.top_K, x.uid);
            break;
        case RerankStrategy::scorer:
            pred = rerank_scorer(x, shortlist, cfg.top_K, ctx.scorer, ctx.space, cfg.policy);
            break;
        case RerankStrategy::llm:
            pred = rerank_llm(x, shortlist, matrix, cfg.top_K, *ctx.backend, ctx.opts,
                              cfg.domain, ctx.space);
            if (pred.fallback) ++ctx.fb_rerank;
            break;
    }
    pred.uid = x.uid;
    return pred;
}

struct Failure {
    std::size_t test_ordinal;
    std::string uid;
    std::string stage;
    std::string error;
};

void write_failures(const PipelineConfig& cfg, std::vector<Failure> failures) {
    const fs::path path = fs::path(cfg.output_dir) / "failures.jsonl";
    if (failures.empty()) {
        std::error_code ec;
        fs::remove(path, ec);
        return;
    }
    std::sort(failures.begin(), failures.end(),
              [](const Failure& a, const Failure& b) { return a.test_ordinal < b.test_ordinal; });
    std::string body;
    for (const auto& f : failures) {
        body += "{\"uid\": " + json_str(f.uid) + ", \"stage\": " + json_str(f.stage) +
                ", \"error\": " + json_str(f.error) + "}\n";
    }
    write_file_atomic(path, body);
}

RunManifest finish_manifest(Context& ctx, std::size_t n_resumed, std::size_t n_failed,
                            double process_ms, double total_ms) {
    RunManifest m;
    m.config_digest = config_digest(ctx.cfg);
    m.n_instances = ctx.test.size();
    m.n_resumed = n_resumed;
    m.n_failed = n_failed;
    m.calls_by_template = {{"t1", ctx.counters.t1.load()},
                           {"t2", ctx.counters.t2.load()},
                           {"t3", ctx.counters.t3.load()},
                           {"t4", ctx.counters.t4.load()},
                           {"other", ctx.counters.other.load()}};
    m.llm_requests = ctx.counters.t1 + ctx.counters.t2 + ctx.counters.t3 + ctx.counters.t4 +
                     ctx.counters.other;
    m.cache_hits = ctx.cached ? ctx.cached->hits() : 0;
    m.backend_calls = m.llm_requests - m.cache_hits;
    m.fallback_free_generation = ctx.fb_free;
    m.fallback_retriever_shortlist = ctx.fb_retriever;
    m.fallback_rerank_heuristic = ctx.fb_rerank;
    m.prompt_tokens = ctx.prompt_tokens;
    m.completion_tokens = ctx.completion_tokens;
    m.timings_ms = {{"load", ctx.load_ms},
                    {"index", ctx.index_ms},
                    {"process", process_ms},
                    {"total", total_ms}};
    return m;
}

void write_manifest(const PipelineConfig& cfg, const RunManifest& manifest) {
    write_file_atomic(fs::path(cfg.output_dir) / "manifest.json",
                      manifest_to_json(manifest).dump(2) + "\n");
}

std::optional<EvalReport> maybe_evaluate(Context& ctx) {
    if (!ctx.truth) return std::nullopt;
    const auto predictions =
        load_predictions((fs::path(ctx.cfg.output_dir) / "predictions.jsonl").string());
    EvalReport report = evaluate(predictions, *ctx.truth, ctx.cfg.eval_ks);
    write_file_atomic(fs::path(ctx.cfg.output_dir) / "report.json",
                      format_report(report) + "\n");
    return report;
}

int threshold_exit(const PipelineConfig& cfg, std::size_t failed, std::size_t total) {
    if (total == 0) return 0;
    const double fraction = static_cast<double>(failed) / static_cast<double>(total);
    return fraction > cfg.failure_threshold ? 2 : 0;
}

/// Runs fn(i) for i in [0, count) on min(workers, count) threads. fn must
/// handle its own errors.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    std::atomic<std::size_t> next{0};
    auto body = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) break;
            fn(i);
        }
    };
    const std::size_t n_threads = std::min(workers, count);
    if (n_threads <= 1) {
        body();
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(body);
    for (auto& t : pool) t.join();
}

} // namespace

std::string demo_dump_line(const std::string& uid, const DemonstrationSet& demos) {
    std::string items;
    for (std::size_t i = 0; i < demos.items.size(); ++i) {
        if (i) items += ", ";
        const auto& item = demos.items[i];
        json lids = json::array();
        for (const auto& lid : item.lids) lids.push_back(lid);
        items += "{\"z\": " + json_str(item.input_text) + ", \"lids\": " + lids.dump() + "}";
    }
    return "{\"uid\": " + json_str(uid) + ", \"strategy\": " + json_str(to_string(demos.strategy)) +
           ", \"items\": [" + items + "]}";
}

std::pair<std::string, DemonstrationSet> parse_demo_dump_line(const std::string& line,
                                                              const LabelSpace& space) {
    const json rec = json::parse(line);
    DemonstrationSet demos;
    demos.strategy = demo_strategy_from_string(rec.at("strategy").get<std::string>());
    for (const auto& item : rec.at("items")) {
        std::vector<std::string> lids;
        for (const auto& lid : item.at("lids")) lids.push_back(lid.get<std::string>());
        demos.items.push_back(
            checked_demonstration(item.at("z").get<std::string>(), std::move(lids), space));
    }
    demos.degraded = demos.items.empty() && demos.strategy != DemoStrategy::none;
    return {rec.at("uid").get<std::string>(), std::move(demos)};
}

std::string shortlist_dump_line(const Shortlist& shortlist, const NeighborMatrix& matrix) {
    std::string candidates;
    for (std::size_t i = 0; i < shortlist.entries.size(); ++i) {
        if (i) candidates += ", ";
        const auto& e = shortlist.entries[i];
        candidates += "{\"lid\": " + json_str(e.lid) + ", \"j\": " + std::to_string(e.j) +
                      ", \"r\": " + std::to_string(e.r) + ", \"score\": " + json(e.score).dump() +
                      "}";
    }
    std::string rows;
    for (std::size_t j = 0; j < matrix.rows.size(); ++j) {
        if (j) rows += ", ";
        rows += "[";
        for (std::size_t r = 0; r < matrix.rows[j].size(); ++r) {
            if (r) rows += ", ";
            rows += "{\"lid\": " + json_str(matrix.rows[j][r].lid) +
                    ", \"score\": " + json(matrix.rows[j][r].score).dump() + "}";
        }
        rows += "]";
    }
    return "{\"uid\": " + json_str(shortlist.uid) + ", \"candidates\": [" + candidates +
           "], \"rows\": [" + rows + "]}";
}

std::pair<Shortlist, NeighborMatrix> parse_shortlist_dump_line(const std::string& line,
                                                               const LabelSpace& space) {
    const json rec = json::parse(line);
    Shortlist shortlist;
    shortlist.uid = rec.at("uid").get<std::string>();
    for (const auto& c : rec.at("candidates")) {
        ShortlistEntry e;
        e.lid = c.at("lid").get<std::string>();
        if (!space.contains(e.lid)) {
            throw std::runtime_error("shortlist lid not in label space: " + e.lid);
        }
        e.j = c.at("j").get<std::uint32_t>();
        e.r = c.at("r").get<std::uint32_t>();
        e.score = c.at("score").get<double>();
        shortlist.entries.push_back(std::move(e));
    }
    NeighborMatrix matrix;
    for (const auto& row : rec.at("rows")) {
        std::vector<ScoredLid> out;
        for (const auto& cell : row) {
            const std::string lid = cell.at("lid").get<std::string>();
            if (!space.contains(lid)) {
                throw std::runtime_error("neighbor lid not in label space: " + lid);
            }
            out.push_back({lid, cell.at("score").get<double>()});
        }
        matrix.rows.push_back(std::move(out));
    }
    return {std::move(shortlist), std::move(matrix)};
}

RunResult run_pipeline(const PipelineConfig& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    auto ctx_ptr = make_context(cfg, true);
    Context& ctx = *ctx_ptr;
    fs::create_directories(cfg.output_dir);

    const fs::path pred_path = fs::path(cfg.output_dir) / "predictions.jsonl";

    // Resumption state comes from the prediction file alone. Unparseable
    // lines (torn writes) are recomputed.
    std::unordered_map<std::string, std::string> done;
    if (fs::exists(pred_path)) {
        std::ifstream in(pred_path, std::ios::binary);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            try {
                done[parse_prediction_line(line).uid] = line;
            } catch (const std::exception&) {
            }
        }
    }
    std::vector<std::size_t> pending;
    std::size_t n_resumed = 0;
    for (std::size_t i = 0; i < ctx.test.size(); ++i) {
        if (done.count(ctx.test[i].uid)) {
            ++n_resumed;
        } else {
            pending.push_back(i);
        }
    }

    const auto t_process = std::chrono::steady_clock::now();
    std::mutex mu;
    std::ofstream append(pred_path, std::ios::binary | std::ios::app);
    std::vector<Failure> failures;
    std::vector<std::string> demo_lines(ctx.test.size());
    std::vector<std::string> shortlist_lines(ctx.test.size());

    parallel_for(pending.size(), cfg.concurrency, [&](std::size_t p) {
        const std::size_t i = pending[p];
        const Instance& x = ctx.test[i];
        std::string stage = "demogen";
        try {
            const DemonstrationSet demos = make_demos(ctx, x);
            if (cfg.dump_demos) demo_lines[i] = demo_dump_line(x.uid, demos);
            stage = "shortlist";
            const auto [shortlist, matrix] = make_shortlist(ctx, x, demos);
            if (cfg.dump_shortlists) shortlist_lines[i] = shortlist_dump_line(shortlist, matrix);
            stage = "rerank";
            const RankedPrediction pred = make_prediction(ctx, x, shortlist, matrix);
            const std::string line = prediction_json_line(pred);
            std::lock_guard lock(mu);
            done[x.uid] = line;
            append << line << '\n';
            append.flush();
        } catch (const std::exception& e) {
            std::lock_guard lock(mu);
            failures.push_back({i, x.uid, stage, e.what()});
        }
    });
    append.close();
    const double process_ms = ms_since(t_process);

    // Canonical rewrite: test-set order, resumed lines byte-preserved, so a
    // resumed run ends with the same file an uninterrupted run produces.
    std::string body;
    for (const auto& x : ctx.test) {
        const auto it = done.find(x.uid);
        if (it != done.end()) {
            body += it->second;
            body += '\n';
        }
    }
    write_file_atomic(pred_path, body);

    // Resumed instances never recompute demos or shortlists; their dump
    // lines are carried over from the previous dump on disk when present.
    const auto write_dump = [&](const char* name, const std::vector<std::string>& lines) {
        const fs::path path = fs::path(cfg.output_dir) / name;
        std::unordered_map<std::string, std::string> kept;
        if (fs::exists(path)) {
            std::ifstream in(path, std::ios::binary);
            std::string line;
            while (std::getline(in, line)) {
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (line.empty()) continue;
                try {
                    kept[json::parse(line).at("uid").get<std::string>()] = line;
                } catch (const std::exception&) {
                }
            }
        }
        std::string dump;
        for (std::size_t i = 0; i < ctx.test.size(); ++i) {
            const std::string* line = lines[i].empty() ? nullptr : &lines[i];
            if (!line) {
                if (auto it = kept.find(ctx.test[i].uid); it != kept.end()) line = &it->second;
            }
            if (line) {
                dump += *line;
                dump += '\n';
            }
        }
        write_file_atomic(path, dump);
    };
    if (cfg.dump_demos) write_dump("demos.jsonl", demo_lines);
    if (cfg.dump_shortlists) write_dump("shortlists.jsonl", shortlist_lines);
    write_failures(cfg, failures);

    RunResult result;
    result.report = maybe_evaluate(ctx);
    result.manifest =
        finish_manifest(ctx, n_resumed, failures.size(), process_ms, ms_since(t_start));
    write_manifest(cfg, result.manifest);
    result.exit_code = threshold_exit(cfg, failures.size(), ctx.test.size());
    return result;
}

RunResult cmd_demo_dump(const PipelineConfig& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    const bool needs_llm =
        cfg.strategy == RunStrategy::content || cfg.strategy == RunStrategy::label_centric;
    auto ctx_ptr = make_context(cfg, needs_llm);
    Context& ctx = *ctx_ptr;
    fs::create_directories(cfg.output_dir);

    const auto t_process = std::chrono::steady_clock::now();
    std::mutex mu;
    std::vector<std::string> lines(ctx.test.size());
    std::vector<Failure> failures;
    parallel_for(ctx.test.size(), cfg.concurrency, [&](std::size_t i) {
        const Instance& x = ctx.test[i];
        try {
            lines[i] = demo_dump_line(x.uid, make_demos(ctx, x));
        } catch (const std::exception& e) {
            std::lock_guard lock(mu);
            failures.push_back({i, x.uid, "demogen", e.what()});
        }
    });
    const double process_ms = ms_since(t_process);

    std::string body;
    for (const auto& line : lines) {
        if (!line.empty()) {
            body += line;
            body += '\n';
        }
    }
    write_file_atomic(fs::path(cfg.output_dir) / "demos.jsonl", body);
    write_failures(cfg, failures);

    RunResult result;
    result.manifest = finish_manifest(ctx, 0, failures.size(), process_ms, ms_since(t_start));
    write_manifest(cfg, result.manifest);
    result.exit_code = threshold_exit(cfg, failures.size(), ctx.test.size());
    return result;
}

RunResult cmd_shortlist_only(const PipelineConfig& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    auto ctx_ptr = make_context(cfg, true);
    Context& ctx = *ctx_ptr;
    fs::create_directories(cfg.output_dir);

    // free/hint take no demonstrations; the other strategies replay the dump.
    std::unordered_map<std::string, DemonstrationSet> demo_map;
    const bool wants_demos =
        cfg.strategy != RunStrategy::free_gen && cfg.strategy != RunStrategy::hint;
    if (wants_demos) {
        const fs::path demo_path = fs::path(cfg.output_dir) / "demos.jsonl";
        std::ifstream in(demo_path, std::ios::binary);
        if (!in) {
            throw ConfigError("demonstration dump not found (run demo-dump first): " +
                              demo_path.string());
        }
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            try {
                auto [uid, demos] = parse_demo_dump_line(line, ctx.space);
                demo_map[uid] = std::move(demos);
            } catch (const std::exception& e) {
                throw ConfigError(demo_path.string() + ":" + std::to_string(line_no) + ": " +
                                  e.what());
            }
        }
    }

    const auto t_process = std::chrono::steady_clock::now();
    std::mutex mu;
    std::vector<std::string> lines(ctx.test.size());
    std::vector<Failure> failures;
    parallel_for(ctx.test.size(), cfg.concurrency, [&](std::size_t i) {
        const Instance& x = ctx.test[i];
        try {
            const DemonstrationSet* demos = nullptr;
            static const DemonstrationSet kEmpty;
            if (wants_demos) {
                const auto it = demo_map.find(x.uid);
                if (it == demo_map.end()) {
                    throw std::runtime_error("uid missing from demonstration dump");
                }
                demos = &it->second;
            } else {
                demos = &kEmpty;
            }
            const auto [shortlist, matrix] = make_shortlist(ctx, x, *demos);
            lines[i] = shortlist_dump_line(shortlist, matrix);
        } catch (const std::exception& e) {
            std::lock_guard lock(mu);
            failures.push_back({i, x.uid, "shortlist", e.what()});
        }
    });
    const double process_ms = ms_since(t_process);

    std::string body;
    for (const auto& line : lines) {
        if (!line.empty()) {
            body += line;
            body += '\n';
        }
    }
    write_file_atomic(fs::path(cfg.output_dir) / "shortlists.jsonl", body);
    write_failures(cfg, failures);

    RunResult result;
    result.manifest = finish_manifest(ctx, 0, failures.size(), process_ms, ms_since(t_start));
    write_manifest(cfg, result.manifest);
    result.exit_code = threshold_exit(cfg, failures.size(), ctx.test.size());
    return result;
}

RunResult cmd_rerank_only(const PipelineConfig& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    auto ctx_ptr = make_context(cfg, cfg.rerank == RerankStrategy::llm);
    Context& ctx = *ctx_ptr;
    fs::create_directories(cfg.output_dir);

    const fs::path sl_path = fs::path(cfg.output_dir) / "shortlists.jsonl";
    std::ifstream in(sl_path, std::ios::binary);
    if (!in) {
        throw ConfigError("shortlist dump not found (run shortlist-only first): " +
                          sl_path.string());
    }
    std::unordered_map<std::string, std::pair<Shortlist, NeighborMatrix>> sl_map;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        try {
            auto parsed = parse_shortlist_dump_line(line, ctx.space);
            sl_map[parsed.first.uid] = std::move(parsed);
        } catch (const std::exception& e) {
            throw ConfigError(sl_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }

    const auto t_process = std::chrono::steady_clock::now();
    std::mutex mu;
    std::vector<std::string> lines(ctx.test.size());
    std::vector<Failure> failures;
    parallel_for(ctx.test.size(), cfg.concurrency, [&](std::size_t i) {
        const Instance& x = ctx.test[i];
        try {
            const auto it = sl_map.find(x.uid);
            if (it == sl_map.end()) throw std::runtime_error("uid missing from shortlist dump");
            const auto& [shortlist, matrix] = it->second;
            lines[i] = prediction_json_line(make_prediction(ctx, x, shortlist, matrix));
        } catch (const std::exception& e) {
            std::lock_guard lock(mu);
            failures.push_back({i, x.uid, "rerank", e.what()});
        }
    });
    const double process_ms = ms_since(t_process);

    std::string body;
    for (const auto& line_out : lines) {
        if (!line_out.empty()) {
            body += line_out;
            body += '\n';
        }
    }
    write_file_atomic(fs::path(cfg.output_dir) / "predictions.jsonl", body);
    write_failures(cfg, failures);

    RunResult result;
    result.report = maybe_evaluate(ctx);
    result.manifest = finish_manifest(ctx, 0, failures.size(), process_ms, ms_since(t_start));
    write_manifest(cfg, result.manifest);
    result.exit_code = threshold_exit(cfg, failures.size(), ctx.test.size());
    return result;
}

int cmd_eval_only(const PipelineConfig& cfg) {
    if (cfg.truth_path.empty()) throw ConfigError("data.truth is required for eval-only");
    const LabelSpace space = load_label_space(cfg.labels_path);
    const GroundTruth truth = load_ground_truth(cfg.truth_path, space);
    const fs::path pred_path = fs::path(cfg.output_dir) / "predictions.jsonl";
    if (!fs::exists(pred_path)) {
        throw ConfigError("prediction file not found (run rerank-only or run first): " +
                          pred_path.string());
    }
    const auto predictions = load_predictions(pred_path.string());
    const EvalReport report = evaluate(predictions, truth, cfg.eval_ks);
    fs::create_directories(cfg.output_dir);
    write_file_atomic(fs::path(cfg.output_dir) / "report.json", format_report(report) + "\n");
    std::cout << format_report(report) << "\n";
    return 0;
}

int cmd_demo_corrupt(const PipelineConfig& cfg, const std::string& mode, std::uint64_t seed,
                     const std::string& in_path, const std::string& out_path) {
    const CorruptMode corrupt_mode = corrupt_mode_from_string(mode);
    const LabelSpace space = load_label_space(cfg.labels_path);

    std::ifstream in(in_path, std::ios::binary);
    if (!in) throw ConfigError("demonstration dump not found: " + in_path);
    std::string body;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        try {
            auto [uid, demos] = parse_demo_dump_line(line, space);
            if (!demos.items.empty()) {
                demos = corrupt(demos, corrupt_mode, seed ^ fnv1a64(uid), space);
            }
            body += demo_dump_line(uid, demos);
            body += '\n';
        } catch (const std::exception& e) {
            throw ConfigError(in_path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    write_file_atomic(out_path, body);
    return 0;
}

int cmd_index_build(const PipelineConfig& cfg, const std::string& target,
                    const std::string& out_path) {
    std::shared_ptr<const Embedder> embedder;
    if (cfg.retriever == RetrieverKind::dense) {
        embedder = std::make_shared<HashingEmbedder>(cfg.dense_dim, cfg.dense_seed);
    }
    std::vector<std::string> docs;
    if (target == "labels") {
        const LabelSpace space = load_label_space(cfg.labels_path);
        docs.reserve(space.size());
        for (const auto& label : space.labels()) docs.push_back(label.text);
    } else if (target == "train") {
        if (cfg.train_path.empty()) throw ConfigError("data.train is required for target=train");
        const auto train = load_instances(cfg.train_path);
        if (train.empty()) throw ConfigError("train corpus is empty: " + cfg.train_path);
        docs.reserve(train.size());
        for (const auto& t : train) docs.push_back(query_text(t, cfg.policy));
    } else {
        throw ConfigError("index-build target must be labels or train: " + target);
    }
    const RetrieverIndex index = RetrieverIndex::build(docs, cfg.retriever, embedder, cfg.bm25);
    index.save(out_path);
    return 0;
}

} // namespace xmcgen
