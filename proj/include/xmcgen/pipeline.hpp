#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmcgen/corpus.hpp"
#include "xmcgen/demogen.hpp"
#include "xmcgen/evalkit.hpp"
#include "xmcgen/llm/templates.hpp"
#include "xmcgen/rerank.hpp"
#include "xmcgen/retrieval.hpp"

namespace xmcgen {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Demonstration strategy plus the two no-demonstration modes.
enum class RunStrategy { content, label_centric, retrieval, free_gen, hint };

RunStrategy run_strategy_from_string(const std::string& s);
std::string to_string(RunStrategy strategy);

/// Config/validation problems map to exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BackendConfig {
    std::string kind = "mock";  // "mock" | "http"
    std::uint64_t seed = 42;    // mock only
    std::string base_url;       // http only
    std::string model = "gpt-3.5-turbo";
    std::string credential_env = "OPENAI_API_KEY";
    int retries = 3;
    int backoff_ms = 1000;
    int timeout_s = 60;
    int min_interval_ms = 0;
};

struct PipelineConfig {
    // dataset paths ("data" object)
    std::string labels_path;
    std::string test_path;
    std::string train_path;  // required for strategy=retrieval
    std::string truth_path;  // enables evaluation

    // retriever
    RetrieverKind retriever = RetrieverKind::bm25;
    Bm25Params bm25;
    QueryTextPolicy policy = QueryTextPolicy::title_content;
    std::size_t dense_dim = 64;
    std::uint64_t dense_seed = 17;

    RunStrategy strategy = RunStrategy::free_gen;
    llm::Domain domain = llm::Domain::product;
    std::size_t m = 5;
    std::size_t n = 5;  // defaults to 30 under label_centric when unset
    std::size_t k = 10;
    std::size_t s = 10;
    std::size_t top_K = 10;
    std::size_t budget = 100;

    std::string corrupt_mode = "none";  // none | random_inputs | random_labels
    std::uint64_t corrupt_seed = 0;

    BackendConfig backend;
    double temperature = 0.0;
    int max_output_tokens = 512;
    std::size_t concurrency = 4;

    RerankStrategy rerank = RerankStrategy::heuristic;

    std::string output_dir;
    bool cache_enabled = true;
    std::string cache_dir;  // empty → output_dir/cache
    double failure_threshold = 0.01;
    std::vector<std::size_t> eval_ks = {1, 3, 5, 10};
    bool dump_demos = false;
    bool dump_shortlists = false;
};

/// Parses the nested config object, applying defaults (n defaults to 30
/// under label_centric). Throws ConfigError on unknown enum values,
/// zero counts, or missing required paths.
PipelineConfig config_from_json(const nlohmann::json& j);

/// Reads a JSON config file and applies dot-path overrides of the form
/// "retriever.kind=bm25" (values parsed as JSON when possible, else kept
/// as strings).
PipelineConfig load_config_file(const std::string& path,
                                const std::vector<std::string>& overrides);

void apply_override(nlohmann::json& j, const std::string& assignment);

/// The normalized full-config object the digest is computed from. Output
/// locations (output_dir, cache settings) are excluded: they cannot change
/// results. Key order never matters; defaults are materialized.
nlohmann::json effective_config_json(const PipelineConfig& cfg);

std::string config_digest(const PipelineConfig& cfg);

struct RunManifest {
    std::string config_digest;
    std::string code_version = kCodeVersion;
    std::size_t n_instances = 0;
    std::size_t n_resumed = 0;
    std::size_t n_failed = 0;
    std::size_t llm_requests = 0;   // prompts issued (cache hits included)
    std::size_t backend_calls = 0;  // requests that reached the backend
    std::size_t cache_hits = 0;
    std::map<std::string, std::size_t> calls_by_template;  // t1..t4, other
    std::size_t fallback_free_generation = 0;     // degraded demos → free t3
    std::size_t fallback_retriever_shortlist = 0; // empty generation → retrieval
    std::size_t fallback_rerank_heuristic = 0;    // llm rerank backend failure
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
    std::map<std::string, double> timings_ms;
};

nlohmann::json manifest_to_json(const RunManifest& manifest);

struct RunResult {
    int exit_code = 0;  // 0 ok, 1 validation error, 2 failure threshold exceeded
    RunManifest manifest;
    std::optional<EvalReport> report;
};

/// Full batch run: resumable, worker pool of size concurrency, atomic
/// manifest, evaluation iff truth supplied. Per-instance errors go to
/// failures.jsonl and the run continues; exit code 2 when the failed
/// fraction exceeds failure_threshold. Output files in output_dir:
/// predictions.jsonl, manifest.json, failures.jsonl, report.json,
/// and demos.jsonl / shortlists.jsonl when dumps are enabled.
RunResult run_pipeline(const PipelineConfig& cfg);

/// Stage subcommands. Each reads the previous stage's dump from
/// output_dir and writes its own; composing them byte-matches run_pipeline
/// output under the mock backend.
RunResult cmd_demo_dump(const PipelineConfig& cfg);
RunResult cmd_shortlist_only(const PipelineConfig& cfg);
RunResult cmd_rerank_only(const PipelineConfig& cfg);
int cmd_eval_only(const PipelineConfig& cfg);

/// Transforms a demonstration dump with corrupt().
int cmd_demo_corrupt(const PipelineConfig& cfg, const std::string& mode, std::uint64_t seed,
                     const std::string& in_path, const std::string& out_path);

/// Builds and saves the label (target="labels") or train (target="train")
/// index to out_path.
int cmd_index_build(const PipelineConfig& cfg, const std::string& target,
                    const std::string& out_path);

/// Dump line formats (shared by run_pipeline and the stage subcommands).
std::string demo_dump_line(const std::string& uid, const DemonstrationSet& demos);
std::string shortlist_dump_line(const Shortlist& shortlist, const NeighborMatrix& matrix);
std::pair<std::string, DemonstrationSet> parse_demo_dump_line(const std::string& line,
                                                              const LabelSpace& space);
std::pair<Shortlist, NeighborMatrix> parse_shortlist_dump_line(const std::string& line,
                                                               const LabelSpace& space);

} // namespace xmcgen
