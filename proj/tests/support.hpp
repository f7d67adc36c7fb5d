#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <unistd.h>

#include <json.hpp>

#include "xmcgen/pipeline.hpp"

namespace testsupport {

inline std::filesystem::path fixture_dir() { return XMCGEN_FIXTURE_DIR; }
inline std::filesystem::path golden_dir() { return XMCGEN_GOLDEN_DIR; }

inline std::filesystem::path make_temp_dir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    const auto dir = std::filesystem::temp_directory_path() /
                     ("xmcgen_" + tag + "_" + std::to_string(::getpid()) + "_" +
                      std::to_string(counter.fetch_add(1)));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// The canonical mock-backend run the end-to-end goldens are frozen from.
/// Anything that changes these bytes is a behavior change and must be
/// re-frozen deliberately.
inline xmcgen::PipelineConfig e2e_config(const std::string& strategy, const std::string& rerank,
                                         const std::filesystem::path& out_dir) {
    nlohmann::json j = {
        {"data",
         {{"labels", (fixture_dir() / "labels.jsonl").string()},
          {"test", (fixture_dir() / "test.jsonl").string()},
          {"train", (fixture_dir() / "train.jsonl").string()},
          {"truth", (fixture_dir() / "truth.jsonl").string()}}},
        {"strategy", strategy},
        {"domain", "product"},
        {"rerank", rerank},
        {"backend", {{"kind", "mock"}, {"seed", 42}}},
        {"output_dir", out_dir.string()},
    };
    return xmcgen::config_from_json(j);
}

} // namespace testsupport
