#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "xmcgen/evalkit.hpp"
#include "xmcgen/pipeline.hpp"

namespace {

// Leftover args are config overrides: --counts.k=5 → counts.k=5.
std::vector<std::string> collect_overrides(const std::vector<std::string>& extras) {
    std::vector<std::string> out;
    for (std::string s : extras) {
        std::size_t dashes = 0;
        while (dashes < s.size() && s[dashes] == '-') ++dashes;
        s.erase(0, dashes);
        if (s.find('=') == std::string::npos) {
            throw xmcgen::ConfigError("unrecognized argument (expected --key.path=value): " + s);
        }
        out.push_back(std::move(s));
    }
    return out;
}

int finish(const xmcgen::RunResult& result) {
    if (result.report) std::cout << xmcgen::format_report(*result.report) << "\n";
    if (result.exit_code == 2) {
        std::cerr << "error: " << result.manifest.n_failed << " of "
                  << result.manifest.n_instances << " instances failed (see failures.jsonl)\n";
    }
    return result.exit_code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-shot extreme multi-label classification: generate candidate labels with "
                 "an LLM, map them onto the label space by retrieval, rerank the shortlist."};
    app.require_subcommand(1);

    std::string config_path;
    std::string corrupt_mode = "random_labels";
    std::uint64_t corrupt_seed = 0;
    std::string corrupt_in;
    std::string corrupt_out;
    std::string index_target = "labels";
    std::string index_out;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->allow_extras();
        return sub;
    };

    auto* cmd_run = add_common(
        app.add_subcommand("run", "Full batch run: demonstrations, shortlist, rerank, report"));
    auto* cmd_demos = add_common(
        app.add_subcommand("demo-dump", "Generate demonstrations only, to demos.jsonl"));
    auto* cmd_sl = add_common(app.add_subcommand(
        "shortlist-only", "Build shortlists from demos.jsonl, to shortlists.jsonl"));
    auto* cmd_rr = add_common(app.add_subcommand(
        "rerank-only", "Rerank shortlists.jsonl into predictions.jsonl (and report)"));
    auto* cmd_eval = add_common(
        app.add_subcommand("eval-only", "Evaluate predictions.jsonl against ground truth"));

    auto* cmd_corrupt = add_common(app.add_subcommand(
        "demo-corrupt", "Rewrite a demonstration dump with corrupted inputs or labels"));
    cmd_corrupt->add_option("--mode", corrupt_mode, "random_inputs | random_labels");
    cmd_corrupt->add_option("--seed", corrupt_seed, "corruption seed");
    cmd_corrupt->add_option("--in", corrupt_in, "input demos.jsonl")->required();
    cmd_corrupt->add_option("--out", corrupt_out, "output demos.jsonl")->required();

    auto* cmd_index = add_common(
        app.add_subcommand("index-build", "Build and save a retriever index"));
    cmd_index->add_option("--target", index_target, "labels | train");
    cmd_index->add_option("--out", index_out, "output index path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        CLI::App* sub = app.get_subcommands().front();
        const xmcgen::PipelineConfig cfg =
            xmcgen::load_config_file(config_path, collect_overrides(sub->remaining()));

        if (sub == cmd_run) return finish(xmcgen::run_pipeline(cfg));
        if (sub == cmd_demos) return finish(xmcgen::cmd_demo_dump(cfg));
        if (sub == cmd_sl) return finish(xmcgen::cmd_shortlist_only(cfg));
        if (sub == cmd_rr) return finish(xmcgen::cmd_rerank_only(cfg));
        if (sub == cmd_eval) return xmcgen::cmd_eval_only(cfg);
        if (sub == cmd_corrupt) {
            return xmcgen::cmd_demo_corrupt(cfg, corrupt_mode, corrupt_seed, corrupt_in,
                                            corrupt_out);
        }
        if (sub == cmd_index) return xmcgen::cmd_index_build(cfg, index_target, index_out);
        std::cerr << "error: no subcommand\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
