// Command-line driver: `engine <stage|all> --config FILE [--seed N] [--out DIR]`.

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"

#include "evrank/error.hpp"
#include "evrank/pipeline.hpp"

namespace {

void print(const evrank::StageReport& r) {
    for (const auto& line : r.lines) std::cout << line << "\n";
    std::cout.flush();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Event sequence prediction with abductive reranking"};
    std::string stage, config_path, out;
    std::optional<std::uint64_t> seed;
    app.add_option("stage", stage,
                   "synth | ingest | train-base | propose | abduce | retrieve | train-ranker | predict | evaluate | "
                   "report | all")
        ->required();
    app.add_option("--config,-c", config_path, "configuration file")->required()->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "overrides `seed`");
    app.add_option("--out,-o", out, "overrides `out`");
    CLI11_PARSE(app, argc, argv);

    std::string current = stage;
    try {
        auto config = evrank::Config::load(config_path);
        if (seed) config.set("seed", std::to_string(*seed));
        if (!out.empty()) config.set("out", std::filesystem::absolute(out).string());
        if (stage == "all") {
            const auto rc = evrank::RunConfig::from(config);
            std::vector<evrank::Stage> order{rc.source == "synthetic" ? evrank::Stage::synth : evrank::Stage::ingest};
            for (auto s : {evrank::Stage::train_base, evrank::Stage::propose, evrank::Stage::abduce,
                           evrank::Stage::retrieve, evrank::Stage::train_ranker, evrank::Stage::predict,
                           evrank::Stage::evaluate, evrank::Stage::report})
                order.push_back(s);
            for (auto s : order) {
                current = std::string(evrank::to_string(s));
                print(evrank::run_stage(s, config));
            }
        } else {
            const auto s = evrank::parse_stage(stage);
            print(evrank::run_stage(s, config));
        }
    } catch (const std::exception& e) {
        std::cerr << "engine: " << current << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
