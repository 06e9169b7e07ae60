#include <iostream>

#include "CLI11.hpp"
#include "voplab/cli/commands.hpp"
#include "voplab/io/json_fields.hpp"
#include "voplab/tensor/allocator.hpp"

using namespace voplab;

namespace {

struct Args {
    std::string config;
    bool force = false;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool resume = false;
    bool lr_search = false;
    std::optional<std::size_t> max_steps;
    std::string axis;
    std::string values;
    std::vector<std::string> protocols;
};

void common(CLI::App* cmd, Args& a, bool config_required) {
    auto* c = cmd->add_option("--config", a.config, "experiment config (JSON)");
    if (config_required) c->required();
    cmd->add_flag("--force", a.force, "overwrite existing outputs");
    cmd->add_option("--seed", a.seed, "seed override (corpus seed for generate, training seed otherwise)");
    cmd->add_option("--out", a.out, "output directory override");
}

CommandOptions to_options(const Args& a) {
    CommandOptions o;
    o.force = a.force;
    o.resume = a.resume;
    o.lr_search = a.lr_search;
    o.seed = a.seed;
    o.out = a.out;
    o.max_steps = a.max_steps;
    if (!a.axis.empty()) o.axis = a.axis;
    if (!a.values.empty()) {
        try {
            o.values = nlohmann::json::parse(a.values);
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("--values: expected a JSON array, got '" + a.values + "'");
        }
    }
    o.protocols = a.protocols;
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    configure_allocator();
    CLI::App app{"voplab: prompt tuning lab for a miniature dual encoder"};
    app.require_subcommand(1);
    Args a;

    auto* gen = app.add_subcommand("generate", "write a synthetic corpus");
    common(gen, a, true);

    auto* train = app.add_subcommand("train", "train one protocol and report retrieval");
    common(train, a, true);
    train->add_flag("--resume", a.resume, "continue from the run directory's checkpoint");
    train->add_flag("--lr-search", a.lr_search, "select lr over the config's grid by validation t2v R@1");
    train->add_option("--max-steps", a.max_steps, "stop after this global step");

    auto* count = app.add_subcommand("count-params", "trainable parameter ledger (CLIP ViT-B/32 by default)");
    common(count, a, false);
    count->add_option("--protocols", a.protocols, "protocols to count")->delimiter(',');

    auto* ablate = app.add_subcommand("ablate", "sweep one prompt axis");
    common(ablate, a, true);
    ablate->add_option("--axis", a.axis, "depth | length | video_len | k_split | cmm");
    ablate->add_option("--values", a.values, "JSON array of axis values");
    ablate->add_option("--max-steps", a.max_steps, "stop each point after this global step");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    return run_guarded(
        [&] {
            const CommandOptions opts = to_options(a);
            auto load = [&] {
                if (!a.config.empty()) return load_experiment(a.config);
                ExperimentConfig c;
                c.model = ModelSpec::clip_vit_b32();
                c.prompts = PromptSpec::defaults(PromptMode::vop, c.model);
                return c;
            };
            if (*gen) cmd_generate(load(), opts, std::cout);
            else if (*train) cmd_train(load(), opts, std::cout);
            else if (*count) cmd_count_params(load(), opts, std::cout);
            else if (*ablate) cmd_ablate(load(), opts, std::cout);
        },
        std::cerr);
}
