// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Needs the vendored CLI11 header on the include path.

#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msldp/error.hpp"
#include "msldp/harness.hpp"
#include "msldp/recipes.hpp"

namespace msldp {

/// Exit code 0 on success, 2 when a run reports hypothesis findings, 1 on errors.
inline int run_experiment_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                              std::ostream& err = std::cerr) {
    CLI::App app{"Multiscale stochastic evolution equations: simulation, averaging and large deviations"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", recipes_dir = "recipes", recipe_name;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    bool list = false;

    const std::map<std::string, std::string> about{
        {"simulate", "simulate an ensemble of slow-fast trajectories"},
        {"average-drift", "evaluate the averaged drift and measure the ergodic rate"},
        {"skeleton", "solve the controlled skeleton equation and sample a control level set"},
        {"rate", "minimize the rate function for a terminal event"},
        {"validate-ldp", "fit epsilon log p against the rate function"},
        {"weak-convergence", "compare controlled trajectories with the skeleton as epsilon decreases"},
        {"check-conditions", "test the structural hypotheses on random pairs"}};
    for (const auto& name : subcommands()) {
        auto* sub = app.add_subcommand(name, about.at(name));
        sub->add_option("--config", config_path, "experiment config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "master seed (overrides [run] seed)");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--threads", threads, "worker threads (overrides [run] threads)")->check(CLI::PositiveNumber);
    }
    auto* rec = app.add_subcommand("recipe", "run a shipped recipe and check its tolerances");
    rec->add_option("name", recipe_name, "recipe name");
    rec->add_option("--recipes", recipes_dir, "recipe directory");
    rec->add_option("--out", out_dir, "output directory");
    rec->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    rec->add_flag("--list", list, "list recipes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (rec->parsed()) {
            if (list) {
                for (const auto& r : list_recipes(recipes_dir))
                    out << r.name << "\t" << r.subcommand << "\t" << r.section << "\n";
                return 0;
            }
            if (recipe_name.empty()) throw Error("recipe name is required");
            const RecipeResult r = run_recipe(recipe_name, recipes_dir, out_dir, threads);
            for (const auto& [k, v] : r.outcome.report) out << k << " = " << v << "\n";
            for (const auto& f : r.failures) err << "tolerance: " << f << "\n";
            out << (r.passed ? "PASS " : "FAIL ") << r.recipe.name << "\n";
            return r.passed ? 0 : 2;
        }
        const std::string name = app.get_subcommands().front()->get_name();
        ExperimentConfig e = load_experiment(config_path);
        if (seed) {
            e.seed = *seed;
            e.mc.seed = *seed;
            e.ergodic.seed = *seed;
        }
        if (threads) {
            e.threads = *threads;
            e.mc.threads = *threads;
            e.ergodic.threads = *threads;
        }
        if (!e.control.file.empty() && std::filesystem::path(e.control.file).is_relative())
            e.control.file = (std::filesystem::path(config_path).parent_path() / e.control.file).string();
        const RunOutcome o = run_subcommand(name, e, out_dir);
        for (const auto& [k, v] : o.report) out << k << " = " << v << "\n";
        for (const auto& f : o.findings) err << "finding: " << f << "\n";
        return o.exit_code;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace msldp
