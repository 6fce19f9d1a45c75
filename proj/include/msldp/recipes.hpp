// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

// Recipes: shipped configs with an expected-report tolerance block.
//
//   [recipe]
//   name = lq-ldp
//   subcommand = validate-ldp
//   section = rate function of the linear reduction
//   [tolerance]
//   relative_gap = < 0.15
//   I = > 1.15, < 1.16

#pragma once

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "msldp/config.hpp"
#include "msldp/error.hpp"
#include "msldp/harness.hpp"

namespace msldp {

class RecipeNotFound : public Error {
public:
    using Error::Error;
};

struct Tolerance {
    std::string field;
    std::string op;
    double value = 0.0;
    int line = 0;

    bool holds(double x) const {
        if (op == "<") return x < value;
        if (op == "<=") return x <= value;
        if (op == ">") return x > value;
        if (op == ">=") return x >= value;
        return x == value;
    }
};

struct Recipe {
    std::string name;
    std::filesystem::path config_path;
    std::string subcommand;
    std::string section;
    std::string description;
    std::vector<Tolerance> tolerances;
};

struct RecipeResult {
    Recipe recipe;
    RunOutcome outcome;
    bool passed = false;
    std::vector<std::string> failures;
};

inline Recipe recipe_from_config(const Config& c, const std::filesystem::path& path) {
    Recipe r;
    r.config_path = path;
    r.name = c.require_string("recipe", "name");
    r.subcommand = c.require_string("recipe", "subcommand");
    if (std::find(subcommands().begin(), subcommands().end(), r.subcommand) == subcommands().end())
        throw ConfigError("unknown subcommand '" + r.subcommand + "'", c.line_of("recipe", "subcommand"));
    r.section = c.get_string("recipe", "section", "");
    r.description = c.get_string("recipe", "description", "");
    if (c.has_section("tolerance")) {
        for (const auto& [field, entry] : c.sections().at("tolerance")) {
            std::stringstream conds(entry.value);
            std::string cond;
            while (std::getline(conds, cond, ',')) {
                std::istringstream is(cond);
                Tolerance t;
                t.field = field;
                t.line = entry.line;
                std::string num, rest;
                if (!(is >> t.op >> num) || (is >> rest) ||
                    (t.op != "<" && t.op != "<=" && t.op != ">" && t.op != ">=" && t.op != "=="))
                    throw ConfigError("tolerance must read '<op> <number>[, <op> <number>]'", entry.line);
                t.value = Config::to_double(num, entry.line);
                r.tolerances.push_back(t);
            }
        }
    }
    return r;
}

/// All recipes in `dir`, sorted by name.
inline std::vector<Recipe> list_recipes(const std::filesystem::path& dir) {
    std::vector<Recipe> out;
    if (!std::filesystem::is_directory(dir)) throw RecipeNotFound("recipe directory not found: " + dir.string());
    for (const auto& ent : std::filesystem::directory_iterator(dir)) {
        if (ent.path().extension() != ".ini") continue;
        out.push_back(recipe_from_config(Config::load(ent.path().string()), ent.path()));
    }
    std::sort(out.begin(), out.end(), [](const Recipe& a, const Recipe& b) { return a.name < b.name; });
    return out;
}

inline Recipe find_recipe(const std::string& name, const std::filesystem::path& dir) {
    for (auto& r : list_recipes(dir))
        if (r.name == name) return r;
    throw RecipeNotFound("recipe not found: " + name);
}

/// Runs a recipe's pipeline into `out_dir` and checks every tolerance.
inline RecipeResult run_recipe(const std::string& name, const std::filesystem::path& recipes_dir,
                               const std::filesystem::path& out_dir, std::optional<unsigned> threads = std::nullopt) {
    RecipeResult res;
    res.recipe = find_recipe(name, recipes_dir);
    Config cfg = Config::load(res.recipe.config_path.string());
    ExperimentConfig e = experiment_from_config(cfg);
    if (threads) {
        e.threads = *threads;
        e.mc.threads = *threads;
        e.ergodic.threads = *threads;
    }
    if (!e.control.file.empty() && std::filesystem::path(e.control.file).is_relative())
        e.control.file = (res.recipe.config_path.parent_path() / e.control.file).string();
    res.outcome = run_subcommand(res.recipe.subcommand, e, out_dir);
    for (const auto& t : res.recipe.tolerances) {
        auto it = res.outcome.report.find(t.field);
        if (it == res.outcome.report.end()) {
            res.failures.push_back(t.field + ": not in report");
            continue;
        }
        if (!t.holds(it->second)) {
            std::ostringstream os;
            os << std::setprecision(10) << t.field << " = " << it->second << " violates " << t.op << " " << t.value;
            res.failures.push_back(os.str());
        }
    }
    res.passed = res.failures.empty() && res.outcome.exit_code == 0;
    if (res.outcome.exit_code != 0 && res.failures.empty())
        res.failures.push_back("subcommand reported findings");
    return res;
}

}  // namespace msldp
