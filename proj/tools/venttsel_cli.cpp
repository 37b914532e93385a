#include "CLI11.hpp"

#include <iostream>
#include <string>

#include "venttsel/cli.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"Boundary control of the heat equation with dynamic (Venttsel) boundary conditions"};
    venttsel::cli::RunRequest req;
    std::uint64_t seed = 0;
    std::string stencil;

    app.require_subcommand(1, 1);
    for (const std::string& name : venttsel::cli::commands()) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", req.config_path, "JSON config file")->required();
        sub->add_option("--out", req.out_dir, "output directory")->capture_default_str();
        sub->add_option("--seed", seed, "64-bit seed for stochastic checks (overrides config)");
        sub->add_option("--normal-stencil", stencil, "normal derivative closure: 1, 2 or half-cell")
            ->check(CLI::IsMember({"1", "2", "half-cell"}));
        sub->add_flag("--quiet", req.quiet, "no progress line on stdout");
        sub->add_flag("--dump", req.dump, "also write binary field files");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    CLI::App* used = app.get_subcommands().front();
    req.command = used->get_name();
    if (used->count("--seed")) req.seed = seed;
    if (!stencil.empty()) req.normal_stencil = stencil;
    return venttsel::cli::run(req);
}
