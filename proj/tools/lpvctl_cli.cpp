#include <iostream>

#include "CLI11.hpp"
#include "lpvctl/cli_io.hpp"

using lpvctl::io::CommandArgs;

int main(int argc, char** argv) {
    CLI::App app{"Gain-scheduled attitude controller synthesis and evaluation"};
    app.require_subcommand(1);
    CommandArgs args;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config, "Project configuration (JSON)");
        sub->add_option("--out", args.out, "Output file (synthesize) or directory");
    };
    auto add_controllers = [&](CLI::App* sub, bool repeat) {
        auto* opt = sub->add_option("--controller", args.controllers, "Controller file")->required();
        if (!repeat) opt->expected(1);
    };
    auto add_scenarios = [&](CLI::App* sub) {
        sub->add_option("--scenario", args.scenarios, "Scenario name from the configuration (default: all)");
        sub->add_option("--disturbance-scale", args.disturbance_scale, "Override the disturbance scale");
    };

    CLI::App* syn = app.add_subcommand("synthesize", "Weights, synthesis and certification -> controller file");
    add_common(syn);
    syn->add_option("--grid-override", args.grid_override, "Number of grid points");
    syn->add_option("--rate-bound", args.rate_bound_deg_s, "Parameter rate bound in deg/s");
    syn->add_option("--lti", args.lti_at, "Single-point H-infinity design at the pointing or slewing end")
        ->check(CLI::IsMember({"pointing", "slewing"}));

    CLI::App* ana = app.add_subcommand("analyze", "Frozen-point norms and certificate check");
    add_common(ana);
    add_controllers(ana, false);

    CLI::App* mar = app.add_subcommand("margins", "Loop margins at every grid point");
    add_common(mar);
    add_controllers(mar, false);

    CLI::App* frq = app.add_subcommand("freqresp", "Four-block closed-loop magnitudes and weight bounds");
    add_common(frq);
    add_controllers(frq, false);

    CLI::App* sim = app.add_subcommand("simulate", "Nonlinear closed-loop simulation");
    add_common(sim);
    add_controllers(sim, false);
    add_scenarios(sim);

    CLI::App* cmp = app.add_subcommand("compare", "Simulate several controllers (and switching) on the same scenarios");
    add_common(cmp);
    add_controllers(cmp, true);
    add_scenarios(cmp);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : lpvctl::io::kValidation;
    }
    return lpvctl::io::run_command(app.get_subcommands().front()->get_name(), args, std::cout, std::cerr);
}
