#include "chaoscope/errors.hpp"
#include "chaoscope/plot.hpp"
#include "chaoscope/report.hpp"
#include "chaoscope/spectrum.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

namespace {

using namespace chaoscope;

int guarded(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const SearchBudgetError& e) {
        std::cerr << "search budget exhausted: " << e.what() << "\n";
        return 3;
    } catch (const NumericalAbort& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 2;
    } catch (const SvdError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

std::string demo_config(const std::string& name, const std::string& out_dir) {
    RunConfig cfg;
    cfg.output_dir = out_dir;
    cfg.plot = true;
    cfg.overwrite = true;
    cfg.model.seed = 42;
    cfg.base.seed = 7;
    if (name == "regimes") {
        cfg.probe = "directional_sweep";
        cfg.sweep.points = 60;
        cfg.sweep.directions = {"v1", "v16", "v32", "v64", "rand7"};
    } else if (name == "avalanche") {
        cfg.probe = "layerwise_gain";
        cfg.gain.eps = 1e-10;
        cfg.gain.directions = {"v1", "v32", "v64", "e0", "rand7"};
    } else if (name == "boundary") {
        cfg.probe = "decision_map";
        cfg.map.range = 1e-8;
        cfg.map.step = 4e-10;
        // the desk-scale model needs a tie tighter than the 1e-4 default for
        // the +/-1e-8 grid to flip the winner
        cfg.map.tie_tolerance = 1e-6;
    } else {
        throw ConfigError("unknown demo '" + name + "' (expected regimes|avalanche|boundary)");
    }
    return serialize_run_config(cfg);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"chaoscope: floating-point stability probes for a deterministic toy transformer"};
    app.require_subcommand(1);
    app.fallthrough(true);

    std::string precision_flag;
    bool overwrite_flag = false;
    app.add_option("--precision", precision_flag, "override precision (bf16|fp32|fp64)")
        ->check(CLI::IsMember({"bf16", "fp32", "fp64"}));
    app.add_flag("--overwrite", overwrite_flag, "replace existing output files");

    std::string run_config_path;
    auto* run_cmd = app.add_subcommand("run", "execute the probe named in a config file");
    run_cmd->add_option("config", run_config_path, "config file")->required();

    std::string spec_config_path;
    auto* spec_cmd = app.add_subcommand("spectrum", "compute and cache the reference SVD");
    spec_cmd->add_option("config", spec_config_path, "config file")->required();

    std::string plot_csv, plot_kind, plot_out;
    auto* plot_cmd = app.add_subcommand("plot", "render an SVG from a probe CSV");
    plot_cmd->add_option("csv", plot_csv, "input csv")->required();
    plot_cmd->add_option("--kind", plot_kind, "plot kind")->required()
        ->check(CLI::IsMember({"eps_sweep", "layer_gain", "staircase", "decision_map",
                               "angular_polar", "spectrum_scatter", "convergence"}));
    plot_cmd->add_option("-o,--output", plot_out, "output svg path");

    std::string demo_name, demo_out = "demo_out";
    auto* demo_cmd = app.add_subcommand("demo", "canned desk-scale reproductions");
    demo_cmd->add_option("name", demo_name, "regimes|avalanche|boundary")->required();
    demo_cmd->add_option("--out", demo_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    CliOverrides overrides;
    if (!precision_flag.empty()) overrides.precision = precision_from_string(precision_flag);
    overrides.overwrite = overwrite_flag;

    if (run_cmd->parsed()) {
        return guarded([&] {
            const RunConfig cfg = parse_run_config(run_config_path);
            const std::size_t rows = run_probe(cfg, overrides);
            std::cout << "wrote " << rows << " records to "
                      << (cfg.output_dir / (cfg.probe + ".csv")).string() << "\n";
        });
    }
    if (spec_cmd->parsed()) {
        return guarded([&] {
            const RunConfig cfg = parse_run_config(spec_config_path);
            const std::size_t rows = run_spectrum(cfg, overrides);
            std::cout << "wrote " << rows << " singular values to "
                      << (cfg.output_dir / "spectrum.csv").string() << "\n";
        });
    }
    if (plot_cmd->parsed()) {
        return guarded([&] {
            const CsvTable table = read_csv(plot_csv);
            const std::string svg = render_svg(table, plot_kind_from_string(plot_kind));
            const std::string out_path =
                plot_out.empty() ? plot_csv.substr(0, plot_csv.find_last_of('.')) + ".svg"
                                 : plot_out;
            std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
            if (!out) throw std::runtime_error("cannot open " + out_path);
            out << svg;
            std::cout << "wrote " << out_path << "\n";
        });
    }
    if (demo_cmd->parsed()) {
        return guarded([&] {
            std::filesystem::create_directories(demo_out);
            const std::string cfg_text = demo_config(demo_name, demo_out);
            const std::filesystem::path cfg_path =
                std::filesystem::path(demo_out) / (demo_name + ".cfg");
            {
                std::ofstream out(cfg_path, std::ios::trunc);
                out << cfg_text;
            }
            const RunConfig cfg = parse_run_config_text(cfg_text);
            const std::size_t rows = run_probe(cfg, overrides);
            std::cout << "demo '" << demo_name << "': " << rows << " records under " << demo_out
                      << "\n";
        });
    }
    return 0;
}
