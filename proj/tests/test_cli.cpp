#include "doctest.h"

// End-to-end tests that drive the installed chaoscope binary. The test
// runner exports CHAOSCOPE_BIN with the target path.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

std::string binary_path() {
    const char* env = std::getenv("CHAOSCOPE_BIN");
    REQUIRE_MESSAGE(env != nullptr, "CHAOSCOPE_BIN must point at the chaoscope binary");
    return env;
}

int run_command(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing file: " << p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::trunc);
    out << content;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// small model so each CLI invocation stays quick
std::string sweep_config(const fs::path& out_dir) {
    return "schema_version = 1\n"
           "probe = directional_sweep\n"
           "subject = model\n"
           "output_dir = " + out_dir.string() + "\n"
           "plot = true\n"
           "model.seed = 42\n"
           "model.d_model = 16\n"
           "model.n_layers = 2\n"
           "model.n_heads = 2\n"
           "model.d_ff = 32\n"
           "model.vocab_size = 24\n"
           "model.seq_len = 4\n"
           "model.precision = fp32\n"
           "sweep.points = 40\n"
           "sweep.directions = v1,v8,v16,e0,rand7\n";
}

} // namespace

TEST_CASE("cli run produces the contracted row count and is bitwise reproducible") {
    TempDir tmp("chaoscope_cli_run");
    const fs::path cfg_path = tmp.path / "sweep.cfg";
    write_file(cfg_path, sweep_config(tmp.path / "out"));

    const std::string cmd = binary_path() + " run " + cfg_path.string() + " >/dev/null 2>&1";
    REQUIRE(run_command(cmd) == 0);

    const fs::path csv = tmp.path / "out" / "directional_sweep.csv";
    const fs::path manifest = tmp.path / "out" / "directional_sweep.manifest.json";
    const fs::path svg = tmp.path / "out" / "directional_sweep.svg";
    REQUIRE(fs::exists(csv));
    CHECK(fs::exists(manifest));
    CHECK(fs::exists(svg));

    // 5 directions x 40 eps -> 200 data rows + header
    const std::string first = slurp(csv);
    std::size_t lines = 0;
    for (char c : first) lines += c == '\n';
    CHECK(lines == 201);

    // rerun with identical config: bitwise-identical csv and svg
    const std::string rerun = binary_path() + " --overwrite run " + cfg_path.string() +
                              " >/dev/null 2>&1";
    REQUIRE(run_command(rerun) == 0);
    CHECK(slurp(csv) == first);
    const std::string svg_bytes = slurp(svg);
    REQUIRE(run_command(rerun) == 0);
    CHECK(slurp(svg) == svg_bytes);
}

TEST_CASE("cli reports config errors with exit code 1 and names the field") {
    TempDir tmp("chaoscope_cli_badcfg");
    const fs::path cfg_path = tmp.path / "bad.cfg";
    write_file(cfg_path, "schema_version = 1\nprobe = directional_sweep\n");

    const fs::path log = tmp.path / "stderr.txt";
    const std::string cmd =
        binary_path() + " run " + cfg_path.string() + " >/dev/null 2>" + log.string();
    CHECK(run_command(cmd) == 1);
    const std::string err = slurp(log);
    CHECK(err.find("model.seed") != std::string::npos);

    // unreadable config path is also a config error
    CHECK(run_command(binary_path() + " run /nonexistent.cfg >/dev/null 2>&1") == 1);
}

TEST_CASE("cli spectrum subcommand writes and reuses the cache") {
    TempDir tmp("chaoscope_cli_spectrum");
    const fs::path cfg_path = tmp.path / "spec.cfg";
    write_file(cfg_path, sweep_config(tmp.path / "out"));

    const std::string cmd = binary_path() + " spectrum " + cfg_path.string() + " >/dev/null 2>&1";
    REQUIRE(run_command(cmd) == 0);
    const fs::path csv = tmp.path / "out" / "spectrum.csv";
    const fs::path cache = tmp.path / "out" / "spectrum.bin";
    REQUIRE(fs::exists(csv));
    CHECK(fs::exists(cache));
    const std::string first = slurp(csv);

    const std::string rerun = binary_path() + " --overwrite spectrum " + cfg_path.string() +
                              " >/dev/null 2>&1";
    REQUIRE(run_command(rerun) == 0);
    CHECK(slurp(csv) == first);

    // 16 singular values + header
    std::size_t lines = 0;
    for (char c : first) lines += c == '\n';
    CHECK(lines == 17);
}

TEST_CASE("cli plot renders an svg from a csv") {
    TempDir tmp("chaoscope_cli_plot");
    const fs::path cfg_path = tmp.path / "sweep.cfg";
    write_file(cfg_path, sweep_config(tmp.path / "out"));
    REQUIRE(run_command(binary_path() + " run " + cfg_path.string() + " >/dev/null 2>&1") == 0);

    const fs::path csv = tmp.path / "out" / "directional_sweep.csv";
    const fs::path svg = tmp.path / "replot.svg";
    const std::string cmd = binary_path() + " plot " + csv.string() + " --kind eps_sweep -o " +
                            svg.string() + " >/dev/null 2>&1";
    REQUIRE(run_command(cmd) == 0);
    const std::string bytes = slurp(svg);
    CHECK(bytes.find("<svg") != std::string::npos);

    // wrong kind for the records: config error
    CHECK(run_command(binary_path() + " plot " + csv.string() +
                      " --kind decision_map -o " + svg.string() + " >/dev/null 2>&1") == 1);
}

TEST_CASE("cli precision override changes the records") {
    TempDir tmp("chaoscope_cli_precision");
    const fs::path cfg_path = tmp.path / "sweep.cfg";
    write_file(cfg_path, sweep_config(tmp.path / "out"));

    REQUIRE(run_command(binary_path() + " run " + cfg_path.string() + " >/dev/null 2>&1") == 0);
    const std::string fp32 = slurp(tmp.path / "out" / "directional_sweep.csv");

    REQUIRE(run_command(binary_path() + " --overwrite --precision fp64 run " + cfg_path.string() +
                        " >/dev/null 2>&1") == 0);
    const std::string fp64 = slurp(tmp.path / "out" / "directional_sweep.csv");
    CHECK(fp32 != fp64);
}
