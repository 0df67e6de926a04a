#include "chaoscope/report.hpp"
#include "chaoscope/errors.hpp"
#include "chaoscope/plot.hpp"
#include "chaoscope/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace chaoscope {

using nlohmann::json;

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
    double value = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last) {
        throw ConfigError("bad floating-point value '" + text + "'");
    }
    return value;
}

namespace {

std::uint64_t parse_u64(const std::string& text) {
    std::uint64_t value = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw ConfigError("bad integer value '" + text + "'");
    }
    return value;
}

bool parse_bool(const std::string& text) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw ConfigError("bad boolean value '" + text + "' (expected true|false)");
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(text);
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string join_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ",";
        out += items[i];
    }
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

} // namespace

std::size_t CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    throw std::invalid_argument("csv table has no column '" + name + "'");
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
    std::string out;
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (i) out += ",";
        out += table.header[i];
    }
    out += "\n";
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ",";
            out += row[i];
        }
        out += "\n";
    }
    write_file_atomic(path, out);
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open csv: " + path.string());
    CsvTable table;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string field;
        std::stringstream ss(line);
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (line.back() == ',') fields.push_back("");
        if (first) {
            table.header = std::move(fields);
            first = false;
        } else {
            table.rows.push_back(std::move(fields));
        }
    }
    return table;
}

// --- config -----------------------------------------------------------------

RunConfig parse_run_config_text(const std::string& text) {
    RunConfig cfg;
    std::set<std::string> seen;

    using Setter = std::function<void(const std::string&)>;
    std::map<std::string, Setter> fields;
    auto set_d = [](double* p) { return [p](const std::string& v) { *p = parse_double(v); }; };
    auto set_u = [](std::uint64_t* p) {
        return [p](const std::string& v) { *p = parse_u64(v); };
    };
    auto set_z = [](std::size_t* p) {
        return [p](const std::string& v) { *p = static_cast<std::size_t>(parse_u64(v)); };
    };
    auto set_b = [](bool* p) { return [p](const std::string& v) { *p = parse_bool(v); }; };
    auto set_s = [](std::string* p) { return [p](const std::string& v) { *p = v; }; };

    fields["schema_version"] = [&cfg](const std::string& v) {
        cfg.schema_version = static_cast<int>(parse_u64(v));
    };
    fields["probe"] = set_s(&cfg.probe);
    fields["subject"] = set_s(&cfg.subject);
    fields["output_dir"] = [&cfg](const std::string& v) { cfg.output_dir = v; };
    fields["plot"] = set_b(&cfg.plot);
    fields["overwrite"] = set_b(&cfg.overwrite);

    fields["model.d_model"] = set_z(&cfg.model.d_model);
    fields["model.n_layers"] = set_z(&cfg.model.n_layers);
    fields["model.n_heads"] = set_z(&cfg.model.n_heads);
    fields["model.d_ff"] = set_z(&cfg.model.d_ff);
    fields["model.vocab_size"] = set_z(&cfg.model.vocab_size);
    fields["model.seq_len"] = set_z(&cfg.model.seq_len);
    fields["model.seed"] = set_u(&cfg.model.seed);
    fields["model.precision"] = [&cfg](const std::string& v) {
        cfg.model.precision = precision_from_string(v);
    };
    fields["model.reduction"] = [&cfg](const std::string& v) {
        cfg.model.reduction = reduction_from_string(v);
    };

    fields["oracle.dim"] = set_z(&cfg.oracle.dim);
    fields["oracle.sigma_min"] = set_d(&cfg.oracle.sigma_min);
    fields["oracle.sigma_max"] = set_d(&cfg.oracle.sigma_max);
    fields["oracle.seed"] = set_u(&cfg.oracle.seed);
    fields["oracle.vocab_size"] = set_z(&cfg.oracle.vocab_size);

    fields["base.seed"] = set_u(&cfg.base.seed);
    fields["base.scale"] = set_d(&cfg.base.scale);
    fields["base.decades"] = set_d(&cfg.base.decades);
    fields["base.position"] = set_s(&cfg.base.position);

    fields["spectrum.step"] = set_d(&cfg.spectrum.step);
    fields["spectrum.cache"] = set_s(&cfg.spectrum.cache);

    fields["thresholds.c_chaos"] = set_d(&cfg.thresholds.c_chaos);
    fields["thresholds.signal_lo"] = set_d(&cfg.thresholds.signal_lo);
    fields["thresholds.signal_hi"] = set_d(&cfg.thresholds.signal_hi);

    fields["sweep.eps_min"] = set_d(&cfg.sweep.eps_min);
    fields["sweep.eps_max"] = set_d(&cfg.sweep.eps_max);
    fields["sweep.points"] = set_z(&cfg.sweep.points);
    fields["sweep.directions"] = [&cfg](const std::string& v) {
        cfg.sweep.directions = split_list(v);
    };

    fields["gain.eps"] = set_d(&cfg.gain.eps);
    fields["gain.directions"] = [&cfg](const std::string& v) {
        cfg.gain.directions = split_list(v);
    };

    fields["inst.direction"] = set_s(&cfg.inst.direction);
    fields["inst.eps_start"] = set_d(&cfg.inst.eps_start);
    fields["inst.delta"] = set_d(&cfg.inst.delta);
    fields["inst.points"] = set_z(&cfg.inst.points);

    fields["micro.direction"] = set_s(&cfg.micro.direction);
    fields["micro.start_s"] = set_d(&cfg.micro.start_s);
    fields["micro.delta"] = set_d(&cfg.micro.delta);
    fields["micro.steps"] = set_z(&cfg.micro.steps);

    fields["map.dir_i"] = set_s(&cfg.map.dir_i);
    fields["map.dir_j"] = set_s(&cfg.map.dir_j);
    fields["map.range"] = set_d(&cfg.map.range);
    fields["map.step"] = set_d(&cfg.map.step);
    fields["map.near_tie"] = set_b(&cfg.map.near_tie);
    fields["map.tie_tolerance"] = set_d(&cfg.map.tie_tolerance);

    fields["boundary.s_init"] = set_d(&cfg.boundary.s_init);
    fields["boundary.s_cap"] = set_d(&cfg.boundary.s_cap);
    fields["boundary.angles"] = set_z(&cfg.boundary.angles);

    fields["kappa.direction"] = set_s(&cfg.kappa.direction);
    fields["kappa.eps"] = set_d(&cfg.kappa.eps);
    fields["kappa.samples"] = [&cfg](const std::string& v) {
        cfg.kappa.samples.clear();
        for (const auto& item : split_list(v)) {
            cfg.kappa.samples.push_back(static_cast<std::size_t>(parse_u64(item)));
        }
    };
    fields["kappa.repeats"] = set_z(&cfg.kappa.repeats);
    fields["kappa.noise"] = set_d(&cfg.kappa.noise);
    fields["kappa.seed"] = set_u(&cfg.kappa.seed);

    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = fields.find(key);
        if (it == fields.end()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown field '" +
                              key + "'");
        }
        if (!seen.insert(key).second) {
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate field '" +
                              key + "'");
        }
        try {
            it->second(value);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ", field '" + key +
                              "': " + e.what());
        } catch (const std::exception& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ", field '" + key +
                              "': " + e.what());
        }
    }

    if (cfg.schema_version != kConfigSchemaVersion) {
        throw ConfigError("unsupported schema_version " + std::to_string(cfg.schema_version));
    }
    if (cfg.subject != "model" && cfg.subject != "oracle") {
        throw ConfigError("subject must be 'model' or 'oracle', got '" + cfg.subject + "'");
    }
    if (cfg.subject == "model" && seen.find("model.seed") == seen.end()) {
        throw ConfigError("missing required field 'model.seed'");
    }
    return cfg;
}

RunConfig parse_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config_text(buf.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
    std::string out;
    auto kv = [&out](const std::string& key, const std::string& value) {
        out += key;
        out += " = ";
        out += value;
        out += "\n";
    };
    kv("schema_version", std::to_string(cfg.schema_version));
    kv("probe", cfg.probe);
    kv("subject", cfg.subject);
    kv("output_dir", cfg.output_dir.string());
    kv("plot", cfg.plot ? "true" : "false");
    kv("overwrite", cfg.overwrite ? "true" : "false");

    kv("model.d_model", std::to_string(cfg.model.d_model));
    kv("model.n_layers", std::to_string(cfg.model.n_layers));
    kv("model.n_heads", std::to_string(cfg.model.n_heads));
    kv("model.d_ff", std::to_string(cfg.model.d_ff));
    kv("model.vocab_size", std::to_string(cfg.model.vocab_size));
    kv("model.seq_len", std::to_string(cfg.model.seq_len));
    kv("model.seed", std::to_string(cfg.model.seed));
    kv("model.precision", std::string(to_string(cfg.model.precision)));
    kv("model.reduction", to_string(cfg.model.reduction));

    kv("oracle.dim", std::to_string(cfg.oracle.dim));
    kv("oracle.sigma_min", format_double(cfg.oracle.sigma_min));
    kv("oracle.sigma_max", format_double(cfg.oracle.sigma_max));
    kv("oracle.seed", std::to_string(cfg.oracle.seed));
    kv("oracle.vocab_size", std::to_string(cfg.oracle.vocab_size));

    kv("base.seed", std::to_string(cfg.base.seed));
    kv("base.scale", format_double(cfg.base.scale));
    kv("base.decades", format_double(cfg.base.decades));
    kv("base.position", cfg.base.position);

    kv("spectrum.step", format_double(cfg.spectrum.step));
    if (!cfg.spectrum.cache.empty()) kv("spectrum.cache", cfg.spectrum.cache);

    kv("thresholds.c_chaos", format_double(cfg.thresholds.c_chaos));
    kv("thresholds.signal_lo", format_double(cfg.thresholds.signal_lo));
    kv("thresholds.signal_hi", format_double(cfg.thresholds.signal_hi));

    kv("sweep.eps_min", format_double(cfg.sweep.eps_min));
    kv("sweep.eps_max", format_double(cfg.sweep.eps_max));
    kv("sweep.points", std::to_string(cfg.sweep.points));
    kv("sweep.directions", join_list(cfg.sweep.directions));

    kv("gain.eps", format_double(cfg.gain.eps));
    kv("gain.directions", join_list(cfg.gain.directions));

    kv("inst.direction", cfg.inst.direction);
    kv("inst.eps_start", format_double(cfg.inst.eps_start));
    kv("inst.delta", format_double(cfg.inst.delta));
    kv("inst.points", std::to_string(cfg.inst.points));

    kv("micro.direction", cfg.micro.direction);
    kv("micro.start_s", format_double(cfg.micro.start_s));
    kv("micro.delta", format_double(cfg.micro.delta));
    kv("micro.steps", std::to_string(cfg.micro.steps));

    kv("map.dir_i", cfg.map.dir_i);
    kv("map.dir_j", cfg.map.dir_j);
    kv("map.range", format_double(cfg.map.range));
    kv("map.step", format_double(cfg.map.step));
    kv("map.near_tie", cfg.map.near_tie ? "true" : "false");
    kv("map.tie_tolerance", format_double(cfg.map.tie_tolerance));

    kv("boundary.s_init", format_double(cfg.boundary.s_init));
    kv("boundary.s_cap", format_double(cfg.boundary.s_cap));
    kv("boundary.angles", std::to_string(cfg.boundary.angles));

    kv("kappa.direction", cfg.kappa.direction);
    kv("kappa.eps", format_double(cfg.kappa.eps));
    {
        std::vector<std::string> items;
        for (std::size_t n : cfg.kappa.samples) items.push_back(std::to_string(n));
        kv("kappa.samples", join_list(items));
    }
    kv("kappa.repeats", std::to_string(cfg.kappa.repeats));
    kv("kappa.noise", format_double(cfg.kappa.noise));
    kv("kappa.seed", std::to_string(cfg.kappa.seed));
    return out;
}

// --- table converters ----------------------------------------------------------

CsvTable sweep_table(const std::vector<SweepRecord>& records) {
    CsvTable t;
    t.header = {"eps", "direction_label", "d_eff", "bitwise_constant", "regime", "finite"};
    for (const auto& r : records) {
        t.rows.push_back({format_double(r.eps), r.direction_label, format_double(r.d_eff),
                          r.bitwise_constant ? "1" : "0", std::string(to_string(r.regime)),
                          r.finite ? "1" : "0"});
    }
    return t;
}

CsvTable gain_table(const LayerGainTable& table) {
    CsvTable t;
    t.header = {"layer", "direction_label", "gain", "eps"};
    for (std::size_t tap = 0; tap < table.n_taps; ++tap) {
        for (std::size_t d = 0; d < table.direction_labels.size(); ++d) {
            t.rows.push_back({std::to_string(tap), table.direction_labels[d],
                              format_double(table.at(tap, d)), format_double(table.eps)});
        }
    }
    return t;
}

CsvTable instability_table(const InstabilityResult& r) {
    CsvTable t;
    t.header = {"index", "eps", "instability", "margin", "drift"};
    for (std::size_t i = 0; i < r.eps.size(); ++i) {
        t.rows.push_back({std::to_string(i), format_double(r.eps[i]),
                          i == 0 ? "" : format_double(r.instability[i - 1]),
                          format_double(r.margins[i]), format_double(r.drift[i])});
    }
    return t;
}

CsvTable micro_table(const MicroContinuityResult& r) {
    CsvTable t;
    t.header = {"step", "s", "stall", "consec_norm", "cumulative_norm"};
    for (std::size_t i = 0; i < r.steps.size(); ++i) {
        const MicroStep& st = r.steps[i];
        t.rows.push_back({std::to_string(i + 1), format_double(st.s), st.stall ? "1" : "0",
                          format_double(st.consec_norm), format_double(st.cumulative_norm)});
    }
    return t;
}

CsvTable decision_table(const DecisionMapResult& r) {
    CsvTable t;
    t.header = {"i", "j", "offset_i", "offset_j", "winner_bit", "token_a", "token_b"};
    for (std::size_t i = 0; i < r.n; ++i) {
        for (std::size_t j = 0; j < r.n; ++j) {
            t.rows.push_back({std::to_string(i), std::to_string(j),
                              format_double(r.offsets[i]), format_double(r.offsets[j]),
                              std::to_string(static_cast<int>(r.grid[i * r.n + j])),
                              std::to_string(r.token_a), std::to_string(r.token_b)});
        }
    }
    return t;
}

DecisionMapResult decision_from_table(const CsvTable& table) {
    DecisionMapResult r;
    const std::size_t rows = table.rows.size();
    const std::size_t n = static_cast<std::size_t>(std::llround(std::sqrt(
        static_cast<double>(rows))));
    if (n * n != rows || n == 0) {
        throw std::invalid_argument("decision table is not a square grid");
    }
    const std::size_t ci = table.column("i");
    const std::size_t cj = table.column("j");
    const std::size_t cw = table.column("winner_bit");
    const std::size_t coff = table.column("offset_i");
    r.n = n;
    r.grid.assign(n * n, 0);
    r.offsets.assign(n, 0.0);
    r.token_a = static_cast<int>(parse_u64(table.rows.front()[table.column("token_a")]));
    r.token_b = static_cast<int>(parse_u64(table.rows.front()[table.column("token_b")]));
    for (const auto& row : table.rows) {
        const std::size_t i = static_cast<std::size_t>(parse_u64(row[ci]));
        const std::size_t j = static_cast<std::size_t>(parse_u64(row[cj]));
        if (i >= n || j >= n) throw std::invalid_argument("decision table index out of range");
        r.grid[i * n + j] = static_cast<std::uint8_t>(parse_u64(row[cw]));
        r.offsets[i] = parse_double(row[coff]);
    }
    r.metrics = decision_metrics(r.grid, n, n);
    return r;
}

CsvTable boundary_table(const std::vector<BoundaryResult>& results) {
    CsvTable t;
    t.header = {"direction_label", "theta",         "sigma",    "s_max",
                "s_next_flips",    "search_evals",  "unbounded"};
    for (const auto& r : results) {
        t.rows.push_back({r.direction_label,
                          std::isnan(r.theta) ? "" : format_double(r.theta),
                          std::isnan(r.sigma) ? "" : format_double(r.sigma),
                          format_double(r.s_max), r.s_next_flips ? "1" : "0",
                          std::to_string(r.search_evals), r.unbounded ? "1" : "0"});
    }
    return t;
}

CsvTable kappa_table(const std::vector<KappaRecord>& records) {
    CsvTable t;
    t.header = {"n_samples", "repeat", "noise_seed", "kappa"};
    for (const auto& r : records) {
        t.rows.push_back({std::to_string(r.n_samples), std::to_string(r.repeat),
                          std::to_string(r.noise_seed), format_double(r.kappa)});
    }
    return t;
}

CsvTable sigma_table(const SpectrumResult& spectrum) {
    CsvTable t;
    t.header = {"k", "sigma"};
    for (std::size_t k = 0; k < spectrum.sigma.size(); ++k) {
        t.rows.push_back({std::to_string(k + 1), format_double(spectrum.sigma[k])});
    }
    return t;
}

// --- orchestration -------------------------------------------------------------

namespace {

Direction resolve_direction(const std::string& spec, const SpectrumResult& spectrum,
                            std::size_t dim) {
    if (spec.empty()) throw ConfigError("empty direction spec");
    if (spec[0] == 'v') {
        const std::uint64_t k = parse_u64(spec.substr(1));
        if (k < 1 || k > dim) throw ConfigError("direction '" + spec + "' out of range");
        return singular_direction(spectrum, static_cast<std::size_t>(k - 1));
    }
    if (spec[0] == 'e') {
        const std::uint64_t i = parse_u64(spec.substr(1));
        if (i >= dim) throw ConfigError("direction '" + spec + "' out of range");
        return coordinate_direction(dim, static_cast<std::size_t>(i));
    }
    if (spec.rfind("rand", 0) == 0) {
        return random_direction(dim, parse_u64(spec.substr(4)));
    }
    throw ConfigError("bad direction spec '" + spec + "' (expected v<k>|e<i>|rand<seed>)");
}

std::vector<Direction> resolve_directions(const std::vector<std::string>& specs,
                                          const SpectrumResult& spectrum, std::size_t dim) {
    if (specs.empty()) throw ConfigError("no directions configured");
    std::vector<Direction> out;
    out.reserve(specs.size());
    for (const auto& s : specs) out.push_back(resolve_direction(s, spectrum, dim));
    return out;
}

struct ProbeSetup {
    std::unique_ptr<Subject> subject;    // probe precision
    std::unique_ptr<Subject> reference;  // Fp64 twin for the Jacobian
    std::vector<double> x0;
    std::uint64_t seed = 0;              // model or oracle seed, for the cache key
    // keep owners alive
    std::shared_ptr<ToyModel> model, ref_model;
    std::shared_ptr<LinearOracle> oracle;
};

std::size_t resolve_position(const RunConfig& cfg) {
    if (cfg.base.position == "last") return cfg.model.seq_len - 1;
    const std::uint64_t p = parse_u64(cfg.base.position);
    if (p >= cfg.model.seq_len) {
        throw ConfigError("base.position out of range for seq_len");
    }
    return static_cast<std::size_t>(p);
}

ProbeSetup build_setup(const RunConfig& cfg) {
    ProbeSetup s;
    if (cfg.subject == "model") {
        try {
            cfg.model.validate();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("model config: ") + e.what());
        }
        s.model = std::make_shared<ToyModel>(cfg.model);
        s.ref_model = std::make_shared<ToyModel>(cfg.model.with_precision(PrecisionMode::Fp64));
        EmbeddingPoint pt =
            make_embedding_point(cfg.model, cfg.base.seed, cfg.base.scale, cfg.base.decades);
        pt.perturb_position = resolve_position(cfg);
        s.subject = std::make_unique<ModelSubject>(*s.model, pt);
        s.reference = std::make_unique<ModelSubject>(*s.ref_model, pt);
        s.seed = cfg.model.seed;
    } else {
        s.oracle = std::make_shared<LinearOracle>(LinearOracle::log_spaced(
            cfg.oracle.dim, cfg.oracle.sigma_min, cfg.oracle.sigma_max, cfg.oracle.seed,
            cfg.oracle.vocab_size));
        std::vector<double> base = make_probe_vector(cfg.oracle.dim, cfg.base.seed,
                                                     cfg.base.scale, cfg.base.decades);
        s.subject = std::make_unique<OracleSubject>(*s.oracle, base, cfg.model.precision,
                                                    cfg.model.reduction);
        s.reference = std::make_unique<OracleSubject>(*s.oracle, base, PrecisionMode::Fp64,
                                                      cfg.model.reduction);
        s.seed = cfg.oracle.seed;
    }
    s.x0 = s.subject->base();
    return s;
}

SpectrumResult obtain_spectrum(const RunConfig& cfg, const ProbeSetup& setup) {
    const double step =
        cfg.spectrum.step > 0.0 ? cfg.spectrum.step : default_fd_step(setup.x0);
    const SpectrumKey key{setup.seed, hash_doubles(setup.x0), step};
    if (!cfg.spectrum.cache.empty()) {
        SpectrumResult cached;
        if (load_spectrum(cfg.spectrum.cache, key, cached)) return cached;
    }
    SpectrumResult spectrum = compute_spectrum(*setup.reference, setup.x0, step);
    if (!cfg.spectrum.cache.empty()) {
        save_spectrum(cfg.spectrum.cache, spectrum, key);
    }
    return spectrum;
}

json thresholds_json(const RegimeThresholds& t) {
    return json{{"c_chaos", t.c_chaos}, {"signal_lo", t.signal_lo}, {"signal_hi", t.signal_hi}};
}

void write_manifest(const std::filesystem::path& path, const RunConfig& cfg,
                    const CsvTable& table, double wall_seconds, const json& extra) {
    json m;
    m["artifact_version"] = std::string(kArtifactVersion);
    m["schema_version"] = cfg.schema_version;
    m["probe"] = cfg.probe;
    m["subject"] = cfg.subject;
    m["precision"] = std::string(to_string(cfg.model.precision));
    m["reduction"] = to_string(cfg.model.reduction);
    m["thresholds"] = thresholds_json(cfg.thresholds);
    m["record_count"] = table.rows.size();
    m["csv_columns"] = table.header;
    m["wall_time_seconds"] = wall_seconds;
    m["config_echo"] = serialize_run_config(cfg);
    if (!extra.is_null()) m["result_summary"] = extra;
    write_file_atomic(path, m.dump(2) + "\n");
}

} // namespace

std::size_t run_probe(const RunConfig& original, const CliOverrides& overrides) {
    RunConfig cfg = original;
    if (overrides.precision) cfg.model.precision = *overrides.precision;
    if (overrides.overwrite) cfg.overwrite = true;

    if (std::find(probe_names().begin(), probe_names().end(), cfg.probe) ==
        probe_names().end()) {
        throw ConfigError("unknown probe '" + cfg.probe + "'");
    }
    std::filesystem::create_directories(cfg.output_dir);
    const std::filesystem::path csv_path = cfg.output_dir / (cfg.probe + ".csv");
    const std::filesystem::path manifest_path =
        cfg.output_dir / (cfg.probe + ".manifest.json");
    const std::filesystem::path svg_path = cfg.output_dir / (cfg.probe + ".svg");
    if (std::filesystem::exists(csv_path) && !cfg.overwrite) {
        throw ConfigError("output file exists (pass overwrite): " + csv_path.string());
    }

    const auto t0 = std::chrono::steady_clock::now();
    ProbeSetup setup = build_setup(cfg);
    const SpectrumResult spectrum = obtain_spectrum(cfg, setup);
    const Subject& subject = *setup.subject;
    const std::size_t dim = subject.dim();

    CsvTable table;
    json extra;
    PlotKind kind = PlotKind::EpsSweep;

    if (cfg.probe == "directional_sweep") {
        SweepConfig sc;
        sc.eps_grid = log_eps_grid(cfg.sweep.eps_min, cfg.sweep.eps_max, cfg.sweep.points);
        sc.directions = resolve_directions(cfg.sweep.directions, spectrum, dim);
        sc.base = setup.x0;
        sc.thresholds = cfg.thresholds;
        table = sweep_table(directional_sweep(subject, spectrum, sc));
        kind = PlotKind::EpsSweep;
    } else if (cfg.probe == "layerwise_gain") {
        const auto dirs = resolve_directions(cfg.gain.directions, spectrum, dim);
        table = gain_table(layerwise_gain(subject, setup.x0, cfg.gain.eps, dirs));
        kind = PlotKind::LayerGain;
    } else if (cfg.probe == "instability_sweep") {
        const Direction dir = resolve_direction(cfg.inst.direction, spectrum, dim);
        std::vector<double> eps_seq(cfg.inst.points);
        for (std::size_t i = 0; i < eps_seq.size(); ++i) {
            eps_seq[i] = cfg.inst.eps_start + static_cast<double>(i) * cfg.inst.delta;
        }
        const InstabilityResult r = instability_sweep(subject, setup.x0, dir.v, eps_seq);
        table = instability_table(r);
        extra = json{{"mean_inst", r.summary.mean_inst},
                     {"median_inst", r.summary.median_inst},
                     {"max_drift", r.summary.max_drift},
                     {"mean_margin", r.summary.mean_margin},
                     {"min_margin", r.summary.min_margin}};
        kind = PlotKind::Staircase;
    } else if (cfg.probe == "micro_continuity") {
        const Direction dir = resolve_direction(cfg.micro.direction, spectrum, dim);
        const MicroContinuityResult r = micro_continuity(subject, setup.x0, dir.v,
                                                         cfg.micro.start_s, cfg.micro.steps,
                                                         cfg.micro.delta);
        table = micro_table(r);
        extra = json{{"stall_count", r.stall_count}, {"jump_count", r.jump_count}};
        kind = PlotKind::Staircase;
    } else if (cfg.probe == "decision_map") {
        const Direction di = resolve_direction(cfg.map.dir_i, spectrum, dim);
        const Direction dj = resolve_direction(cfg.map.dir_j, spectrum, dim);
        std::vector<double> x0 = setup.x0;
        if (cfg.map.near_tie) {
            NearTieParams nt;
            nt.tie_tolerance = cfg.map.tie_tolerance;
            x0 = find_near_tie(subject, x0, spectrum, nt);
        }
        const DecisionMapResult r =
            decision_map(subject, x0, di.v, dj.v, cfg.map.range, cfg.map.step);
        table = decision_table(r);
        extra = json{{"flip_frequency", r.metrics.flip_frequency},
                     {"fragmentation", r.metrics.fragmentation},
                     {"crossing_density", r.metrics.crossing_density},
                     {"token_a", r.token_a},
                     {"token_b", r.token_b},
                     {"overflow_cells", r.overflow_cells}};
        kind = PlotKind::DecisionMap;
    } else if (cfg.probe == "angular_boundary") {
        BoundarySearchParams bp;
        bp.s_init = cfg.boundary.s_init;
        bp.s_cap = cfg.boundary.s_cap;
        const auto results = angular_boundary(subject, setup.x0, spectrum.v.at(0),
                                              spectrum.v.at(1), cfg.boundary.angles, bp);
        table = boundary_table(results);
        kind = PlotKind::AngularPolar;
    } else if (cfg.probe == "spectrum_boundary") {
        BoundarySearchParams bp;
        bp.s_init = cfg.boundary.s_init;
        bp.s_cap = cfg.boundary.s_cap;
        table = boundary_table(spectrum_boundary(subject, setup.x0, spectrum, bp));
        kind = PlotKind::SpectrumScatter;
    } else if (cfg.probe == "noise_averaged_kappa") {
        const Direction dir = resolve_direction(cfg.kappa.direction, spectrum, dim);
        std::vector<KappaRecord> records;
        for (std::size_t n : cfg.kappa.samples) {
            for (std::size_t rep = 0; rep < cfg.kappa.repeats; ++rep) {
                KappaRecord rec;
                rec.n_samples = n;
                rec.repeat = rep;
                rec.noise_seed = derive_seed(cfg.kappa.seed, rep);
                rec.kappa = noise_averaged_kappa(subject, setup.x0, dir.v, cfg.kappa.eps, n,
                                                 cfg.kappa.noise, rec.noise_seed);
                records.push_back(rec);
            }
        }
        table = kappa_table(records);
        kind = PlotKind::Convergence;
    }

    write_csv(csv_path, table);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(manifest_path, cfg, table, wall, extra);
    if (cfg.plot) {
        write_file_atomic(svg_path, render_svg(table, kind));
    }
    return table.rows.size();
}

std::size_t run_spectrum(const RunConfig& original, const CliOverrides& overrides) {
    RunConfig cfg = original;
    if (overrides.precision) cfg.model.precision = *overrides.precision;
    if (overrides.overwrite) cfg.overwrite = true;

    std::filesystem::create_directories(cfg.output_dir);
    const std::filesystem::path csv_path = cfg.output_dir / "spectrum.csv";
    const std::filesystem::path manifest_path = cfg.output_dir / "spectrum.manifest.json";
    if (std::filesystem::exists(csv_path) && !cfg.overwrite) {
        throw ConfigError("output file exists (pass overwrite): " + csv_path.string());
    }

    const auto t0 = std::chrono::steady_clock::now();
    RunConfig keyed = cfg;
    if (keyed.spectrum.cache.empty()) {
        keyed.spectrum.cache = (cfg.output_dir / "spectrum.bin").string();
    }
    ProbeSetup setup = build_setup(keyed);
    const SpectrumResult spectrum = obtain_spectrum(keyed, setup);
    const CsvTable table = sigma_table(spectrum);
    write_csv(csv_path, table);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json extra = json{{"fd_step", spectrum.fd_step},
                      {"sigma_max", spectrum.sigma_max()},
                      {"sigma_min", spectrum.sigma_min()},
                      {"cache", keyed.spectrum.cache}};
    RunConfig echo = keyed;
    echo.probe = echo.probe.empty() ? "spectrum" : echo.probe;
    write_manifest(manifest_path, echo, table, wall, extra);
    return table.rows.size();
}

} // namespace chaoscope
