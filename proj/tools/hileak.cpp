// hileak: detect, root-cause and fix higher-order leakage in Thumb assembly.

#include "hileak/combiner.hpp"
#include "hileak/error.hpp"
#include "hileak/experiment.hpp"
#include "hileak/isa.hpp"
#include "hileak/model.hpp"
#include "hileak/parallel.hpp"
#include "hileak/pipeline.hpp"
#include "hileak/rewriter.hpp"
#include "hileak/rootcause.hpp"
#include "hileak/tracestore.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hileak;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitResidual = 2;

struct Options {
    std::string kernel;
    std::string model;
    std::string input;
    std::string leaks;
    std::string causes;
    std::string out = ".";
    std::string fixed_hex;
    std::string schedule;
    std::string mode = "fixed-random";
    std::vector<std::uint64_t> columns;
    int order = 2;
    std::size_t window = 50;
    double alpha = 1e-5;
    std::size_t traces = 20000;
    unsigned threads = 0;
    unsigned splits = 0;
    std::uint64_t seed = 0;
    double noise = 0.25;
    std::size_t experiments = 50;
    std::size_t rootcause_traces = 200000;
    std::size_t max_iterations = 20;
    std::size_t padding = 9;
    bool components = false;
    bool quiet = false;
};

std::vector<std::uint8_t> parse_hex(const std::string &hex) {
    std::string digits;
    for (char c : hex)
        if (!std::isspace(static_cast<unsigned char>(c))) digits += c;
    if (digits.rfind("0x", 0) == 0) digits.erase(0, 2);
    if (digits.size() % 2) throw std::invalid_argument("hex string needs an even number of digits");
    std::vector<std::uint8_t> bytes;
    for (std::size_t i = 0; i < digits.size(); i += 2) {
        std::size_t used = 0;
        unsigned v = std::stoul(digits.substr(i, 2), &used, 16);
        if (used != 2) throw std::invalid_argument("bad hex digit in '" + hex + "'");
        bytes.push_back(static_cast<std::uint8_t>(v));
    }
    return bytes;
}

std::vector<std::size_t> parse_schedule(const std::string &text, std::size_t fallback) {
    if (text.empty()) return {fallback};
    if (text == "default") return default_schedule();
    if (text == "desk") return desk_schedule();
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        const auto v = std::stoull(item, &used);
        if (used != item.size() || v == 0) throw std::invalid_argument("bad trace count '" + item + "'");
        out.push_back(v);
    }
    return out;
}

LeakageModel model_of(const Options &o) { return o.model.empty() ? default_model() : load_model(o.model); }

Program kernel_of(const Options &o) {
    ParseOptions po;
    po.padding_length = o.padding;
    return load_program(o.kernel, po);
}

json read_json(const fs::path &p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw FormatError(p.string() + ": " + e.what());
    }
}

void write_text(const fs::path &p, const std::string &text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
    if (!out) throw Error("write failed: " + p.string());
}

CombinerConfig combiner_of(const Options &o) {
    CombinerConfig c;
    c.order = o.order;
    c.window = o.window;
    c.alpha = o.alpha;
    c.threads = o.threads;
    c.splits = o.splits;
    return c;
}

PipelineConfig pipeline_of(const Options &o) {
    PipelineConfig p;
    p.combiner = combiner_of(o);
    p.schedule = parse_schedule(o.schedule, o.traces);
    p.noise_sigma_pct = o.noise;
    p.seed = o.seed;
    p.fixed_secret = parse_hex(o.fixed_hex);
    p.max_iterations = o.max_iterations;
    p.rootcause_traces = o.rootcause_traces;
    p.rootcause.mc_experiments = o.experiments;
    p.threads = o.threads;
    if (!o.quiet) p.log = [](const std::string &m) { std::cerr << m << '\n'; };
    return p;
}

int cmd_emulate(const Options &o) {
    const Program kernel = kernel_of(o);
    const LeakageModel model = model_of(o);
    ExperimentSpec spec;
    spec.kernel = kernel;
    spec.order = o.order;
    spec.fixed_secret = parse_hex(o.fixed_hex);
    spec.n_traces = o.traces;
    spec.noise_sigma_pct = o.noise;
    spec.seed = o.seed;
    spec.mode = o.mode == "all-random" ? InputMode::AllRandom : InputMode::FixedVsRandom;
    spec.record_components = o.components;
    spec.component_columns = o.columns;
    spec.threads = o.threads;
    ExperimentResult r = run_experiment(spec, model);

    const fs::path dir = o.out;
    fs::create_directories(dir);
    write_traceset(r.traces, dir / "traces.hltr");
    DatasetManifest m;
    m.kernel_path = o.kernel;
    m.order = o.order;
    m.fixed_input = spec.fixed_secret;
    m.mask_width = parse_harness(kernel).secret_bytes();
    m.trace_count = o.traces;
    m.noise = {o.noise, o.seed};
    m.creation_seed = o.seed;
    m.trace_file = "traces.hltr";
    if (o.components) {
        write_components(r.components, dir / "components.hlcm");
        m.component_file = "components.hlcm";
    }
    write_manifest(m, dir / "manifest.json");
    std::cout << r.traces.n_traces << " traces x " << r.traces.n_samples << " samples -> " << dir.string() << '\n';
    return kExitOk;
}

int cmd_analyze(const Options &o) {
    TraceFile file(o.input);
    const CombinerConfig cfg = combiner_of(o);
    AnalysisResult r = multivariate_ttest(file, cfg);

    const fs::path dir = o.out;
    fs::create_directories(dir);
    json leaks = json::array();
    for (const auto &l : r.leaks) leaks.push_back(l);
    json j = {{"order", o.order},
              {"traces", r.n_traces},
              {"samples", r.heatmap.n_samples},
              {"indices", r.n_indices},
              {"threshold", r.threshold},
              {"dof", r.dof_used},
              {"threshold_applied", r.threshold_applied},
              {"leaks", leaks}};
    write_text(dir / "leaks.json", j.dump(2) + "\n");
    write_heatmap_csv(r.heatmap, dir / "heatmap.csv");
    if (o.order == 2) write_heatmap_pgm(r.heatmap, r.threshold, dir / "heatmap.pgm");
    std::cout << r.leaks.size() << " leak(s) above " << r.threshold << " in " << r.n_indices << " indices\n";
    if (!r.threshold_applied)
        std::cout << "fewer than " << kMinTracesForThreshold << " traces: no leaks reported\n";
    return kExitOk;
}

int cmd_rootcause(const Options &o) {
    const Program kernel = kernel_of(o);
    const LeakageModel model = model_of(o);
    const json lj = read_json(o.leaks);
    std::vector<LeakPoint> leaks;
    for (const auto &l : lj.at("leaks")) leaks.push_back(l.get<LeakPoint>());
    const double threshold = lj.at("threshold").get<double>();
    const std::size_t traces = lj.value("traces", o.traces);

    PipelineConfig cfg = pipeline_of(o);
    std::vector<RootCause> causes = find_root_causes(kernel, model, cfg, leaks, traces, o.seed, threshold);

    json out = json::array();
    const auto names = model.names();
    for (const auto &c : causes) out.push_back(to_json(c, names));
    write_text(fs::path(o.out) / "causes.json", json{{"threshold", threshold}, {"causes", out}}.dump(2) + "\n");
    for (const auto &c : causes) {
        std::cout << to_string(c.leak.index) << ' ' << method_name(c.method) << ':';
        for (const auto &cu : c.culprits) std::cout << ' ' << names.at(cu.component) << '@' << cu.sample;
        std::cout << '\n';
    }
    return kExitOk;
}

int cmd_fix(const Options &o) {
    const Program kernel = kernel_of(o);
    const LeakageModel model = model_of(o);
    const json cj = read_json(o.causes);
    std::vector<RootCause> causes;
    for (const auto &c : cj.at("causes")) causes.push_back(root_cause_from_json(c));

    const RewritePlan plan = plan_fixes(kernel, causes, model);
    const Program fixed = apply_fixes(kernel, plan);
    const fs::path dir = o.out;
    json actions = json::array();
    for (const auto &a : plan.actions) actions.push_back(a);
    write_text(dir / "plan.json", json{{"actions", actions}, {"warnings", plan.warnings}}.dump(2) + "\n");
    write_text(dir / "fixed.s", emit_program(fixed));
    write_text(dir / "overhead.txt",
               overhead_table({overhead(kernel, fixed, {}, fs::path(o.kernel).stem().string())}));
    for (const auto &w : plan.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << plan.actions.size() << " barrier(s) inserted -> " << (dir / "fixed.s").string() << '\n';
    return kExitOk;
}

int cmd_run(const Options &o) {
    const Program kernel = kernel_of(o);
    const LeakageModel model = model_of(o);
    const PipelineConfig cfg = pipeline_of(o);
    const RunResult run = run_loop(kernel, model, cfg);
    write_report({&run, &model, &cfg, fs::path(o.kernel).stem().string()}, o.out);
    for (const auto &w : run.warnings) std::cerr << "warning: " << w << '\n';
    const auto &last = run.iterations.back();
    std::cout << run.iterations.size() << " iteration(s); final count " << last.traces << " traces, "
              << last.discovered << " leak(s); overhead " << run.overhead.before << " -> " << run.overhead.after
              << " cycles\n";
    if (run.residual) {
        std::cout << "residual leakage at";
        for (const auto &l : run.residual_leaks) std::cout << ' ' << to_string(l.index);
        std::cout << '\n';
        return kExitResidual;
    }
    return kExitOk;
}

int cmd_report(const Options &o) {
    const json r = read_json(o.input);
    std::ostringstream os;
    os << "kernel: " << r.value("kernel", std::string{}) << '\n';
    os << "iteration  traces  samples  threshold  discovered  fixed  remaining  emulation_s  rootcause_s\n";
    for (const auto &it : r.at("iterations")) {
        os << std::setw(9) << it.at("iteration").get<std::size_t>() << std::setw(8) << it.at("traces").get<std::size_t>()
           << std::setw(9) << it.at("samples").get<std::size_t>() << std::setw(11) << std::fixed
           << std::setprecision(3) << it.at("threshold").get<double>() << std::setw(12)
           << it.at("discovered").get<std::size_t>() << std::setw(7) << it.at("fixed").get<std::size_t>()
           << std::setw(11) << it.at("remaining").get<std::size_t>() << std::setw(13) << std::setprecision(2)
           << it.at("seconds").at("emulation").get<double>() << std::setw(13)
           << it.at("seconds").at("rootcause").get<double>() << '\n';
    }
    const auto &ov = r.at("overhead");
    Overhead row{ov.at("name").get<std::string>(), ov.at("before_cycles").get<std::uint64_t>(),
                 ov.at("after_cycles").get<std::uint64_t>(), ov.at("increase_pct").get<double>()};
    os << '\n' << overhead_table({row});
    os << "residual: " << (r.at("residual").get<bool>() ? "yes" : "no") << '\n';
    std::cout << os.str();
    if (!o.out.empty() && o.out != ".") write_text(fs::path(o.out) / "summary.txt", os.str());
    return kExitOk;
}

void add_common(CLI::App *sub, Options &o) {
    sub->add_option("--model", o.model, "Leakage model JSON (default: built-in 28-component model)")
        ->check(CLI::ExistingFile);
    sub->add_option("--order", o.order, "Analysis order")->check(CLI::IsMember({2, 3}));
    sub->add_option("--threads", o.threads, "Worker threads")->envname("HILEAK_THREADS")->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--padding", o.padding, "Instructions per '; nop padding' line");
    sub->add_flag("--quiet", o.quiet, "No progress messages");
}

void add_analysis(CLI::App *sub, Options &o) {
    sub->add_option("--window", o.window, "Order-3 window in samples")->check(CLI::PositiveNumber);
    sub->add_option("--alpha", o.alpha, "Family-wise false-positive rate")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--splits", o.splits, "Sample blocks S for the work partition");
}

void add_emulation(CLI::App *sub, Options &o) {
    sub->add_option("--traces", o.traces, "Number of traces")->check(CLI::PositiveNumber);
    sub->add_option("--noise-sigma-pct", o.noise, "Gaussian noise sigma in percent of trace amplitude")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--fixed", o.fixed_hex, "Fixed secret as hex (default zeros)");
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Higher-order leakage detection and fixing for Thumb assembly"};
    app.require_subcommand(1);
    Options o;

    auto *emulate = app.add_subcommand("emulate", "Emulate fixed-vs-random power traces of a kernel");
    emulate->add_option("--kernel", o.kernel, "Assembly kernel")->required()->check(CLI::ExistingFile);
    add_common(emulate, o);
    add_emulation(emulate, o);
    emulate->add_option("--mode", o.mode, "Input classes")->check(CLI::IsMember({"fixed-random", "all-random"}));
    emulate->add_flag("--components", o.components, "Also write the per-component matrix");
    emulate->add_option("--columns", o.columns, "Sample points to record components for (default all)");

    auto *analyze = app.add_subcommand("analyze", "Multivariate fixed-vs-random t-test of a trace file");
    analyze->add_option("--input", o.input, "Trace file")->required()->check(CLI::ExistingFile);
    add_common(analyze, o);
    add_analysis(analyze, o);

    auto *rootcause = app.add_subcommand("rootcause", "Find the model components behind detected leaks");
    rootcause->add_option("--kernel", o.kernel, "Assembly kernel")->required()->check(CLI::ExistingFile);
    rootcause->add_option("--leaks", o.leaks, "leaks.json from analyze")->required()->check(CLI::ExistingFile);
    add_common(rootcause, o);
    add_emulation(rootcause, o);
    rootcause->add_option("--experiments", o.experiments, "Monte-Carlo experiments per leak")
        ->check(CLI::PositiveNumber);
    rootcause->add_option("--rootcause-traces", o.rootcause_traces, "Cap on emulated traces")
        ->check(CLI::PositiveNumber);

    auto *fix = app.add_subcommand("fix", "Insert barriers for root-caused leaks");
    fix->add_option("--kernel", o.kernel, "Assembly kernel")->required()->check(CLI::ExistingFile);
    fix->add_option("--causes", o.causes, "causes.json from rootcause")->required()->check(CLI::ExistingFile);
    add_common(fix, o);

    auto *run = app.add_subcommand("run", "Iterate detection, root-cause analysis and fixing");
    run->add_option("--kernel", o.kernel, "Assembly kernel")->required()->check(CLI::ExistingFile);
    add_common(run, o);
    add_analysis(run, o);
    add_emulation(run, o);
    run->add_option("--schedule", o.schedule, "Comma-separated trace counts, or 'default' / 'desk'");
    run->add_option("--experiments", o.experiments, "Monte-Carlo experiments per leak")->check(CLI::PositiveNumber);
    run->add_option("--rootcause-traces", o.rootcause_traces, "Cap on traces for root-cause analysis")
        ->check(CLI::PositiveNumber);
    run->add_option("--max-iterations", o.max_iterations, "Fix iterations before giving up")
        ->check(CLI::PositiveNumber);

    auto *report = app.add_subcommand("report", "Summarise a run report");
    report->add_option("--input", o.input, "report.json from run")->required()->check(CLI::ExistingFile);
    report->add_option("--out", o.out, "Directory for summary.txt");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e) == 0 ? kExitOk : kExitError;
    }

    try {
        if (*emulate) return cmd_emulate(o);
        if (*analyze) return cmd_analyze(o);
        if (*rootcause) return cmd_rootcause(o);
        if (*fix) return cmd_fix(o);
        if (*run) return cmd_run(o);
        if (*report) return cmd_report(o);
    } catch (const ParseError &e) {
        std::cerr << "hileak: " << o.kernel << ": " << e.what() << '\n';
    } catch (const std::exception &e) {
        std::cerr << "hileak: " << e.what() << '\n';
    }
    return kExitError;
}
