#include "hileak/pipeline.hpp"

#include "hileak/error.hpp"
#include "hileak/rng.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

namespace hileak {
namespace {

constexpr std::uint64_t kCompanionTag = 0x636f6d70616e696fULL;
constexpr std::uint64_t kRootCauseTag = 0x726f6f74ULL;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void note(const PipelineConfig &cfg, const std::string &msg) {
    if (cfg.log) cfg.log(msg);
}

CombinerConfig combiner_for(const PipelineConfig &cfg, std::size_t n_samples, std::vector<std::string> *warnings) {
    CombinerConfig c = cfg.combiner;
    if (c.threads == 0) c.threads = cfg.threads;
    if (c.order == 3 && c.window > n_samples) {
        if (warnings) {
            std::ostringstream os;
            os << "window " << c.window << " exceeds " << n_samples << " samples; clamped";
            warnings->push_back(os.str());
        }
        c.window = n_samples;
    }
    return c;
}

ExperimentSpec base_spec(const Program &kernel, const PipelineConfig &cfg) {
    ExperimentSpec spec;
    spec.kernel = kernel;
    spec.order = cfg.combiner.order;
    spec.fixed_secret = cfg.fixed_secret;
    spec.threads = cfg.threads;
    return spec;
}

} // namespace

std::vector<std::size_t> default_schedule() {
    std::vector<std::size_t> s;
    for (std::size_t n = 20000; n <= 500000; n += 20000) s.push_back(n);
    return s;
}

std::vector<std::size_t> desk_schedule() {
    std::vector<std::size_t> s;
    for (std::size_t n = 5000; n <= 50000; n += 5000) s.push_back(n);
    return s;
}

AnalysisResult detect(const Program &kernel, const LeakageModel &model, const PipelineConfig &cfg,
                      std::size_t traces, std::uint64_t seed, double *emulation_seconds) {
    auto start = Clock::now();
    ExperimentSpec spec = base_spec(kernel, cfg);
    spec.n_traces = traces;
    spec.noise_sigma_pct = cfg.noise_sigma_pct;
    spec.seed = seed;
    spec.record_components = false;
    ExperimentResult exp = run_experiment(spec, model);
    if (emulation_seconds) *emulation_seconds = seconds_since(start);
    return multivariate_ttest(exp.traces, combiner_for(cfg, exp.traces.n_samples, nullptr));
}

std::vector<RootCause> find_root_causes(const Program &kernel, const LeakageModel &model, const PipelineConfig &cfg,
                                        const std::vector<LeakPoint> &leaks, std::size_t traces, std::uint64_t seed,
                                        double threshold) {
    std::vector<RootCause> causes;
    causes.reserve(leaks.size());
    const std::size_t n = std::min(traces, cfg.rootcause_traces);
    const std::size_t max_cols = std::max<std::size_t>(cfg.max_columns_per_batch, 3);

    std::size_t next = 0;
    while (next < leaks.size()) {
        // Batch consecutive leaks while their point union stays small.
        std::set<std::uint64_t> cols;
        std::size_t end = next;
        while (end < leaks.size()) {
            std::set<std::uint64_t> grown = cols;
            for (auto p : leaks[end].index.view()) grown.insert(p);
            if (grown.size() > max_cols && end > next) break;
            cols = std::move(grown);
            ++end;
        }

        ExperimentSpec spec = base_spec(kernel, cfg);
        spec.n_traces = n;
        spec.seed = seed;
        spec.record_components = true;
        spec.component_columns.assign(cols.begin(), cols.end());
        ExperimentResult main = run_experiment(spec, model);

        spec.mode = InputMode::AllRandom;
        spec.seed = derive_seed(seed, kCompanionTag);
        ExperimentResult companion = run_experiment(spec, model);

        for (std::size_t k = next; k < end; ++k) {
            RootCauseConfig rc = cfg.rootcause;
            rc.threshold = threshold;
            rc.seed = derive_seed(seed, kRootCauseTag + k);
            if (rc.threads == 0) rc.threads = cfg.threads;
            causes.push_back(analyze_leak(main.components, companion.components, leaks[k], rc));
        }
        next = end;
    }
    return causes;
}

RunResult run_loop(const Program &kernel, const LeakageModel &model, const PipelineConfig &cfg) {
    if (cfg.schedule.empty()) throw std::invalid_argument("empty trace schedule");
    for (std::size_t i = 1; i < cfg.schedule.size(); ++i)
        if (cfg.schedule[i] <= cfg.schedule[i - 1])
            throw std::invalid_argument("trace schedule must be strictly increasing");
    if (cfg.max_iterations == 0) throw std::invalid_argument("max_iterations must be positive");

    RunResult run;
    run.original = kernel;
    run.final_program = kernel;
    run.component_names = model.names();
    parse_harness(kernel); // fail before any emulation on a bad layout

    const std::size_t last = cfg.schedule.size() - 1;
    std::size_t step = 0;
    bool finished = false;

    for (std::size_t it = 0; it < cfg.max_iterations && !finished; ++it) {
        IterationRecord rec;
        rec.iteration = it + 1;
        rec.traces = cfg.schedule[step];
        const std::uint64_t seed = derive_seed(cfg.seed, it);

        auto start = Clock::now();
        ExperimentSpec spec = base_spec(run.final_program, cfg);
        spec.n_traces = rec.traces;
        spec.noise_sigma_pct = cfg.noise_sigma_pct;
        spec.seed = seed;
        spec.record_components = false;
        ExperimentResult exp = run_experiment(spec, model);
        rec.emulation_seconds = seconds_since(start);

        start = Clock::now();
        CombinerConfig ccfg = combiner_for(cfg, exp.traces.n_samples, &run.warnings);
        rec.window = ccfg.window;
        AnalysisResult analysis = multivariate_ttest(exp.traces, ccfg);
        exp = {};
        rec.analysis_seconds = seconds_since(start);
        rec.n_samples = analysis.heatmap.n_samples;
        rec.threshold = analysis.threshold;
        rec.dof_used = analysis.dof_used;
        rec.leaks = analysis.leaks;
        rec.discovered = rec.leaks.size();

        std::ostringstream msg;
        msg << "iteration " << rec.iteration << ": " << rec.traces << " traces, " << rec.discovered
            << " leaks above " << rec.threshold;
        note(cfg, msg.str());

        if (!run.first_analysis) run.first_analysis = analysis;
        run.last_analysis = std::move(analysis);

        if (rec.leaks.empty()) {
            run.iterations.push_back(std::move(rec));
            if (step == last) finished = true;
            else ++step;
            continue;
        }

        start = Clock::now();
        rec.causes = find_root_causes(run.final_program, model, cfg, rec.leaks, rec.traces, seed, rec.threshold);
        rec.rootcause_seconds = seconds_since(start);

        rec.plan = plan_fixes(run.final_program, rec.causes, model, cfg.rules);
        for (const auto &w : rec.plan.warnings) run.warnings.push_back("iteration " + std::to_string(rec.iteration) + ": " + w);

        std::vector<CombinationIndex> covered;
        for (const auto &a : rec.plan.actions) covered.insert(covered.end(), a.leaks.begin(), a.leaks.end());
        for (const auto &l : rec.leaks)
            rec.fixed += std::find(covered.begin(), covered.end(), l.index) != covered.end() ? 1 : 0;
        rec.remaining = rec.discovered - rec.fixed;

        if (!rec.plan.empty()) {
            run.final_program = apply_fixes(run.final_program, rec.plan);
            note(cfg, "  applied " + std::to_string(rec.plan.actions.size()) + " barrier(s)");
            // Fixes at the largest count are re-verified at that count.
            if (step < last) ++step;
        } else if (step == last) {
            finished = true;
        } else {
            ++step;
        }
        run.iterations.push_back(std::move(rec));
    }

    const IterationRecord &final_rec = run.iterations.back();
    if (!final_rec.leaks.empty()) {
        run.residual = true;
        run.residual_leaks = final_rec.leaks;
        if (!finished)
            run.warnings.push_back("stopped after " + std::to_string(cfg.max_iterations) +
                                   " iterations; last fixes were not re-verified");
    }
    run.overhead = overhead(run.original, run.final_program, cfg.cycle_table);
    return run;
}

nlohmann::json report_json(const ReportInputs &in) {
    using nlohmann::json;
    if (!in.run || !in.model || !in.config) throw std::invalid_argument("incomplete report inputs");
    const RunResult &run = *in.run;
    const PipelineConfig &cfg = *in.config;

    json j;
    j["kernel"] = in.kernel_name;
    j["model"] = {{"name", in.model->name}, {"description", in.model->description},
                  {"components", in.model->names()}};
    j["config"] = {{"order", cfg.combiner.order},
                   {"window", cfg.combiner.window},
                   {"alpha", cfg.combiner.alpha},
                   {"schedule", cfg.schedule},
                   {"noise_sigma_pct", cfg.noise_sigma_pct},
                   {"seed", cfg.seed},
                   {"max_iterations", cfg.max_iterations},
                   {"rootcause_traces", cfg.rootcause_traces},
                   {"mc_experiments", cfg.rootcause.mc_experiments},
                   {"tost_alpha", cfg.rootcause.tost_alpha},
                   {"cycle_table", cfg.cycle_table}};

    json iters = json::array();
    for (const auto &rec : run.iterations) {
        json leaks = json::array();
        for (const auto &l : rec.leaks) leaks.push_back(l);
        json causes = json::array();
        for (const auto &c : rec.causes) causes.push_back(to_json(c, run.component_names));
        json actions = json::array();
        for (const auto &a : rec.plan.actions) actions.push_back(a);
        iters.push_back({{"iteration", rec.iteration},
                         {"traces", rec.traces},
                         {"samples", rec.n_samples},
                         {"window", rec.window},
                         {"threshold", rec.threshold},
                         {"dof", rec.dof_used},
                         {"discovered", rec.discovered},
                         {"fixed", rec.fixed},
                         {"remaining", rec.remaining},
                         {"seconds", {{"emulation", rec.emulation_seconds},
                                      {"analysis", rec.analysis_seconds},
                                      {"rootcause", rec.rootcause_seconds}}},
                         {"leaks", leaks},
                         {"root_causes", causes},
                         {"actions", actions}});
    }
    j["iterations"] = iters;

    json residual = json::array();
    for (const auto &l : run.residual_leaks) residual.push_back(l);
    j["residual"] = run.residual;
    j["residual_leaks"] = residual;
    Overhead o = run.overhead;
    o.name = in.kernel_name;
    j["overhead"] = o;
    j["warnings"] = run.warnings;
    return j;
}

void write_report(const ReportInputs &in, const std::filesystem::path &dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const RunResult &run = *in.run;

    auto write_text = [](const fs::path &p, const std::string &text) {
        std::ofstream out(p, std::ios::binary);
        if (!out) throw Error("cannot write " + p.string());
        out << text;
        if (!out) throw Error("write failed: " + p.string());
    };

    write_text(dir / "report.json", report_json(in).dump(2) + "\n");
    write_text(dir / "fixed.s", emit_program(run.final_program));
    Overhead o = run.overhead;
    o.name = in.kernel_name.empty() ? "kernel" : in.kernel_name;
    write_text(dir / "overhead.txt", overhead_table({o}));

    auto heatmaps = [&](const std::optional<AnalysisResult> &a, const std::string &stem) {
        if (!a) return;
        write_heatmap_csv(a->heatmap, dir / (stem + ".csv"));
        if (a->heatmap.order == 2) write_heatmap_pgm(a->heatmap, a->threshold, dir / (stem + ".pgm"));
    };
    heatmaps(run.first_analysis, "heatmap_before");
    heatmaps(run.last_analysis, "heatmap_after");
}

} // namespace hileak
