#include "hileak/rewriter.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace hileak {
namespace {

constexpr std::uint16_t kScratchMask = 1u << kScratchReg;

std::string provenance(const RewriteAction &a) {
    std::string pts;
    for (std::size_t k = 0; k < a.leaks.size(); ++k)
        pts += (k ? " " : "") + to_string(a.leaks[k]);
    return "; hileak fix: " + std::string(fix_kind_name(a.kind)) + " for leak " + pts;
}

} // namespace

std::string_view fix_kind_name(FixKind k) { return k == FixKind::PipelineFlush ? "pipeline_flush" : "memory_wipe"; }

RewritePlan plan_fixes(const Program &program, const std::vector<RootCause> &causes, const LeakageModel &model,
                       const FixRules &rules) {
    RewritePlan plan;
    plan.fingerprint = program.fingerprint();
    std::map<std::pair<std::size_t, FixKind>, RewriteAction> acts;
    for (const auto &rc : causes) {
        if (rc.method == RootCauseMethod::Unresolved || rc.culprits.empty()) {
            plan.warnings.push_back("leak " + to_string(rc.leak.index) + " has no resolved root cause; not fixed");
            continue;
        }
        bool fixed_any = false;
        std::set<std::string> skipped;
        for (const auto &c : rc.culprits) {
            if (c.component >= model.size() || c.sample >= program.size())
                throw std::out_of_range("culprit outside program or model");
            const ComponentDef &def = model.components[c.component];
            const auto kind = rules.by_class[static_cast<std::size_t>(def.cls)];
            if (!kind) {
                skipped.insert(def.name + " (" + std::string(component_class_name(def.cls)) + ")");
                continue;
            }
            auto &a = acts[{c.sample, *kind}];
            a.kind = *kind;
            a.position = c.sample;
            if (std::find(a.leaks.begin(), a.leaks.end(), rc.leak.index) == a.leaks.end())
                a.leaks.push_back(rc.leak.index);
            if (std::find(a.culprits.begin(), a.culprits.end(), c) == a.culprits.end())
                a.culprits.push_back(c);
            fixed_any = true;
        }
        if (!fixed_any) {
            std::string list;
            for (const auto &s : skipped)
                list += (list.empty() ? "" : ", ") + s;
            plan.warnings.push_back("leak " + to_string(rc.leak.index) + ": no rewrite rule for " + list);
        }
    }
    for (auto &[key, a] : acts) {
        std::sort(a.culprits.begin(), a.culprits.end());
        plan.actions.push_back(std::move(a));
    }
    return plan;
}

Program apply_fixes(const Program &program, const RewritePlan &plan) {
    if (plan.empty())
        return program;
    if (plan.fingerprint != program.fingerprint())
        throw std::invalid_argument("rewrite plan is stale: program changed since planning");
    for (const auto &a : plan.actions)
        if (a.position >= program.size())
            throw std::invalid_argument("rewrite position " + std::to_string(a.position) + " outside program");
    Program out = program;
    // Back to front keeps earlier positions valid; at one position the flush
    // ends up above the wipe.
    for (auto it = plan.actions.rbegin(); it != plan.actions.rend(); ++it) {
        std::vector<Instruction> ins;
        if (it->kind == FixKind::PipelineFlush) {
            ins.push_back(make_mov(kScratchReg, kScratchReg));
        } else {
            ins.push_back(make_push(kScratchMask));
            ins.push_back(make_pop(kScratchMask));
        }
        ins.front().comments.push_back(provenance(*it));
        const auto at = out.code.begin() + static_cast<std::ptrdiff_t>(it->position);
        // Source comments above the target move above the barrier; provenance
        // comments of barriers inserted at the same position stay put.
        auto &target = at->comments;
        auto keep = std::stable_partition(target.begin(), target.end(),
                                          [](const std::string &c) { return c.rfind("; hileak fix:", 0) == 0; });
        ins.front().comments.insert(ins.front().comments.begin(), keep, target.end());
        target.erase(keep, target.end());
        out.code.insert(at, ins.begin(), ins.end());
    }
    return out;
}

std::uint64_t cycles(const Instruction &ins, const CycleTable &t) {
    switch (op_class(ins.op)) {
    case OpClass::Load:
        return t.load;
    case OpClass::Store:
        return t.store;
    case OpClass::Stack:
        return std::uint64_t{t.stack_per_register} * static_cast<unsigned>(std::popcount(ins.reglist));
    default:
        return t.other;
    }
}

std::uint64_t cycles(const Program &p, const CycleTable &t) {
    std::uint64_t total = 0;
    for (const auto &ins : p.code)
        total += cycles(ins, t);
    return total;
}

Overhead overhead(const Program &before, const Program &after, const CycleTable &table, std::string name) {
    Overhead o{std::move(name), cycles(before, table), cycles(after, table), 0.0};
    if (o.before > 0)
        o.percent = 100.0 * (static_cast<double>(o.after) - static_cast<double>(o.before)) / static_cast<double>(o.before);
    return o;
}

std::string overhead_table(const std::vector<Overhead> &rows) {
    std::size_t w = std::string("Implementation").size();
    for (const auto &r : rows)
        w = std::max(w, r.name.size());
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %13s  %13s  %8s\n", static_cast<int>(w), "Implementation", "Unprotected",
                  "Protected", "Increase");
    os << buf;
    std::snprintf(buf, sizeof buf, "%-*s  %13s  %13s\n", static_cast<int>(w), "", "size (cycles)",
                  "size (cycles)");
    os << buf;
    for (const auto &r : rows) {
        std::snprintf(buf, sizeof buf, "%-*s  %13llu  %13llu  %7.0f%%\n", static_cast<int>(w), r.name.c_str(),
                      static_cast<unsigned long long>(r.before), static_cast<unsigned long long>(r.after),
                      std::round(r.percent));
        os << buf;
    }
    return os.str();
}

void to_json(nlohmann::json &j, const RewriteAction &a) {
    nlohmann::json leaks = nlohmann::json::array();
    for (const auto &l : a.leaks)
        leaks.push_back(l);
    nlohmann::json culprits = nlohmann::json::array();
    for (const auto &c : a.culprits)
        culprits.push_back({{"sample", c.sample}, {"component", c.component}});
    j = {{"kind", fix_kind_name(a.kind)}, {"position", a.position}, {"leaks", leaks}, {"culprits", culprits}};
}

void to_json(nlohmann::json &j, const Overhead &o) {
    j = {{"name", o.name}, {"before_cycles", o.before}, {"after_cycles", o.after}, {"increase_pct", o.percent}};
}

void to_json(nlohmann::json &j, const CycleTable &t) {
    j = {{"load", t.load}, {"store", t.store}, {"stack_per_register", t.stack_per_register}, {"other", t.other}};
}

void from_json(const nlohmann::json &j, CycleTable &t) {
    t.load = j.value("load", t.load);
    t.store = j.value("store", t.store);
    t.stack_per_register = j.value("stack_per_register", t.stack_per_register);
    t.other = j.value("other", t.other);
}

} // namespace hileak
