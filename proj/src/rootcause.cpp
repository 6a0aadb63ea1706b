#include "hileak/rootcause.hpp"

#include "hileak/error.hpp"
#include "hileak/parallel.hpp"
#include "hileak/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hileak {
namespace {

std::vector<std::uint32_t> all_components(const ComponentMatrix &L) {
    std::vector<std::uint32_t> c(L.n_components);
    std::iota(c.begin(), c.end(), 0u);
    return c;
}

std::vector<std::uint32_t> without(std::span<const std::uint32_t> xs, std::size_t position) {
    std::vector<std::uint32_t> out;
    for (std::size_t k = 0; k < xs.size(); ++k)
        if (k != position)
            out.push_back(xs[k]);
    return out;
}

// Centred reduced-model power at one sample point; mask[c] selects components.
std::vector<double> centred_power(const ComponentMatrix &L, std::uint32_t sample, const std::vector<char> &mask) {
    const std::size_t col = L.column_of(sample);
    const std::size_t n = L.n_traces;
    std::vector<double> p(n, 0.0);
    for (std::size_t c = 0; c < L.n_components; ++c) {
        if (!mask[c] || L.coefficients[c] == 0.0)
            continue;
        const double w = L.coefficients[c];
        auto blk = L.block(col, c);
        for (std::size_t i = 0; i < n; ++i)
            p[i] += w * static_cast<double>(blk[i]);
    }
    double sum[2] = {0, 0};
    std::size_t cnt[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(L.labels[i]);
        sum[k] += p[i];
        ++cnt[k];
    }
    const double mean[2] = {cnt[0] ? sum[0] / static_cast<double>(cnt[0]) : 0.0,
                            cnt[1] ? sum[1] / static_cast<double>(cnt[1]) : 0.0};
    for (std::size_t i = 0; i < n; ++i)
        p[i] -= mean[static_cast<std::size_t>(L.labels[i])];
    return p;
}

std::vector<char> mask_of(const ComponentMatrix &L, std::span<const std::uint32_t> components) {
    std::vector<char> mask(L.n_components, 0);
    for (auto c : components) {
        if (c >= L.n_components)
            throw std::out_of_range("component index " + std::to_string(c) + " out of range");
        mask[c] = 1;
    }
    return mask;
}

// nps over `points`, optionally with a different component mask at one position.
std::vector<double> product(const ComponentMatrix &L, std::span<const std::uint32_t> points,
                            const std::vector<char> &mask) {
    std::vector<double> z(L.n_traces, 1.0);
    for (auto s : points) {
        auto p = centred_power(L, s, mask);
        for (std::size_t i = 0; i < z.size(); ++i)
            z[i] *= p[i];
    }
    return z;
}

void split(const ComponentMatrix &L, std::span<const double> z, std::vector<double> &fixed, std::vector<double> &random) {
    fixed.clear();
    random.clear();
    for (std::size_t i = 0; i < z.size(); ++i)
        (L.labels[i] == TraceClass::Fixed ? fixed : random).push_back(z[i]);
}

std::vector<double> times(std::vector<double> a, const std::vector<double> &b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        a[i] *= b[i];
    return a;
}

bool leaky(const ComponentMatrix &L, std::span<const double> z, double threshold) {
    const WelchResult w = class_ttest(L, z);
    return w.infinite || std::fabs(w.t) > threshold;
}

std::vector<std::uint32_t> leak_points(const LeakPoint &leak) {
    auto v = leak.index.view();
    return {v.begin(), v.end()};
}

void finish(RootCause &rc) {
    std::sort(rc.culprits.begin(), rc.culprits.end());
    rc.culprits.erase(std::unique(rc.culprits.begin(), rc.culprits.end()), rc.culprits.end());
}

} // namespace

std::string_view method_name(RootCauseMethod m) {
    switch (m) {
    case RootCauseMethod::Elimination:
        return "elimination";
    case RootCauseMethod::MonteCarlo:
        return "monte_carlo";
    default:
        return "unresolved";
    }
}

double MonteCarloStats::rate_in(std::size_t c) const {
    return participated[c] ? static_cast<double>(leaky_in[c]) / static_cast<double>(participated[c]) : 0.0;
}

double MonteCarloStats::rate_out(std::size_t c) const {
    const std::size_t out = experiments - participated[c];
    return out ? static_cast<double>(leaky_out[c]) / static_cast<double>(out) : 0.0;
}

std::vector<double> nps(const ComponentMatrix &L, std::span<const std::uint32_t> points,
                        std::span<const std::uint32_t> components) {
    if (points.empty())
        throw std::invalid_argument("nps needs at least one sample point");
    if (components.empty())
        throw std::invalid_argument("nps needs at least one component");
    return product(L, points, mask_of(L, components));
}

WelchResult class_ttest(const ComponentMatrix &L, std::span<const double> z) {
    Moments f, r;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (L.labels[i] == TraceClass::Fixed)
            f = update(f, z[i]);
        else
            r = update(r, z[i]);
    }
    return welch_t(f, r);
}

TostBounds companion_bounds(const ComponentMatrix &companion, std::span<const double> z, const RootCauseConfig &cfg) {
    const std::size_t n = z.size();
    const std::size_t chunks = std::max<std::size_t>(2, std::min(cfg.bound_chunks, n / 4));
    std::vector<double> diffs;
    diffs.reserve(chunks);
    for (std::size_t k = 0; k < chunks; ++k) {
        const std::size_t lo = k * n / chunks, hi = (k + 1) * n / chunks;
        double sum[2] = {0, 0};
        std::size_t cnt[2] = {0, 0};
        for (std::size_t i = lo; i < hi; ++i) {
            const auto c = static_cast<std::size_t>(companion.labels[i]);
            sum[c] += z[i];
            ++cnt[c];
        }
        if (cnt[0] == 0 || cnt[1] == 0)
            continue;
        diffs.push_back(sum[0] / static_cast<double>(cnt[0]) - sum[1] / static_cast<double>(cnt[1]));
    }
    if (diffs.size() < 2)
        throw std::invalid_argument("companion set too small to estimate equivalence bounds");
    return tost_bounds(0.0, diffs, cfg.margin_alpha);
}

RootCause flc(const ComponentMatrix &L, const ComponentMatrix &companion, const LeakPoint &leak,
              const RootCauseConfig &cfg) {
    if (companion.n_components != L.n_components)
        throw std::invalid_argument("companion matrix has a different component count");
    RootCause rc{leak, {}, RootCauseMethod::Elimination};
    const auto S = leak_points(leak);
    const auto C = all_components(L);
    const std::vector<char> full(L.n_components, 1);
    const unsigned threads = resolve_threads(cfg.threads);
    std::vector<std::vector<Culprit>> found(S.size() * C.size());
    for (std::size_t pos = 0; pos < S.size(); ++pos) {
        const auto rest = without(S, pos);
        const std::vector<double> x = product(L, rest, full);
        const std::vector<double> xc = product(companion, rest, full);
        const std::uint32_t s = S[pos];
        parallel_for(C.size(), threads, [&](std::size_t t) {
            std::vector<char> mask = full;
            mask[t] = 0;
            const std::uint32_t one[1] = {s};
            const auto z = times(product(L, one, mask), x);
            const auto zc = times(product(companion, one, mask), xc);
            const TostBounds bounds = companion_bounds(companion, zc, cfg);
            std::vector<double> zf, zr;
            split(L, z, zf, zr);
            if (not_leaky(zf, zr, bounds, cfg.tost_alpha))
                found[pos * C.size() + t].push_back({s, static_cast<std::uint32_t>(t)});
        });
    }
    for (const auto &f : found)
        rc.culprits.insert(rc.culprits.end(), f.begin(), f.end());
    finish(rc);
    return rc;
}

RootCause monte_carlo(const ComponentMatrix &L, const LeakPoint &leak, const RootCauseConfig &cfg,
                      MonteCarloStats *stats) {
    if (cfg.mc_experiments == 0)
        throw std::invalid_argument("Monte-Carlo search needs at least one experiment");
    const std::size_t K = L.n_components;
    RootCause rc{leak, {}, RootCauseMethod::MonteCarlo};
    MonteCarloStats total{0, std::vector<std::size_t>(K), std::vector<std::size_t>(K), std::vector<std::size_t>(K)};
    const auto S = leak_points(leak);
    const std::vector<char> full(K, 1);
    std::uint64_t stream = 0;
    for (auto p : S)
        stream = stream * 0x100000001b3ULL + p + 1;
    for (std::size_t pos = 0; pos < S.size(); ++pos) {
        const std::uint32_t s = S[pos];
        const std::uint32_t one[1] = {s};
        const auto x = product(L, without(S, pos), full);
        auto dead_without = [&](const std::vector<char> &removed) {
            std::vector<char> keep(K);
            bool any = false;
            for (std::size_t c = 0; c < K; ++c)
                any |= (keep[c] = !removed[c]) != 0;
            return !any || !leaky(L, times(product(L, one, keep), x), cfg.threshold);
        };

        CounterRng rng(derive_seed(cfg.seed, stream), pos);
        std::vector<std::vector<char>> subsets(cfg.mc_experiments, std::vector<char>(K));
        for (auto &sub : subsets)
            for (auto &in : sub)
                in = static_cast<char>(rng.next() >> 63);
        std::vector<char> outcome(cfg.mc_experiments);
        parallel_for(cfg.mc_experiments, resolve_threads(cfg.threads), [&](std::size_t e) {
            const auto &sub = subsets[e];
            outcome[e] = std::any_of(sub.begin(), sub.end(), [](char v) { return v != 0; }) &&
                         leaky(L, times(product(L, one, sub), x), cfg.threshold);
        });

        MonteCarloStats local{cfg.mc_experiments, std::vector<std::size_t>(K), std::vector<std::size_t>(K),
                              std::vector<std::size_t>(K)};
        std::vector<char> in_quiet(K, 0);
        for (std::size_t e = 0; e < cfg.mc_experiments; ++e)
            for (std::size_t c = 0; c < K; ++c) {
                if (subsets[e][c]) {
                    ++local.participated[c];
                    local.leaky_in[c] += outcome[e] ? 1 : 0;
                    if (!outcome[e])
                        in_quiet[c] = 1;
                } else {
                    local.leaky_out[c] += outcome[e] ? 1 : 0;
                }
            }
        total.experiments += local.experiments;
        for (std::size_t c = 0; c < K; ++c) {
            total.participated[c] += local.participated[c];
            total.leaky_in[c] += local.leaky_in[c];
            total.leaky_out[c] += local.leaky_out[c];
        }

        // Candidates: components never seen in a quiet experiment.
        std::vector<char> cand(K, 0);
        for (std::size_t c = 0; c < K; ++c)
            cand[c] = L.coefficients[c] != 0.0 && !in_quiet[c];
        if (!dead_without(cand))
            for (std::size_t c = 0; c < K; ++c)
                cand[c] = L.coefficients[c] != 0.0;
        if (!dead_without(cand))
            continue; // cannot silence at this point

        std::vector<std::size_t> order;
        for (std::size_t c = 0; c < K; ++c)
            if (cand[c])
                order.push_back(c);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return local.rate_in(a) - local.rate_out(a) < local.rate_in(b) - local.rate_out(b);
        });
        for (auto c : order) {
            cand[c] = 0;
            if (!dead_without(cand))
                cand[c] = 1;
        }
        for (std::size_t c = 0; c < K; ++c)
            if (cand[c])
                rc.culprits.push_back({s, static_cast<std::uint32_t>(c)});
    }
    finish(rc);
    if (rc.culprits.empty())
        rc.method = RootCauseMethod::Unresolved;
    if (stats)
        *stats = std::move(total);
    return rc;
}

RootCause analyze_leak(const ComponentMatrix &L, const ComponentMatrix &companion, const LeakPoint &leak,
                       const RootCauseConfig &cfg) {
    const auto S = leak_points(leak);
    const std::vector<char> full(L.n_components, 1);
    if (!leaky(L, product(L, S, full), cfg.threshold))
        return RootCause{leak, {}, RootCauseMethod::Unresolved};
    RootCause rc = flc(L, companion, leak, cfg);
    if (!rc.culprits.empty())
        return rc;
    return monte_carlo(L, leak, cfg);
}

std::vector<double> monte_carlo_curve(const ComponentMatrix &L, const LeakPoint &leak, const RootCauseConfig &cfg,
                                      std::size_t max_experiments) {
    const auto S = leak_points(leak);
    const std::size_t K = L.n_components;
    const std::vector<char> full(K, 1);
    const double before = std::fabs(class_ttest(L, product(L, S, full)).t);
    std::vector<double> curve;
    for (std::size_t e = 1; e <= max_experiments; ++e) {
        RootCauseConfig c = cfg;
        c.mc_experiments = e;
        const RootCause rc = monte_carlo(L, leak, c);
        std::vector<double> z(L.n_traces, 1.0);
        for (auto s : S) {
            std::vector<char> keep = full;
            for (const auto &cu : rc.culprits)
                if (cu.sample == s)
                    keep[cu.component] = 0;
            const auto p = centred_power(L, s, keep);
            for (std::size_t i = 0; i < z.size(); ++i)
                z[i] *= p[i];
        }
        const double after = std::fabs(class_ttest(L, z).t);
        curve.push_back(before > 0.0 ? 1.0 - after / before : 0.0);
    }
    return curve;
}

nlohmann::json to_json(const RootCause &rc, const std::vector<std::string> &names) {
    nlohmann::json culprits = nlohmann::json::array();
    for (const auto &c : rc.culprits)
        culprits.push_back({{"sample", c.sample},
                            {"component", c.component},
                            {"name", c.component < names.size() ? names[c.component] : std::string{}}});
    nlohmann::json leak = rc.leak;
    return {{"leak", leak["points"]}, {"t", leak["t"]}, {"method", method_name(rc.method)}, {"culprits", culprits}};
}

RootCause root_cause_from_json(const nlohmann::json &j) {
    RootCause rc;
    try {
        rc.leak = nlohmann::json{{"points", j.at("leak")}, {"t", j.at("t")}}.get<LeakPoint>();
        const auto method = j.at("method").get<std::string>();
        if (method == "elimination")
            rc.method = RootCauseMethod::Elimination;
        else if (method == "monte_carlo")
            rc.method = RootCauseMethod::MonteCarlo;
        else if (method == "unresolved")
            rc.method = RootCauseMethod::Unresolved;
        else
            throw FormatError("unknown root-cause method '" + method + "'");
        for (const auto &c : j.at("culprits"))
            rc.culprits.push_back({c.at("sample").get<std::uint32_t>(), c.at("component").get<std::uint32_t>()});
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("root cause: ") + e.what());
    }
    std::sort(rc.culprits.begin(), rc.culprits.end());
    return rc;
}

} // namespace hileak
