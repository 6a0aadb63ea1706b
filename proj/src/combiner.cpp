#include "hileak/combiner.hpp"

#include "hileak/error.hpp"
#include "hileak/parallel.hpp"
#include "hileak/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace hileak {
namespace {

// Trace rows of each class, in source order. Fixed rows come first in every
// loaded column so each class is one contiguous run.
struct ClassRows {
    std::vector<std::size_t> order; // source row for each loaded position
    std::size_t n_fixed = 0;
    std::size_t n_random = 0;
};

ClassRows split_rows(const TraceSource &src) {
    ClassRows rows;
    const std::size_t n = src.n_traces();
    rows.order.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        if (src.label(i) == TraceClass::Fixed)
            rows.order.push_back(i);
    rows.n_fixed = rows.order.size();
    for (std::size_t i = 0; i < n; ++i)
        if (src.label(i) == TraceClass::Random)
            rows.order.push_back(i);
    rows.n_random = rows.order.size() - rows.n_fixed;
    return rows;
}

struct ClassMeans {
    std::vector<double> fixed;
    std::vector<double> random;
};

ClassMeans class_means(const TraceSource &src, const ClassRows &rows) {
    const std::size_t n = src.n_traces(), m = src.n_samples();
    ClassMeans means{std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)};
    constexpr std::size_t kWidth = 32;
    std::vector<float> buf;
    for (std::size_t first = 0; first < m; first += kWidth) {
        const std::size_t last = std::min(m, first + kWidth);
        buf.resize((last - first) * n);
        src.read_columns(first, last, buf);
        for (std::size_t j = first; j < last; ++j) {
            const float *col = buf.data() + (j - first) * n;
            double sf = 0.0, sr = 0.0;
            for (std::size_t k = 0; k < rows.n_fixed; ++k)
                sf += col[rows.order[k]];
            for (std::size_t k = rows.n_fixed; k < rows.order.size(); ++k)
                sr += col[rows.order[k]];
            means.fixed[j] = sf / static_cast<double>(rows.n_fixed);
            means.random[j] = sr / static_cast<double>(rows.n_random);
        }
    }
    return means;
}

// Centred columns [first, last), class-grouped, double precision.
struct Block {
    std::size_t first = 0;
    std::size_t n = 0;
    std::vector<double> data;
    const double *col(std::size_t j) const { return data.data() + (j - first) * n; }
};

Block load_block(const TraceSource &src, const ClassRows &rows, const ClassMeans &means, std::size_t first,
                 std::size_t last) {
    const std::size_t n = src.n_traces();
    Block b{first, n, std::vector<double>((last - first) * n)};
    std::vector<float> buf((last - first) * n);
    src.read_columns(first, last, buf);
    for (std::size_t j = first; j < last; ++j) {
        const float *in = buf.data() + (j - first) * n;
        double *out = b.data.data() + (j - first) * n;
        for (std::size_t k = 0; k < rows.n_fixed; ++k)
            out[k] = static_cast<double>(in[rows.order[k]]) - means.fixed[j];
        for (std::size_t k = rows.n_fixed; k < n; ++k)
            out[k] = static_cast<double>(in[rows.order[k]]) - means.random[j];
    }
    return b;
}

// Moments of the elementwise product over [0, len). Four fixed accumulators
// keep the summation order independent of compiler choices.
Moments tile_moments(const double *a, const double *b, const double *c, std::size_t len) {
    auto prod = [&](std::size_t k) { return c ? a[k] * b[k] * c[k] : a[k] * b[k]; };
    double s[4] = {0, 0, 0, 0};
    std::size_t k = 0;
    for (; k + 4 <= len; k += 4)
        for (int u = 0; u < 4; ++u)
            s[u] += prod(k + u);
    for (int u = 0; k < len; ++k, ++u)
        s[u] += prod(k);
    const double mean = ((s[0] + s[1]) + (s[2] + s[3])) / static_cast<double>(len);
    double q[4] = {0, 0, 0, 0};
    k = 0;
    for (; k + 4 <= len; k += 4)
        for (int u = 0; u < 4; ++u) {
            const double d = prod(k + u) - mean;
            q[u] += d * d;
        }
    for (int u = 0; k < len; ++k, ++u) {
        const double d = prod(k) - mean;
        q[u] += d * d;
    }
    return Moments{len, mean, (q[0] + q[1]) + (q[2] + q[3])};
}

struct TupleRef {
    const double *a;
    const double *b;
    const double *c; // null for pairs
    std::size_t slot;
};

// Accumulates per-class moments for every tuple, tile by tile, then writes
// t and dof to the tuple's slot.
void reduce_tuples(const std::vector<TupleRef> &tuples, const ClassRows &rows, std::size_t tile,
                   std::vector<double> &t_out, std::vector<double> &dof_out) {
    std::vector<Moments> fixed(tuples.size()), random(tuples.size());
    auto run_class = [&](std::size_t begin, std::size_t end, std::vector<Moments> &acc) {
        for (std::size_t r0 = begin; r0 < end; r0 += tile) {
            const std::size_t len = std::min(tile, end - r0);
            for (std::size_t u = 0; u < tuples.size(); ++u) {
                const auto &tp = tuples[u];
                acc[u] = merge(acc[u], tile_moments(tp.a + r0, tp.b + r0, tp.c ? tp.c + r0 : nullptr, len));
            }
        }
    };
    run_class(0, rows.n_fixed, fixed);
    run_class(rows.n_fixed, rows.n_fixed + rows.n_random, random);
    for (std::size_t u = 0; u < tuples.size(); ++u) {
        const WelchResult w = welch_t(fixed[u], random[u]);
        t_out[tuples[u].slot] = w.t;
        dof_out[tuples[u].slot] = w.dof;
    }
}

unsigned choose_splits(std::size_t m, std::size_t n, unsigned threads, const CombinerConfig &cfg) {
    if (cfg.splits != 0)
        return static_cast<unsigned>(std::min<std::size_t>(cfg.splits, m));
    // Two blocks resident per worker, each column costs a double and a staging float per trace.
    const std::size_t per_column = std::max<std::size_t>(1, n * (sizeof(double) + sizeof(float)));
    const std::size_t max_width = std::max<std::size_t>(1, cfg.memory_budget / (2 * per_column * threads));
    std::size_t s = (m + max_width - 1) / max_width;
    while (threads > 1 && s * (s + 1) / 2 < 2 * std::size_t{threads} && s < m)
        ++s;
    return static_cast<unsigned>(std::clamp<std::size_t>(s, 1, m));
}

// Number of (j2, j3) completions for a given j1 in a window of length L.
std::uint64_t triples_for(std::size_t len, bool repeats) {
    const std::uint64_t l = len;
    return repeats ? l * (l + 1) / 2 : (l >= 3 ? (l - 1) * (l - 2) / 2 : 0);
}

void check_config(const CombinerConfig &cfg, std::size_t m) {
    if (cfg.order != 2 && cfg.order != 3)
        throw std::invalid_argument("order must be 2 or 3");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
        throw std::invalid_argument("alpha must lie in (0, 1)");
    if (cfg.order == 3) {
        if (cfg.window == 0)
            throw std::invalid_argument("order 3 requires a positive window");
        if (cfg.window > m)
            throw std::invalid_argument("window " + std::to_string(cfg.window) + " larger than trace length " +
                                        std::to_string(m));
    }
    if (cfg.trace_tile == 0)
        throw std::invalid_argument("trace tile must be positive");
}

} // namespace

bool CombinationIndex::contains(std::uint32_t j) const {
    return std::find(points.begin(), points.begin() + order, j) != points.begin() + order;
}

CombinationIndex pair_index(std::uint32_t j1, std::uint32_t j2) {
    if (j1 > j2)
        std::swap(j1, j2);
    return {{j1, j2, 0}, 2};
}

CombinationIndex triple_index(std::uint32_t j1, std::uint32_t j2, std::uint32_t j3) {
    std::array<std::uint32_t, 3> p{j1, j2, j3};
    std::sort(p.begin(), p.end());
    return {p, 3};
}

std::string to_string(const CombinationIndex &idx) {
    std::string s = "(";
    for (unsigned k = 0; k < idx.order; ++k)
        s += (k ? ", " : "") + std::to_string(idx.points[k]);
    return s + ")";
}

std::vector<double> center(const TraceSet &set) {
    if (set.n_traces < 2)
        throw std::invalid_argument("centring needs at least two traces");
    std::vector<double> means(set.n_samples, 0.0);
    for (std::size_t i = 0; i < set.n_traces; ++i) {
        auto row = set.row(i);
        for (std::size_t j = 0; j < set.n_samples; ++j)
            means[j] += row[j];
    }
    for (auto &mu : means)
        mu /= static_cast<double>(set.n_traces);
    return means;
}

double combined_value(const TraceSet &set, std::span<const double> means, std::size_t i, const CombinationIndex &idx) {
    double v = 1.0;
    for (auto j : idx.view()) {
        if (j >= set.n_samples)
            throw std::out_of_range("combination index outside trace");
        v *= static_cast<double>(set.at(i, j)) - means[j];
    }
    return v;
}

std::uint64_t count_indices(std::size_t m, const CombinerConfig &cfg) {
    const std::uint64_t mm = m;
    if (cfg.order == 2)
        return cfg.include_diagonal ? mm * (mm + 1) / 2 : mm * (mm - (mm ? 1 : 0)) / 2;
    std::uint64_t total = 0;
    for (std::size_t j1 = 0; j1 < m; ++j1)
        total += triples_for(std::min(m, j1 + cfg.window) - j1, cfg.allow_repeats);
    return total;
}

std::vector<CombinationIndex> enumerate_indices(std::size_t m, const CombinerConfig &cfg) {
    std::vector<CombinationIndex> out;
    out.reserve(count_indices(m, cfg));
    const std::uint32_t mm = static_cast<std::uint32_t>(m);
    if (cfg.order == 2) {
        for (std::uint32_t a = 0; a < mm; ++a)
            for (std::uint32_t b = cfg.include_diagonal ? a : a + 1; b < mm; ++b)
                out.push_back(pair_index(a, b));
        return out;
    }
    const std::uint32_t step = cfg.allow_repeats ? 0 : 1;
    for (std::uint32_t a = 0; a < mm; ++a) {
        const std::uint32_t end = static_cast<std::uint32_t>(std::min<std::size_t>(m, a + cfg.window));
        for (std::uint32_t b = a + step; b < end; ++b)
            for (std::uint32_t c = b + step; c < end; ++c)
                out.push_back({{a, b, c}, 3});
    }
    return out;
}

std::vector<WorkUnit> partition_workload(std::size_t n_samples, std::size_t splits) {
    if (splits < 1 || splits > n_samples)
        throw std::invalid_argument("splits must lie in [1, n_samples]");
    std::vector<std::size_t> edge(splits + 1);
    for (std::size_t s = 0; s <= splits; ++s)
        edge[s] = s * n_samples / splits;
    std::vector<WorkUnit> units;
    units.reserve(splits * (splits + 1) / 2);
    for (std::size_t a = 0; a < splits; ++a)
        for (std::size_t b = a; b < splits; ++b)
            units.push_back({edge[a], edge[a + 1], edge[b], edge[b + 1]});
    return units;
}

AnalysisResult multivariate_ttest(const TraceSource &src, const CombinerConfig &cfg) {
    const std::size_t n = src.n_traces(), m = src.n_samples();
    check_config(cfg, m);
    const ClassRows rows = split_rows(src);
    if (rows.n_fixed < 2 || rows.n_random < 2)
        throw std::invalid_argument("each class needs at least two traces");
    const unsigned threads = resolve_threads(cfg.threads);
    const ClassMeans means = class_means(src, rows);

    AnalysisResult res;
    res.n_traces = n;
    res.n_indices = count_indices(m, cfg);
    res.heatmap.order = cfg.order;
    res.heatmap.n_samples = m;

    std::vector<double> t, dof;
    if (cfg.order == 2) {
        t.assign(m * m, 0.0);
        dof.assign(m * m, 0.0);
        const unsigned splits = m ? choose_splits(m, n, threads, cfg) : 0;
        res.splits_used = splits;
        const auto units = m ? partition_workload(m, splits) : std::vector<WorkUnit>{};
        parallel_for(units.size(), threads, [&](std::size_t u) {
            const WorkUnit &w = units[u];
            Block a = load_block(src, rows, means, w.a_first, w.a_last);
            Block b = w.diagonal() ? Block{} : load_block(src, rows, means, w.b_first, w.b_last);
            const Block &bb = w.diagonal() ? a : b;
            std::vector<TupleRef> tuples;
            for (std::size_t j1 = w.a_first; j1 < w.a_last; ++j1) {
                std::size_t start = w.diagonal() ? (cfg.include_diagonal ? j1 : j1 + 1) : w.b_first;
                for (std::size_t j2 = start; j2 < w.b_last; ++j2)
                    tuples.push_back({a.col(j1), bb.col(j2), nullptr, j1 * m + j2});
            }
            reduce_tuples(tuples, rows, cfg.trace_tile, t, dof);
        });
    } else {
        t.assign(res.n_indices, 0.0);
        dof.assign(res.n_indices, 0.0);
        std::vector<std::uint64_t> offset(m + 1, 0);
        for (std::size_t j1 = 0; j1 < m; ++j1)
            offset[j1 + 1] = offset[j1] + triples_for(std::min(m, j1 + cfg.window) - j1, cfg.allow_repeats);
        // Chunks of j1; each loads its chunk plus the trailing window.
        const std::size_t per_column = std::max<std::size_t>(1, n * (sizeof(double) + sizeof(float)));
        std::size_t chunk = std::max<std::size_t>(1, cfg.memory_budget / (per_column * threads));
        chunk = chunk > cfg.window ? chunk - cfg.window + 1 : 1;
        std::size_t n_chunks = (m + chunk - 1) / chunk;
        if (cfg.splits != 0)
            n_chunks = std::max<std::size_t>(n_chunks, std::min<std::size_t>(cfg.splits, m));
        n_chunks = std::max<std::size_t>(n_chunks, std::min<std::size_t>(m, 4 * std::size_t{threads}));
        res.splits_used = static_cast<unsigned>(n_chunks);
        const std::size_t step = cfg.allow_repeats ? 0 : 1;
        parallel_for(n_chunks, threads, [&](std::size_t u) {
            const std::size_t lo = u * m / n_chunks, hi = (u + 1) * m / n_chunks;
            if (lo == hi)
                return;
            const std::size_t top = std::min(m, hi - 1 + cfg.window);
            Block blk = load_block(src, rows, means, lo, top);
            std::vector<TupleRef> tuples;
            for (std::size_t j1 = lo; j1 < hi; ++j1) {
                std::size_t slot = offset[j1];
                const std::size_t end = std::min(m, j1 + cfg.window);
                for (std::size_t j2 = j1 + step; j2 < end; ++j2)
                    for (std::size_t j3 = j2 + step; j3 < end; ++j3)
                        tuples.push_back({blk.col(j1), blk.col(j2), blk.col(j3), slot++});
            }
            reduce_tuples(tuples, rows, cfg.trace_tile, t, dof);
        });
        res.heatmap.triples = enumerate_indices(m, cfg);
    }

    double min_dof = std::numeric_limits<double>::infinity();
    auto consider = [&](double d) {
        if (d > 0.0 && std::isfinite(d))
            min_dof = std::min(min_dof, d);
    };
    std::vector<LeakPoint> candidates;
    if (cfg.order == 2) {
        res.heatmap.dense.assign(m * m, 0.0);
        for (std::size_t j1 = 0; j1 < m; ++j1)
            for (std::size_t j2 = cfg.include_diagonal ? j1 : j1 + 1; j2 < m; ++j2) {
                const double tv = t[j1 * m + j2];
                res.heatmap.dense[j1 * m + j2] = res.heatmap.dense[j2 * m + j1] = tv;
                consider(dof[j1 * m + j2]);
                candidates.push_back({pair_index(static_cast<std::uint32_t>(j1), static_cast<std::uint32_t>(j2)), tv,
                                      dof[j1 * m + j2]});
            }
    } else {
        res.heatmap.triple_t.resize(t.size());
        for (std::size_t k = 0; k < t.size(); ++k) {
            res.heatmap.triple_t[k] = t[k];
            consider(dof[k]);
            candidates.push_back({res.heatmap.triples[k], t[k], dof[k]});
        }
    }
    res.dof_used = min_dof;
    if (res.n_indices > 0)
        res.threshold = corrected_threshold(res.n_indices, cfg.alpha, min_dof);
    res.threshold_applied = n >= kMinTracesForThreshold;
    if (res.threshold_applied) {
        for (const auto &c : candidates)
            if (std::fabs(c.t_value) > res.threshold)
                res.leaks.push_back(c);
        std::stable_sort(res.leaks.begin(), res.leaks.end(), [](const LeakPoint &x, const LeakPoint &y) {
            return std::fabs(x.t_value) > std::fabs(y.t_value);
        });
    }
    return res;
}

AnalysisResult multivariate_ttest(const TraceSet &fixed, const TraceSet &random, const CombinerConfig &cfg) {
    if (fixed.n_samples != random.n_samples)
        throw std::invalid_argument("fixed and random sets have different sample counts (" +
                                    std::to_string(fixed.n_samples) + " vs " + std::to_string(random.n_samples) + ")");
    return multivariate_ttest(PairedSource(fixed, random), cfg);
}

AnalysisResult multivariate_ttest(const TraceSet &labelled, const CombinerConfig &cfg) {
    return multivariate_ttest(TraceSetSource(labelled), cfg);
}

std::vector<double> univariate_ttest(const TraceSource &src) {
    const std::size_t n = src.n_traces(), m = src.n_samples();
    std::vector<double> t(m, 0.0);
    constexpr std::size_t kWidth = 32;
    std::vector<float> buf;
    for (std::size_t first = 0; first < m; first += kWidth) {
        const std::size_t last = std::min(m, first + kWidth);
        buf.resize((last - first) * n);
        src.read_columns(first, last, buf);
        for (std::size_t j = first; j < last; ++j) {
            Moments f, r;
            const float *col = buf.data() + (j - first) * n;
            for (std::size_t i = 0; i < n; ++i) {
                if (src.label(i) == TraceClass::Fixed)
                    f = update(f, col[i]);
                else
                    r = update(r, col[i]);
            }
            t[j] = welch_t(f, r).t;
        }
    }
    return t;
}

double Heatmap::at(const CombinationIndex &idx) const {
    if (idx.order != order)
        throw std::out_of_range("index order does not match heatmap");
    if (order == 2) {
        if (idx.last() >= n_samples)
            throw std::out_of_range("index outside heatmap");
        return at(idx.first(), idx.last());
    }
    auto less = [](const CombinationIndex &a, const CombinationIndex &b) { return a.points < b.points; };
    auto it = std::lower_bound(triples.begin(), triples.end(), idx, less);
    if (it == triples.end() || !(*it == idx))
        throw std::out_of_range("triple " + to_string(idx) + " not analysed");
    return triple_t[static_cast<std::size_t>(it - triples.begin())];
}

void write_heatmap_csv(const Heatmap &h, const std::filesystem::path &path) {
    std::ofstream os(path);
    if (!os)
        throw Error("cannot write " + path.string());
    os.precision(9);
    if (h.order == 2) {
        os << "j1,j2,t\n";
        for (std::size_t a = 0; a < h.n_samples; ++a)
            for (std::size_t b = a; b < h.n_samples; ++b)
                os << a << ',' << b << ',' << h.at(a, b) << '\n';
    } else {
        os << "j1,j2,j3,t\n";
        for (std::size_t k = 0; k < h.triples.size(); ++k) {
            const auto &p = h.triples[k].points;
            os << p[0] << ',' << p[1] << ',' << p[2] << ',' << h.triple_t[k] << '\n';
        }
    }
    if (!os)
        throw Error("write failed: " + path.string());
}

void write_heatmap_pgm(const Heatmap &h, double threshold, const std::filesystem::path &path) {
    if (h.order != 2)
        throw std::invalid_argument("image export is defined for order-2 heatmaps");
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw Error("cannot write " + path.string());
    const double clip = threshold > 0.0 ? 2.0 * threshold : 1.0;
    os << "P5\n" << h.n_samples << ' ' << h.n_samples << "\n65535\n";
    for (double v : h.dense) {
        const double x = std::isnan(v) ? 0.0 : std::min(1.0, std::fabs(static_cast<double>(v)) / clip);
        const auto q = static_cast<std::uint16_t>(std::lround(x * 65535.0));
        const char be[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
        os.write(be, 2);
    }
    if (!os)
        throw Error("write failed: " + path.string());
}

void to_json(nlohmann::json &j, const CombinationIndex &idx) {
    j = nlohmann::json::array();
    for (auto p : idx.view())
        j.push_back(p);
}

void to_json(nlohmann::json &j, const LeakPoint &leak) {
    const bool finite = std::isfinite(leak.t_value);
    j = {{"points", leak.index},
         {"t", finite ? nlohmann::json(leak.t_value) : nlohmann::json(leak.t_value > 0 ? "inf" : "-inf")},
         {"dof", leak.dof}};
}

void from_json(const nlohmann::json &j, LeakPoint &leak) {
    const auto &pts = j.at("points");
    if (pts.size() != 2 && pts.size() != 3)
        throw FormatError("leak point must have 2 or 3 sample indices");
    leak.index.order = static_cast<std::uint8_t>(pts.size());
    for (std::size_t k = 0; k < pts.size(); ++k)
        leak.index.points[k] = pts[k].get<std::uint32_t>();
    const auto &t = j.at("t");
    if (t.is_string())
        leak.t_value = t.get<std::string>() == "-inf" ? -std::numeric_limits<double>::infinity()
                                                      : std::numeric_limits<double>::infinity();
    else
        leak.t_value = t.get<double>();
    leak.dof = j.value("dof", 0.0);
}

} // namespace hileak
