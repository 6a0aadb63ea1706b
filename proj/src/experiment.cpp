#include "hileak/experiment.hpp"

#include "hileak/error.hpp"
#include "hileak/parallel.hpp"
#include "hileak/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace hileak {
namespace {

constexpr std::uint64_t kNoiseTag = 0x6e6f697365;

std::vector<std::string> tokens(const std::string &s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string t; is >> t;)
        out.push_back(t);
    return out;
}

std::uint8_t parse_reg(const std::string &s, const std::string &line) {
    if (s.size() == 2 && s[0] == 'r' && s[1] >= '0' && s[1] <= '7')
        return static_cast<std::uint8_t>(s[1] - '0');
    throw std::invalid_argument("directive '" + line + "': expected register r0-r7, got '" + s + "'");
}

std::size_t parse_count(const std::string &s, const std::string &line) {
    try {
        std::size_t used = 0;
        const unsigned long v = std::stoul(s, &used, 0);
        if (used == s.size())
            return v;
    } catch (const std::logic_error &) {
    }
    throw std::invalid_argument("directive '" + line + "': malformed number '" + s + "'");
}

std::string key_value(const std::string &tok, const std::string &key, const std::string &line) {
    if (tok.rfind(key + "=", 0) != 0)
        throw std::invalid_argument("directive '" + line + "': expected " + key + "=...");
    return tok.substr(key.size() + 1);
}

} // namespace

std::size_t KernelHarness::secret_bytes() const {
    std::size_t total = 0;
    for (const auto &s : secrets)
        total += s.width;
    return total;
}

std::uint32_t KernelHarness::region_of(std::uint8_t reg) const {
    for (const auto &[r, addr] : regions)
        if (r == reg)
            return addr;
    throw std::out_of_range("register r" + std::to_string(reg) + " has no memory region");
}

KernelHarness parse_harness(const Program &program) {
    KernelHarness h;
    auto add_region = [&](std::uint8_t reg) {
        for (const auto &r : h.regions)
            if (r.first == reg)
                return;
        h.regions.emplace_back(reg, kRegionBase + kRegionSize * static_cast<std::uint32_t>(h.regions.size()));
    };
    auto secret_index = [&](const std::string &name, const std::string &line) {
        for (std::size_t k = 0; k < h.secrets.size(); ++k)
            if (h.secrets[k].name == name)
                return k;
        throw std::invalid_argument("directive '" + line + "': undeclared secret '" + name + "'");
    };
    for (const auto &line : program.all_comments()) {
        auto tok = tokens(line);
        if (tok.size() < 2 || tok[0] != ";" || tok[1].empty() || tok[1][0] != '@')
            continue;
        const std::string kind = tok[1];
        tok.erase(tok.begin(), tok.begin() + 2);
        if (kind == "@secret") {
            if (tok.size() != 3)
                throw std::invalid_argument("directive '" + line + "': expected @secret <name> width=W shares=K");
            KernelHarness::Secret s{tok[0], parse_count(key_value(tok[1], "width", line), line),
                                    parse_count(key_value(tok[2], "shares", line), line)};
            if (s.width == 0 || s.width > 4)
                throw std::invalid_argument("directive '" + line + "': width must be 1-4 bytes");
            if (s.shares < 1)
                throw std::invalid_argument("directive '" + line + "': need at least one share");
            h.secrets.push_back(s);
        } else if (kind == "@share") {
            if (tok.size() != 3)
                throw std::invalid_argument("directive '" + line + "': expected @share <name> <index> <location>");
            KernelHarness::Share sh;
            sh.secret = secret_index(tok[0], line);
            sh.index = parse_count(tok[1], line);
            if (sh.index >= h.secrets[sh.secret].shares)
                throw std::invalid_argument("directive '" + line + "': share index out of range");
            const std::string &loc = tok[2];
            if (loc.front() == '[') {
                if (loc.back() != ']')
                    throw std::invalid_argument("directive '" + line + "': malformed memory location");
                const std::string inner = loc.substr(1, loc.size() - 2);
                const auto plus = inner.find('+');
                sh.reg = parse_reg(inner.substr(0, plus), line);
                sh.offset = plus == std::string::npos ? 0 : static_cast<std::uint32_t>(parse_count(inner.substr(plus + 1), line));
                if (sh.offset + h.secrets[sh.secret].width > kRegionSize)
                    throw std::invalid_argument("directive '" + line + "': share exceeds its memory region");
                add_region(sh.reg);
            } else {
                sh.in_memory = false;
                sh.reg = parse_reg(loc, line);
            }
            if (sh.reg == kScratchReg)
                throw std::invalid_argument("directive '" + line + "': r7 is reserved");
            h.shares.push_back(sh);
        } else if (kind == "@const") {
            if (tok.size() != 2)
                throw std::invalid_argument("directive '" + line + "': expected @const <reg> <value>");
            h.constants.push_back({parse_reg(tok[0], line), static_cast<std::uint32_t>(parse_count(tok[1], line))});
        } else if (kind == "@table") {
            if (tok.size() != 2 || tok[1].size() % 2 != 0 || tok[1].size() / 2 > kRegionSize)
                throw std::invalid_argument("directive '" + line + "': expected @table <reg> <hex bytes>");
            KernelHarness::Table t{parse_reg(tok[0], line), {}};
            for (std::size_t k = 0; k < tok[1].size(); k += 2)
                t.bytes.push_back(static_cast<std::uint8_t>(parse_count("0x" + tok[1].substr(k, 2), line)));
            add_region(t.reg);
            h.tables.push_back(std::move(t));
        } else {
            throw std::invalid_argument("unknown directive '" + kind + "'");
        }
    }
    for (std::size_t s = 0; s < h.secrets.size(); ++s)
        for (std::size_t k = 0; k < h.secrets[s].shares; ++k) {
            auto n = std::count_if(h.shares.begin(), h.shares.end(),
                                   [&](const auto &sh) { return sh.secret == s && sh.index == k; });
            if (n != 1)
                throw std::invalid_argument("secret '" + h.secrets[s].name + "' share " + std::to_string(k) +
                                            " must be placed exactly once");
        }
    for (const auto &sh : h.shares)
        if (!sh.in_memory && std::any_of(h.regions.begin(), h.regions.end(), [&](auto &r) { return r.first == sh.reg; }))
            throw std::invalid_argument("register r" + std::to_string(sh.reg) + " is both a share and a base address");
    return h;
}

std::vector<std::vector<std::uint8_t>> share_secret(std::span<const std::uint8_t> secret, std::size_t shares,
                                                    CounterRng &rng) {
    std::vector<std::vector<std::uint8_t>> out(shares, std::vector<std::uint8_t>(secret.begin(), secret.end()));
    for (std::size_t k = 1; k < shares; ++k)
        for (std::size_t b = 0; b < secret.size(); ++b) {
            const auto mask = static_cast<std::uint8_t>(rng.next() >> 56);
            out[k][b] = mask;
            out[0][b] ^= mask;
        }
    return out;
}

TraceInputs make_inputs(const KernelHarness &h, const ExperimentSpec &spec, std::size_t i) {
    CounterRng rng(spec.seed, i);
    TraceInputs in;
    in.label = i % 2 == 0 ? TraceClass::Fixed : TraceClass::Random;
    const std::size_t nbytes = h.secret_bytes();
    in.secret.resize(nbytes);
    for (auto &b : in.secret)
        b = static_cast<std::uint8_t>(rng.next() >> 56);
    if (spec.mode == InputMode::FixedVsRandom && in.label == TraceClass::Fixed) {
        if (!spec.fixed_secret.empty() && spec.fixed_secret.size() != nbytes)
            throw std::invalid_argument("fixed secret has " + std::to_string(spec.fixed_secret.size()) +
                                        " bytes, kernel declares " + std::to_string(nbytes));
        for (std::size_t b = 0; b < nbytes; ++b)
            in.secret[b] = spec.fixed_secret.empty() ? 0 : spec.fixed_secret[b];
    }

    MachineState &s = in.state;
    s = MachineState::blank(spec.memory_bytes);
    for (std::uint8_t r = 0; r < 8; ++r)
        s.regs[r] = rng.next_u32();
    s.flags = static_cast<std::uint8_t>(rng.next() >> 60);
    s.shadow.op1 = rng.next_u32();
    s.shadow.op2 = rng.next_u32();
    s.shadow.result = rng.next_u32();
    s.shadow.bus = rng.next_u32();
    s.shadow.addr = rng.next_u32();
    s.shadow.prev_class = OpClass::Move;

    for (const auto &[reg, addr] : h.regions) {
        if (addr + kRegionSize > spec.memory_bytes)
            throw std::invalid_argument("memory too small for the kernel's data regions");
        s.regs[reg] = addr;
    }
    for (const auto &c : h.constants)
        s.regs[c.reg] = c.value;
    for (const auto &t : h.tables)
        std::copy(t.bytes.begin(), t.bytes.end(), s.memory.begin() + h.region_of(t.reg));

    std::size_t at = 0;
    for (std::size_t sec = 0; sec < h.secrets.size(); ++sec) {
        const auto &decl = h.secrets[sec];
        auto shares = share_secret(std::span<const std::uint8_t>(in.secret).subspan(at, decl.width), decl.shares, rng);
        at += decl.width;
        for (const auto &sh : h.shares) {
            if (sh.secret != sec)
                continue;
            if (sh.in_memory) {
                const std::uint32_t base = h.region_of(sh.reg) + sh.offset;
                std::copy(shares[sh.index].begin(), shares[sh.index].end(), s.memory.begin() + base);
            } else {
                std::uint32_t word = 0;
                for (std::size_t b = 0; b < decl.width; ++b)
                    word |= std::uint32_t{shares[sh.index][b]} << (8 * b);
                s.regs[sh.reg] = word;
            }
        }
    }
    return in;
}

ExperimentResult run_experiment(const ExperimentSpec &spec, const LeakageModel &model) {
    const KernelHarness h = parse_harness(spec.kernel);
    const std::size_t n = spec.n_traces, m = spec.kernel.size(), k = model.size();
    if (m == 0)
        throw std::invalid_argument("kernel has no instructions");
    ExperimentResult res;
    res.traces = TraceSet(n, m);
    res.traces.seed = spec.seed;

    std::vector<std::uint64_t> columns = spec.component_columns;
    if (spec.record_components) {
        if (columns.empty()) {
            columns.resize(m);
            for (std::size_t j = 0; j < m; ++j)
                columns[j] = j;
        }
        for (auto c : columns)
            if (c >= m)
                throw std::out_of_range("component column " + std::to_string(c) + " beyond kernel length");
        res.components = ComponentMatrix(n, columns, model.names(), model.coefficients);
    }

    constexpr std::size_t kShard = 1024;
    const std::size_t shards = (n + kShard - 1) / kShard;
    parallel_for(shards, resolve_threads(spec.threads), [&](std::size_t shard) {
        std::vector<double> comps(m * k), power(m);
        const std::size_t end = std::min(n, (shard + 1) * kShard);
        for (std::size_t i = shard * kShard; i < end; ++i) {
            TraceInputs in = make_inputs(h, spec, i);
            try {
                execute_into(spec.kernel, in.state, model, spec.record_components ? std::span<double>(comps)
                                                                                 : std::span<double>(),
                             power);
            } catch (const ExecutionError &e) {
                throw ExecutionError("trace " + std::to_string(i) + ": " + e.what());
            }
            res.traces.labels[i] = in.label;
            auto row = res.traces.row(i);
            for (std::size_t j = 0; j < m; ++j)
                row[j] = static_cast<float>(power[j]);
            if (spec.record_components) {
                res.components.labels[i] = in.label;
                for (std::size_t col = 0; col < columns.size(); ++col)
                    for (std::size_t c = 0; c < k; ++c)
                        res.components.at(i, col, c) = static_cast<float>(comps[columns[col] * k + c]);
            }
        }
    });
    if (spec.noise_sigma_pct > 0.0)
        res.traces = add_noise(std::move(res.traces), spec.noise_sigma_pct, derive_seed(spec.seed, kNoiseTag));
    return res;
}

TraceSet add_noise(TraceSet set, double sigma_percent, std::uint64_t seed) {
    if (!(sigma_percent >= 0.0))
        throw std::invalid_argument("noise sigma must be non-negative");
    if (sigma_percent == 0.0 || set.samples.empty())
        return set;
    const auto [lo, hi] = std::minmax_element(set.samples.begin(), set.samples.end());
    const double sigma = sigma_percent / 100.0 * (static_cast<double>(*hi) - static_cast<double>(*lo));
    constexpr std::size_t kShard = 4096;
    const std::size_t shards = (set.n_traces + kShard - 1) / kShard;
    parallel_for(shards, resolve_threads(0), [&](std::size_t shard) {
        const std::size_t end = std::min(set.n_traces, (shard + 1) * kShard);
        for (std::size_t i = shard * kShard; i < end; ++i) {
            CounterRng rng(seed, i);
            for (auto &x : set.row(i))
                x = static_cast<float>(static_cast<double>(x) + sigma * rng.gaussian());
        }
    });
    return set;
}

SnrResult snr(const TraceSet &set, std::span<const std::uint32_t> target) {
    if (target.size() != set.n_traces)
        throw std::invalid_argument("need one target value per trace");
    std::map<std::uint32_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < target.size(); ++i)
        groups[target[i]].push_back(i);
    if (groups.size() < 2)
        throw std::invalid_argument("target takes a single value; SNR undefined");
    for (const auto &[v, rows] : groups)
        if (rows.size() < 2)
            throw std::invalid_argument("target value " + std::to_string(v) + " has fewer than two traces");
    SnrResult out{std::vector<double>(set.n_samples, 0.0), std::vector<bool>(set.n_samples, false)};
    const double n = static_cast<double>(set.n_traces);
    for (std::size_t j = 0; j < set.n_samples; ++j) {
        std::vector<Moments> g;
        Moments all;
        for (const auto &[v, rows] : groups) {
            Moments mg;
            for (auto i : rows)
                mg = update(mg, set.at(i, j));
            all = merge(all, mg);
            g.push_back(mg);
        }
        double between = 0.0, within = 0.0;
        for (const auto &mg : g) {
            const double w = static_cast<double>(mg.n) / n;
            between += w * (mg.mean - all.mean) * (mg.mean - all.mean);
            within += w * mg.variance();
        }
        if (within == 0.0) {
            out.infinite[j] = between > 0.0;
            out.snr[j] = between > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
        } else {
            out.snr[j] = between / within;
        }
    }
    return out;
}

} // namespace hileak
