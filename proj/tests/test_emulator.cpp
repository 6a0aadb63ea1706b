#include "hileak/combiner.hpp"
#include "hileak/error.hpp"
#include "hileak/experiment.hpp"
#include "hileak/isa.hpp"
#include "hileak/machine.hpp"
#include "hileak/model.hpp"
#include "hileak/stats.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cmath>

using namespace hileak;
using hileak::testing::source_path;
using hileak::testing::TempDir;

namespace {

Program toy() { return load_program(source_path("corpus/toy_second_order.s").string()); }

double component(const ExecutionRecord &rec, const LeakageModel &m, std::size_t step, const std::string &name) {
    return rec.components[step * rec.n_components + m.index_of(name)];
}

MachineState zeroed() {
    MachineState s = MachineState::blank();
    s.regs[kSp] = static_cast<std::uint32_t>(s.memory.size());
    return s;
}

const std::vector<std::string> kCorpus{"toy_second_order", "toy_second_order_fixed", "toy_third_order",
                                       "xoodoo_chi",       "present_sbox",           "b2a",
                                       "address_leak"};

} // namespace

TEST(Parse, LoadByte) {
    Program p = parse_program("ldrb r4, [r1]\n");
    ASSERT_EQ(p.size(), 1u);
    const auto &i = p.code[0];
    EXPECT_EQ(i.op, Op::Ldrb);
    EXPECT_EQ(i.rd, 4);
    EXPECT_EQ(i.a, Operand::r(1));
    EXPECT_EQ(i.b, Operand::i(0));
    EXPECT_EQ(i.line, 1u);
}

TEST(Parse, BarrierMoveAndNop) {
    Program p = parse_program("mov r7, r7\nnop\n");
    ASSERT_EQ(p.size(), 2u);
    EXPECT_EQ(p.code[0], make_mov(7, 7));
    EXPECT_EQ(p.code[1], make_mov(7, 7));
    EXPECT_TRUE(is_barrier_nop(p.code[0]));
}

TEST(Parse, PaddingDirectiveExpands) {
    Program p = parse_program("  ; nop padding\nldrb r4, [r1]\n");
    EXPECT_EQ(p.size(), 10u);
    ParseOptions o;
    o.padding_length = 3;
    EXPECT_EQ(parse_program("; nop padding\n", o).size(), 3u);
    EXPECT_EQ(toy().size(), 32u);
}

TEST(Parse, ErrorsCarryLineNumbers) {
    auto line_of = [](const std::string &src) -> std::size_t {
        try {
            parse_program(src);
        } catch (const ParseError &e) {
            return e.line();
        }
        return 0;
    };
    EXPECT_EQ(line_of("movs r0, #1\nldr r9, [r1]\n"), 2u);
    EXPECT_EQ(line_of("; c\n\nfoo r1, r2\n"), 3u);
    EXPECT_EQ(line_of("movs r0, #256\n"), 1u);
    EXPECT_EQ(line_of("ldr r0, [r1, #3]\n"), 1u);
    EXPECT_EQ(line_of("ldrb r0, [r1, #32]\n"), 1u);
    EXPECT_EQ(line_of("adds r0, r1, #9\n"), 1u);
    EXPECT_EQ(line_of("eors r0, lr\n"), 1u);
    EXPECT_EQ(line_of("push {r1, r9}\n"), 1u);
    EXPECT_EQ(line_of("ldr r0, [r1\n"), 1u);
}

TEST(Parse, SubsetAccepted) {
    const char *src = "ldr r0, [r1, #4]\nldrb r0, [r1, r2]\nstr r0, [sp, #8]\nstrb r3, [r4, #31]\n"
                      "push {r4-r6}\npop {r4, r5, r6}\nmovs r0, #255\nlsls r1, r1, #4\nlsrs r1, r2, #32\n"
                      "adds r1, r3, r1\nadds r0, #200\nsubs r2, r2, r6\neors r1, r2\nands r3, r4\n"
                      "orrs r5, r6\nbics r0, r1\nmvns r3, r3\nmov r5, sp\n";
    Program p = parse_program(src);
    EXPECT_EQ(p.size(), 18u);
    EXPECT_EQ(p.code[4].reglist, 0x70);
    EXPECT_EQ(p.code[12].a, Operand::r(1));
}

TEST(Parse, EmitRoundTripsCorpus) {
    for (const auto &name : kCorpus) {
        Program p = load_program(source_path("corpus/" + name + ".s").string());
        Program q = parse_program(emit_program(p));
        EXPECT_EQ(p, q) << name;
        EXPECT_EQ(p.all_comments(), q.all_comments()) << name;
        EXPECT_EQ(emit_program(p), emit_program(q)) << name;
    }
}

TEST(Execute, OneSamplePerInstruction) {
    Program p = toy();
    auto h = parse_harness(p);
    ExperimentSpec spec;
    spec.kernel = p;
    auto in = make_inputs(h, spec, 0);
    auto rec = execute(p, in.state, default_model());
    EXPECT_EQ(rec.n_steps, 32u);
    EXPECT_EQ(rec.power.size(), 32u);
    EXPECT_EQ(rec.components.size(), 32u * 28u);
}

TEST(Execute, HammingWeightOfResult) {
    LeakageModel m = default_model();
    auto rec = execute(parse_program("movs r4, #0\nmovs r4, #255\n"), zeroed(), m);
    EXPECT_EQ(component(rec, m, 0, "result_hw"), 0.0);
    EXPECT_EQ(component(rec, m, 1, "result_hw"), 8.0);
}

TEST(Execute, ConsecutiveLoadsTransition) {
    LeakageModel m = default_model();
    CounterRng rng(3, 0);
    for (int rep = 0; rep < 50; ++rep) {
        MachineState s = zeroed();
        const std::uint32_t a = rng.next_u32(), b = rng.next_u32();
        s.regs[1] = 0x400;
        s.regs[2] = 0x500;
        s.store(0x400, a, 4);
        s.store(0x500, b, 4);
        auto rec = execute(parse_program("ldr r4, [r1]\nldr r5, [r2]\n"), s, m);
        const double hd = std::popcount(a ^ b);
        EXPECT_EQ(component(rec, m, 1, "result_hd"), hd);
        EXPECT_EQ(component(rec, m, 1, "bus_hd"), hd);
        EXPECT_EQ(component(rec, m, 1, "result_hw"), std::popcount(b));
        EXPECT_EQ(rec.final_state.regs[4], a);
        EXPECT_EQ(rec.final_state.regs[5], b);
    }
}

TEST(Execute, ArchitecturalSemantics) {
    CounterRng rng(4, 0);
    for (int rep = 0; rep < 200; ++rep) {
        MachineState s = zeroed();
        const std::uint32_t x = rng.next_u32(), y = rng.next_u32();
        s.regs[0] = x;
        s.regs[1] = y;
        Program p = parse_program("mov r2, r0\neors r2, r1\nmov r3, r0\nands r3, r1\nmov r4, r0\norrs r4, r1\n"
                                  "mov r5, r0\nbics r5, r1\nmvns r6, r0\n");
        auto st = execute(p, s, default_model()).final_state;
        EXPECT_EQ(st.regs[2], x ^ y);
        EXPECT_EQ(st.regs[3], x & y);
        EXPECT_EQ(st.regs[4], x | y);
        EXPECT_EQ(st.regs[5], x & ~y);
        EXPECT_EQ(st.regs[6], ~x);

        Program q = parse_program("adds r2, r0, r1\nsubs r3, r0, r1\nlsls r4, r0, #5\nlsrs r5, r0, #7\n");
        auto st2 = execute(q, s, default_model()).final_state;
        EXPECT_EQ(st2.regs[2], x + y);
        EXPECT_EQ(st2.regs[3], x - y);
        EXPECT_EQ(st2.regs[4], x << 5);
        EXPECT_EQ(st2.regs[5], x >> 7);
        EXPECT_EQ((st2.flags >> 3) & 1, 0); // N clear after lsrs #7
        auto st3 = execute(parse_program("subs r3, r0, r1\n"), s, default_model()).final_state;
        EXPECT_EQ((st3.flags >> 1) & 1, x >= y ? 1 : 0);
        EXPECT_EQ((st3.flags >> 3) & 1, (x - y) >> 31);
    }
    MachineState s = zeroed();
    s.regs[0] = 5;
    auto st = execute(parse_program("subs r1, r0, #5\n"), s, default_model()).final_state;
    EXPECT_EQ(st.regs[1], 0u);
    EXPECT_EQ((st.flags >> 2) & 1, 1); // Z
    EXPECT_EQ((st.flags >> 1) & 1, 1); // C
}

TEST(Execute, StoresAndStack) {
    MachineState s = zeroed();
    s.regs[1] = 0x600;
    s.regs[4] = 0xdeadbeef;
    s.regs[5] = 0x12345678;
    auto st = execute(parse_program("str r4, [r1, #8]\nstrb r5, [r1, #1]\npush {r4, r5}\nmovs r4, #0\nmovs r5, #0\n"
                                    "pop {r4, r5}\nldrb r6, [r1, #11]\n"),
                      s, default_model())
                  .final_state;
    EXPECT_EQ(st.load(0x608, 4), 0xdeadbeefu);
    EXPECT_EQ(st.load(0x601, 1), 0x78u);
    EXPECT_EQ(st.regs[4], 0xdeadbeefu);
    EXPECT_EQ(st.regs[5], 0x12345678u);
    EXPECT_EQ(st.regs[6], 0xdeu);
    EXPECT_EQ(st.regs[kSp], s.regs[kSp]);
}

TEST(Execute, Faults) {
    MachineState s = zeroed();
    s.regs[1] = 0x7fff0000;
    EXPECT_THROW(execute(parse_program("ldr r0, [r1]\n"), s, default_model()), ExecutionError);
    EXPECT_THROW(execute(parse_program("pop {r0}\n"), zeroed(), default_model()), ExecutionError);
}

TEST(Execute, BarriersOverwriteShadow) {
    MachineState s = zeroed();
    s.regs[1] = 0x400;
    s.regs[7] = 0xa5a5a5a5;
    s.store(0x400, 0x0f0f0f0f, 4);
    auto rec = execute(parse_program("ldr r4, [r1]\nmov r7, r7\n"), s, default_model());
    EXPECT_EQ(rec.final_state.shadow.op1, 0xa5a5a5a5u);
    EXPECT_EQ(rec.final_state.shadow.op2, 0xa5a5a5a5u);
    EXPECT_EQ(rec.final_state.shadow.bus, 0x0f0f0f0fu);
    auto rec2 = execute(parse_program("ldr r4, [r1]\npush {r7}\npop {r7}\n"), s, default_model());
    EXPECT_EQ(rec2.final_state.shadow.bus, 0xa5a5a5a5u);
    EXPECT_EQ(rec2.final_state.regs[7], 0xa5a5a5a5u);
}

TEST(Execute, PureFunction) {
    Program p = toy();
    auto h = parse_harness(p);
    ExperimentSpec spec;
    spec.kernel = p;
    auto in = make_inputs(h, spec, 17);
    auto a = execute(p, in.state, default_model());
    auto b = execute(p, in.state, default_model());
    EXPECT_EQ(a.power, b.power);
    EXPECT_EQ(a.components, b.components);
}

TEST(Model, LinearInCoefficients) {
    Program p = toy();
    auto h = parse_harness(p);
    ExperimentSpec spec;
    spec.kernel = p;
    auto in = make_inputs(h, spec, 3);
    LeakageModel m = default_model();
    auto base = execute(p, in.state, m);
    LeakageModel scaled = m;
    for (auto &c : scaled.coefficients)
        c *= 3.0;
    auto tripled = execute(p, in.state, scaled);
    for (std::size_t j = 0; j < base.power.size(); ++j)
        EXPECT_NEAR(tripled.power[j], 3.0 * base.power[j], 1e-9 * std::abs(base.power[j]) + 1e-12);

    const std::size_t c = m.index_of("bus_hd");
    LeakageModel without = m;
    without.coefficients[c] = 0.0;
    auto reduced = execute(p, in.state, without);
    for (std::size_t j = 0; j < base.power.size(); ++j)
        EXPECT_NEAR(reduced.power[j], base.power[j] - m.coefficients[c] * base.components[j * 28 + c], 1e-9);
}

TEST(Model, DefaultShapeAndShippedFile) {
    LeakageModel m = default_model();
    EXPECT_EQ(m.size(), 28u);
    EXPECT_EQ(m.coefficients.size(), 28u);
    EXPECT_THROW(m.index_of("nope"), std::out_of_range);
    LeakageModel shipped = load_model(source_path("models/default_model.json"));
    EXPECT_EQ(shipped.names(), m.names());
    EXPECT_EQ(shipped.coefficients, m.coefficients);

    TempDir dir("model");
    save_model(m, dir / "m.json");
    LeakageModel back = load_model(dir / "m.json");
    EXPECT_EQ(back.names(), m.names());
    EXPECT_EQ(back.coefficients, m.coefficients);
    for (std::size_t k = 0; k < m.size(); ++k)
        EXPECT_EQ(back.components[k].cls, m.components[k].cls);
}

TEST(Harness, DirectivesAndErrors) {
    auto h = parse_harness(toy());
    ASSERT_EQ(h.secrets.size(), 1u);
    EXPECT_EQ(h.secrets[0].shares, 3u);
    EXPECT_EQ(h.secret_bytes(), 1u);
    EXPECT_EQ(h.region_of(1), kRegionBase);
    EXPECT_EQ(h.region_of(2), kRegionBase + kRegionSize);
    EXPECT_THROW(parse_harness(parse_program("; @secret v width=1 shares=2\n; @share v 0 [r1]\nmovs r0, #1\n")),
                 std::invalid_argument);
    EXPECT_THROW(parse_harness(parse_program("; @secret v width=1 shares=1\n; @share v 0 [r1]\n; @share v 0 [r2]\n"
                                             "movs r0, #1\n")),
                 std::invalid_argument);
}

TEST(Experiment, SharesXorToSecret) {
    CounterRng rng(5, 0);
    for (int rep = 0; rep < 1000000; ++rep) {
        const std::uint8_t v = static_cast<std::uint8_t>(rng.next());
        auto shares = share_secret(std::span<const std::uint8_t>(&v, 1), 3, rng);
        ASSERT_EQ(static_cast<std::uint8_t>(shares[0][0] ^ shares[1][0] ^ shares[2][0]), v);
    }
}

TEST(Experiment, InputsFollowClassesAndLayout) {
    Program p = toy();
    auto h = parse_harness(p);
    ExperimentSpec spec;
    spec.kernel = p;
    spec.fixed_secret = {0x3c};
    std::size_t random_nonfixed = 0;
    for (std::size_t i = 0; i < 200; ++i) {
        auto in = make_inputs(h, spec, i);
        EXPECT_EQ(in.label, i % 2 ? TraceClass::Random : TraceClass::Fixed);
        const auto &mem = in.state.memory;
        const std::uint8_t v = mem[h.region_of(1)] ^ mem[h.region_of(2)] ^ mem[h.region_of(3)];
        EXPECT_EQ(v, in.secret[0]);
        if (in.label == TraceClass::Fixed)
            EXPECT_EQ(v, 0x3c);
        else
            random_nonfixed += v != 0x3c;
    }
    EXPECT_GT(random_nonfixed, 90u);
    spec.fixed_secret = {1, 2};
    EXPECT_THROW(make_inputs(h, spec, 0), std::invalid_argument);
}

TEST(Experiment, DeterministicAndThreadIndependent) {
    ExperimentSpec spec;
    spec.kernel = toy();
    spec.n_traces = 3000;
    spec.noise_sigma_pct = 0.25;
    spec.seed = 9;
    spec.threads = 1;
    auto a = run_experiment(spec, default_model());
    spec.threads = 3;
    auto b = run_experiment(spec, default_model());
    EXPECT_EQ(a.traces, b.traces);
    EXPECT_EQ(a.components, b.components);
    spec.seed = 10;
    EXPECT_NE(run_experiment(spec, default_model()).traces.samples, a.traces.samples);
}

TEST(Experiment, ComponentMatrixReproducesCleanPower) {
    ExperimentSpec spec;
    spec.kernel = toy();
    spec.n_traces = 500;
    spec.seed = 4;
    spec.component_columns = {9, 22};
    auto r = run_experiment(spec, default_model());
    ASSERT_EQ(r.components.n_samples, 2u);
    for (std::size_t i = 0; i < 500; ++i) {
        EXPECT_NEAR(r.components.power(i, 0), r.traces.at(i, 9), 1e-2);
        EXPECT_NEAR(r.components.power(i, 1), r.traces.at(i, 22), 1e-2);
        EXPECT_EQ(r.components.labels[i], r.traces.labels[i]);
    }
}

TEST(Noise, ZeroIsIdentityAndSigmaMatches) {
    TraceSet clean = hileak::testing::gaussian_set(20000, 50, 6);
    EXPECT_EQ(add_noise(clean, 0.0, 1), clean);
    float lo = clean.samples[0], hi = lo;
    for (float x : clean.samples) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    const double target = 0.0025 * (hi - lo);
    TraceSet noisy = add_noise(clean, 0.25, 2);
    Moments d;
    for (std::size_t k = 0; k < clean.samples.size(); ++k)
        d = update(d, static_cast<double>(noisy.samples[k]) - clean.samples[k]);
    EXPECT_NEAR(std::sqrt(d.variance()), target, 0.02 * target);
    EXPECT_EQ(add_noise(clean, 0.25, 2), noisy);
}

TEST(Snr, DeterministicAndNullCases) {
    TraceSet s(1000, 2);
    std::vector<std::uint32_t> target(1000);
    CounterRng rng(7, 0);
    for (std::size_t i = 0; i < 1000; ++i) {
        target[i] = i % 4;
        s.at(i, 0) = static_cast<float>(target[i]);
        s.at(i, 1) = static_cast<float>(rng.gaussian());
    }
    auto r = snr(s, target);
    EXPECT_TRUE(r.infinite[0]);
    EXPECT_FALSE(r.infinite[1]);

    TraceSet g = hileak::testing::gaussian_set(100000, 3, 8);
    std::vector<std::uint32_t> t(100000);
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<std::uint32_t>(CounterRng(99, i).next() % 9);
    for (double v : snr(g, t).snr)
        EXPECT_LT(v, 0.01);
    std::vector<std::uint32_t> lonely(100000, 0);
    lonely[0] = 1;
    EXPECT_THROW(snr(g, lonely), std::invalid_argument);
}

TEST(Snr, ToyCalibrationBand) {
    // 0.25% noise puts the SNR of both combined values of the toy leak inside
    // the band measured on hardware.
    ExperimentSpec spec;
    spec.kernel = toy();
    spec.n_traces = 20000;
    spec.noise_sigma_pct = 0.25;
    spec.seed = 7;
    spec.record_components = false;
    auto r = run_experiment(spec, default_model());
    auto h = parse_harness(spec.kernel);
    std::vector<std::uint32_t> v0(spec.n_traces), m12(spec.n_traces);
    for (std::size_t i = 0; i < spec.n_traces; ++i) {
        const auto &mem = make_inputs(h, spec, i).state.memory;
        v0[i] = std::popcount(unsigned(mem[h.region_of(1)]));
        m12[i] = std::popcount(unsigned(mem[h.region_of(2)] ^ mem[h.region_of(3)]));
    }
    const double s0 = snr(r.traces, v0).snr[9], s1 = snr(r.traces, m12).snr[22];
    EXPECT_GE(s0, 0.012);
    EXPECT_LE(s0, 0.063);
    EXPECT_GE(s1, 0.012);
    EXPECT_LE(s1, 0.063);
}

TEST(Toy, NoiseFreeLeakAtTwentyThousand) {
    ExperimentSpec spec;
    spec.kernel = toy();
    spec.n_traces = 20000;
    spec.seed = 1;
    spec.record_components = false;
    auto r = multivariate_ttest(run_experiment(spec, default_model()).traces, CombinerConfig{});
    ASSERT_FALSE(r.leaks.empty());
    EXPECT_TRUE(r.leaks.front().index.contains(22));
    EXPECT_EQ(r.leaks.front().index, pair_index(9, 22));
}

TEST(Toy, FirstOrderSecureAtHalfMillion) {
    ExperimentSpec spec;
    spec.kernel = toy();
    spec.n_traces = 500000;
    spec.seed = 2;
    spec.record_components = false;
    auto set = run_experiment(spec, default_model()).traces;
    auto t = univariate_ttest(TraceSetSource(set));
    const double thr = corrected_threshold(t.size(), 1e-5, 1e5);
    for (std::size_t j = 0; j < t.size(); ++j)
        EXPECT_LT(std::abs(t[j]), thr) << "sample " << j;
}
