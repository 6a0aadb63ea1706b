#include "hileak/machine.hpp"

#include "hileak/error.hpp"

#include <algorithm>
#include <bit>
#include <string>

namespace hileak {
namespace {

constexpr std::uint8_t kN = 8, kZ = 4, kC = 2, kV = 1;

std::uint8_t nz(std::uint32_t r, std::uint8_t flags) {
    flags &= static_cast<std::uint8_t>(~(kN | kZ));
    if (r & 0x80000000u)
        flags |= kN;
    if (r == 0)
        flags |= kZ;
    return flags;
}

std::uint32_t add_with_flags(std::uint32_t x, std::uint32_t y, bool carry_in, std::uint8_t &flags) {
    const std::uint64_t wide = std::uint64_t{x} + y + (carry_in ? 1 : 0);
    const auto r = static_cast<std::uint32_t>(wide);
    flags = nz(r, 0);
    if (wide >> 32)
        flags |= kC;
    if (((x ^ r) & (y ^ r)) & 0x80000000u)
        flags |= kV;
    return r;
}

std::uint32_t operand_value(const MachineState &s, const Operand &o) {
    return o.is_imm() ? static_cast<std::uint32_t>(o.imm) : s.regs[o.reg];
}

void update_shadow(const StepRecord &rec, Shadow &sh) {
    if (rec.has_op1)
        sh.op1 = rec.op1;
    if (rec.has_op2)
        sh.op2 = rec.op2;
    if (rec.has_result)
        sh.result = rec.result;
    if (rec.n_bus) {
        sh.bus = rec.bus[rec.n_bus - 1u];
        sh.addr = rec.addr[rec.n_bus - 1u];
    }
    sh.prev_class = rec.cls;
}

} // namespace

MachineState MachineState::blank(std::size_t memory_bytes) {
    MachineState s;
    s.memory.assign(memory_bytes, 0);
    s.regs[kSp] = static_cast<std::uint32_t>(memory_bytes);
    return s;
}

std::uint32_t MachineState::load(std::uint32_t addr, unsigned width) const {
    if (width == 4 && addr % 4 != 0)
        throw ExecutionError("unaligned word load at 0x" + std::to_string(addr));
    if (std::uint64_t{addr} + width > memory.size())
        throw ExecutionError("load of " + std::to_string(width) + " byte(s) at " + std::to_string(addr) +
                             " outside memory of " + std::to_string(memory.size()) + " bytes");
    std::uint32_t v = 0;
    for (unsigned k = 0; k < width; ++k)
        v |= std::uint32_t{memory[addr + k]} << (8 * k);
    return v;
}

void MachineState::store(std::uint32_t addr, std::uint32_t value, unsigned width) {
    if (width == 4 && addr % 4 != 0)
        throw ExecutionError("unaligned word store at " + std::to_string(addr));
    if (std::uint64_t{addr} + width > memory.size())
        throw ExecutionError("store of " + std::to_string(width) + " byte(s) at " + std::to_string(addr) +
                             " outside memory of " + std::to_string(memory.size()) + " bytes");
    for (unsigned k = 0; k < width; ++k)
        memory[addr + k] = static_cast<std::uint8_t>(value >> (8 * k));
}

bool MachineState::equivalent(const MachineState &o, std::uint32_t live_floor) const {
    for (std::uint8_t r = 0; r < kRegisterCount; ++r)
        if (r != kScratchReg && regs[r] != o.regs[r])
            return false;
    if (memory.size() != o.memory.size())
        return false;
    const std::size_t floor = std::min<std::size_t>(live_floor, memory.size());
    return std::equal(memory.begin() + static_cast<std::ptrdiff_t>(floor), memory.end(),
                      o.memory.begin() + static_cast<std::ptrdiff_t>(floor));
}

void step(const Instruction &ins, MachineState &s, StepRecord &rec) {
    rec = StepRecord{};
    rec.cls = op_class(ins.op);
    rec.flags_before = s.flags;
    if (ins.b.is_imm())
        rec.imm = static_cast<std::uint32_t>(ins.b.imm);
    auto write_dest = [&](std::uint32_t value) {
        rec.has_dest = true;
        rec.dest_old = s.regs[ins.rd];
        rec.dest_new = value;
        rec.has_result = true;
        rec.result = value;
        s.regs[ins.rd] = value;
    };

    switch (ins.op) {
    case Op::Ldr:
    case Op::Ldrb: {
        const unsigned width = ins.op == Op::Ldr ? 4 : 1;
        const std::uint32_t addr = s.regs[ins.a.reg] + operand_value(s, ins.b);
        const std::uint32_t v = s.load(addr, width);
        rec.n_bus = 1;
        rec.bus[0] = v;
        rec.addr[0] = addr;
        write_dest(v);
        break;
    }
    case Op::Str:
    case Op::Strb: {
        const unsigned width = ins.op == Op::Str ? 4 : 1;
        const std::uint32_t addr = s.regs[ins.a.reg] + operand_value(s, ins.b);
        const std::uint32_t v = width == 4 ? s.regs[ins.rd] : (s.regs[ins.rd] & 0xff);
        s.store(addr, v, width);
        rec.has_op1 = true;
        rec.op1 = s.regs[ins.rd];
        rec.n_bus = 1;
        rec.bus[0] = v;
        rec.addr[0] = addr;
        break;
    }
    case Op::Push: {
        const unsigned count = static_cast<unsigned>(std::popcount(ins.reglist));
        std::uint32_t sp = s.regs[kSp];
        if (sp < 4 * count)
            throw ExecutionError("stack overflow on push");
        sp -= 4 * count;
        std::uint32_t addr = sp;
        for (std::uint8_t r = 0; r < 8; ++r) {
            if (!(ins.reglist & (1u << r)))
                continue;
            s.store(addr, s.regs[r], 4);
            rec.bus[rec.n_bus] = s.regs[r];
            rec.addr[rec.n_bus++] = addr;
            addr += 4;
        }
        s.regs[kSp] = sp;
        break;
    }
    case Op::Pop: {
        const unsigned count = static_cast<unsigned>(std::popcount(ins.reglist));
        const std::uint32_t sp = s.regs[kSp];
        if (std::uint64_t{sp} + 4 * count > s.memory.size())
            throw ExecutionError("stack underflow on pop");
        std::uint32_t addr = sp;
        for (std::uint8_t r = 0; r < 8; ++r) {
            if (!(ins.reglist & (1u << r)))
                continue;
            const std::uint32_t v = s.load(addr, 4);
            rec.bus[rec.n_bus] = v;
            rec.addr[rec.n_bus++] = addr;
            rec.has_dest = true;
            rec.dest_old = s.regs[r];
            rec.dest_new = v;
            rec.has_result = true;
            rec.result = v;
            s.regs[r] = v;
            addr += 4;
        }
        s.regs[kSp] = addr;
        break;
    }
    case Op::Mov:
    case Op::Movs:
    case Op::Mvns: {
        const std::uint32_t src = operand_value(s, ins.b);
        const std::uint32_t v = ins.op == Op::Mvns ? ~src : src;
        rec.has_op1 = rec.has_op2 = true;
        rec.op1 = rec.op2 = src;
        write_dest(v);
        if (ins.op != Op::Mov)
            s.flags = nz(v, s.flags);
        break;
    }
    case Op::Lsls:
    case Op::Lsrs: {
        const std::uint32_t x = s.regs[ins.a.reg];
        const std::uint32_t amount = ins.b.is_imm() ? static_cast<std::uint32_t>(ins.b.imm) : (s.regs[ins.b.reg] & 0xff);
        std::uint32_t r = x;
        std::uint8_t flags = s.flags;
        if (amount > 0) {
            bool carry;
            if (ins.op == Op::Lsls) {
                carry = amount <= 32 && ((std::uint64_t{x} << amount) >> 32) & 1;
                r = amount >= 32 ? 0 : x << amount;
            } else {
                carry = amount <= 32 && (x >> (amount - 1)) & 1;
                r = amount >= 32 ? 0 : x >> amount;
            }
            flags = carry ? (flags | kC) : (flags & ~kC);
        }
        rec.has_op1 = rec.has_op2 = true;
        rec.op1 = x;
        rec.op2 = amount;
        write_dest(r);
        s.flags = nz(r, flags);
        break;
    }
    default: {
        const std::uint32_t x = s.regs[ins.a.reg];
        const std::uint32_t y = operand_value(s, ins.b);
        std::uint32_t r = 0;
        std::uint8_t flags = s.flags;
        switch (ins.op) {
        case Op::Adds:
            r = add_with_flags(x, y, false, flags);
            break;
        case Op::Subs:
            r = add_with_flags(x, ~y, true, flags);
            break;
        case Op::Eors:
            r = x ^ y;
            flags = nz(r, flags);
            break;
        case Op::Ands:
            r = x & y;
            flags = nz(r, flags);
            break;
        case Op::Orrs:
            r = x | y;
            flags = nz(r, flags);
            break;
        case Op::Bics:
            r = x & ~y;
            flags = nz(r, flags);
            break;
        default:
            break;
        }
        rec.has_op1 = rec.has_op2 = true;
        rec.op1 = x;
        rec.op2 = y;
        write_dest(r);
        s.flags = flags;
        break;
    }
    }
    rec.flags_after = s.flags;
}

void execute_into(const Program &program, MachineState &state, const LeakageModel &model,
                  std::span<double> components, std::span<double> power) {
    const std::size_t k = model.size();
    std::vector<double> scratch(components.empty() ? k : 0);
    StepRecord rec;
    for (std::size_t i = 0; i < program.code.size(); ++i) {
        const Shadow before = state.shadow;
        try {
            step(program.code[i], state, rec);
        } catch (const ExecutionError &e) {
            throw ExecutionError("instruction " + std::to_string(i) + " (line " +
                                 std::to_string(program.code[i].line) + "): " + e.what());
        }
        std::span<double> out = components.empty() ? std::span<double>(scratch) : components.subspan(i * k, k);
        model.evaluate(rec, before, out);
        power[i] = model.power(out);
        update_shadow(rec, state.shadow);
    }
}

ExecutionRecord execute(const Program &program, MachineState state, const LeakageModel &model) {
    ExecutionRecord out;
    out.n_steps = program.code.size();
    out.n_components = model.size();
    out.components.assign(out.n_steps * out.n_components, 0.0);
    out.power.assign(out.n_steps, 0.0);
    out.steps.resize(out.n_steps);
    const std::size_t k = model.size();
    for (std::size_t i = 0; i < out.n_steps; ++i) {
        const Shadow before = state.shadow;
        try {
            step(program.code[i], state, out.steps[i]);
        } catch (const ExecutionError &e) {
            throw ExecutionError("instruction " + std::to_string(i) + " (line " +
                                 std::to_string(program.code[i].line) + "): " + e.what());
        }
        std::span<double> comps(out.components.data() + i * k, k);
        model.evaluate(out.steps[i], before, comps);
        out.power[i] = model.power(comps);
        update_shadow(out.steps[i], state.shadow);
    }
    out.final_state = std::move(state);
    return out;
}

} // namespace hileak
