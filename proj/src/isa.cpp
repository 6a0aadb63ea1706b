#include "hileak/isa.hpp"

#include "hileak/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

namespace hileak {
namespace {

struct OpInfo {
    Op op;
    std::string_view name;
    OpClass cls;
};

constexpr std::array<OpInfo, 17> kOps{{
    {Op::Ldr, "ldr", OpClass::Load},     {Op::Ldrb, "ldrb", OpClass::Load},   {Op::Str, "str", OpClass::Store},
    {Op::Strb, "strb", OpClass::Store},  {Op::Push, "push", OpClass::Stack},  {Op::Pop, "pop", OpClass::Stack},
    {Op::Mov, "mov", OpClass::Move},     {Op::Movs, "movs", OpClass::Move},   {Op::Lsls, "lsls", OpClass::Shift},
    {Op::Lsrs, "lsrs", OpClass::Shift},  {Op::Adds, "adds", OpClass::Alu},    {Op::Subs, "subs", OpClass::Alu},
    {Op::Eors, "eors", OpClass::Alu},    {Op::Ands, "ands", OpClass::Alu},    {Op::Orrs, "orrs", OpClass::Alu},
    {Op::Bics, "bics", OpClass::Alu},    {Op::Mvns, "mvns", OpClass::Alu},
}};

const OpInfo &info(Op op) { return kOps[static_cast<std::size_t>(op)]; }

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b])))
        ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1])))
        --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

class LineParser {
  public:
    LineParser(std::size_t line, std::string text) : line_(line), text_(std::move(text)) {}

    Instruction parse() {
        std::size_t sp = text_.find_first_of(" \t");
        std::string mn = lower(text_.substr(0, sp));
        std::string rest = sp == std::string::npos ? "" : trim(text_.substr(sp));
        ops_ = split_operands(rest);
        Instruction ins;
        ins.line = line_;
        if (mn == "nop") {
            expect_count(0);
            return make_mov(kScratchReg, kScratchReg);
        }
        auto it = std::find_if(kOps.begin(), kOps.end(), [&](const OpInfo &o) { return o.name == mn; });
        if (it == kOps.end())
            fail("unknown mnemonic '" + mn + "'");
        ins.op = it->op;
        switch (ins.op) {
        case Op::Ldr:
        case Op::Ldrb:
        case Op::Str:
        case Op::Strb:
            parse_memory(ins);
            break;
        case Op::Push:
        case Op::Pop:
            expect_count(1);
            ins.reglist = parse_reglist(ops_[0]);
            break;
        case Op::Mov:
            expect_count(2);
            ins.rd = reg(ops_[0], true);
            ins.a = ins.b = Operand::r(reg(ops_[1], true));
            break;
        case Op::Movs:
            expect_count(2);
            ins.rd = reg(ops_[0]);
            if (is_imm(ops_[1]))
                ins.a = ins.b = Operand::i(imm(ops_[1], 0, 255));
            else
                ins.a = ins.b = Operand::r(reg(ops_[1]));
            break;
        case Op::Mvns:
            expect_count(2);
            ins.rd = reg(ops_[0]);
            ins.a = ins.b = Operand::r(reg(ops_[1]));
            break;
        case Op::Lsls:
        case Op::Lsrs:
            parse_shift(ins);
            break;
        case Op::Adds:
        case Op::Subs:
            parse_add(ins);
            break;
        default:
            parse_logic(ins);
            break;
        }
        ins.line = line_;
        return ins;
    }

  private:
    [[noreturn]] void fail(const std::string &what) const { throw ParseError(line_, what); }

    void expect_count(std::size_t n) const {
        if (ops_.size() != n)
            fail("expected " + std::to_string(n) + " operand(s), got " + std::to_string(ops_.size()));
    }

    std::vector<std::string> split_operands(const std::string &s) const {
        std::vector<std::string> out;
        if (s.empty())
            return out;
        int depth = 0;
        std::string cur;
        for (char c : s) {
            if (c == '[' || c == '{')
                ++depth;
            if (c == ']' || c == '}')
                --depth;
            if (depth < 0)
                fail("unbalanced brackets");
            if (c == ',' && depth == 0) {
                out.push_back(trim(cur));
                cur.clear();
            } else {
                cur += c;
            }
        }
        if (depth != 0)
            fail("unbalanced brackets");
        out.push_back(trim(cur));
        for (const auto &o : out)
            if (o.empty())
                fail("empty operand");
        return out;
    }

    static bool is_imm(const std::string &s) { return !s.empty() && s[0] == '#'; }

    std::uint8_t reg(const std::string &raw, bool allow_sp = false) const {
        const std::string s = lower(trim(raw));
        if (s == "sp" || s == "r13") {
            if (!allow_sp)
                fail("sp is not allowed in this operand");
            return kSp;
        }
        if (s.size() >= 2 && s[0] == 'r' && std::all_of(s.begin() + 1, s.end(), ::isdigit)) {
            const int n = std::stoi(s.substr(1));
            if (n <= 7)
                return static_cast<std::uint8_t>(n);
        }
        if (s == "lr" || s == "pc" || s == "ip" || s == "fp" || (s.size() >= 2 && s[0] == 'r'))
            fail("register '" + raw + "' outside the supported set r0-r7, sp");
        fail("malformed register operand '" + raw + "'");
    }

    std::int32_t imm(const std::string &raw, long lo, long hi) const {
        if (!is_imm(raw))
            fail("expected immediate, got '" + raw + "'");
        const std::string body = trim(std::string_view(raw).substr(1));
        long v = 0;
        try {
            std::size_t used = 0;
            v = std::stol(body, &used, 0);
            if (used != body.size())
                throw std::invalid_argument(body);
        } catch (const std::logic_error &) {
            fail("malformed immediate '" + raw + "'");
        }
        if (v < lo || v > hi)
            fail("immediate " + std::to_string(v) + " out of range [" + std::to_string(lo) + ", " +
                 std::to_string(hi) + "]");
        return static_cast<std::int32_t>(v);
    }

    std::uint16_t parse_reglist(const std::string &raw) const {
        const std::string s = trim(raw);
        if (s.size() < 2 || s.front() != '{' || s.back() != '}')
            fail("expected register list in braces");
        std::uint16_t mask = 0;
        std::stringstream ss(s.substr(1, s.size() - 2));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty())
                fail("empty register in list");
            auto dash = item.find('-');
            std::uint8_t lo = reg(item.substr(0, dash));
            std::uint8_t hi = dash == std::string::npos ? lo : reg(item.substr(dash + 1));
            if (hi < lo)
                fail("descending register range '" + item + "'");
            for (std::uint8_t r = lo; r <= hi; ++r)
                mask |= static_cast<std::uint16_t>(1u << r);
        }
        if (mask == 0)
            fail("empty register list");
        return mask;
    }

    void parse_memory(Instruction &ins) const {
        expect_count(2);
        ins.rd = reg(ops_[0]);
        const std::string m = trim(ops_[1]);
        if (m.size() < 2 || m.front() != '[' || m.back() != ']')
            fail("expected memory operand [rn, ...], got '" + m + "'");
        std::vector<std::string> parts = split_operands(m.substr(1, m.size() - 2));
        if (parts.empty() || parts.size() > 2)
            fail("malformed memory operand '" + m + "'");
        const bool byte = ins.op == Op::Ldrb || ins.op == Op::Strb;
        ins.a = Operand::r(reg(parts[0], !byte));
        if (parts.size() == 1) {
            ins.b = Operand::i(0);
        } else if (is_imm(parts[1])) {
            const bool sp_base = ins.a.reg == kSp;
            const long hi = byte ? 31 : (sp_base ? 1020 : 124);
            ins.b = Operand::i(imm(parts[1], 0, hi));
            if (!byte && ins.b.imm % 4 != 0)
                fail("word offset must be a multiple of 4");
        } else {
            if (ins.a.reg == kSp)
                fail("register offset not allowed with sp base");
            ins.b = Operand::r(reg(parts[1]));
        }
    }

    void parse_shift(Instruction &ins) const {
        const bool left = ins.op == Op::Lsls;
        if (ops_.size() == 3) {
            ins.rd = reg(ops_[0]);
            ins.a = Operand::r(reg(ops_[1]));
            ins.b = is_imm(ops_[2]) ? Operand::i(imm(ops_[2], left ? 0 : 1, left ? 31 : 32)) : Operand::r(reg(ops_[2]));
        } else {
            expect_count(2);
            ins.rd = reg(ops_[0]);
            ins.a = Operand::r(ins.rd);
            ins.b = is_imm(ops_[1]) ? Operand::i(imm(ops_[1], left ? 0 : 1, left ? 31 : 32)) : Operand::r(reg(ops_[1]));
        }
    }

    void parse_add(Instruction &ins) const {
        if (ops_.size() == 3) {
            ins.rd = reg(ops_[0]);
            ins.a = Operand::r(reg(ops_[1]));
            if (is_imm(ops_[2]))
                ins.b = Operand::i(imm(ops_[2], 0, ins.a.reg == ins.rd ? 255 : 7));
            else
                ins.b = Operand::r(reg(ops_[2]));
        } else {
            expect_count(2);
            ins.rd = reg(ops_[0]);
            ins.a = Operand::r(ins.rd);
            ins.b = is_imm(ops_[1]) ? Operand::i(imm(ops_[1], 0, 255)) : Operand::r(reg(ops_[1]));
        }
    }

    void parse_logic(Instruction &ins) const {
        if (ops_.size() == 3) {
            ins.rd = reg(ops_[0]);
            ins.a = Operand::r(reg(ops_[1]));
            ins.b = Operand::r(reg(ops_[2]));
        } else {
            expect_count(2);
            ins.rd = reg(ops_[0]);
            ins.a = Operand::r(ins.rd);
            ins.b = Operand::r(reg(ops_[1]));
        }
    }

    std::size_t line_;
    std::string text_;
    std::vector<std::string> ops_;
};

std::string reglist_text(std::uint16_t mask) {
    std::string s = "{";
    bool first = true;
    for (std::uint8_t r = 0; r < 8; ++r) {
        if (!(mask & (1u << r)))
            continue;
        std::uint8_t e = r;
        while (e + 1 < 8 && (mask & (1u << (e + 1))))
            ++e;
        s += (first ? "" : ", ") + reg_name(r);
        if (e > r)
            s += "-" + reg_name(e);
        first = false;
        r = e;
    }
    return s + "}";
}

std::string operand_text(const Operand &o) {
    return o.is_imm() ? "#" + std::to_string(o.imm) : reg_name(o.reg);
}

bool is_padding_directive(const std::string &comment) { return lower(trim(comment)) == "nop padding"; }

} // namespace

OpClass op_class(Op op) { return info(op).cls; }
std::string_view mnemonic(Op op) { return info(op).name; }

std::string_view op_class_name(OpClass c) {
    static constexpr std::array<std::string_view, kOpClassCount> names{"load", "store", "alu", "shift", "move", "stack"};
    return names[static_cast<std::size_t>(c)];
}

std::string reg_name(std::uint8_t r) { return r == kSp ? "sp" : "r" + std::to_string(r); }

bool is_memory_op(Op op) {
    auto c = op_class(op);
    return c == OpClass::Load || c == OpClass::Store || c == OpClass::Stack;
}

bool is_barrier_nop(const Instruction &ins) {
    return ins.op == Op::Mov && ins.rd == kScratchReg && ins.a == Operand::r(kScratchReg);
}

Instruction make_mov(std::uint8_t rd, std::uint8_t rm) {
    Instruction ins;
    ins.op = Op::Mov;
    ins.rd = rd;
    ins.a = ins.b = Operand::r(rm);
    return ins;
}

Instruction make_push(std::uint16_t reglist) {
    Instruction ins;
    ins.op = Op::Push;
    ins.reglist = reglist;
    return ins;
}

Instruction make_pop(std::uint16_t reglist) {
    Instruction ins;
    ins.op = Op::Pop;
    ins.reglist = reglist;
    return ins;
}

std::vector<std::string> Program::all_comments() const {
    std::vector<std::string> out;
    for (const auto &ins : code)
        out.insert(out.end(), ins.comments.begin(), ins.comments.end());
    out.insert(out.end(), trailing_comments.begin(), trailing_comments.end());
    return out;
}

std::uint64_t Program::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mixin = [&](std::uint64_t v) {
        for (int k = 0; k < 8; ++k) {
            h ^= (v >> (8 * k)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto &ins : code) {
        mixin(static_cast<std::uint64_t>(ins.op) | std::uint64_t{ins.rd} << 8 | std::uint64_t{ins.reglist} << 16);
        for (const Operand *o : {&ins.a, &ins.b})
            mixin(static_cast<std::uint64_t>(o->kind) | std::uint64_t{o->reg} << 8 |
                  static_cast<std::uint64_t>(static_cast<std::uint32_t>(o->imm)) << 16);
    }
    return h;
}

Program parse_program(std::string_view text, const ParseOptions &opts) {
    if (trim(text).empty())
        throw ParseError(1, "empty program");
    Program prog;
    prog.padding_length = opts.padding_length;
    std::vector<std::string> pending;
    int padding_groups = 0;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::string raw(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        std::size_t semi = raw.find(';');
        std::string code = trim(raw.substr(0, semi));
        std::string comment = semi == std::string::npos ? "" : trim(raw.substr(semi + 1));
        if (code.empty()) {
            if (semi == std::string::npos)
                continue;
            if (is_padding_directive(comment)) {
                for (std::size_t k = 0; k < opts.padding_length; ++k) {
                    Instruction ins = make_mov(kScratchReg, kScratchReg);
                    ins.line = line_no;
                    ins.padding_group = padding_groups;
                    if (k == 0)
                        ins.comments = std::exchange(pending, {});
                    prog.code.push_back(std::move(ins));
                }
                ++padding_groups;
            } else {
                pending.push_back("; " + comment);
            }
            continue;
        }
        if (code.back() == ':' || code.front() == '.') {
            pending.push_back(code); // labels and assembler directives pass through
            continue;
        }
        Instruction ins = LineParser(line_no, code).parse();
        ins.line = line_no;
        ins.comments = std::exchange(pending, {});
        ins.trailing_comment = comment;
        prog.code.push_back(std::move(ins));
    }
    prog.trailing_comments = std::move(pending);
    return prog;
}

Program load_program(const std::string &path, const ParseOptions &opts) {
    std::ifstream is(path);
    if (!is)
        throw Error("cannot open kernel " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_program(ss.str(), opts);
}

std::string to_string(const Instruction &ins) {
    std::string s(mnemonic(ins.op));
    switch (ins.op) {
    case Op::Ldr:
    case Op::Ldrb:
    case Op::Str:
    case Op::Strb:
        s += " " + reg_name(ins.rd) + ", [" + reg_name(ins.a.reg);
        if (ins.b.is_reg() || ins.b.imm != 0)
            s += ", " + operand_text(ins.b);
        return s + "]";
    case Op::Push:
    case Op::Pop:
        return s + " " + reglist_text(ins.reglist);
    case Op::Mov:
    case Op::Movs:
    case Op::Mvns:
        return s + " " + reg_name(ins.rd) + ", " + operand_text(ins.b);
    case Op::Adds:
    case Op::Subs:
        if (ins.a.reg == ins.rd && ins.b.is_imm() && ins.b.imm > 7)
            return s + " " + reg_name(ins.rd) + ", " + operand_text(ins.b);
        return s + " " + reg_name(ins.rd) + ", " + reg_name(ins.a.reg) + ", " + operand_text(ins.b);
    default:
        if (ins.a.reg == ins.rd && ins.op != Op::Lsls && ins.op != Op::Lsrs)
            return s + " " + reg_name(ins.rd) + ", " + operand_text(ins.b);
        return s + " " + reg_name(ins.rd) + ", " + reg_name(ins.a.reg) + ", " + operand_text(ins.b);
    }
}

std::string emit_program(const Program &p) {
    std::ostringstream os;
    const std::size_t n = p.code.size();
    for (std::size_t k = 0; k < n;) {
        const Instruction &ins = p.code[k];
        for (const auto &c : ins.comments)
            os << c << '\n';
        if (ins.padding_group >= 0) {
            std::size_t e = k;
            while (e < n && p.code[e].padding_group == ins.padding_group && is_barrier_nop(p.code[e]) &&
                   (e == k || p.code[e].comments.empty()))
                ++e;
            if (e - k == p.padding_length) {
                os << "  ; nop padding\n";
                k = e;
                continue;
            }
        }
        os << to_string(ins);
        if (!ins.trailing_comment.empty())
            os << " ; " << ins.trailing_comment;
        os << '\n';
        ++k;
    }
    for (const auto &c : p.trailing_comments)
        os << c << '\n';
    return os.str();
}

} // namespace hileak
