#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hileak {

enum class Op : std::uint8_t {
    Ldr, Ldrb, Str, Strb, Push, Pop, Mov, Movs, Lsls, Lsrs, Adds, Subs, Eors, Ands, Orrs, Bics, Mvns
};

/// Instruction classes seen by the leakage model and the cost table.
enum class OpClass : std::uint8_t { Load, Store, Alu, Shift, Move, Stack };
inline constexpr std::size_t kOpClassCount = 6;

inline constexpr std::uint8_t kSp = 8;
inline constexpr std::uint8_t kScratchReg = 7; // reserved for barriers
inline constexpr std::size_t kRegisterCount = 9; // r0-r7, sp

struct Operand {
    enum class Kind : std::uint8_t { None, Reg, Imm };
    Kind kind = Kind::None;
    std::uint8_t reg = 0;
    std::int32_t imm = 0;

    static Operand r(std::uint8_t reg) { return {Kind::Reg, reg, 0}; }
    static Operand i(std::int32_t v) { return {Kind::Imm, 0, v}; }
    bool is_reg() const { return kind == Kind::Reg; }
    bool is_imm() const { return kind == Kind::Imm; }
    bool operator==(const Operand &) const = default;
};

/// One parsed instruction.
///   loads/stores: rd = transferred register, a = base, b = offset (reg or imm)
///   push/pop:     reglist bitmask over r0-r7
///   data ops:     rd = destination, a = first source, b = second source
struct Instruction {
    Op op = Op::Mov;
    std::uint8_t rd = 0;
    Operand a;
    Operand b;
    std::uint16_t reglist = 0;

    // Source bookkeeping, ignored by equality.
    std::size_t line = 0;
    int padding_group = -1;               // index of the "; nop padding" directive it came from
    std::vector<std::string> comments;    // comment lines immediately above
    std::string trailing_comment;

    bool same_operation(const Instruction &o) const {
        return op == o.op && rd == o.rd && a == o.a && b == o.b && reglist == o.reglist;
    }
    bool operator==(const Instruction &o) const { return same_operation(o); }
};

/// Straight-line kernel. Comment lines and directives are kept so the program
/// re-emits faithfully.
struct Program {
    std::vector<Instruction> code;
    std::vector<std::string> trailing_comments;
    std::size_t padding_length = 9;

    std::size_t size() const { return code.size(); }
    /// Every comment line of the source, in order (directives included).
    std::vector<std::string> all_comments() const;
    /// Order-sensitive hash of the instruction stream.
    std::uint64_t fingerprint() const;
    bool operator==(const Program &o) const { return code == o.code; }
};

struct ParseOptions {
    std::size_t padding_length = 9; // instructions per "; nop padding"
};

/// Parses the supported Thumb subset. Throws ParseError with a 1-based line.
Program parse_program(std::string_view text, const ParseOptions &opts = {});
Program load_program(const std::string &path, const ParseOptions &opts = {});

/// Assembly text; intact padding groups collapse back to "; nop padding".
std::string emit_program(const Program &p);
std::string to_string(const Instruction &ins);

OpClass op_class(Op op);
std::string_view mnemonic(Op op);
std::string_view op_class_name(OpClass c);
std::string reg_name(std::uint8_t r);
bool is_memory_op(Op op);
bool is_barrier_nop(const Instruction &ins); // mov r7, r7

Instruction make_mov(std::uint8_t rd, std::uint8_t rm);
Instruction make_push(std::uint16_t reglist);
Instruction make_pop(std::uint16_t reglist);

} // namespace hileak
