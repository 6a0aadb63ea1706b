#pragma once

#include "hileak/isa.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hileak {

/// What one executed instruction exposed: operands entering the ALU, the
/// value written back, words moved over the memory bus and their addresses.
struct StepRecord {
    OpClass cls = OpClass::Move;
    bool has_op1 = false, has_op2 = false, has_result = false, has_dest = false;
    std::uint32_t op1 = 0, op2 = 0, result = 0;
    std::uint32_t dest_old = 0, dest_new = 0;
    std::uint32_t imm = 0;
    std::uint8_t flags_before = 0, flags_after = 0;
    std::uint8_t n_bus = 0;
    std::array<std::uint32_t, 8> bus{};
    std::array<std::uint32_t, 8> addr{};
};

/// Micro-architectural state carried between instructions.
struct Shadow {
    std::uint32_t op1 = 0, op2 = 0, result = 0, bus = 0, addr = 0;
    OpClass prev_class = OpClass::Move;
};

enum class Field : std::uint8_t { Op1, Op2, Result, Bus, Address, Imm, DestOld, DestNew };

enum class ExtractorKind : std::uint8_t {
    Hw,            // HW(field)
    HdPrev,        // HD(field, previous value of field)
    HdPair,        // HD(field a, field b) within one instruction
    HdCrossPrev,   // HD(field a, previous value of field b)
    Class,         // current instruction class indicator
    PrevClass,     // previous instruction class indicator
    FlagsHd,       // HD of NZCV before/after
    TransferCount, // number of bus transfers
    Const          // 1
};

/// Which part of the processor a component models; drives fix selection.
enum class ComponentClass : std::uint8_t { Value, Pipeline, Memory, Address, Intercept };

struct ComponentDef {
    std::string name;
    ExtractorKind kind = ExtractorKind::Const;
    Field a = Field::Op1;
    Field b = Field::Op1;
    OpClass op_class = OpClass::Move;
    ComponentClass cls = ComponentClass::Intercept;
};

/// Linear leakage model: power = sum of coefficient * component.
struct LeakageModel {
    std::string name;
    std::string description;
    std::vector<ComponentDef> components;
    std::vector<double> coefficients;

    std::size_t size() const { return components.size(); }
    std::vector<std::string> names() const;
    std::size_t index_of(const std::string &component) const;

    /// Evaluates every component for one step into `out` (size()).
    void evaluate(const StepRecord &step, const Shadow &before, std::span<double> out) const;
    double power(std::span<const double> components) const;
};

/// The bundled 28-component model. Synthetic: the structure follows common
/// instruction-level models, the coefficients are not profiled on silicon.
LeakageModel default_model();

/// Class a component of the given extractor falls into when the model file
/// does not say.
ComponentClass default_class(ExtractorKind kind, Field a, Field b);

LeakageModel load_model(const std::filesystem::path &path);
void save_model(const LeakageModel &m, const std::filesystem::path &path);
void to_json(nlohmann::json &j, const LeakageModel &m);
void from_json(const nlohmann::json &j, LeakageModel &m);

std::string_view component_class_name(ComponentClass c);

} // namespace hileak
