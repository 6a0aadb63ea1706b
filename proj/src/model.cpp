#include "hileak/model.hpp"

#include "hileak/error.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

namespace hileak {
namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 8> kFieldNames{"op1", "op2", "result", "bus", "address", "imm", "dest_old",
                                                      "dest_new"};
constexpr std::array<std::string_view, 9> kKindNames{"hw",         "hd_prev", "hd_pair",        "hd_cross_prev", "class",
                                                     "prev_class", "flags_hd", "transfer_count", "const"};
constexpr std::array<std::string_view, 5> kClassNames{"value", "pipeline", "memory", "address", "intercept"};

inline unsigned hw(std::uint32_t x) { return static_cast<unsigned>(std::popcount(x)); }
inline unsigned hd(std::uint32_t x, std::uint32_t y) { return hw(x ^ y); }

template <std::size_t N> std::size_t lookup(const std::array<std::string_view, N> &names, const std::string &s,
                                            const char *what) {
    auto it = std::find(names.begin(), names.end(), s);
    if (it == names.end())
        throw FormatError(std::string("unknown ") + what + " '" + s + "'");
    return static_cast<std::size_t>(it - names.begin());
}

bool present(const StepRecord &s, Field f) {
    switch (f) {
    case Field::Op1:
        return s.has_op1;
    case Field::Op2:
        return s.has_op2;
    case Field::Result:
        return s.has_result;
    case Field::Bus:
    case Field::Address:
        return s.n_bus > 0;
    case Field::Imm:
        return true;
    case Field::DestOld:
    case Field::DestNew:
        return s.has_dest;
    }
    return false;
}

// First value of a field; for bus fields, the first transfer.
std::uint32_t first_value(const StepRecord &s, Field f) {
    switch (f) {
    case Field::Op1:
        return s.op1;
    case Field::Op2:
        return s.op2;
    case Field::Result:
        return s.result;
    case Field::Bus:
        return s.bus[0];
    case Field::Address:
        return s.addr[0];
    case Field::Imm:
        return s.imm;
    case Field::DestOld:
        return s.dest_old;
    case Field::DestNew:
        return s.dest_new;
    }
    return 0;
}

std::uint32_t shadow_value(const Shadow &sh, Field f) {
    switch (f) {
    case Field::Op1:
        return sh.op1;
    case Field::Op2:
        return sh.op2;
    case Field::Result:
        return sh.result;
    case Field::Bus:
        return sh.bus;
    case Field::Address:
        return sh.addr;
    default:
        return 0;
    }
}

double eval(const ComponentDef &d, const StepRecord &s, const Shadow &sh) {
    switch (d.kind) {
    case ExtractorKind::Hw: {
        if (!present(s, d.a))
            return 0.0;
        if (d.a == Field::Bus || d.a == Field::Address) {
            const auto &v = d.a == Field::Bus ? s.bus : s.addr;
            unsigned total = 0;
            for (unsigned k = 0; k < s.n_bus; ++k)
                total += hw(v[k]);
            return total;
        }
        return hw(first_value(s, d.a));
    }
    case ExtractorKind::HdPrev: {
        if (!present(s, d.a))
            return 0.0;
        if (d.a == Field::Bus || d.a == Field::Address) {
            const auto &v = d.a == Field::Bus ? s.bus : s.addr;
            unsigned total = hd(shadow_value(sh, d.a), v[0]);
            for (unsigned k = 1; k < s.n_bus; ++k)
                total += hd(v[k - 1], v[k]);
            return total;
        }
        return hd(first_value(s, d.a), shadow_value(sh, d.a));
    }
    case ExtractorKind::HdPair:
        return present(s, d.a) && present(s, d.b) ? hd(first_value(s, d.a), first_value(s, d.b)) : 0.0;
    case ExtractorKind::HdCrossPrev:
        return present(s, d.a) ? hd(first_value(s, d.a), shadow_value(sh, d.b)) : 0.0;
    case ExtractorKind::Class:
        return s.cls == d.op_class ? 1.0 : 0.0;
    case ExtractorKind::PrevClass:
        return sh.prev_class == d.op_class ? 1.0 : 0.0;
    case ExtractorKind::FlagsHd:
        return hd(s.flags_before, s.flags_after);
    case ExtractorKind::TransferCount:
        return s.n_bus;
    case ExtractorKind::Const:
        return 1.0;
    }
    return 0.0;
}

ComponentDef def(std::string name, ExtractorKind k, Field a = Field::Op1, Field b = Field::Op1) {
    ComponentDef d{std::move(name), k, a, b, OpClass::Move, ComponentClass::Intercept};
    d.cls = default_class(k, a, b);
    return d;
}

} // namespace

std::string_view component_class_name(ComponentClass c) { return kClassNames[static_cast<std::size_t>(c)]; }

ComponentClass default_class(ExtractorKind kind, Field a, Field b) {
    const bool addr = a == Field::Address || (kind == ExtractorKind::HdPair && b == Field::Address);
    switch (kind) {
    case ExtractorKind::Hw:
        return addr ? ComponentClass::Address : ComponentClass::Value;
    case ExtractorKind::HdPrev:
        return addr ? ComponentClass::Address : (a == Field::Bus ? ComponentClass::Memory : ComponentClass::Pipeline);
    case ExtractorKind::HdPair:
        return addr ? ComponentClass::Address : ComponentClass::Value;
    case ExtractorKind::HdCrossPrev:
        if (addr || b == Field::Address)
            return ComponentClass::Address;
        return a == Field::Bus || b == Field::Bus ? ComponentClass::Memory : ComponentClass::Pipeline;
    case ExtractorKind::FlagsHd:
        return ComponentClass::Value;
    default:
        return ComponentClass::Intercept;
    }
}

std::vector<std::string> LeakageModel::names() const {
    std::vector<std::string> out;
    for (const auto &c : components)
        out.push_back(c.name);
    return out;
}

std::size_t LeakageModel::index_of(const std::string &component) const {
    for (std::size_t k = 0; k < components.size(); ++k)
        if (components[k].name == component)
            return k;
    throw std::out_of_range("no component named '" + component + "'");
}

void LeakageModel::evaluate(const StepRecord &step, const Shadow &before, std::span<double> out) const {
    for (std::size_t k = 0; k < components.size(); ++k)
        out[k] = eval(components[k], step, before);
}

double LeakageModel::power(std::span<const double> comps) const {
    double p = 0.0;
    for (std::size_t k = 0; k < coefficients.size(); ++k)
        p += coefficients[k] * comps[k];
    return p;
}

LeakageModel default_model() {
    using K = ExtractorKind;
    using F = Field;
    LeakageModel m;
    m.name = "default";
    m.description = "Synthetic 28-component stand-in for a profiled Cortex-M0 model; coefficients are "
                     "calibrated for detectability, not fitted to hardware.";
    m.components = {
        def("op1_hw", K::Hw, F::Op1),
        def("op2_hw", K::Hw, F::Op2),
        def("result_hw", K::Hw, F::Result),
        def("bus_hw", K::Hw, F::Bus),
        def("op1_hd", K::HdPrev, F::Op1),
        def("op2_hd", K::HdPrev, F::Op2),
        def("result_hd", K::HdPrev, F::Result),
        def("bus_hd", K::HdPrev, F::Bus),
        def("op1_op2_hd", K::HdPair, F::Op1, F::Op2),
        def("dest_hd", K::HdPair, F::DestOld, F::DestNew),
        def("op1_result_hd", K::HdCrossPrev, F::Op1, F::Result),
        def("bus_result_hd", K::HdCrossPrev, F::Bus, F::Result),
    };
    for (std::size_t c = 0; c < kOpClassCount; ++c) {
        auto d = def("class_" + std::string(op_class_name(static_cast<OpClass>(c))), K::Class);
        d.op_class = static_cast<OpClass>(c);
        m.components.push_back(d);
    }
    for (std::size_t c = 0; c < kOpClassCount; ++c) {
        auto d = def("prev_class_" + std::string(op_class_name(static_cast<OpClass>(c))), K::PrevClass);
        d.op_class = static_cast<OpClass>(c);
        m.components.push_back(d);
    }
    m.components.push_back(def("flags_hd", K::FlagsHd));
    m.components.push_back(def("imm_hw", K::Hw, F::Imm));
    m.components.push_back(def("transfer_count", K::TransferCount));
    m.components.push_back(def("bias", K::Const));
    m.coefficients = {
        // data-dependent terms
        0.55, 0.55, 0.70, 0.80, 0.35, 0.35, 0.40, 0.60, 0.25, 0.30, 0.25, 0.30,
        // current class: load, store, alu, shift, move, stack
        2340.0, 2210.0, 390.0, 468.0, 104.0, 3120.0,
        // previous class
        156.0, 143.0, 31.2, 36.4, 7.8, 208.0,
        // flags, immediate, transfers, bias
        0.20, 0.10, 91.0, 260.0};
    return m;
}

void to_json(json &j, const LeakageModel &m) {
    json comps = json::array();
    for (const auto &c : m.components) {
        json params = json::object();
        switch (c.kind) {
        case ExtractorKind::Hw:
        case ExtractorKind::HdPrev:
            params["field"] = kFieldNames[static_cast<std::size_t>(c.a)];
            break;
        case ExtractorKind::HdPair:
        case ExtractorKind::HdCrossPrev:
            params["a"] = kFieldNames[static_cast<std::size_t>(c.a)];
            params["b"] = kFieldNames[static_cast<std::size_t>(c.b)];
            break;
        case ExtractorKind::Class:
        case ExtractorKind::PrevClass:
            params["class"] = op_class_name(c.op_class);
            break;
        default:
            break;
        }
        comps.push_back({{"name", c.name},
                         {"extractor", kKindNames[static_cast<std::size_t>(c.kind)]},
                         {"params", params},
                         {"class", component_class_name(c.cls)}});
    }
    j = {{"name", m.name}, {"description", m.description}, {"components", comps}, {"coefficients", m.coefficients}};
}

void from_json(const json &j, LeakageModel &m) {
    m.name = j.value("name", std::string{"custom"});
    m.description = j.value("description", std::string{});
    m.components.clear();
    for (const auto &c : j.at("components")) {
        ComponentDef d;
        d.name = c.at("name").get<std::string>();
        d.kind = static_cast<ExtractorKind>(lookup(kKindNames, c.at("extractor").get<std::string>(), "extractor"));
        const json params = c.value("params", json::object());
        auto field = [&](const char *key) {
            return static_cast<Field>(lookup(kFieldNames, params.at(key).get<std::string>(), "field"));
        };
        switch (d.kind) {
        case ExtractorKind::Hw:
        case ExtractorKind::HdPrev:
            d.a = field("field");
            break;
        case ExtractorKind::HdPair:
        case ExtractorKind::HdCrossPrev:
            d.a = field("a");
            d.b = field("b");
            break;
        case ExtractorKind::Class:
        case ExtractorKind::PrevClass: {
            const auto name = params.at("class").get<std::string>();
            bool found = false;
            for (std::size_t k = 0; k < kOpClassCount; ++k)
                if (op_class_name(static_cast<OpClass>(k)) == name) {
                    d.op_class = static_cast<OpClass>(k);
                    found = true;
                }
            if (!found)
                throw FormatError("unknown instruction class '" + name + "'");
            break;
        }
        default:
            break;
        }
        d.cls = c.contains("class")
                    ? static_cast<ComponentClass>(lookup(kClassNames, c["class"].get<std::string>(), "component class"))
                    : default_class(d.kind, d.a, d.b);
        m.components.push_back(std::move(d));
    }
    m.coefficients = j.at("coefficients").get<std::vector<double>>();
    if (m.coefficients.size() != m.components.size())
        throw FormatError("model has " + std::to_string(m.components.size()) + " components but " +
                          std::to_string(m.coefficients.size()) + " coefficients");
}

LeakageModel load_model(const std::filesystem::path &path) {
    std::ifstream is(path);
    if (!is)
        throw Error("cannot open model " + path.string());
    try {
        return json::parse(is).get<LeakageModel>();
    } catch (const json::exception &e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_model(const LeakageModel &m, const std::filesystem::path &path) {
    std::ofstream os(path);
    if (!os)
        throw Error("cannot write " + path.string());
    os << json(m).dump(2) << '\n';
}

} // namespace hileak
