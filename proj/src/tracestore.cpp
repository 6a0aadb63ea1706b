#include "hileak/tracestore.hpp"

#include "hileak/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <utility>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

static_assert(std::endian::native == std::endian::little, "trace files are little-endian");

namespace hileak {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kTraceMagic[4] = {'H', 'L', 'T', 'R'};
constexpr char kComponentMagic[4] = {'H', 'L', 'C', 'M'};
constexpr std::uint32_t kComponentVersion = 1;

template <typename T> void put(std::ostream &os, T v) { os.write(reinterpret_cast<const char *>(&v), sizeof v); }

template <typename T> T get(std::istream &is) {
    T v{};
    if (!is.read(reinterpret_cast<char *>(&v), sizeof v))
        throw FormatError("unexpected end of file");
    return v;
}

template <typename T> T read_le(const unsigned char *p) {
    T v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

std::uint8_t label_byte(TraceClass c) { return static_cast<std::uint8_t>(c); }

TraceClass parse_label(std::uint8_t b) {
    if (b > 1)
        throw FormatError("invalid class label byte " + std::to_string(b));
    return static_cast<TraceClass>(b);
}

struct Header {
    std::uint64_t n_traces;
    std::uint64_t n_samples;
};

Header read_trace_header(std::istream &is) {
    char magic[4];
    if (!is.read(magic, 4))
        throw FormatError("file too short for header");
    if (std::memcmp(magic, kTraceMagic, 4) != 0)
        throw FormatError("bad magic: not a trace file");
    auto version = get<std::uint32_t>(is);
    if (version != kTraceFormatVersion)
        throw FormatError("unsupported trace file version " + std::to_string(version));
    Header h{get<std::uint64_t>(is), get<std::uint64_t>(is)};
    return h;
}

std::uintmax_t expected_trace_size(std::uint64_t n, std::uint64_t m) {
    return kTraceHeaderBytes + n + n * m * sizeof(float);
}

fs::path sidecar(const fs::path &p) { return fs::path(p.string() + ".json"); }

std::string hex(const std::vector<std::uint8_t> &bytes) {
    static const char *digits = "0123456789abcdef";
    std::string s;
    for (auto b : bytes) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 15]);
    }
    return s;
}

std::vector<std::uint8_t> unhex(const std::string &s) {
    if (s.size() % 2)
        throw FormatError("odd-length hex string");
    std::vector<std::uint8_t> out;
    for (std::size_t k = 0; k < s.size(); k += 2)
        out.push_back(static_cast<std::uint8_t>(std::stoul(s.substr(k, 2), nullptr, 16)));
    return out;
}

} // namespace

std::size_t TraceSet::count(TraceClass c) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), c));
}

void TraceSet::validate() const {
    if (samples.size() != n_traces * n_samples)
        throw FormatError("sample matrix has " + std::to_string(samples.size()) + " values, expected " +
                          std::to_string(n_traces * n_samples));
    if (labels.size() != n_traces)
        throw FormatError("label count does not match trace count");
    if (count(TraceClass::Fixed) == 0 || count(TraceClass::Random) == 0)
        throw FormatError("trace set needs at least one trace of each class");
}

TraceSet TraceSet::select(TraceClass c) const {
    TraceSet out(count(c), n_samples);
    out.seed = seed;
    std::size_t k = 0;
    for (std::size_t i = 0; i < n_traces; ++i) {
        if (labels[i] != c)
            continue;
        std::copy_n(samples.begin() + static_cast<std::ptrdiff_t>(i * n_samples), n_samples,
                    out.samples.begin() + static_cast<std::ptrdiff_t>(k * n_samples));
        out.labels[k++] = c;
    }
    return out;
}

ComponentMatrix::ComponentMatrix(std::size_t traces, std::vector<std::uint64_t> columns,
                                 std::vector<std::string> names, std::vector<double> coeffs)
    : n_traces(traces), n_samples(columns.size()), n_components(names.size()),
      values(traces * columns.size() * names.size(), 0.0f), component_names(std::move(names)),
      coefficients(std::move(coeffs)), sample_index(std::move(columns)), labels(traces, TraceClass::Random) {
    if (coefficients.size() != n_components)
        throw std::invalid_argument("one coefficient per component required");
}

std::size_t ComponentMatrix::column_of(std::uint64_t sample) const {
    auto it = std::find(sample_index.begin(), sample_index.end(), sample);
    if (it == sample_index.end())
        throw std::out_of_range("sample " + std::to_string(sample) + " not recorded in component matrix");
    return static_cast<std::size_t>(it - sample_index.begin());
}

double ComponentMatrix::power(std::size_t i, std::size_t j) const {
    double p = 0.0;
    for (std::size_t c = 0; c < n_components; ++c)
        p += coefficients[c] * static_cast<double>(at(i, j, c));
    return p;
}

void TraceSetSource::read_columns(std::size_t first, std::size_t last, std::span<float> out) const {
    if (first > last || last > set_.n_samples)
        throw std::out_of_range("column range outside trace set");
    const std::size_t n = set_.n_traces;
    for (std::size_t i = 0; i < n; ++i) {
        const float *row = set_.samples.data() + i * set_.n_samples;
        for (std::size_t j = first; j < last; ++j)
            out[(j - first) * n + i] = row[j];
    }
}

PairedSource::PairedSource(const TraceSet &fixed, const TraceSet &random) : fixed_(fixed), random_(random) {
    if (fixed.n_samples != random.n_samples)
        throw std::invalid_argument("fixed and random sets have different sample counts");
}

void PairedSource::read_columns(std::size_t first, std::size_t last, std::span<float> out) const {
    if (first > last || last > n_samples())
        throw std::out_of_range("column range outside trace set");
    const std::size_t n = n_traces();
    const std::size_t nf = fixed_.n_traces;
    for (std::size_t j = first; j < last; ++j) {
        float *col = out.data() + (j - first) * n;
        for (std::size_t i = 0; i < nf; ++i)
            col[i] = fixed_.at(i, j);
        for (std::size_t i = 0; i < random_.n_traces; ++i)
            col[nf + i] = random_.at(i, j);
    }
}

TraceFile::TraceFile(const fs::path &path) {
    int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0)
        throw Error("cannot open " + path.string());
    struct stat st {};
    if (::fstat(fd, &st) != 0) {
        ::close(fd);
        throw Error("cannot stat " + path.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ < kTraceHeaderBytes) {
        ::close(fd);
        throw FormatError(path.string() + ": file too short for header");
    }
    void *p = ::mmap(nullptr, size_, PROT_READ, MAP_SHARED, fd, 0);
    ::close(fd);
    if (p == MAP_FAILED)
        throw Error("cannot map " + path.string());
    base_ = static_cast<const unsigned char *>(p);
    try {
        if (std::memcmp(base_, kTraceMagic, 4) != 0)
            throw FormatError(path.string() + ": bad magic, not a trace file");
        if (read_le<std::uint32_t>(base_ + 4) != kTraceFormatVersion)
            throw FormatError(path.string() + ": unsupported version");
        n_traces_ = read_le<std::uint64_t>(base_ + 8);
        n_samples_ = read_le<std::uint64_t>(base_ + 16);
        if (n_samples_ != 0 && n_traces_ > (size_ / n_samples_))
            throw FormatError(path.string() + ": dimensions exceed file size");
        if (expected_trace_size(n_traces_, n_samples_) != size_)
            throw FormatError(path.string() + ": size does not match header dimensions");
    } catch (...) {
        release();
        throw;
    }
}

TraceFile::~TraceFile() { release(); }

TraceFile::TraceFile(TraceFile &&o) noexcept
    : base_(std::exchange(o.base_, nullptr)), size_(std::exchange(o.size_, 0)), n_traces_(o.n_traces_),
      n_samples_(o.n_samples_) {}

TraceFile &TraceFile::operator=(TraceFile &&o) noexcept {
    if (this != &o) {
        release();
        base_ = std::exchange(o.base_, nullptr);
        size_ = std::exchange(o.size_, 0);
        n_traces_ = o.n_traces_;
        n_samples_ = o.n_samples_;
    }
    return *this;
}

void TraceFile::release() noexcept {
    if (base_)
        ::munmap(const_cast<unsigned char *>(base_), size_);
    base_ = nullptr;
}

TraceClass TraceFile::label(std::size_t i) const {
    if (i >= n_traces_)
        throw std::out_of_range("trace index out of range");
    return parse_label(base_[kTraceHeaderBytes + i]);
}

void TraceFile::read_columns(std::size_t first, std::size_t last, std::span<float> out) const {
    if (first > last || last > n_samples_)
        throw std::out_of_range("column range [" + std::to_string(first) + ", " + std::to_string(last) +
                                ") outside [0, " + std::to_string(n_samples_) + ")");
    const unsigned char *data = base_ + kTraceHeaderBytes + n_traces_;
    const std::size_t width = last - first;
    for (std::size_t i = 0; i < n_traces_; ++i) {
        const unsigned char *row = data + (i * n_samples_ + first) * sizeof(float);
        for (std::size_t k = 0; k < width; ++k)
            out[k * n_traces_ + i] = read_le<float>(row + k * sizeof(float));
    }
}

void TraceFile::read_row(std::size_t i, std::span<float> out) const {
    const unsigned char *row = base_ + kTraceHeaderBytes + n_traces_ + i * n_samples_ * sizeof(float);
    std::memcpy(out.data(), row, n_samples_ * sizeof(float));
}

TraceSet TraceFile::load() const {
    TraceSet set(n_traces_, n_samples_);
    for (std::size_t i = 0; i < n_traces_; ++i)
        set.labels[i] = label(i);
    if (!set.samples.empty())
        std::memcpy(set.samples.data(), base_ + kTraceHeaderBytes + n_traces_, set.samples.size() * sizeof(float));
    return set;
}

TraceWriter TraceWriter::create(const fs::path &path, std::size_t n_traces, std::size_t n_samples) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw Error("cannot write " + path.string());
    os.write(kTraceMagic, 4);
    put<std::uint32_t>(os, kTraceFormatVersion);
    put<std::uint64_t>(os, n_traces);
    put<std::uint64_t>(os, n_samples);
    os.close();
    if (!os)
        throw Error("write failed: " + path.string());
    fs::resize_file(path, expected_trace_size(n_traces, n_samples));
    return TraceWriter(path, n_traces, n_samples);
}

TraceWriter TraceWriter::open_existing(const fs::path &path, std::size_t n_traces, std::size_t n_samples) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw Error("cannot open " + path.string());
    Header h = read_trace_header(is);
    if (h.n_traces != n_traces || h.n_samples != n_samples)
        throw FormatError(path.string() + ": header is " + std::to_string(h.n_traces) + "x" +
                          std::to_string(h.n_samples) + ", expected " + std::to_string(n_traces) + "x" +
                          std::to_string(n_samples));
    if (fs::file_size(path) != expected_trace_size(n_traces, n_samples))
        throw FormatError(path.string() + ": size does not match header dimensions");
    return TraceWriter(path, n_traces, n_samples);
}

void TraceWriter::write_rows(std::size_t first_row, std::span<const float> rows, std::span<const TraceClass> labels) {
    const std::size_t count = labels.size();
    if (rows.size() != count * n_samples_)
        throw std::invalid_argument("row data does not match label count");
    if (first_row + count > n_traces_)
        throw std::out_of_range("rows beyond end of trace file");
    std::fstream fs(path_, std::ios::binary | std::ios::in | std::ios::out);
    if (!fs)
        throw Error("cannot open " + path_.string());
    std::vector<char> lab(count);
    std::transform(labels.begin(), labels.end(), lab.begin(), [](TraceClass c) { return char(label_byte(c)); });
    fs.seekp(static_cast<std::streamoff>(kTraceHeaderBytes + first_row));
    fs.write(lab.data(), static_cast<std::streamsize>(count));
    fs.seekp(static_cast<std::streamoff>(kTraceHeaderBytes + n_traces_ + first_row * n_samples_ * sizeof(float)));
    fs.write(reinterpret_cast<const char *>(rows.data()), static_cast<std::streamsize>(rows.size() * sizeof(float)));
    if (!fs)
        throw Error("write failed: " + path_.string());
}

void write_traceset(const TraceSet &set, const fs::path &path) {
    if (set.samples.size() != set.n_traces * set.n_samples || set.labels.size() != set.n_traces)
        throw FormatError("trace set dimensions are inconsistent");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw Error("cannot write " + path.string());
    os.write(kTraceMagic, 4);
    put<std::uint32_t>(os, kTraceFormatVersion);
    put<std::uint64_t>(os, set.n_traces);
    put<std::uint64_t>(os, set.n_samples);
    for (auto c : set.labels)
        put<std::uint8_t>(os, label_byte(c));
    os.write(reinterpret_cast<const char *>(set.samples.data()),
             static_cast<std::streamsize>(set.samples.size() * sizeof(float)));
    os.close();
    if (!os)
        throw Error("write failed: " + path.string());
    json meta = {{"format", "HLTR"},
                 {"version", kTraceFormatVersion},
                 {"n_traces", set.n_traces},
                 {"n_samples", set.n_samples},
                 {"seed", set.seed}};
    std::ofstream(sidecar(path)) << meta.dump(2) << '\n';
}

TraceSet read_traceset(const fs::path &path) {
    TraceSet set = TraceFile(path).load();
    if (auto meta_path = sidecar(path); fs::exists(meta_path)) {
        json meta;
        try {
            meta = json::parse(std::ifstream(meta_path));
        } catch (const json::exception &e) {
            throw FormatError(meta_path.string() + ": " + e.what());
        }
        if (meta.value("n_traces", set.n_traces) != set.n_traces ||
            meta.value("n_samples", set.n_samples) != set.n_samples)
            throw FormatError(meta_path.string() + ": dimensions disagree with " + path.string());
        set.seed = meta.value("seed", std::uint64_t{0});
    }
    return set;
}

// Component file layout after the 4-byte magic:
//   u32 version, u64 n_traces, u64 n_samples, u32 n_components,
//   n_components x (u32 length, name bytes), f64 coefficients[n_components],
//   u64 sample_index[n_samples], u8 labels[n_traces],
//   f32 values in (sample, component, trace) order.
void write_components(const ComponentMatrix &cm, const fs::path &path) {
    if (cm.values.size() != cm.n_traces * cm.n_samples * cm.n_components ||
        cm.component_names.size() != cm.n_components || cm.coefficients.size() != cm.n_components ||
        cm.sample_index.size() != cm.n_samples || cm.labels.size() != cm.n_traces)
        throw FormatError("component matrix dimensions are inconsistent");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw Error("cannot write " + path.string());
    os.write(kComponentMagic, 4);
    put<std::uint32_t>(os, kComponentVersion);
    put<std::uint64_t>(os, cm.n_traces);
    put<std::uint64_t>(os, cm.n_samples);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(cm.n_components));
    for (const auto &name : cm.component_names) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
    }
    for (double c : cm.coefficients)
        put<double>(os, c);
    for (auto s : cm.sample_index)
        put<std::uint64_t>(os, s);
    for (auto c : cm.labels)
        put<std::uint8_t>(os, label_byte(c));
    os.write(reinterpret_cast<const char *>(cm.values.data()),
             static_cast<std::streamsize>(cm.values.size() * sizeof(float)));
    os.close();
    if (!os)
        throw Error("write failed: " + path.string());
}

ComponentMatrix read_components(const fs::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw Error("cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kComponentMagic, 4) != 0)
        throw FormatError(path.string() + ": bad magic, not a component file");
    if (get<std::uint32_t>(is) != kComponentVersion)
        throw FormatError(path.string() + ": unsupported version");
    const auto n = get<std::uint64_t>(is);
    const auto m = get<std::uint64_t>(is);
    const auto k = get<std::uint32_t>(is);
    const auto file_size = fs::file_size(path);
    if (k > 4096 || (m != 0 && k != 0 && n > file_size / (m * k)))
        throw FormatError(path.string() + ": dimensions exceed file size");
    std::vector<std::string> names(k);
    for (auto &name : names) {
        auto len = get<std::uint32_t>(is);
        if (len > 4096)
            throw FormatError(path.string() + ": component name too long");
        name.resize(len);
        if (!is.read(name.data(), len))
            throw FormatError("unexpected end of file");
    }
    std::vector<double> coeffs(k);
    for (auto &c : coeffs)
        c = get<double>(is);
    std::vector<std::uint64_t> columns(m);
    for (auto &s : columns)
        s = get<std::uint64_t>(is);
    ComponentMatrix cm(n, std::move(columns), std::move(names), std::move(coeffs));
    for (auto &c : cm.labels)
        c = parse_label(get<std::uint8_t>(is));
    if (!is.read(reinterpret_cast<char *>(cm.values.data()),
                 static_cast<std::streamsize>(cm.values.size() * sizeof(float))))
        throw FormatError(path.string() + ": truncated component values");
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError(path.string() + ": trailing bytes after component values");
    return cm;
}

ColumnStream::ColumnStream(const fs::path &path, std::size_t first, std::size_t last, std::size_t block_width)
    : file_(path), cursor_(first), last_(last), width_(block_width) {
    if (first > last || last > file_.n_samples())
        throw std::out_of_range("column range [" + std::to_string(first) + ", " + std::to_string(last) +
                                ") outside [0, " + std::to_string(file_.n_samples()) + ")");
    if (block_width == 0)
        throw std::invalid_argument("block width must be positive");
}

bool ColumnStream::next(ColumnBlock &block) {
    if (cursor_ >= last_)
        return false;
    const std::size_t w = std::min(width_, last_ - cursor_);
    block.first = cursor_;
    block.width = w;
    block.n_traces = file_.n_traces();
    block.data.resize(w * block.n_traces);
    file_.read_columns(cursor_, cursor_ + w, block.data);
    cursor_ += w;
    return true;
}

void write_manifest(const DatasetManifest &m, const fs::path &path) {
    json j = {{"kernel_path", m.kernel_path},
              {"order", m.order},
              {"fixed_input", hex(m.fixed_input)},
              {"mask_width", m.mask_width},
              {"trace_count", m.trace_count},
              {"noise", {{"sigma_pct", m.noise.sigma_pct}, {"seed", m.noise.seed}}},
              {"creation_seed", m.creation_seed},
              {"trace_file", m.trace_file},
              {"component_file", m.component_file},
              {"companion_trace_file", m.companion_trace_file},
              {"companion_component_file", m.companion_component_file}};
    std::ofstream os(path);
    if (!os)
        throw Error("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

DatasetManifest read_manifest(const fs::path &path) {
    std::ifstream is(path);
    if (!is)
        throw Error("cannot open " + path.string());
    try {
        json j = json::parse(is);
        DatasetManifest m;
        m.kernel_path = j.at("kernel_path").get<std::string>();
        m.order = j.at("order").get<int>();
        m.fixed_input = unhex(j.value("fixed_input", std::string{}));
        m.mask_width = j.value("mask_width", std::size_t{1});
        m.trace_count = j.at("trace_count").get<std::size_t>();
        if (j.contains("noise")) {
            m.noise.sigma_pct = j["noise"].value("sigma_pct", 0.0);
            m.noise.seed = j["noise"].value("seed", std::uint64_t{0});
        }
        m.creation_seed = j.value("creation_seed", std::uint64_t{0});
        m.trace_file = j.value("trace_file", std::string{});
        m.component_file = j.value("component_file", std::string{});
        m.companion_trace_file = j.value("companion_trace_file", std::string{});
        m.companion_component_file = j.value("companion_component_file", std::string{});
        return m;
    } catch (const json::exception &e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void validate_manifest(const DatasetManifest &m, const fs::path &base_dir) {
    if (m.order != 2 && m.order != 3)
        throw FormatError("manifest order must be 2 or 3");
    auto resolve = [&](const std::string &f) { return fs::path(f).is_absolute() ? fs::path(f) : base_dir / f; };
    auto check_traces = [&](const std::string &f, bool match_count) -> std::size_t {
        auto p = resolve(f);
        if (!fs::exists(p))
            throw FormatError("manifest references missing file " + p.string());
        TraceFile tf(p);
        if (match_count && tf.n_traces() != m.trace_count)
            throw FormatError(p.string() + " holds " + std::to_string(tf.n_traces()) + " traces, manifest says " +
                              std::to_string(m.trace_count));
        return tf.n_samples();
    };
    std::size_t samples = 0;
    if (!m.trace_file.empty())
        samples = check_traces(m.trace_file, true);
    if (!m.companion_trace_file.empty()) {
        std::size_t s = check_traces(m.companion_trace_file, false);
        if (!m.trace_file.empty() && s != samples)
            throw FormatError("companion trace file has a different sample count");
    }
    for (const auto &f : {m.component_file, m.companion_component_file}) {
        if (f.empty())
            continue;
        auto p = resolve(f);
        if (!fs::exists(p))
            throw FormatError("manifest references missing file " + p.string());
    }
    if (!m.component_file.empty()) {
        auto cm = read_components(resolve(m.component_file));
        if (cm.n_traces != m.trace_count)
            throw FormatError("component file trace count disagrees with manifest");
        for (auto s : cm.sample_index)
            if (!m.trace_file.empty() && s >= samples)
                throw FormatError("component file references a sample beyond the trace length");
    }
}

} // namespace hileak
