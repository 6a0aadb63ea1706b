#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hileak {

enum class TraceClass : std::uint8_t { Fixed = 0, Random = 1 };

/// Power traces: n_traces rows of n_samples single-precision samples plus a
/// class label per trace.
struct TraceSet {
    std::size_t n_traces = 0;
    std::size_t n_samples = 0;
    std::vector<float> samples; // row-major
    std::vector<TraceClass> labels;
    std::uint64_t seed = 0;

    TraceSet() = default;
    TraceSet(std::size_t traces, std::size_t samples_per_trace)
        : n_traces(traces), n_samples(samples_per_trace), samples(traces * samples_per_trace, 0.0f),
          labels(traces, TraceClass::Random) {}

    float at(std::size_t i, std::size_t j) const { return samples[i * n_samples + j]; }
    float &at(std::size_t i, std::size_t j) { return samples[i * n_samples + j]; }
    std::span<const float> row(std::size_t i) const { return {samples.data() + i * n_samples, n_samples}; }
    std::span<float> row(std::size_t i) { return {samples.data() + i * n_samples, n_samples}; }

    std::size_t count(TraceClass c) const;
    /// Shape and label-count checks; throws FormatError.
    void validate() const;
    /// Rows with the given label, in order.
    TraceSet select(TraceClass c) const;

    bool operator==(const TraceSet &) const = default;
};

/// Per-trace, per-sample values of every leakage-model component. Stored
/// sample-major: each (sample, component) block is contiguous over traces.
struct ComponentMatrix {
    std::size_t n_traces = 0;
    std::size_t n_samples = 0;
    std::size_t n_components = 0;
    std::vector<float> values;
    std::vector<std::string> component_names;
    std::vector<double> coefficients;
    /// Original sample index of each stored column; lets a matrix hold only a
    /// subset of the trace's sample points.
    std::vector<std::uint64_t> sample_index;
    std::vector<TraceClass> labels;

    ComponentMatrix() = default;
    ComponentMatrix(std::size_t traces, std::vector<std::uint64_t> columns, std::vector<std::string> names,
                    std::vector<double> coeffs);

    std::size_t offset(std::size_t j, std::size_t c) const { return (j * n_components + c) * n_traces; }
    std::span<const float> block(std::size_t j, std::size_t c) const { return {values.data() + offset(j, c), n_traces}; }
    std::span<float> block(std::size_t j, std::size_t c) { return {values.data() + offset(j, c), n_traces}; }
    float at(std::size_t i, std::size_t j, std::size_t c) const { return values[offset(j, c) + i]; }
    float &at(std::size_t i, std::size_t j, std::size_t c) { return values[offset(j, c) + i]; }

    /// Column holding original sample `sample`; throws std::out_of_range.
    std::size_t column_of(std::uint64_t sample) const;
    /// Coefficient-weighted sum over all components at (trace, column).
    double power(std::size_t i, std::size_t j) const;

    bool operator==(const ComponentMatrix &) const = default;
};

/// Column-oriented read access shared by in-memory sets and mapped files.
class TraceSource {
  public:
    virtual ~TraceSource() = default;
    virtual std::size_t n_traces() const = 0;
    virtual std::size_t n_samples() const = 0;
    virtual TraceClass label(std::size_t i) const = 0;
    /// Writes columns [first, last) column-major: out[(j - first) * n_traces() + i].
    virtual void read_columns(std::size_t first, std::size_t last, std::span<float> out) const = 0;
};

class TraceSetSource final : public TraceSource {
  public:
    explicit TraceSetSource(const TraceSet &set) : set_(set) {}
    std::size_t n_traces() const override { return set_.n_traces; }
    std::size_t n_samples() const override { return set_.n_samples; }
    TraceClass label(std::size_t i) const override { return set_.labels[i]; }
    void read_columns(std::size_t first, std::size_t last, std::span<float> out) const override;

  private:
    const TraceSet &set_;
};

/// Presents two sets as one labelled source: every row of `fixed` is FIXED,
/// every row of `random` is RANDOM.
class PairedSource final : public TraceSource {
  public:
    PairedSource(const TraceSet &fixed, const TraceSet &random);
    std::size_t n_traces() const override { return fixed_.n_traces + random_.n_traces; }
    std::size_t n_samples() const override { return fixed_.n_samples; }
    TraceClass label(std::size_t i) const override {
        return i < fixed_.n_traces ? TraceClass::Fixed : TraceClass::Random;
    }
    void read_columns(std::size_t first, std::size_t last, std::span<float> out) const override;

  private:
    const TraceSet &fixed_;
    const TraceSet &random_;
};

/// Read-only memory-mapped trace file. Safe to share across threads.
class TraceFile final : public TraceSource {
  public:
    explicit TraceFile(const std::filesystem::path &path);
    ~TraceFile() override;
    TraceFile(const TraceFile &) = delete;
    TraceFile &operator=(const TraceFile &) = delete;
    TraceFile(TraceFile &&other) noexcept;
    TraceFile &operator=(TraceFile &&other) noexcept;

    std::size_t n_traces() const override { return n_traces_; }
    std::size_t n_samples() const override { return n_samples_; }
    TraceClass label(std::size_t i) const override;
    void read_columns(std::size_t first, std::size_t last, std::span<float> out) const override;
    void read_row(std::size_t i, std::span<float> out) const;
    TraceSet load() const;

  private:
    void release() noexcept;
    const unsigned char *base_ = nullptr;
    std::size_t size_ = 0;
    std::size_t n_traces_ = 0;
    std::size_t n_samples_ = 0;
};

inline constexpr std::uint32_t kTraceFormatVersion = 1;
inline constexpr std::size_t kTraceHeaderBytes = 24;

/// Preallocates a trace file and fills it row range by row range. Distinct
/// writers may fill disjoint row ranges of one file.
class TraceWriter {
  public:
    static TraceWriter create(const std::filesystem::path &path, std::size_t n_traces, std::size_t n_samples);
    /// Reopens an existing file; its header must match the given dimensions.
    static TraceWriter open_existing(const std::filesystem::path &path, std::size_t n_traces, std::size_t n_samples);

    void write_rows(std::size_t first_row, std::span<const float> rows, std::span<const TraceClass> labels);

  private:
    TraceWriter(std::filesystem::path p, std::size_t n, std::size_t m) : path_(std::move(p)), n_traces_(n), n_samples_(m) {}
    std::filesystem::path path_;
    std::size_t n_traces_;
    std::size_t n_samples_;
};

/// Writes the binary file plus a `<path>.json` sidecar carrying the seed.
void write_traceset(const TraceSet &set, const std::filesystem::path &path);
TraceSet read_traceset(const std::filesystem::path &path);

void write_components(const ComponentMatrix &cm, const std::filesystem::path &path);
ComponentMatrix read_components(const std::filesystem::path &path);

/// One block of consecutive columns, column-major.
struct ColumnBlock {
    std::size_t first = 0;
    std::size_t width = 0;
    std::size_t n_traces = 0;
    std::vector<float> data;
    std::span<const float> column(std::size_t k) const { return {data.data() + k * n_traces, n_traces}; }
};

/// Iterates a column range of a trace file in blocks of at most `block_width`
/// columns; only one block is resident at a time.
class ColumnStream {
  public:
    ColumnStream(const std::filesystem::path &path, std::size_t first, std::size_t last, std::size_t block_width = 16);

    /// Fills `block` with the next block; false once the range is exhausted.
    bool next(ColumnBlock &block);

    class iterator {
      public:
        using value_type = ColumnBlock;
        using difference_type = std::ptrdiff_t;
        iterator() = default;
        explicit iterator(ColumnStream *s) : stream_(s) { ++*this; }
        const ColumnBlock &operator*() const { return block_; }
        const ColumnBlock *operator->() const { return &block_; }
        iterator &operator++() {
            if (stream_ && !stream_->next(block_))
                stream_ = nullptr;
            return *this;
        }
        void operator++(int) { ++*this; }
        bool operator==(const iterator &o) const { return stream_ == o.stream_; }

      private:
        ColumnStream *stream_ = nullptr;
        ColumnBlock block_;
    };
    iterator begin() { return iterator(this); }
    iterator end() { return {}; }

  private:
    TraceFile file_;
    std::size_t cursor_;
    std::size_t last_;
    std::size_t width_;
};

inline ColumnStream stream_columns(const std::filesystem::path &path, std::size_t first, std::size_t last,
                                   std::size_t block_width = 16) {
    return ColumnStream(path, first, last, block_width);
}

struct NoiseConfig {
    double sigma_pct = 0.0; // standard deviation as a percentage of the set's amplitude
    std::uint64_t seed = 0;
};

/// Experiment description stored next to generated data.
struct DatasetManifest {
    std::string kernel_path;
    int order = 2;
    std::vector<std::uint8_t> fixed_input;
    std::size_t mask_width = 1; // bytes per share
    std::size_t trace_count = 0;
    NoiseConfig noise;
    std::uint64_t creation_seed = 0;
    std::string trace_file;
    std::string component_file;
    std::string companion_trace_file;
    std::string companion_component_file;
};

void write_manifest(const DatasetManifest &m, const std::filesystem::path &path);
DatasetManifest read_manifest(const std::filesystem::path &path);
/// Referenced files exist and their dimensions match the manifest; throws FormatError.
void validate_manifest(const DatasetManifest &m, const std::filesystem::path &base_dir);

} // namespace hileak
