#include "hileak/error.hpp"
#include "hileak/tracestore.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace hileak;
using hileak::testing::gaussian_set;
using hileak::testing::TempDir;

namespace {

ComponentMatrix small_components() {
    ComponentMatrix cm(6, {2, 5}, {"a", "b", "c"}, {0.5, 1.0, -2.0});
    for (std::size_t i = 0; i < cm.n_traces; ++i) {
        cm.labels[i] = i % 2 ? TraceClass::Random : TraceClass::Fixed;
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t c = 0; c < 3; ++c)
                cm.at(i, j, c) = static_cast<float>(i * 100 + j * 10 + c);
    }
    return cm;
}

} // namespace

TEST(TraceSet, CountsSelectAndValidate) {
    TraceSet s = gaussian_set(10, 3, 1);
    EXPECT_EQ(s.count(TraceClass::Fixed), 5u);
    TraceSet f = s.select(TraceClass::Fixed);
    ASSERT_EQ(f.n_traces, 5u);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            EXPECT_EQ(f.at(i, j), s.at(2 * i, j));
    EXPECT_NO_THROW(s.validate());
    s.labels.assign(10, TraceClass::Fixed);
    EXPECT_THROW(s.validate(), FormatError);
}

TEST(TraceFile, RoundTrip) {
    TempDir dir("ts");
    TraceSet s = gaussian_set(37, 11, 2);
    s.seed = 987654321;
    write_traceset(s, dir / "t.hltr");
    EXPECT_TRUE(std::filesystem::exists(dir / "t.hltr.json"));
    TraceSet back = read_traceset(dir / "t.hltr");
    EXPECT_EQ(back, s);
    EXPECT_EQ(std::filesystem::file_size(dir / "t.hltr"), kTraceHeaderBytes + 37 + 37 * 11 * 4);
}

TEST(TraceFile, ColumnsAndRowsMatchMemory) {
    TempDir dir("ts");
    TraceSet s = gaussian_set(20, 9, 3);
    write_traceset(s, dir / "t.hltr");
    TraceFile f(dir / "t.hltr");
    ASSERT_EQ(f.n_traces(), 20u);
    ASSERT_EQ(f.n_samples(), 9u);
    std::vector<float> cols(20 * 4);
    f.read_columns(3, 7, cols);
    for (std::size_t j = 3; j < 7; ++j)
        for (std::size_t i = 0; i < 20; ++i)
            EXPECT_EQ(cols[(j - 3) * 20 + i], s.at(i, j));
    std::vector<float> row(9);
    f.read_row(13, row);
    for (std::size_t j = 0; j < 9; ++j)
        EXPECT_EQ(row[j], s.at(13, j));
    EXPECT_EQ(f.label(13), TraceClass::Random);
    EXPECT_THROW(f.read_columns(5, 10, cols), std::out_of_range);
}

TEST(TraceFile, RejectsCorruptFiles) {
    TempDir dir("ts");
    {
        std::ofstream out(dir / "bad.hltr", std::ios::binary);
        out << "NOPE0000000000000000000000000000";
    }
    EXPECT_THROW(TraceFile(dir / "bad.hltr"), FormatError);
    {
        std::ofstream out(dir / "short.hltr", std::ios::binary);
        out << "HLTR";
    }
    EXPECT_THROW(TraceFile(dir / "short.hltr"), FormatError);

    TraceSet s = gaussian_set(8, 4, 4);
    write_traceset(s, dir / "t.hltr");
    std::filesystem::resize_file(dir / "t.hltr", std::filesystem::file_size(dir / "t.hltr") - 4);
    EXPECT_THROW(TraceFile(dir / "t.hltr"), FormatError);
    EXPECT_THROW(TraceFile(dir / "missing.hltr"), Error);
}

TEST(TraceWriter, DisjointRangesFillOneFile) {
    TempDir dir("ts");
    TraceSet s = gaussian_set(10, 5, 5);
    auto w = TraceWriter::create(dir / "w.hltr", 10, 5);
    auto half = std::span<const float>(s.samples).subspan(0, 25);
    auto rest = std::span<const float>(s.samples).subspan(25);
    auto labels = std::span<const TraceClass>(s.labels);
    TraceWriter::open_existing(dir / "w.hltr", 10, 5).write_rows(5, rest, labels.subspan(5));
    w.write_rows(0, half, labels.subspan(0, 5));
    TraceSet back = TraceFile(dir / "w.hltr").load();
    EXPECT_EQ(back.samples, s.samples);
    EXPECT_EQ(back.labels, s.labels);
    EXPECT_THROW(TraceWriter::open_existing(dir / "w.hltr", 10, 6), FormatError);
    EXPECT_THROW(w.write_rows(8, half, labels.subspan(0, 5)), std::out_of_range);
}

TEST(ColumnStream, VisitsEveryColumnOnce) {
    TempDir dir("ts");
    TraceSet s = gaussian_set(16, 23, 6);
    write_traceset(s, dir / "t.hltr");
    std::size_t next = 2;
    for (const auto &block : stream_columns(dir / "t.hltr", 2, 21, 4)) {
        EXPECT_EQ(block.first, next);
        EXPECT_LE(block.width, 4u);
        for (std::size_t k = 0; k < block.width; ++k)
            for (std::size_t i = 0; i < 16; ++i)
                EXPECT_EQ(block.column(k)[i], s.at(i, block.first + k));
        next += block.width;
    }
    EXPECT_EQ(next, 21u);
}

TEST(Sources, PairedSourceLabelsAndColumns) {
    TraceSet f = gaussian_set(4, 3, 7), r = gaussian_set(6, 3, 8);
    PairedSource src(f, r);
    EXPECT_EQ(src.n_traces(), 10u);
    EXPECT_EQ(src.label(3), TraceClass::Fixed);
    EXPECT_EQ(src.label(4), TraceClass::Random);
    std::vector<float> col(10);
    src.read_columns(1, 2, col);
    EXPECT_EQ(col[2], f.at(2, 1));
    EXPECT_EQ(col[7], r.at(3, 1));
    TraceSet other = gaussian_set(4, 5, 9);
    EXPECT_THROW(PairedSource(f, other), std::invalid_argument);
}

TEST(ComponentMatrix, LayoutAndPower) {
    ComponentMatrix cm = small_components();
    EXPECT_EQ(cm.column_of(5), 1u);
    EXPECT_THROW(cm.column_of(3), std::out_of_range);
    EXPECT_EQ(cm.block(1, 2)[4], cm.at(4, 1, 2));
    EXPECT_DOUBLE_EQ(cm.power(3, 0), 0.5 * 300 + 1.0 * 301 - 2.0 * 302);
}

TEST(ComponentMatrix, RoundTrip) {
    TempDir dir("cm");
    ComponentMatrix cm = small_components();
    write_components(cm, dir / "c.hlcm");
    EXPECT_EQ(read_components(dir / "c.hlcm"), cm);
    {
        std::ofstream out(dir / "bad.hlcm", std::ios::binary);
        out << "HLTR\x01\0\0\0";
    }
    EXPECT_THROW(read_components(dir / "bad.hlcm"), FormatError);
}

TEST(Manifest, RoundTripAndValidation) {
    TempDir dir("mf");
    TraceSet s = gaussian_set(6, 7, 10);
    write_traceset(s, dir / "t.hltr");
    ComponentMatrix cm = small_components();
    write_components(cm, dir / "c.hlcm");

    DatasetManifest m;
    m.kernel_path = "corpus/toy.s";
    m.order = 2;
    m.fixed_input = {0xde, 0xad};
    m.mask_width = 2;
    m.trace_count = 6;
    m.noise = {0.25, 77};
    m.creation_seed = 42;
    m.trace_file = "t.hltr";
    m.component_file = "c.hlcm";
    write_manifest(m, dir / "manifest.json");
    DatasetManifest back = read_manifest(dir / "manifest.json");
    EXPECT_EQ(back.fixed_input, m.fixed_input);
    EXPECT_EQ(back.noise.seed, 77u);
    EXPECT_DOUBLE_EQ(back.noise.sigma_pct, 0.25);
    EXPECT_EQ(back.creation_seed, 42u);
    EXPECT_NO_THROW(validate_manifest(back, dir.path()));

    back.trace_count = 7;
    EXPECT_THROW(validate_manifest(back, dir.path()), FormatError);
    back.trace_count = 6;
    back.component_file = "absent.hlcm";
    EXPECT_THROW(validate_manifest(back, dir.path()), FormatError);
}
