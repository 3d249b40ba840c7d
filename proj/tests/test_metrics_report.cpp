#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <regex>

#include "dspnet/errors.hpp"
#include "dspnet/metrics.hpp"
#include "dspnet/report.hpp"

using namespace dspnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("dspnet_test_metrics_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir / name;
}

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto at = s.find(needle); at != std::string::npos; at = s.find(needle, at + 1)) ++n;
    return n;
}

}  // namespace

TEST(Csv, EscapeQuotesOnlyWhenNeeded) {
    EXPECT_EQ(csv_escape("plain"), "plain");
    EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
    EXPECT_EQ(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
    EXPECT_EQ(csv_escape("two\nlines"), "\"two\nlines\"");
    EXPECT_EQ(csv_row({"a", "b,c", ""}), "a,\"b,c\",\r\n");
}

TEST(Csv, ParseInvertsRow) {
    const std::vector<std::string> header{"x", "y"};
    const std::vector<std::string> row{"w=0.5,0.5|1,1", "q\"uote"};
    const auto t = parse_csv(csv_row(header) + csv_row(row));
    EXPECT_EQ(t.header, header);
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.rows[0], row);
    EXPECT_EQ(t.column("y"), 1u);
    EXPECT_FALSE(t.has("z"));
}

TEST(Csv, MalformedInputsAreFormatErrors) {
    EXPECT_THROW(parse_csv(""), FormatError);
    EXPECT_THROW(parse_csv("a,b\n\"open,1\n"), FormatError);
    EXPECT_THROW(parse_csv("a,b\n1,2,3\n"), FormatError);
    EXPECT_THROW(parse_csv("a,b\n1x\"y,2\n"), FormatError);
    EXPECT_THROW(read_csv(scratch("absent.csv")), IoError);
}

TEST(Csv, FormatDoubleRoundTrips) {
    for (double v : {0.1, 1.0 / 3.0, 2.0, 1e-300, -4.25}) EXPECT_EQ(std::stod(format_double(v)), v);
}

TEST(Csv, WriterRejectsWrongWidth) {
    CsvWriter w(scratch("w.csv"), {"a", "b"});
    w.write({"1", "2"});
    EXPECT_THROW(w.write({"1"}), ContractError);
    w.close();
    EXPECT_EQ(read_csv(scratch("w.csv")).rows.size(), 1u);
}

TEST(Metrics, InactiveDnCellsAreEmpty) {
    const auto header = metrics_header(3, {"loss"});
    MetricsRecord r;
    r.step = 7;
    r.total_loss = 1.5;
    r.cfg_indices = {2, 0};
    r.terms = {{0.75}, {0.5}};
    const auto row = metrics_row(r, 3, 1);
    ASSERT_EQ(row.size(), header.size());
    EXPECT_EQ(row[0], "7");
    EXPECT_EQ(row[5], "2;0");
    EXPECT_EQ(row[6], "0.5");
    EXPECT_EQ(row[7], "");
    EXPECT_EQ(row[8], "0.75");
    r.cfg_indices = {3};
    r.terms = {{1.0}};
    EXPECT_THROW(metrics_row(r, 3, 1), ContractError);
}

TEST(Timing, LastRowIsTheRunTotal) {
    const fs::path p = scratch("timing.csv");
    {
        CsvWriter w(p, timing_header());
        const RunTiming run{"byol", 2, true, 0, ""};
        w.write(timing_row(run, 10, 1.5));
        w.write(timing_row(run, 20, 3.25));
    }
    const RunTiming t = read_timing(p);
    EXPECT_EQ(t.kind, "byol");
    EXPECT_EQ(t.dn, 2);
    EXPECT_TRUE(t.full);
    EXPECT_EQ(t.seconds, 3.25);
}

TEST(Timing, MissingColumnIsFormatError) {
    const fs::path p = scratch("bad_timing.csv");
    std::ofstream(p) << "kind,dn\nbyol,1\n";
    EXPECT_THROW(read_timing(p), FormatError);
}

TEST(Cost, SelfRatioIsOneAndIndividualSumAdds) {
    const RunTiming full{"byol", 2, true, 4.0, ""};
    const RunTiming small{"byol", 0, false, 2.0, ""};
    const RunTiming mid{"byol", 1, false, 2.0, ""};
    const RunTiming joint{"dspnet", -1, false, 6.0, ""};
    EXPECT_EQ(measure_cost({full}).individual_sum_ratio, 1.0);
    const auto rep = measure_cost({small, full, mid, joint});
    EXPECT_EQ(rep.baseline_seconds, 4.0);
    EXPECT_EQ(rep.individual_sum_ratio, 2.0);
    EXPECT_EQ(rep.individual_runs, 3u);
    EXPECT_EQ(rep.dspnet_ratio, 1.5);
    EXPECT_THROW(measure_cost({small, joint}), FormatError);
}

TEST(Report, OneGroupPerSeries) {
    Panel a{"loss", "step", "loss", {{"dspnet", {{0, 2.0}, {1, 1.5}, {2, 1.0}}}, {"byol <full>", {{0, 2.1}, {2, 1.1}}}}};
    Panel b{"sweep", "MFLOPs", "top-1", {{"dspnet", {{1, 0.9}, {2, 0.95}}, false}}};
    const std::string svg = render_svg({a, b}, "reference 2.11x");
    EXPECT_NE(svg.find("<svg"), std::string::npos);
    EXPECT_EQ(count(svg, "class=\"series\""), 3u);
    EXPECT_NE(svg.find("byol &lt;full&gt;"), std::string::npos);
    EXPECT_NE(svg.find("reference 2.11x"), std::string::npos);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Report, DegenerateInputIsRejected) {
    EXPECT_THROW(render_svg({}), ContractError);
    Panel nan{"p", "x", "y", {{"s", {{0, std::numeric_limits<double>::quiet_NaN()}}}}};
    EXPECT_THROW(render_svg({nan}), ContractError);
}

TEST(Report, XmlEscape) { EXPECT_EQ(xml_escape("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;"); }
