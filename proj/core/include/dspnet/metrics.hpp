#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dspnet {

/// Quotes a field when it contains a comma, quote, CR or LF (RFC 4180).
std::string csv_escape(std::string_view field);
std::string csv_row(const std::vector<std::string>& fields);

/// Shortest decimal text that round-trips the double.
std::string format_double(double v);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column index by name, or npos.
    std::size_t column(std::string_view name) const;
    bool has(std::string_view name) const { return column(name) != npos; }
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

/// RFC 4180 parse. Throws FormatError on an empty input, an unterminated
/// quote or a row whose field count differs from the header.
CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

/// Appends rows to a CSV file, flushing after every row.
class CsvWriter {
public:
    CsvWriter() = default;
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
    ~CsvWriter();
    CsvWriter(CsvWriter&& other) noexcept;
    CsvWriter& operator=(CsvWriter&& other) noexcept;
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;

    bool is_open() const { return file_ != nullptr; }
    void write(const std::vector<std::string>& fields);
    void close();

private:
    std::FILE* file_ = nullptr;
    std::size_t columns_ = 0;
    std::filesystem::path path_;
};

/// One training step. `terms[i]` belongs to dn_list index `cfg_indices[i]`
/// and holds one value per term name of the run.
struct MetricsRecord {
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    double lr = 0;
    double tau = 0;
    double total_loss = 0;
    std::vector<std::size_t> cfg_indices;
    std::vector<std::vector<double>> terms;
};

/// step,epoch,lr,tau,total_loss,cfgs then `<term>_dn<i>` for every DN and
/// term; cells of DNs not sampled in a step stay empty.
std::vector<std::string> metrics_header(std::size_t num_dns, const std::vector<std::string>& term_names);
std::vector<std::string> metrics_row(const MetricsRecord& r, std::size_t num_dns, std::size_t num_terms);

/// Wall-clock of one training run, read from its timing sidecar.
struct RunTiming {
    std::string kind;  // "dspnet" or "byol"
    long dn = -1;      // dn index of a byol run
    bool full = false;
    double seconds = 0;
    std::string source;
};

std::vector<std::string> timing_header();
std::vector<std::string> timing_row(const RunTiming& run, std::uint64_t step, double seconds);
/// Last row of a timing sidecar. Throws FormatError when it has none.
RunTiming read_timing(const std::filesystem::path& path);

struct CostReport {
    double baseline_seconds = 0;      // full-size individual run
    double dspnet_ratio = 0;          // T(dspnet) / baseline, 0 without a dspnet run
    double individual_sum_ratio = 0;  // sum of T(byol runs) / baseline
    std::size_t individual_runs = 0;
};

/// Throws FormatError when no full-size individual run is present.
CostReport measure_cost(const std::vector<RunTiming>& runs);

}  // namespace dspnet
