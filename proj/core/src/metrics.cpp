#include "dspnet/metrics.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "dspnet/errors.hpp"

namespace dspnet {

std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string csv_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += csv_escape(fields[i]);
    }
    out += "\r\n";
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw ContractError("cannot format double");
    return std::string(buf, end);
}

std::size_t CsvTable::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    return npos;
}

CsvTable parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, field_started = false;
    std::size_t i = 0;
    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        records.push_back(std::move(row));
        row.clear();
    };
    while (i < text.size()) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    i += 2;
                    continue;
                }
                quoted = false;
            } else {
                field += c;
            }
            ++i;
            continue;
        }
        if (c == '"') {
            if (!field.empty()) throw FormatError("CSV: quote inside an unquoted field");
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
            field_started = true;
        } else if (c == '\r' || c == '\n') {
            end_row();
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
        } else {
            field += c;
            field_started = true;
        }
        ++i;
    }
    if (quoted) throw FormatError("CSV: unterminated quoted field");
    if (field_started || !row.empty()) end_row();
    if (records.empty()) throw FormatError("CSV: empty input");
    CsvTable t;
    t.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != t.header.size())
            throw FormatError("CSV: row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                              " fields, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(records[r]));
    }
    return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_csv(ss.str());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : columns_(header.size()), path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    file_ = std::fopen(path.string().c_str(), "wb");
    if (!file_) throw IoError("cannot write " + path.string());
    write(header);
}

CsvWriter::~CsvWriter() { close(); }

CsvWriter::CsvWriter(CsvWriter&& o) noexcept : file_(o.file_), columns_(o.columns_), path_(std::move(o.path_)) {
    o.file_ = nullptr;
}

CsvWriter& CsvWriter::operator=(CsvWriter&& o) noexcept {
    if (this != &o) {
        close();
        file_ = o.file_;
        columns_ = o.columns_;
        path_ = std::move(o.path_);
        o.file_ = nullptr;
    }
    return *this;
}

void CsvWriter::write(const std::vector<std::string>& fields) {
    if (!file_) throw IoError("CSV writer is closed");
    if (fields.size() != columns_) throw ContractError("CSV row width differs from header");
    const std::string line = csv_row(fields);
    if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0)
        throw IoError("short write to " + path_.string());
}

void CsvWriter::close() {
    if (file_) std::fclose(file_);
    file_ = nullptr;
}

std::vector<std::string> metrics_header(std::size_t num_dns, const std::vector<std::string>& term_names) {
    std::vector<std::string> h{"step", "epoch", "lr", "tau", "total_loss", "cfgs"};
    for (std::size_t d = 0; d < num_dns; ++d)
        for (const auto& t : term_names) h.push_back(t + "_dn" + std::to_string(d));
    return h;
}

std::vector<std::string> metrics_row(const MetricsRecord& r, std::size_t num_dns, std::size_t num_terms) {
    std::string cfgs;
    for (std::size_t i = 0; i < r.cfg_indices.size(); ++i) cfgs += (i ? ";" : "") + std::to_string(r.cfg_indices[i]);
    std::vector<std::string> row{std::to_string(r.step), std::to_string(r.epoch), format_double(r.lr),
                                 format_double(r.tau),   format_double(r.total_loss), cfgs};
    std::vector<std::string> cells(num_dns * num_terms);
    for (std::size_t i = 0; i < r.cfg_indices.size(); ++i) {
        const std::size_t d = r.cfg_indices[i];
        if (d >= num_dns || r.terms.at(i).size() != num_terms) throw ContractError("metrics record does not fit header");
        for (std::size_t t = 0; t < num_terms; ++t) cells[d * num_terms + t] = format_double(r.terms[i][t]);
    }
    row.insert(row.end(), cells.begin(), cells.end());
    return row;
}

std::vector<std::string> timing_header() { return {"kind", "dn", "full", "step", "seconds"}; }

std::vector<std::string> timing_row(const RunTiming& run, std::uint64_t step, double seconds) {
    return {run.kind, std::to_string(run.dn), run.full ? "1" : "0", std::to_string(step), format_double(seconds)};
}

RunTiming read_timing(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    for (const char* col : {"kind", "dn", "full", "seconds"})
        if (!t.has(col)) throw FormatError(path.string() + ": timing file lacks column '" + col + "'");
    if (t.rows.empty()) throw FormatError(path.string() + ": timing file has no rows");
    const auto& last = t.rows.back();
    RunTiming r;
    r.source = path.string();
    try {
        r.kind = last[t.column("kind")];
        r.dn = std::stol(last[t.column("dn")]);
        r.full = last[t.column("full")] == "1";
        r.seconds = std::stod(last[t.column("seconds")]);
    } catch (const std::logic_error&) {
        throw FormatError(path.string() + ": malformed timing row");
    }
    return r;
}

CostReport measure_cost(const std::vector<RunTiming>& runs) {
    CostReport rep;
    const RunTiming* baseline = nullptr;
    const RunTiming* dspnet = nullptr;
    double sum = 0;
    for (const auto& r : runs) {
        if (r.kind == "byol") {
            sum += r.seconds;
            ++rep.individual_runs;
            if (r.full && !baseline) baseline = &r;
        } else if (r.kind == "dspnet" && !dspnet) {
            dspnet = &r;
        }
    }
    if (!baseline) throw FormatError("cost report needs the timing log of a full-size individual run");
    if (!(baseline->seconds > 0)) throw FormatError("baseline run has no positive wall-clock");
    rep.baseline_seconds = baseline->seconds;
    rep.individual_sum_ratio = sum / baseline->seconds;
    if (dspnet) rep.dspnet_ratio = dspnet->seconds / baseline->seconds;
    return rep;
}

}  // namespace dspnet
