// dspnet: pretrain, evaluate, export and report on slimmable SSL runs.
//
// Exit codes:
//   0  success
//   2  configuration or flag error
//   3  runtime failure (non-finite loss, contract violation)
//   4  I/O failure (unreadable or unwritable file, malformed dataset)
//   5  corrupt or unreadable checkpoint
//   6  malformed CSV given to `report`

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dspnet/checkpoint.hpp"
#include "dspnet/eval.hpp"
#include "dspnet/metrics.hpp"
#include "dspnet/report.hpp"
#include "dspnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace dspnet;

namespace {

enum Exit : int { kOk = 0, kConfig = 2, kRuntime = 3, kIo = 4, kCorrupt = 5, kCsv = 6 };

Checkpoint read_checkpoint(const fs::path& path) {
    try {
        return load_checkpoint(path);
    } catch (const CorruptError&) {
        throw;
    } catch (const FormatError& e) {
        throw CorruptError(path.string() + ": " + e.what());
    }
}

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// ---- pretrain ----

struct PretrainArgs {
    std::string config;
    std::string mode = "dspnet";
    std::optional<std::size_t> dn;
    std::optional<std::string> output_dir;
};

int cmd_pretrain(const PretrainArgs& a) {
    if (a.mode != "dspnet" && a.mode != "byol") throw ConfigError("--mode must be dspnet or byol");
    if (a.mode == "byol" && !a.dn) throw ConfigError("--mode byol requires --cfg <dn-index>");
    if (a.mode == "dspnet" && a.dn) throw ConfigError("--cfg only applies to --mode byol");
    RunConfig cfg = load_config(a.config);
    if (a.output_dir) cfg.output_dir = *a.output_dir;
    validate_config(cfg);
    const auto [train, test] = load_datasets(cfg.data);
    const TrainResult r = a.mode == "dspnet" ? pretrain_dspnet(cfg, train) : pretrain_byol_individual(cfg, train, *a.dn);
    std::cout << a.mode << ": " << r.records.size() << " steps in " << fixed(r.seconds, 1) << " s\n"
              << "checkpoint " << (r.run_dir / "final.dspn").string() << "\n"
              << "metrics    " << (r.run_dir / "metrics.csv").string() << "\n";
    return kOk;
}

// ---- eval ----

struct EvalArgs {
    std::string checkpoint;
    std::string protocol;
    std::string sweep_protocol = "linear";
    std::optional<std::size_t> k;
    std::optional<std::size_t> dn;
    std::optional<std::string> config;
    std::optional<std::string> csv;
    std::optional<std::string> method;
};

int cmd_eval(const EvalArgs& a) {
    const Checkpoint ckpt = read_checkpoint(a.checkpoint);
    RunConfig cfg = a.config ? load_config(*a.config) : parse_config(ckpt.config_json);
    if (a.k) cfg.probe.knn_k = *a.k;
    const FamilySpec& family = ckpt.family;
    require_valid(family);
    const ParamStore<float>& encoder = ckpt.store("online");
    const auto [train, test] = load_datasets(cfg.data);

    const fs::path csv_path = a.csv ? fs::path(*a.csv) : fs::path(a.checkpoint).parent_path() / "eval.csv";
    const std::string method = a.method.value_or(ckpt.kind);

    std::vector<SweepRow> rows;
    std::string protocol_label;
    if (a.protocol == "sweep") {
        const Protocol p = parse_protocol(a.sweep_protocol);
        protocol_label = protocol_name(p);
        rows = dn_sweep(encoder, family, p, train, test, cfg);
        for (const auto& r : rows)
            std::cout << "dn=" << r.dn << " cfg=" << r.cfg << " flops=" << r.flops << " " << protocol_label
                      << " top1=" << fixed(r.metric) << "\n";
    } else {
        const Protocol p = parse_protocol(a.protocol);
        protocol_label = protocol_name(p);
        const std::size_t dn = a.dn.value_or(family.full_index());
        if (dn >= family.dn_list.size())
            throw ConfigError("--dn " + std::to_string(dn) + " outside dn_list of size " +
                              std::to_string(family.dn_list.size()));
        const SwitchConfig& sc = family.dn_list[dn];
        const Cost cost = count_cost(family, sc);
        SweepRow row{dn, sc.key(), cost.params, cost.flops(), 0};
        switch (p) {
            case Protocol::linear: row.metric = linear_probe(encoder, family, sc, train, test, cfg.probe, cfg.seed); break;
            case Protocol::knn: row.metric = knn_eval(encoder, family, sc, train, test, cfg.probe.knn_k); break;
            case Protocol::semi:
                row.metric = semi_finetune(encoder, family, sc, train, test, cfg.semi, cfg.probe, cfg.seed);
                break;
        }
        std::cout << protocol_label << " top1=" << fixed(row.metric) << " dn=" << dn << " cfg=" << row.cfg << "\n";
        rows.push_back(row);
    }

    const bool fresh = !fs::exists(csv_path);
    if (!fresh) {
        const CsvTable existing = read_csv(csv_path);
        if (existing.header != sweep_header())
            throw IoError(csv_path.string() + " exists with a different header; choose another --csv");
    }
    if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
    std::ofstream out(csv_path, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to " + csv_path.string());
    if (fresh) out << csv_row(sweep_header());
    for (const auto& r : rows) out << csv_row(sweep_row(method, protocol_label, r));
    if (!out) throw IoError("short write to " + csv_path.string());
    return kOk;
}

// ---- export ----

struct ExportArgs {
    std::string checkpoint;
    std::size_t dn = 0;
    std::string output;
};

int cmd_export(const ExportArgs& a) {
    const Checkpoint src = read_checkpoint(a.checkpoint);
    if (a.dn >= src.family.dn_list.size())
        throw ConfigError("--dn " + std::to_string(a.dn) + " outside dn_list of size " +
                          std::to_string(src.family.dn_list.size()));
    const SwitchConfig& sc = src.family.dn_list[a.dn];
    Checkpoint out;
    out.kind = "standalone";
    out.config_json = src.config_json;
    out.config_hash = src.config_hash;
    out.family = standalone_family(src.family, sc);
    out.head = src.head;
    out.seed = src.seed;
    out.step = src.step;
    out.tau = src.tau;
    out.stores = {{"online", extract_standalone(src.store("online"), src.family, sc)}};
    save_checkpoint(out, a.output);
    const Cost cost = count_cost(src.family, sc);
    std::cout << "exported dn=" << a.dn << " cfg=" << sc.key() << " params=" << cost.params << " to " << a.output
              << "\n";
    return kOk;
}

// ---- report ----

struct ReportArgs {
    std::vector<std::string> inputs;
    std::string output = "report.svg";
    std::optional<std::string> config;
    std::optional<double> reference_ratio;
};

double column_number(const CsvTable& t, const std::vector<std::string>& row, const std::string& name,
                     const std::string& source) {
    const std::string& cell = row[t.column(name)];
    try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw FormatError(source + ": column '" + name + "' holds non-numeric value '" + cell + "'");
    }
}

int cmd_report(const ReportArgs& a) {
    double reference = a.reference_ratio.value_or(RunConfig{}.reference_cost_ratio);
    if (a.config && !a.reference_ratio) reference = load_config(*a.config, false).reference_cost_ratio;

    std::map<std::string, Series> accuracy;  // keyed by method/protocol label
    std::vector<Series> losses;
    std::vector<RunTiming> timings;
    std::vector<std::string> summary;

    for (const auto& in : a.inputs) {
        const fs::path path(in);
        if (!fs::exists(path)) throw IoError("cannot read " + in);
        const CsvTable t = read_csv(path);
        if (t.rows.empty()) throw FormatError(in + ": no data rows");
        if (t.has("metric") && t.has("flops") && t.has("method")) {
            for (const auto& row : t.rows) {
                std::string label = row[t.column("method")];
                if (t.has("protocol")) label += " (" + row[t.column("protocol")] + ")";
                auto& s = accuracy[label];
                s.label = label;
                s.points.emplace_back(column_number(t, row, "flops", in), column_number(t, row, "metric", in));
            }
        } else if (t.has("total_loss") && t.has("step") && t.has("cfgs")) {
            Series s;
            s.label = path.parent_path().filename().string();
            if (s.label.empty()) s.label = path.stem().string();
            for (const auto& row : t.rows) {
                const std::string& cfgs = row[t.column("cfgs")];
                const double n = 1.0 + static_cast<double>(std::count(cfgs.begin(), cfgs.end(), ';'));
                s.points.emplace_back(column_number(t, row, "step", in),
                                      column_number(t, row, "total_loss", in) / (2.0 * n));
            }
            summary.push_back("loss " + s.label + ": " + fixed(s.points.front().second) + " -> " +
                              fixed(s.points.back().second) + " over " + std::to_string(s.points.size()) + " steps");
            losses.push_back(std::move(s));
        } else if (t.has("seconds") && t.has("kind") && t.has("full")) {
            timings.push_back(read_timing(path));
        } else {
            throw FormatError(in + ": unrecognized CSV columns (expected a sweep, metrics or timing file)");
        }
    }

    std::vector<Panel> panels;
    if (!accuracy.empty()) {
        Panel p{"Top-1 accuracy vs encoder FLOPs", "FLOPs per image", "top-1 accuracy", {}};
        for (auto& [label, s] : accuracy) {
            std::sort(s.points.begin(), s.points.end());
            for (auto [f, m] : s.points)
                summary.push_back("accuracy " + label + ": flops=" + format_double(f) + " top1=" + fixed(m));
            p.series.push_back(s);
        }
        panels.push_back(std::move(p));
    }
    if (!losses.empty()) panels.push_back({"Training curves", "step", "mean loss per term", losses});

    std::string note;
    if (!timings.empty()) {
        const bool has_baseline = std::any_of(timings.begin(), timings.end(),
                                              [](const RunTiming& r) { return r.kind == "byol" && r.full; });
        if (has_baseline) {
            const CostReport c = measure_cost(timings);
            const std::string ref = "reference " + fixed(reference, 2) + "x";
            summary.push_back("cost baseline (full-size individual run): " + fixed(c.baseline_seconds, 2) + " s");
            if (c.dspnet_ratio > 0)
                summary.push_back("cost dspnet / baseline: " + fixed(c.dspnet_ratio, 2) + "x (" + ref + ")");
            summary.push_back("cost sum of " + std::to_string(c.individual_runs) +
                              " individual runs / baseline: " + fixed(c.individual_sum_ratio, 2) + "x");
            note = "training cost: dspnet " + fixed(c.dspnet_ratio, 2) + "x of one full-size run, " + ref +
                   "; individual runs " + fixed(c.individual_sum_ratio, 2) + "x";
        } else {
            summary.push_back("cost: no full-size individual run among the timing files");
        }
    }

    if (!panels.empty()) {
        const fs::path out(a.output);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        std::ofstream svg(out, std::ios::binary | std::ios::trunc);
        if (!svg) throw IoError("cannot write " + a.output);
        svg << render_svg(panels, note);
        if (!svg) throw IoError("short write to " + a.output);
        summary.push_back("plot " + a.output);
    }
    fs::path text_path(a.output);
    text_path.replace_extension(".txt");
    std::ofstream txt(text_path, std::ios::binary | std::ios::trunc);
    if (!txt) throw IoError("cannot write " + text_path.string());
    for (const auto& line : summary) {
        std::cout << line << "\n";
        txt << line << "\n";
    }
    return kOk;
}

template <class F>
int guarded(F&& run, int format_code) {
    try {
        return run();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const CorruptError& e) {
        std::cerr << "corrupt checkpoint: " << e.what() << "\n";
        return format_code == kCsv ? kCsv : kCorrupt;
    } catch (const FormatError& e) {
        std::cerr << "malformed input: " << e.what() << "\n";
        return format_code;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
}

}  // namespace

int main(int argc, char** argv) {
    dspnet::tune_allocator();
    CLI::App app{"Slimmable self-supervised pretraining and evaluation"};
    app.require_subcommand(1);
    int code = kOk;

    PretrainArgs pa;
    auto* pretrain = app.add_subcommand("pretrain", "Train a slimmable network or one individual BYOL baseline");
    pretrain->add_option("--config", pa.config, "Run config (JSON)")->required();
    pretrain->add_option("--mode", pa.mode, "dspnet or byol")->capture_default_str();
    pretrain->add_option("--cfg", pa.dn, "dn_list index trained by --mode byol");
    pretrain->add_option("--output-dir", pa.output_dir, "Override output_dir from the config");
    pretrain->callback([&] { code = guarded([&] { return cmd_pretrain(pa); }, kIo); });

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint's online encoder");
    eval->add_option("--checkpoint,--ckpt", ea.checkpoint, "Checkpoint file")->required();
    eval->add_option("--protocol", ea.protocol, "linear, knn, semi or sweep")->required();
    eval->add_option("--sweep-protocol", ea.sweep_protocol, "Protocol run per DN by --protocol sweep")
        ->capture_default_str();
    eval->add_option("--k", ea.k, "Neighbours for knn (default from config)");
    eval->add_option("--dn", ea.dn, "dn_list index to evaluate (default: full)");
    eval->add_option("--config", ea.config, "Config for data and protocol settings (default: embedded)");
    eval->add_option("--csv", ea.csv, "Results CSV to append (default: eval.csv beside the checkpoint)");
    eval->add_option("--method", ea.method, "Method label in the CSV (default: checkpoint kind)");
    eval->callback([&] { code = guarded([&] { return cmd_eval(ea); }, kIo); });

    ExportArgs xa;
    auto* exp = app.add_subcommand("export", "Write one DN as a standalone checkpoint");
    exp->add_option("--checkpoint,--ckpt", xa.checkpoint, "Source checkpoint")->required();
    exp->add_option("--dn", xa.dn, "dn_list index")->required();
    exp->add_option("--output,--out", xa.output, "Destination file")->required();
    exp->callback([&] { code = guarded([&] { return cmd_export(xa); }, kCorrupt); });

    ReportArgs ra;
    auto* report = app.add_subcommand("report", "Plot sweep and metrics CSVs to SVG and summarize training cost");
    report->add_option("inputs", ra.inputs, "Sweep, metrics or timing CSV files")->required();
    report->add_option("--output,--out", ra.output, "SVG path; the text summary goes beside it as .txt")
        ->capture_default_str();
    report->add_option("--config", ra.config, "Config providing reference_cost_ratio");
    report->add_option("--reference-ratio", ra.reference_ratio, "Reference cost ratio to annotate");
    report->callback([&] { code = guarded([&] { return cmd_report(ra); }, kCsv); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }
    return code;
}
