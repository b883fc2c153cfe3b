#include "xdfkit/cli.hpp"

#include "xdfkit/annotations.hpp"
#include "xdfkit/errors.hpp"
#include "xdfkit/numbers.hpp"
#include "xdfkit/resample.hpp"
#include "xdfkit/service.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <ostream>
#include <sstream>

namespace xdfkit {

namespace {

std::string fixed(double value, int digits)
{
    if (!std::isfinite(value))
        return format_double(value);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, value);
    return buf;
}

std::string render_table(const std::vector<std::vector<std::string>>& rows)
{
    std::vector<std::size_t> width;
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (width.size() <= c)
                width.push_back(0);
            width[c] = std::max(width[c], row[c].size());
        }
    std::string out;
    for (const auto& row : rows) {
        std::string line;
        for (std::size_t c = 0; c < row.size(); ++c) {
            line += row[c];
            if (c + 1 < row.size())
                line.append(width[c] - row[c].size() + 2, ' ');
        }
        while (!line.empty() && line.back() == ' ')
            line.pop_back();
        out += line;
        out.push_back('\n');
    }
    return out;
}

void tree_lines(const XmlNode& node, int depth, std::string& out)
{
    out.append(static_cast<std::size_t>(depth) * 2, ' ');
    if (node.name.starts_with(xml_attribute_prefix))
        out += "@" + node.name.substr(xml_attribute_prefix.size());
    else
        out += node.name;
    if (!node.text.empty())
        out += ": " + node.text;
    out.push_back('\n');
    for (const XmlNode& child : node.children)
        tree_lines(child, depth + 1, out);
}

} // namespace

std::vector<StreamSummary> summarize(const Recording& rec, double threshold)
{
    const auto models = build_sync_models(rec);
    std::vector<StreamSummary> rows;
    for (const auto& [id, stream] : rec.streams) {
        StreamSummary row;
        row.info = stream.info;
        row.sample_count = stream.sample_count();
        try {
            row.rate = effective_rate(synced_timestamps(stream, models.at(id)), stream.info.nominal_srate, threshold);
        } catch (const Error& e) {
            row.problem = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_stream_table(const std::vector<StreamSummary>& rows)
{
    std::vector<std::vector<std::string>> table{
        {"id", "name", "type", "format", "channels", "samples", "nominal_hz", "effective_hz", "deviation", "flag"}};
    std::string notes;
    for (const auto& row : rows) {
        const auto& info = row.info;
        std::vector<std::string> cells{std::to_string(info.stream_id),
                                       info.name,
                                       info.content_type,
                                       std::string(to_string(info.channel_format)),
                                       std::to_string(info.channel_count),
                                       std::to_string(row.sample_count),
                                       format_double(info.nominal_srate)};
        if (row.rate && !row.rate->note) {
            cells.push_back(fixed(row.rate->effective_srate, 6));
            cells.push_back(info.nominal_srate > 0.0 ? fixed(row.rate->relative_deviation, 6) : "-");
            cells.push_back(row.rate->deviates ? "DEVIATES" : "");
        } else {
            cells.insert(cells.end(), {"-", "-", ""});
        }
        table.push_back(std::move(cells));
        if (row.problem)
            notes += "note: stream " + std::to_string(info.stream_id) + ": " + *row.problem + "\n";
        else if (row.rate && row.rate->note)
            notes += "note: stream " + std::to_string(info.stream_id) + ": " + *row.rate->note + "\n";
    }
    return render_table(table) + notes;
}

std::string format_tree(const XmlNode& node)
{
    std::string out;
    tree_lines(node, 0, out);
    return out;
}

std::string format_phase_report(const PhaseReport& report, double tolerance)
{
    std::string out;
    out += "events: " + std::to_string(report.n_events) + "\n";
    out += "skipped: " + std::to_string(report.skipped) + "\n";
    if (report.defined) {
        out += "circular_mean_error: " + fixed(report.circular_mean_error, 6) + " rad\n";
        out += "circular_std: " + fixed(report.circular_std, 6) + " rad\n";
    } else {
        out += "circular_mean_error: undefined\ncircular_std: undefined\n";
    }
    const bool pass = report.defined && std::abs(report.circular_mean_error) < tolerance;
    out += "tolerance: " + fixed(tolerance, 6) + " rad\n";
    out += std::string("result: ") + (pass ? "PASS" : "FAIL") + "\n";
    std::vector<std::vector<std::string>> table{{"event_time", "true_phase", "error"}};
    for (const auto& e : report.per_event)
        table.push_back({fixed(e.event_time, 6), fixed(e.true_phase, 6), fixed(e.error, 6)});
    return out + render_table(table);
}

std::vector<std::string> validation_warnings(const LoadResult& loaded)
{
    std::vector<std::string> out = loaded.warnings;
    for (const auto& [id, stream] : loaded.recording.streams) {
        try {
            const TimestampSeries series = resolve_timestamps(stream.blocks, stream.info);
            if (series.size() >= 2)
                effective_rate(series, stream.info.nominal_srate);
        } catch (const Error& e) {
            out.push_back("stream " + std::to_string(id) + ": " + e.what());
        }
    }
    return out;
}

unsigned port_from_environment()
{
    if (const char* env = std::getenv("XDFKIT_PORT")) {
        const auto port = parse_unsigned(env);
        if (port && *port >= 1 && *port <= 65535)
            return static_cast<unsigned>(*port);
    }
    return default_port;
}

// ---------------------------------------------------------------------------

namespace {

void write_output(const std::string& path, const std::string& text, std::ostream& out)
{
    if (path == "-") {
        out << text;
        return;
    }
    write_file(path, Bytes(text.begin(), text.end()));
}

struct UsageError : Error {
    using Error::Error;
};

int cmd_info(const std::string& file, bool strict, double threshold, std::ostream& out, std::ostream& err)
{
    const LoadResult loaded = load_recording(file);
    for (const auto& w : loaded.warnings)
        err << "warning: " << w << "\n";
    const auto rows = summarize(loaded.recording, threshold);
    out << format_stream_table(rows);
    const bool flagged = std::any_of(rows.begin(), rows.end(), [](const StreamSummary& r) { return r.rate && r.rate->deviates; });
    return strict && flagged ? exit_code::check : exit_code::ok;
}

int cmd_tree(const std::string& file, std::optional<std::uint32_t> stream, std::ostream& out)
{
    const Recording rec = load_recording(file).recording;
    const auto print_stream = [&out](const Stream& s) {
        const std::string id = std::to_string(s.info.stream_id);
        out << "[stream " << id << " header]\n" << format_tree(s.info.header_tree);
        if (s.info.footer_tree)
            out << "[stream " << id << " footer]\n" << format_tree(*s.info.footer_tree);
    };
    if (stream) {
        const auto it = rec.streams.find(*stream);
        if (it == rec.streams.end())
            throw MissingStreamError("no stream with id " + std::to_string(*stream));
        print_stream(it->second);
        return exit_code::ok;
    }
    out << "[file header]\n" << format_tree(rec.file_header);
    for (const auto& [id, s] : rec.streams)
        print_stream(s);
    return exit_code::ok;
}

int cmd_validate(const std::string& file, std::ostream& out, std::ostream& err)
{
    LoadResult loaded;
    try {
        loaded = load_recording(file);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::failure;
    }
    const auto warnings = validation_warnings(loaded);
    for (const auto& w : warnings)
        out << w << "\n";
    if (warnings.empty())
        out << "ok\n";
    return warnings.empty() ? exit_code::ok : exit_code::warnings;
}

int cmd_export_csv(const std::string& file, const std::string& extra, const std::string& output, std::ostream& out)
{
    const Recording rec = load_recording(file).recording;
    EventSet set = derive_events(rec, build_sync_models(rec));
    if (!extra.empty()) {
        const Bytes bytes = read_file(extra);
        const EventSet imported = import_csv(std::string(bytes.begin(), bytes.end()));
        for (const Event& e : imported.events())
            set.add(e.onset, e.duration, e.label, e.stream_id, EventOrigin::user);
    }
    write_output(output, export_csv(set), out);
    return exit_code::ok;
}

int cmd_annotate(const std::string& file, double onset, double duration, const std::string& label, bool write_back,
                 const std::string& output, std::ostream& out)
{
    if (write_back == !output.empty())
        throw UsageError("annotate needs exactly one of --write-back or -o");
    EventSet set;
    try {
        set.add(onset, duration, label);
    } catch (const ValidationError& e) {
        throw UsageError(e.what());
    }
    const Bytes updated = append_to_file(file, set);
    const std::string target = write_back ? file : output;
    write_file(target, updated);
    const std::uint32_t id = parse_recording(updated).recording.streams.rbegin()->first;
    out << "appended 1 event as stream " << id << " (" << annotation_stream_name << ") to " << target << "\n";
    return exit_code::ok;
}

int cmd_resample(const std::string& file, std::optional<double> rate, const std::string& output, std::ostream& out)
{
    Recording rec = load_recording(file).recording;
    std::vector<StreamInfo> infos;
    for (const auto& [id, s] : rec.streams)
        infos.push_back(s.info);
    double target = 0.0;
    try {
        target = common_rate(infos, rate);
    } catch (const RateError& e) {
        throw UsageError(e.what());
    }
    for (auto& [id, s] : rec.streams) {
        const std::size_t before = s.sample_count();
        const double from = s.info.nominal_srate;
        try {
            s = resample_stream(s, target);
        } catch (const RateError& e) {
            throw UsageError(e.what());
        }
        if (s.info.nominal_srate != from)
            out << "stream " << id << ": " << format_double(from) << " Hz -> " << format_double(target) << " Hz, "
                << before << " -> " << s.sample_count() << " samples\n";
        else
            out << "stream " << id << ": unchanged\n";
    }
    write_file(output, serialize_recording(rec));
    return exit_code::ok;
}

int cmd_synthgen(const SynthConfig& config, const std::string& output, std::ostream& out)
{
    Recording rec;
    try {
        rec = generate(config);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    write_file(output, serialize_recording(rec));
    out << "wrote " << rec.streams.size() << " streams, "
        << rec.streams.at(synth_stream::triggers).sample_count() << " triggers to " << output << "\n";
    return exit_code::ok;
}

int cmd_phase_check(const std::string& file, double freq, double target, double tol, std::ostream& out)
{
    if (!(freq > 0.0) || !(tol > 0.0))
        throw UsageError("--freq and --tol must be positive");
    const PhaseReport report = verify(load_recording(file).recording, target, freq);
    out << format_phase_report(report, tol);
    return report.defined && std::abs(report.circular_mean_error) < tol ? exit_code::ok : exit_code::check;
}

int cmd_serve(const std::string& file, const std::string& host, unsigned port, std::ostream& out)
{
    const auto service = Service::load(file);
    Server server(*service);
    const unsigned bound = server.start(host, port);
    out << "serving " << file << " on http://" << host << ":" << bound << "\n" << std::flush;
    server.wait();
    return exit_code::ok;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Inspect, annotate, resample and synthesize XDF recordings", "xdfkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    std::string file;
    std::string output;
    std::function<int()> action;

    auto* info = app.add_subcommand("info", "Stream table with nominal and effective rates");
    bool strict = false;
    double threshold = default_deviation_threshold;
    info->add_option("file", file, "XDF file")->required();
    info->add_flag("--strict", strict, "Exit 3 if any stream deviates from its nominal rate");
    info->add_option("--threshold", threshold, "Relative deviation threshold")->check(CLI::PositiveNumber);
    info->callback([&] { action = [&] { return cmd_info(file, strict, threshold, out, err); }; });

    auto* tree = app.add_subcommand("tree", "Print the XML metadata trees");
    std::optional<std::uint32_t> stream;
    tree->add_option("file", file, "XDF file")->required();
    tree->add_option("--stream", stream, "Only this stream");
    tree->callback([&] { action = [&] { return cmd_tree(file, stream, out); }; });

    auto* validate = app.add_subcommand("validate", "Exit 0 when clean, 2 with warnings, 1 on parse errors");
    validate->add_option("file", file, "XDF file")->required();
    validate->callback([&] { action = [&] { return cmd_validate(file, out, err); }; });

    auto* csv = app.add_subcommand("export-csv", "Write decoded marker events (and optional user events) as CSV");
    std::string extra;
    csv->add_option("file", file, "XDF file")->required();
    csv->add_option("-o,--output", output, "Output CSV, - for stdout")->required();
    csv->add_option("--events", extra, "CSV of user events to merge");
    csv->callback([&] { action = [&] { return cmd_export_csv(file, extra, output, out); }; });

    auto* annotate = app.add_subcommand("annotate", "Append one user event as a marker stream");
    double onset = 0.0, duration = 0.0;
    std::string label;
    bool write_back = false;
    annotate->add_option("file", file, "XDF file")->required();
    annotate->add_option("--onset", onset, "Onset in seconds")->required();
    annotate->add_option("--duration", duration, "Duration in seconds");
    annotate->add_option("--label", label, "Event label")->required();
    annotate->add_flag("--write-back", write_back, "Append to the input file in place");
    annotate->add_option("-o,--output", output, "Write the annotated copy here");
    annotate->callback(
        [&] { action = [&] { return cmd_annotate(file, onset, duration, label, write_back, output, out); }; });

    auto* resample = app.add_subcommand("resample", "Resample every regular numeric stream to one rate");
    std::optional<double> rate;
    resample->add_option("file", file, "XDF file")->required();
    resample->add_option("--rate", rate, "Target rate in Hz (default: highest nominal rate)");
    resample->add_option("-o,--output", output, "Output XDF")->required();
    resample->callback([&] { action = [&] { return cmd_resample(file, rate, output, out); }; });

    auto* synthgen = app.add_subcommand("synthgen", "Generate the simulated phase-prediction recording");
    SynthConfig config;
    synthgen->add_option("--duration", config.duration, "Seconds")->capture_default_str();
    synthgen->add_option("--srate", config.srate, "Hz")->capture_default_str();
    synthgen->add_option("--freq", config.osc_freq, "Oscillation frequency in Hz")->capture_default_str();
    synthgen->add_option("--noise", config.noise_sigma, "Noise sigma")->capture_default_str();
    synthgen->add_option("--horizon", config.horizon, "Prediction horizon in seconds")->capture_default_str();
    synthgen->add_option("--target-phase", config.target_phase, "Target phase in radians")->capture_default_str();
    synthgen->add_option("--seed", config.seed, "Random seed")->capture_default_str();
    synthgen->add_option("--window", config.window, "Fit window in seconds")->capture_default_str();
    synthgen->add_option("--clock-offset", config.clock_offset, "Device clock offset in seconds")
        ->capture_default_str();
    synthgen->add_option("--drift", config.drift, "Clock drift in seconds per second")->capture_default_str();
    synthgen->add_option("-o,--output", output, "Output XDF")->required();
    synthgen->callback([&] { action = [&] { return cmd_synthgen(config, output, out); }; });

    auto* phase = app.add_subcommand("phase-check", "Check trigger phases against the target");
    double freq = 10.0, target = 0.0, tol = 0.2;
    phase->add_option("file", file, "XDF file")->required();
    phase->add_option("--freq", freq, "Oscillation frequency in Hz")->capture_default_str();
    phase->add_option("--target-phase", target, "Target phase in radians")->capture_default_str();
    phase->add_option("--tol", tol, "Tolerance on |circular mean error| in radians")->capture_default_str();
    phase->callback([&] { action = [&] { return cmd_phase_check(file, freq, target, tol, out); }; });

    auto* serve = app.add_subcommand("serve", "Serve the recording over HTTP/JSON");
    unsigned port = port_from_environment();
    std::string host = "127.0.0.1";
    serve->add_option("file", file, "XDF file")->required();
    serve->add_option("--port", port, "TCP port (default 8377 or $XDFKIT_PORT)")->check(CLI::Range(0u, 65535u));
    serve->add_option("--host", host, "Bind address")->capture_default_str();
    serve->callback([&] { action = [&] { return cmd_serve(file, host, port, out); }; });

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_code::ok : exit_code::usage;
    }

    try {
        return action();
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::usage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::failure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::failure;
    }
}

} // namespace xdfkit
