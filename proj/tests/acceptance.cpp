// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "support.hpp"

#include "xdfkit/annotations.hpp"
#include "xdfkit/errors.hpp"
#include "xdfkit/format.hpp"
#include "xdfkit/resample.hpp"
#include "xdfkit/synthlab.hpp"
#include "xdfkit/timeline.hpp"

#include <malloc.h>

#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <new>
#include <numbers>

using namespace xdfkit;
using xdfkit::testing::Mutator;
using xdfkit::testing::RecordingGenerator;
using xdfkit::testing::TempDir;
using xdfkit::testing::fixture_bytes;
using xdfkit::testing::fixture_json;
using xdfkit::testing::matches;

// ---------------------------------------------------------------------------
// Heap accounting

namespace {

std::atomic<std::int64_t> live_bytes{0};
std::atomic<std::int64_t> peak_bytes{0};

void note_alloc(void* p)
{
    const auto now = live_bytes.fetch_add(static_cast<std::int64_t>(malloc_usable_size(p))) +
                     static_cast<std::int64_t>(malloc_usable_size(p));
    auto peak = peak_bytes.load(std::memory_order_relaxed);
    while (now > peak && !peak_bytes.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
    }
}

void reset_peak() { peak_bytes.store(live_bytes.load()); }

} // namespace

void* operator new(std::size_t n)
{
    void* p = std::malloc(n == 0 ? 1 : n);
    if (!p)
        throw std::bad_alloc();
    note_alloc(p);
    return p;
}

void operator delete(void* p) noexcept
{
    if (!p)
        return;
    live_bytes.fetch_sub(static_cast<std::int64_t>(malloc_usable_size(p)));
    std::free(p);
}

void operator delete(void* p, std::size_t) noexcept { operator delete(p); }

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* pattern, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

int failures = 0;

void report(const char* name, const std::function<Outcome()>& body)
{
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass)
        ++failures;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
}

std::vector<double> sine(double freq, double rate, std::size_t n, double phase = 0.0)
{
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
        v[i] = std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate + phase);
    return v;
}

double central_rms(const std::vector<double>& a, const std::vector<double>& b)
{
    const std::size_t n = std::min(a.size(), b.size());
    const std::size_t skip = n / 10;
    double sum = 0.0;
    for (std::size_t i = skip; i < n - skip; ++i)
        sum += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(sum / static_cast<double>(n - 2 * skip));
}

double circular_distance(double a, double b) { return std::abs(wrap_phase(a - b)); }

// ---------------------------------------------------------------------------

Outcome format_round_trip()
{
    RecordingGenerator gen(500);
    const auto start = Clock::now();
    int stamped = 0, deduced = 0, strings = 0;
    for (int i = 0; i < 500; ++i) {
        const Recording rec = gen.recording();
        for (const auto& [id, s] : rec.streams) {
            strings += s.info.channel_format == ChannelFormat::string;
            for (const auto& b : s.blocks)
                for (const auto& t : b.timestamps)
                    (t ? stamped : deduced)++;
        }
        const Bytes data = serialize_recording(rec);
        std::string why;
        if (!equivalent(parse_recording(data).recording, rec, &why))
            return {false, fmt("recording %d differs: %s", i, why.c_str())};
    }
    const double elapsed = seconds_since(start);
    const bool mixed = stamped > 0 && deduced > 0 && strings > 0;
    return {elapsed < 60.0 && mixed,
            fmt("500 recordings in %.2f s (limit 60 s); %d stamped, %d deduced samples, %d string streams",
                elapsed, stamped, deduced, strings)};
}

Outcome fixtures()
{
    const auto minimal = fixture_json("minimal.expected.json");
    const LoadResult a = parse_recording(fixture_bytes("minimal.xdf"));
    const bool min_ok = a.warnings.empty() && a.recording.streams.empty()
                        && matches(a.recording.file_header, minimal["file_header"])
                        && a.recording.source_length == minimal["source_length"].get<std::uint64_t>();

    const auto three = fixture_json("three_rows.expected.json");
    const LoadResult b = parse_recording(fixture_bytes("three_rows.xdf"));
    bool rows_ok = b.warnings.empty() && b.recording.streams.size() == 1 && b.recording.streams.count(1) == 1;
    if (rows_ok) {
        const Stream& s = b.recording.streams.at(1);
        const auto& js = three["streams"]["1"];
        rows_ok = matches(s.info.header_tree, js["header"]) && s.info.channel_format == ChannelFormat::float32
                  && s.blocks.size() == js["blocks"].size();
        for (std::size_t k = 0; rows_ok && k < s.blocks.size(); ++k) {
            const auto& rows = js["blocks"][k];
            const SampleBlock& block = s.blocks[k];
            rows_ok = block.rows() == rows.size();
            for (std::size_t r = 0; rows_ok && r < block.rows(); ++r) {
                const auto& t = rows[r]["timestamp"];
                rows_ok = t.is_null() ? !block.timestamps[r] : block.timestamps[r] == t.get<double>();
                for (std::size_t c = 0; rows_ok && c < s.info.channel_count; ++c)
                    rows_ok = block.numeric(r, c, s.info.channel_count) == rows[r]["values"][c].get<double>();
            }
        }
        rows_ok = rows_ok && b.recording.source_length == three["source_length"].get<std::uint64_t>();
    }
    return {min_ok && rows_ok, fmt("header-only fixture %s, 3-row float32 fixture %s", min_ok ? "matches" : "differs",
                                   rows_ok ? "matches" : "differs")};
}

Outcome effective_rate_check()
{
    const auto build = [](double nominal) {
        Recording rec;
        rec.file_header.add("version", "1.0");
        Stream s;
        s.info = make_stream_info(1, "eeg", "EEG", 1, nominal, ChannelFormat::float32);
        SampleBlock block;
        block.stream_id = 1;
        for (int i = 0; i <= 1000; ++i)
            block.timestamps.emplace_back(i / 100.0);
        block.values = std::vector<float>(1001, 0.0f);
        s.blocks.push_back(std::move(block));
        rec.streams.emplace(1, std::move(s));
        return parse_recording(serialize_recording(rec)).recording;
    };
    const auto rate_of = [](const Recording& rec) {
        const Stream& s = rec.streams.at(1);
        return effective_rate(synced_timestamps(s, build_sync_models(rec).at(1)), s.info.nominal_srate);
    };
    const RateReport fast = rate_of(build(110.0));
    const RateReport exact = rate_of(build(100.0));
    const bool pass = exact.effective_srate == 100.0 && fast.effective_srate == 100.0 && fast.deviates
                      && std::abs(fast.relative_deviation - 10.0 / 110.0) < 1e-12 && !exact.deviates;
    return {pass, fmt("effective %.17g Hz; nominal 110 deviation %.4f flagged=%s; nominal 100 flagged=%s",
                      exact.effective_srate, fast.relative_deviation, fast.deviates ? "yes" : "no",
                      exact.deviates ? "yes" : "no")};
}

Outcome clock_sync()
{
    const std::vector<ClockOffsetRecord> two{{1, 0.0, 0.5}, {1, 10.0, 0.7}};
    const double mid = build_sync_model(two).correct(5.0);
    const bool mid_ok = std::abs(mid - 5.6) <= 1e-12;

    std::mt19937_64 rng(81);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int exact = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ClockOffsetRecord> records;
        double t = u(rng) * 1000.0;
        const int n = 2 + static_cast<int>(u(rng) * 20);
        for (int k = 0; k < n; ++k) {
            t += 0.1 + u(rng) * 10.0;
            records.push_back({1, t, (u(rng) - 0.5) * 4.0});
        }
        std::shuffle(records.begin(), records.end(), rng);
        const SyncModel model = build_sync_model(records);
        bool ok = true;
        for (const auto& r : records)
            ok = ok && model.correct(r.collection_time) == r.collection_time + r.offset;
        exact += ok;
    }
    return {mid_ok && exact == 100,
            fmt("correct(5) = %.15f (|err| %.1e); %d/100 random models exact at every knot", mid,
                std::abs(mid - 5.6), exact)};
}

Outcome resampler()
{
    const auto start = Clock::now();
    const std::vector<double> raw = sine(3.0, 100.0, 5000, 0.25);
    const std::vector<double> same = resample(raw, make_resample_plan(100.0, 100.0));
    const bool identity = same.size() == raw.size()
                          && std::memcmp(same.data(), raw.data(), raw.size() * sizeof(double)) == 0;

    double dc_err = 0.0;
    for (auto [from, to] : {std::pair{100.0, 250.0}, {100.0, 200.0}, {250.0, 100.0}, {500.0, 256.0}}) {
        const ResamplePlan plan = make_resample_plan(from, to);
        const std::vector<double> y = resample(std::vector<double>(4000, 1.0), plan);
        const std::size_t edge = plan.filter_taps;
        for (std::size_t i = edge; i + edge < y.size(); ++i)
            dc_err = std::max(dc_err, std::abs(y[i] - 1.0));
    }

    const auto up = resample(sine(10.0, 100.0, 2000), make_resample_plan(100.0, 250.0));
    const double up_rms = central_rms(up, sine(10.0, 250.0, up.size()));

    const auto x = sine(10.0, 100.0, 2000, 0.7);
    const auto back = resample(resample(x, make_resample_plan(100.0, 200.0)), make_resample_plan(200.0, 100.0));
    const double trip_rms = central_rms(back, x);
    const double elapsed = seconds_since(start);

    return {identity && dc_err <= 1e-6 && up_rms < 1e-3 && trip_rms < 1e-3 && elapsed < 5.0,
            fmt("identity %s; DC error %.1e; 100->250 RMS %.1e; 100->200->100 RMS %.1e; %.3f s",
                identity ? "bit-exact" : "differs", dc_err, up_rms, trip_rms, elapsed)};
}

Outcome phase_experiment()
{
    SynthConfig clean;
    clean.noise_sigma = 0.0;
    const PhaseReport quiet = verify(generate(clean), clean.target_phase, clean.osc_freq);

    SynthConfig noisy;
    const Recording noisy_rec = generate(noisy);
    const PhaseReport loud = verify(noisy_rec, noisy.target_phase, noisy.osc_freq);

    const Stream& raw = noisy_rec.streams.at(synth_stream::raw);
    const std::vector<double> values = channel_values(raw, 0);
    const auto window = static_cast<std::size_t>(noisy.window * noisy.srate);
    const PhasePredictor predictor(window, noisy.srate, noisy.osc_freq);
    double worst = 0.0;
    for (std::size_t end = window; end <= values.size(); end += 97) {
        const std::span<const double> w(values.data() + end - window, window);
        worst = std::max(worst, circular_distance(predictor(w, 0.2), predictor(w, 0.0)));
    }

    const bool pass = quiet.defined && std::abs(quiet.circular_mean_error) < 0.05 && loud.defined
                      && std::abs(loud.circular_mean_error) < 0.2 && loud.n_events >= 100 && worst <= 1e-9;
    return {pass, fmt("noiseless |mean| %.4f rad (%zu events); sigma=0.5 |mean| %.4f rad, std %.4f (%zu events); "
                      "0.2 s vs 0 s horizon max diff %.1e rad",
                      std::abs(quiet.circular_mean_error), quiet.n_events, std::abs(loud.circular_mean_error),
                      loud.circular_std, loud.n_events, worst)};
}

Outcome annotations()
{
    RecordingGenerator gen(200);
    int exact = 0;
    for (int k = 0; k < 200; ++k) {
        EventSet set;
        const int n = gen.uniform(0, 30);
        for (int i = 0; i < n; ++i) {
            std::optional<std::uint32_t> sid;
            if (gen.chance(0.5))
                sid = static_cast<std::uint32_t>(gen.uniform(0, 1 << 30));
            set.add(gen.uniform_real(-1e4, 1e4), gen.chance(0.5) ? 0.0 : gen.uniform_real(0.0, 100.0),
                    gen.random_label(), sid, gen.chance(0.5) ? EventOrigin::user : EventOrigin::decoded);
        }
        const EventSet back = import_csv(export_csv(set));
        bool same = back.size() == set.size();
        for (std::size_t i = 0; same && i < set.size(); ++i) {
            const Event& a = set.events()[i];
            const Event& b = back.events()[i];
            same = std::bit_cast<std::uint64_t>(a.onset) == std::bit_cast<std::uint64_t>(b.onset)
                   && std::bit_cast<std::uint64_t>(a.duration) == std::bit_cast<std::uint64_t>(b.duration)
                   && a.label == b.label && a.stream_id == b.stream_id;
        }
        exact += same;
    }

    int appended = 0;
    const int files = 50;
    for (int k = 0; k < files; ++k) {
        const Bytes original = serialize_recording(gen.recording());
        EventSet set;
        set.add(gen.uniform_real(0.0, 10.0), 0.0, gen.random_label());
        set.add(gen.uniform_real(0.0, 10.0), 0.5, "blink");
        const Bytes updated = append_annotations(original, set);
        const bool prefix = updated.size() > original.size()
                            && std::equal(original.begin(), original.end(), updated.begin());
        const Recording before = parse_recording(original).recording;
        const Recording after = parse_recording(updated).recording;
        int added = 0;
        for (const auto& [id, s] : after.streams)
            if (!before.streams.count(id))
                added += s.info.is_marker() && s.info.name == annotation_stream_name && s.sample_count() == 2;
        appended += prefix && added == 1 && after.streams.size() == before.streams.size() + 1;
    }
    return {exact == 200 && appended == files,
            fmt("%d/200 CSV round trips exact; %d/%d write-backs pure-append with one added marker stream", exact,
                appended, files)};
}

class DiscardSink : public RecordingSink {
public:
    std::uint64_t rows = 0;
    void on_samples(SampleBlock&& block) override { rows += block.rows(); }
};

Outcome performance()
{
    TempDir dir;
    const auto path = dir / "large.xdf";
    std::uint64_t written = 0;
    std::uint64_t expected_rows = 0;
    {
        std::ofstream out(path, std::ios::binary);
        const auto put = [&](const Bytes& b) {
            out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
            written += b.size();
        };
        put(Bytes{'X', 'D', 'F', ':'});
        XmlNode header{"info", "", {}};
        header.add("version", "1.0");
        Bytes chunk;
        append_chunk(chunk, ChunkTag::file_header, encode_file_header(header));
        const StreamInfo eeg = make_stream_info(1, "eeg", "EEG", 32, 1000.0, ChannelFormat::float32);
        const StreamInfo marks = make_stream_info(2, "events", "Markers", 1, 0.0, ChannelFormat::string);
        append_chunk(chunk, ChunkTag::stream_header, encode_stream_header(eeg));
        append_chunk(chunk, ChunkTag::stream_header, encode_stream_header(marks));
        put(chunk);

        std::mt19937 rng(3);
        std::normal_distribution<float> noise(0.0f, 20.0f);
        const std::size_t rows = 2000;
        double t = 100.0;
        for (std::uint64_t k = 0; written < 100'000'000; ++k) {
            SampleBlock block;
            block.stream_id = 1;
            std::vector<float> values(rows * 32);
            for (auto& v : values)
                v = noise(rng);
            for (std::size_t r = 0; r < rows; ++r) {
                block.timestamps.emplace_back(r % 2 == 0 ? std::optional<double>(t) : std::nullopt);
                t += 0.001;
            }
            block.values = std::move(values);
            chunk.clear();
            append_chunk(chunk, ChunkTag::samples, encode_samples(block, eeg));
            SampleBlock marker;
            marker.stream_id = 2;
            marker.timestamps = {t};
            marker.values = std::vector<std::string>{"block " + std::to_string(k)};
            append_chunk(chunk, ChunkTag::samples, encode_samples(marker, marks));
            append_chunk(chunk, ChunkTag::clock_offset, encode_clock_offset({1, t, 0.001}));
            put(chunk);
            expected_rows += rows + 1;
        }
    }

    std::ifstream in(path, std::ios::binary);
    DiscardSink sink;
    std::vector<std::string> warnings;
    const std::int64_t base = live_bytes.load();
    reset_peak();
    const auto start = Clock::now();
    const ParseStats stats = parse_stream(in, sink, warnings);
    const double elapsed = seconds_since(start);
    const std::int64_t peak = peak_bytes.load() - base;

    const double mbps = static_cast<double>(stats.bytes) / 1e6 / elapsed;
    const auto bound = static_cast<std::int64_t>(4 * stats.largest_chunk + (1 << 20));
    return {stats.bytes == written && sink.rows == expected_rows && mbps >= 50.0 && peak <= bound && warnings.empty(),
            fmt("%.1f MB, %llu rows in %.3f s = %.0f MB/s (min 50); peak heap %.2f MB, largest chunk %.2f MB, bound %.2f MB",
                static_cast<double>(stats.bytes) / 1e6, static_cast<unsigned long long>(sink.rows), elapsed, mbps, static_cast<double>(peak) / 1e6,
                static_cast<double>(stats.largest_chunk) / 1e6, static_cast<double>(bound) / 1e6)};
}

Outcome fuzzing(long count)
{
    std::vector<Bytes> seeds{fixture_bytes("minimal.xdf"), fixture_bytes("three_rows.xdf"),
                             fixture_bytes("markers.xdf")};
    RecordingGenerator gen(1001);
    for (int i = 0; i < 4; ++i)
        seeds.push_back(serialize_recording(gen.recording()));
    Mutator mutator(seeds, 1'000'003);

    long parsed = 0, rejected = 0, over_memory = 0, crashes = 0;
    double slowest = 0.0;
    std::int64_t worst_ratio_bytes = 0;
    const auto start = Clock::now();
    for (long i = 0; i < count; ++i) {
        const Bytes input = mutator.next();
        ParseOptions options;
        options.recover = i % 2 == 1;
        const std::int64_t base = live_bytes.load();
        reset_peak();
        const auto t0 = Clock::now();
        try {
            const LoadResult r = parse_recording(input, options);
            ++parsed;
            (void)build_sync_models(r.recording);
            (void)derive_events(r.recording, {});
        } catch (const xdfkit::Error&) {
            ++rejected;
        } catch (...) {
            ++crashes;
        }
        slowest = std::max(slowest, seconds_since(t0));
        const std::int64_t used = peak_bytes.load() - base;
        const auto bound = static_cast<std::int64_t>(64 * input.size() + (1 << 20));
        worst_ratio_bytes = std::max(worst_ratio_bytes, used);
        over_memory += used > bound;
    }
    const double elapsed = seconds_since(start);
    return {crashes == 0 && over_memory == 0 && slowest < 2.0,
            fmt("%ld inputs in %.1f s: %ld parsed, %ld rejected, %ld unexpected exceptions; slowest %.4f s; "
                "%ld over the 64x+1 MiB heap bound (max %.2f MB)",
                count, elapsed, parsed, rejected, crashes, slowest, over_memory,
                static_cast<double>(worst_ratio_bytes) / 1e6)};
}

} // namespace

int main(int argc, char** argv)
{
    long fuzz_count = 1'000'000;
    if (argc > 1)
        fuzz_count = std::strtol(argv[1], nullptr, 10);

    report("format-round-trip", format_round_trip);
    report("fixtures", fixtures);
    report("effective-rate", effective_rate_check);
    report("clock-sync", clock_sync);
    report("resampler", resampler);
    report("phase-experiment", phase_experiment);
    report("annotations", annotations);
    report("performance", performance);
    report("fuzzing", [&] { return fuzzing(fuzz_count); });

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
