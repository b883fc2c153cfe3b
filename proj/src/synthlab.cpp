#include "xdfkit/synthlab.hpp"

#include "xdfkit/annotations.hpp"
#include "xdfkit/errors.hpp"
#include "xdfkit/numbers.hpp"
#include "xdfkit/timeline.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>

namespace xdfkit {

namespace {

constexpr double pi = std::numbers::pi;
constexpr double two_pi = 2.0 * std::numbers::pi;
constexpr double min_amplitude = 1e-12;
constexpr double band_low = 8.0;
constexpr double band_high = 12.0;
constexpr int band_order = 4;

[[noreturn]] void bad_config(const std::string& field, double value, const std::string& rule)
{
    throw ConfigError("synth config: " + field + " = " + format_double(value) + " (" + rule + ")");
}

} // namespace

void SynthConfig::validate() const
{
    if (!(duration > 0.0) || !std::isfinite(duration))
        bad_config("duration", duration, "must be > 0");
    if (!(srate > 2.0 * band_high) || !std::isfinite(srate))
        bad_config("srate", srate, "must exceed twice the 12 Hz band edge");
    if (!(osc_freq > 0.0) || !(osc_freq < srate / 2.0))
        bad_config("osc_freq", osc_freq, "must lie in (0, srate/2)");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
        bad_config("noise_sigma", noise_sigma, "must be >= 0");
    if (!(horizon >= 0.0) || !std::isfinite(horizon))
        bad_config("horizon", horizon, "must be >= 0");
    if (!(target_phase >= -pi && target_phase < pi))
        bad_config("target_phase", target_phase, "must lie in [-pi, pi)");
    if (!(window > 2.0 / osc_freq) || !std::isfinite(window))
        bad_config("window", window, "must exceed two oscillation periods");
    if (!std::isfinite(clock_offset))
        bad_config("clock_offset", clock_offset, "must be finite");
    if (!(drift > -1.0) || !std::isfinite(drift))
        bad_config("drift", drift, "must be > -1");
    if (!(offset_interval > 0.0) || !std::isfinite(offset_interval))
        bad_config("offset_interval", offset_interval, "must be > 0");
    if (duration * srate > 1e9)
        bad_config("duration", duration, "more than 1e9 samples");
}

double wrap_phase(double phase)
{
    double r = std::remainder(phase, two_pi);
    if (r <= -pi)
        r += two_pi;
    return r;
}

// ---------------------------------------------------------------------------
// Prediction

PhasePredictor::PhasePredictor(std::size_t window_samples, double srate, double freq) : freq_(freq)
{
    if (!(srate > 0.0) || !(freq > 0.0) || !(freq < srate / 2.0))
        throw WindowError("predictor needs 0 < f < srate/2");
    if (static_cast<double>(window_samples) * freq < 2.0 * srate * (1.0 - 1e-12))
        throw WindowError("window of " + std::to_string(window_samples) + " samples spans fewer than two cycles of "
                          + format_double(freq) + " Hz");
    const double w = two_pi * freq;
    cos_.resize(window_samples);
    sin_.resize(window_samples);
    double cc = 0.0, cs = 0.0, ss = 0.0;
    for (std::size_t k = 0; k < window_samples; ++k) {
        const double t = -static_cast<double>(window_samples - 1 - k) / srate;
        cos_[k] = std::cos(w * t);
        sin_[k] = std::sin(w * t);
        cc += cos_[k] * cos_[k];
        cs += cos_[k] * sin_[k];
        ss += sin_[k] * sin_[k];
    }
    const double det = cc * ss - cs * cs;
    inverse_ = {ss / det, -cs / det, cc / det};
}

double PhasePredictor::operator()(std::span<const double> window, double horizon) const
{
    if (window.size() != cos_.size())
        throw WindowError("predictor expects " + std::to_string(cos_.size()) + " samples, got "
                          + std::to_string(window.size()));
    double xc = 0.0, xs = 0.0;
    for (std::size_t k = 0; k < window.size(); ++k) {
        xc += window[k] * cos_[k];
        xs += window[k] * sin_[k];
    }
    const double a = inverse_[0] * xc + inverse_[1] * xs;
    const double b = inverse_[1] * xc + inverse_[2] * xs;
    if (!(std::hypot(a, b) >= min_amplitude))
        throw PhaseUndefinedError("fitted amplitude below 1e-12");
    return wrap_phase(std::atan2(a, b) + std::fmod(two_pi * freq_ * horizon, two_pi));
}

double predict_phase(std::span<const double> window, double srate, double freq, double horizon)
{
    return PhasePredictor(window.size(), srate, freq)(window, horizon);
}

// ---------------------------------------------------------------------------
// Oracle

namespace {

template <typename TimeOf>
double fit_phase(std::span<const double> signal, TimeOf time_of, std::size_t lo, std::size_t hi, double freq,
                 double t)
{
    // Normal equations for [c, a, b] against [1, cos, sin].
    const double w = two_pi * freq;
    double m[3][4] = {};
    for (std::size_t i = lo; i < hi; ++i) {
        const double u = w * (time_of(i) - t);
        const double basis[3] = {1.0, std::cos(u), std::sin(u)};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c)
                m[r][c] += basis[r] * basis[c];
            m[r][3] += basis[r] * signal[i];
        }
    }
    for (int col = 0; col < 3; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(m[r][col]) > std::abs(m[pivot][col]))
                pivot = r;
        std::swap(m[col], m[pivot]);
        if (m[col][col] == 0.0)
            throw PhaseUndefinedError("singular fit around t = " + format_double(t));
        for (int r = 0; r < 3; ++r) {
            if (r == col)
                continue;
            const double factor = m[r][col] / m[col][col];
            for (int c = col; c < 4; ++c)
                m[r][c] -= factor * m[col][c];
        }
    }
    const double a = m[1][3] / m[1][1];
    const double b = m[2][3] / m[2][2];
    if (!(std::hypot(a, b) >= min_amplitude))
        throw PhaseUndefinedError("no oscillation at t = " + format_double(t) + " (amplitude below 1e-12)");
    return wrap_phase(std::atan2(a, b));
}

void check_edges(double t, double half, double first, double last)
{
    if (!(t - half >= first - 1e-9 * half) || !(t + half <= last + 1e-9 * half))
        throw EdgeError("t = " + format_double(t) + " is closer than " + format_double(half)
                        + " s to the signal edge [" + format_double(first) + ", " + format_double(last) + "]");
}

} // namespace

double oracle_phase(std::span<const double> signal, double srate, double freq, double t)
{
    if (!(srate > 0.0) || !(freq > 0.0))
        throw WindowError("oracle needs positive srate and frequency");
    if (signal.empty())
        throw EdgeError("empty signal");
    const double half = 2.0 / freq;
    check_edges(t, half, 0.0, static_cast<double>(signal.size() - 1) / srate);
    const auto lo = static_cast<std::size_t>(std::max(0.0, std::ceil((t - half) * srate - 1e-9)));
    const auto hi = std::min(signal.size(), static_cast<std::size_t>(std::floor((t + half) * srate + 1e-9)) + 1);
    return fit_phase(signal, [srate](std::size_t i) { return static_cast<double>(i) / srate; }, lo, hi, freq, t);
}

double oracle_phase(std::span<const double> signal, std::span<const double> times, double freq, double t)
{
    if (signal.size() != times.size())
        throw WindowError("oracle needs one timestamp per sample");
    if (!(freq > 0.0))
        throw WindowError("oracle needs a positive frequency");
    if (signal.empty())
        throw EdgeError("empty signal");
    const double half = 2.0 / freq;
    check_edges(t, half, times.front(), times.back());
    const auto lo = static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t - half) - times.begin());
    const auto hi = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t + half) - times.begin());
    return fit_phase(signal, [times](std::size_t i) { return times[i]; }, lo, hi, freq, t);
}

// ---------------------------------------------------------------------------
// Band-pass

std::vector<Biquad> butter_bandpass(int order, double low_hz, double high_hz, double srate)
{
    if (order < 1 || !(low_hz > 0.0) || !(high_hz > low_hz) || !(high_hz < srate / 2.0))
        throw ConfigError("band-pass needs order >= 1 and 0 < low < high < srate/2");
    using C = std::complex<double>;
    const double fs2 = 2.0 * srate;
    const double w1 = fs2 * std::tan(pi * low_hz / srate);
    const double w2 = fs2 * std::tan(pi * high_hz / srate);
    const double bw = w2 - w1;
    const double w0sq = w1 * w2;

    std::vector<C> poles;
    C gain_num = 1.0, gain_den = 1.0;
    for (int m = -order + 1; m < order; m += 2) {
        const C p_lp = -std::exp(C(0.0, pi * m / (2.0 * order))) * (bw / 2.0);
        const C root = std::sqrt(p_lp * p_lp - w0sq);
        for (const C p : {p_lp + root, p_lp - root}) {
            poles.push_back((fs2 + p) / (fs2 - p));
            gain_den *= fs2 - p;
        }
    }
    // Analog zeros sit at s = 0 (order of them); the rest of the digital zeros land at z = -1.
    for (int i = 0; i < order; ++i)
        gain_num *= fs2;
    const double gain = std::pow(bw, order) * (gain_num / gain_den).real();

    std::vector<C> upper;
    std::vector<double> real;
    for (const C& p : poles) {
        if (std::abs(p.imag()) > 1e-14 * std::abs(p)) {
            if (p.imag() > 0.0)
                upper.push_back(p);
        } else {
            real.push_back(p.real());
        }
    }
    std::sort(upper.begin(), upper.end(), [](const C& a, const C& b) { return std::arg(a) < std::arg(b); });
    std::sort(real.begin(), real.end());

    std::vector<Biquad> sections;
    for (const C& p : upper)
        sections.push_back({1.0, 0.0, -1.0, 1.0, -2.0 * p.real(), std::norm(p)});
    for (std::size_t i = 0; i + 1 < real.size(); i += 2)
        sections.push_back({1.0, 0.0, -1.0, 1.0, -(real[i] + real[i + 1]), real[i] * real[i + 1]});
    for (auto k : {0, 1, 2})
        sections.front()[static_cast<std::size_t>(k)] *= gain;
    return sections;
}

namespace {

using State = std::array<double, 2>;

void sosfilt(std::span<const Biquad> sections, std::vector<double>& x, std::vector<State> state)
{
    for (std::size_t s = 0; s < sections.size(); ++s) {
        const Biquad& q = sections[s];
        State& z = state[s];
        for (double& v : x) {
            const double y = q[0] * v + z[0];
            z[0] = q[1] * v - q[4] * y + z[1];
            z[1] = q[2] * v - q[5] * y;
            v = y;
        }
    }
}

/// Steady-state transposed direct-form II states for a unit step input.
std::vector<State> step_states(std::span<const Biquad> sections)
{
    std::vector<State> zi;
    double scale = 1.0;
    for (const Biquad& q : sections) {
        // (I - A^T) z = b[1:] - a[1:] * b0 with the 2x2 companion matrix A.
        const double m00 = 1.0 + q[4], m01 = -1.0, m10 = q[5], m11 = 1.0;
        const double r0 = q[1] - q[4] * q[0];
        const double r1 = q[2] - q[5] * q[0];
        const double det = m00 * m11 - m01 * m10;
        zi.push_back({scale * (r0 * m11 - m01 * r1) / det, scale * (m00 * r1 - m10 * r0) / det});
        scale *= (q[0] + q[1] + q[2]) / (q[3] + q[4] + q[5]);
    }
    return zi;
}

} // namespace

std::vector<double> sosfiltfilt(std::span<const Biquad> sections, std::span<const double> signal)
{
    const std::size_t pad = 3 * (2 * sections.size() + 1);
    if (signal.size() <= pad)
        throw WindowError("zero-phase filtering needs more than " + std::to_string(pad) + " samples");
    const std::size_t n = signal.size();
    std::vector<double> x;
    x.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i)
        x.push_back(2.0 * signal[0] - signal[i]);
    x.insert(x.end(), signal.begin(), signal.end());
    for (std::size_t i = 1; i <= pad; ++i)
        x.push_back(2.0 * signal[n - 1] - signal[n - 1 - i]);

    const std::vector<State> zi = step_states(sections);
    const auto scaled = [&zi](double by) {
        std::vector<State> out = zi;
        for (State& z : out)
            z = {z[0] * by, z[1] * by};
        return out;
    };
    sosfilt(sections, x, scaled(x.front()));
    std::reverse(x.begin(), x.end());
    sosfilt(sections, x, scaled(x.front()));
    std::reverse(x.begin(), x.end());
    return {x.begin() + static_cast<std::ptrdiff_t>(pad), x.end() - static_cast<std::ptrdiff_t>(pad)};
}

// ---------------------------------------------------------------------------
// Generator

double initial_phase(const SynthConfig& config)
{
    std::mt19937_64 rng(config.seed);
    return std::uniform_real_distribution<double>(-pi, pi)(rng);
}

double true_phase(const SynthConfig& config, double t)
{
    return wrap_phase(two_pi * config.osc_freq * t + initial_phase(config));
}

namespace {

/// Regular stream in blocks of `block_rows`, first row of each block stamped.
template <typename T>
Stream regular_stream(StreamInfo info, const std::vector<double>& values, double first_stamp, double srate,
                      std::size_t block_rows)
{
    Stream s;
    s.info = std::move(info);
    for (std::size_t begin = 0; begin < values.size(); begin += block_rows) {
        const std::size_t end = std::min(values.size(), begin + block_rows);
        SampleBlock block;
        block.stream_id = s.info.stream_id;
        block.timestamps.assign(end - begin, std::nullopt);
        block.timestamps[0] = first_stamp + static_cast<double>(begin) / srate;
        block.values = std::vector<T>(values.begin() + static_cast<std::ptrdiff_t>(begin),
                                      values.begin() + static_cast<std::ptrdiff_t>(end));
        s.blocks.push_back(std::move(block));
    }
    return s;
}

/// Adds desc/channels/channel and returns the desc node.
XmlNode& describe(StreamInfo& info, const std::string& label, const std::string& unit)
{
    XmlNode& desc = info.header_tree.add("desc");
    XmlNode& channel = desc.add("channels").add("channel");
    channel.add("label", label);
    channel.add("unit", unit);
    return desc;
}

} // namespace

Recording generate(const SynthConfig& config)
{
    config.validate();
    const double srate = config.srate;
    const double f = config.osc_freq;
    const auto n_out = static_cast<std::size_t>(std::llround(config.duration * srate));
    const auto window = static_cast<std::size_t>(std::llround(config.window * srate));
    if (n_out < 2)
        throw ConfigError("synth config: duration " + format_double(config.duration) + " s yields fewer than 2 samples");
    const PhasePredictor predictor(window, srate, f);
    const std::size_t n_raw = window + n_out;
    const double first_local = -static_cast<double>(window) / srate;
    const auto to_recorder = [&config](double local) { return config.clock_offset + (1.0 + config.drift) * local; };

    std::mt19937_64 rng(config.seed);
    const double phi0 = std::uniform_real_distribution<double>(-pi, pi)(rng);
    std::normal_distribution<double> noise(0.0, config.noise_sigma);
    std::vector<double> raw(n_raw);
    for (std::size_t n = 0; n < n_raw; ++n) {
        const double t = to_recorder(first_local + static_cast<double>(n) / srate);
        double v = std::sin(two_pi * f * t + phi0);
        if (config.noise_sigma > 0.0)
            v += noise(rng);
        raw[n] = static_cast<float>(v);
    }

    const auto sections = butter_bandpass(band_order, band_low, band_high, srate);
    if (n_raw <= 3 * (2 * sections.size() + 1))
        throw ConfigError("synth config: too few samples for the band-pass");
    const std::vector<double> filtered = sosfiltfilt(sections, raw);

    std::vector<double> phase(n_out), predicted(n_out);
    for (std::size_t j = 0; j < n_out; ++j) {
        const std::span<const double> win(raw.data() + j + 1, window);
        phase[j] = predictor(win, 0.0);
        predicted[j] = predictor(win, config.horizon);
    }

    // Upward crossings of the target by the predicted phase.
    std::vector<double> trigger_times;
    const double refractory = 1.0 / f - 0.5 / srate;
    for (std::size_t j = 1; j < n_out; ++j) {
        const double d0 = wrap_phase(predicted[j - 1] - config.target_phase);
        const double d1 = wrap_phase(predicted[j] - config.target_phase);
        if (!(d0 < 0.0 && d1 >= 0.0 && d1 - d0 < pi))
            continue;
        const double crossing = (static_cast<double>(j - 1) + (-d0) / (d1 - d0)) / srate;
        if (!trigger_times.empty() && crossing - trigger_times.back() < refractory)
            continue;
        trigger_times.push_back(crossing);
    }

    Recording rec;
    rec.file_header.add("version", "1.0");
    const std::size_t block_rows = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(srate)));

    StreamInfo raw_info = make_stream_info(synth_stream::raw, "raw", "EEG", 1, srate, ChannelFormat::float32);
    XmlNode& synth = describe(raw_info, "Cz", "a.u.").add("synth");
    synth.add("osc_freq", format_double(f));
    synth.add("noise_sigma", format_double(config.noise_sigma));
    synth.add("seed", std::to_string(config.seed));
    synth.add("initial_phase", format_double(phi0));
    rec.streams.emplace(synth_stream::raw, regular_stream<float>(raw_info, raw, first_local, srate, block_rows));

    StreamInfo filt_info = make_stream_info(synth_stream::filtered, "filtered", "EEG", 1, srate, ChannelFormat::float32);
    XmlNode& band = describe(filt_info, "Cz", "a.u.").add("filter");
    band.add("low", format_double(band_low));
    band.add("high", format_double(band_high));
    band.add("order", std::to_string(band_order));
    band.add("passes", "2");
    rec.streams.emplace(synth_stream::filtered,
                        regular_stream<float>(filt_info, filtered, first_local, srate, block_rows));

    StreamInfo phase_info = make_stream_info(synth_stream::phase, "phase", "Phase", 1, srate, ChannelFormat::double64);
    describe(phase_info, "phase", "rad");
    rec.streams.emplace(synth_stream::phase, regular_stream<double>(phase_info, phase, 0.0, srate, block_rows));

    StreamInfo pred_info =
        make_stream_info(synth_stream::predicted, "predicted-phase", "Phase", 1, srate, ChannelFormat::double64);
    describe(pred_info, "phase", "rad").add("horizon", format_double(config.horizon));
    rec.streams.emplace(synth_stream::predicted, regular_stream<double>(pred_info, predicted, 0.0, srate, block_rows));

    Stream triggers;
    triggers.info = make_stream_info(synth_stream::triggers, "triggers", "Markers", 1, 0.0, ChannelFormat::string);
    triggers.info.header_tree.add("desc").add("target_phase", format_double(config.target_phase));
    if (!trigger_times.empty()) {
        SampleBlock block;
        block.stream_id = synth_stream::triggers;
        std::vector<std::string> labels;
        for (const double crossing : trigger_times) {
            const double event = to_recorder(crossing) + config.horizon;
            block.timestamps.emplace_back((event - config.clock_offset) / (1.0 + config.drift));
            labels.emplace_back(trigger_label);
        }
        block.values = std::move(labels);
        triggers.blocks.push_back(std::move(block));
    }
    rec.streams.emplace(synth_stream::triggers, std::move(triggers));

    // Offsets bracket every stamp so that no correction relies on extrapolation.
    const double last_local = static_cast<double>(n_out) / srate + config.horizon / (1.0 + config.drift);
    const double k_first = std::floor(first_local / config.offset_interval);
    const double k_last = std::ceil(last_local / config.offset_interval);
    for (auto& [id, stream] : rec.streams) {
        for (double k = k_first; k <= k_last; k += 1.0) {
            const double local = k * config.offset_interval;
            stream.offsets.push_back({id, local, config.clock_offset + config.drift * local});
        }
    }
    refresh_footers(rec);
    return rec;
}

// ---------------------------------------------------------------------------
// Verification

CircularStats circular_stats(std::span<const double> angles)
{
    if (angles.empty())
        return {std::nan(""), std::nan("")};
    double s = 0.0, c = 0.0;
    for (const double a : angles) {
        s += std::sin(a);
        c += std::cos(a);
    }
    const double n = static_cast<double>(angles.size());
    const double r = std::min(1.0, std::hypot(s / n, c / n));
    return {wrap_phase(std::atan2(s, c)), std::sqrt(std::max(0.0, -2.0 * std::log(r)))};
}

namespace {

template <typename Kind>
const Stream* find_stream(const Recording& rec, std::string_view name, Kind kind)
{
    for (const auto& [id, stream] : rec.streams)
        if (stream.info.name == name && kind(stream.info))
            return &stream;
    for (const auto& [id, stream] : rec.streams)
        if (kind(stream.info))
            return &stream;
    return nullptr;
}

} // namespace

PhaseReport verify(const Recording& rec, double target_phase, double freq)
{
    const Stream* raw =
        find_stream(rec, "raw", [](const StreamInfo& info) { return info.is_regular() && info.is_numeric(); });
    const Stream* triggers = find_stream(rec, "triggers", [](const StreamInfo& info) { return info.is_marker(); });
    if (!raw)
        throw MissingStreamError("no regular numeric stream to verify against");
    if (!triggers)
        throw MissingStreamError("no marker stream with trigger events");

    const auto models = build_sync_models(rec);
    const TimestampSeries times = synced_timestamps(*raw, models.at(raw->info.stream_id));
    const std::vector<double> values = channel_values(*raw, 0);

    PhaseReport report;
    std::vector<double> errors;
    const EventSet derived = derive_events(rec, models);
    for (const Event& event : derived.events()) {
        if (event.stream_id != triggers->info.stream_id)
            continue;
        double phase = 0.0;
        try {
            phase = oracle_phase(values, times.times, freq, event.onset);
        } catch (const EdgeError&) {
            ++report.skipped;
            continue;
        } catch (const PhaseUndefinedError&) {
            ++report.skipped;
            continue;
        }
        const double error = wrap_phase(phase - target_phase);
        report.per_event.push_back({event.onset, phase, error});
        errors.push_back(error);
    }
    report.n_events = errors.size();
    report.defined = !errors.empty();
    const CircularStats stats = circular_stats(errors);
    report.circular_mean_error = stats.mean;
    report.circular_std = stats.stddev;
    return report;
}

} // namespace xdfkit
