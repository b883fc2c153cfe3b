#include "xdfkit/resample.hpp"

#include "xdfkit/errors.hpp"
#include "xdfkit/numbers.hpp"
#include "xdfkit/timeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace xdfkit {

namespace {

// Factors above this would need filters with millions of taps.
constexpr std::uint32_t max_factor = 10000;

double sinc(double x)
{
    if (std::abs(x) < 1e-12)
        return 1.0;
    return std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
}

double kaiser_beta(double attenuation)
{
    if (attenuation > 50.0)
        return 0.1102 * (attenuation - 8.7);
    if (attenuation >= 21.0)
        return 0.5842 * std::pow(attenuation - 21.0, 0.4) + 0.07886 * (attenuation - 21.0);
    return 0.0;
}

} // namespace

std::pair<std::uint32_t, std::uint32_t> rational_ratio(double from_rate, double to_rate, std::uint32_t max_denominator)
{
    if (!(from_rate > 0.0) || !(to_rate > 0.0) || !std::isfinite(from_rate) || !std::isfinite(to_rate))
        throw RateError("rates must be positive and finite, got " + format_double(from_rate) + " -> "
                        + format_double(to_rate));
    const double ratio = to_rate / from_rate;
    for (std::uint32_t den = 1; den <= max_denominator; ++den) {
        const double num = std::round(ratio * den);
        if (num < 1.0 || std::abs(num / den - ratio) > 1e-9)
            continue;
        if (num > max_factor)
            break;
        const auto up = static_cast<std::uint32_t>(num);
        const auto g = std::gcd(up, den);
        return {up / g, den / g};
    }
    throw RateError("rate ratio " + format_double(to_rate) + "/" + format_double(from_rate)
                    + " is not a rational with denominator <= " + std::to_string(max_denominator)
                    + " and numerator <= " + std::to_string(max_factor));
}

ResamplePlan make_resample_plan(double from_rate, double to_rate, double stopband_attenuation, double transition)
{
    ResamplePlan plan;
    plan.from_rate = from_rate;
    plan.to_rate = to_rate;
    std::tie(plan.up, plan.down) = rational_ratio(from_rate, to_rate);
    plan.stopband_attenuation = stopband_attenuation;
    plan.transition = transition;
    if (plan.up == 1 && plan.down == 1)
        return plan;
    // Kaiser's order estimate; transition width in cycles per upsampled sample.
    const double nyquist = 0.5 / std::max(plan.up, plan.down);
    const double width = transition * nyquist;
    auto taps = static_cast<std::size_t>(
        std::ceil((stopband_attenuation - 7.95) / (2.285 * 2.0 * std::numbers::pi * width))) + 1;
    if (taps % 2 == 0)
        ++taps;
    plan.filter_taps = taps;
    return plan;
}

std::vector<double> design_lowpass(const ResamplePlan& plan)
{
    const std::size_t n = plan.filter_taps;
    const std::uint32_t L = plan.up;
    const double nyquist = 0.5 / std::max(plan.up, plan.down);
    const double cutoff = nyquist * (1.0 - plan.transition / 2.0);
    const double beta = kaiser_beta(plan.stopband_attenuation);
    const double i0_beta = std::cyl_bessel_i(0.0, beta);
    const double centre = static_cast<double>(n - 1) / 2.0;

    std::vector<double> h(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double k = n > 1 ? (static_cast<double>(i) - centre) / centre : 0.0;
        const double window = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - k * k))) / i0_beta;
        h[i] = 2.0 * cutoff * sinc(2.0 * cutoff * (static_cast<double>(i) - centre)) * window;
    }
    // Unit DC gain per branch: each output sample sees exactly one branch.
    for (std::uint32_t p = 0; p < L && p < n; ++p) {
        double sum = 0.0;
        for (std::size_t i = p; i < n; i += L)
            sum += h[i];
        for (std::size_t i = p; i < n; i += L)
            h[i] /= sum;
    }
    return h;
}

Resampler::Resampler(const ResamplePlan& plan) : plan_(plan)
{
    if (plan_.up == 1 && plan_.down == 1)
        return;
    const std::vector<double> h = design_lowpass(plan_);
    delay_ = (h.size() - 1) / 2;
    phases_.resize(plan_.up);
    for (std::size_t i = 0; i < h.size(); ++i)
        phases_[i % plan_.up].push_back(h[i]);
}

std::size_t Resampler::output_length(std::size_t input_length) const
{
    const std::uint64_t num = static_cast<std::uint64_t>(input_length) * plan_.up;
    return static_cast<std::size_t>((num + plan_.down - 1) / plan_.down);
}

std::vector<double> Resampler::operator()(std::span<const double> input) const
{
    if (plan_.up == 1 && plan_.down == 1)
        return {input.begin(), input.end()};

    const std::size_t out_len = output_length(input.size());
    const std::uint64_t L = plan_.up;
    const std::uint64_t M = plan_.down;
    std::vector<double> out(out_len);
    for (std::size_t k = 0; k < out_len; ++k) {
        // Position on the upsampled grid, advanced by the filter delay.
        const std::uint64_t j = k * M + delay_;
        const std::vector<double>& taps = phases_[j % L];
        const std::uint64_t newest = j / L;
        double acc = 0.0;
        // taps[m] multiplies input[newest - m].
        std::uint64_t m = newest >= input.size() ? newest - (input.size() - 1) : 0;
        for (; m < taps.size() && m <= newest; ++m)
            acc += taps[m] * input[newest - m];
        out[k] = acc;
    }
    return out;
}

std::vector<double> resample(std::span<const double> signal, const ResamplePlan& plan)
{
    return Resampler(plan)(signal);
}

Stream resample_stream(const Stream& stream, double to_rate)
{
    const StreamInfo& info = stream.info;
    if (!info.is_regular() || !info.is_numeric())
        return stream;

    const Resampler resampler(make_resample_plan(info.nominal_srate, to_rate));
    const TimestampSeries series = resolve_timestamps(stream.blocks, info);
    const std::size_t channels = info.channel_count;
    std::vector<std::vector<double>> columns;
    for (std::size_t c = 0; c < channels; ++c)
        columns.push_back(channel_values(stream, c));

    const bool keep_float = info.channel_format == ChannelFormat::float32;
    const ChannelFormat out_format = keep_float ? ChannelFormat::float32 : ChannelFormat::double64;

    Stream out;
    out.info = info;
    out.info.nominal_srate = to_rate;
    out.info.channel_format = out_format;
    out.info.footer.reset();
    out.info.footer_tree.reset();
    for (auto& child : out.info.header_tree.children) {
        if (child.name == "nominal_srate")
            child.text = format_double(to_rate);
        else if (child.name == "channel_format")
            child.text = std::string(to_string(out_format));
    }
    out.offsets = stream.offsets;

    for (const Segment& seg : detect_gaps(series, info.nominal_srate)) {
        std::vector<std::vector<double>> resampled;
        for (std::size_t c = 0; c < channels; ++c) {
            const std::span<const double> part(columns[c].data() + seg.begin, seg.end - seg.begin);
            resampled.push_back(resampler(part));
        }
        const std::size_t rows = resampled.front().size();
        SampleBlock block;
        block.stream_id = info.stream_id;
        block.timestamps.assign(rows, std::nullopt);
        if (rows)
            block.timestamps[0] = series.times[seg.begin];
        auto fill = [&](auto& column) {
            using T = typename std::decay_t<decltype(column)>::value_type;
            column.reserve(rows * channels);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < channels; ++c)
                    column.push_back(static_cast<T>(resampled[c][r]));
        };
        if (keep_float) {
            std::vector<float> column;
            fill(column);
            block.values = std::move(column);
        } else {
            std::vector<double> column;
            fill(column);
            block.values = std::move(column);
        }
        out.blocks.push_back(std::move(block));
    }
    return out;
}

} // namespace xdfkit
