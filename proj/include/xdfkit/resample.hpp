#pragma once

#include "xdfkit/format.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace xdfkit {

/// Up/down factors for to/from, accepted when the ratio lies within 1e-9 of a
/// fraction whose denominator is at most `max_denominator`. Throws RateError.
std::pair<std::uint32_t, std::uint32_t> rational_ratio(double from_rate, double to_rate,
                                                       std::uint32_t max_denominator = 1000);

struct ResamplePlan {
    double from_rate = 0.0;
    double to_rate = 0.0;
    std::uint32_t up = 1;    ///< L
    std::uint32_t down = 1;  ///< M
    std::size_t filter_taps = 1;
    double stopband_attenuation = 80.0;  ///< dB
    double transition = 0.05;            ///< fraction of the lower Nyquist frequency
};

/// Kaiser-windowed sinc sized for the requested attenuation and transition
/// width. The stopband starts at the lower of the two Nyquist frequencies.
ResamplePlan make_resample_plan(double from_rate, double to_rate, double stopband_attenuation = 80.0,
                                double transition = 0.05);

/// Prototype lowpass taps at the upsampled rate (length filter_taps, odd),
/// scaled so that every polyphase branch sums to exactly one.
std::vector<double> design_lowpass(const ResamplePlan& plan);

/// Polyphase rational resampler. Output sample k sits at time k / to_rate
/// relative to the first input sample; the length is ceil(n * L / M).
class Resampler {
public:
    explicit Resampler(const ResamplePlan& plan);

    const ResamplePlan& plan() const { return plan_; }
    std::size_t output_length(std::size_t input_length) const;
    std::vector<double> operator()(std::span<const double> input) const;

private:
    ResamplePlan plan_;
    std::size_t delay_ = 0;
    std::vector<std::vector<double>> phases_;  ///< phases_[p][m] = h[p + m * L]
};

std::vector<double> resample(std::span<const double> signal, const ResamplePlan& plan);

/// Resamples every channel of a regular numeric stream to `to_rate`, segment
/// by segment (segments split at gaps). Each segment becomes one block whose
/// first sample carries its start time. Integer formats are widened to
/// double64. Clock offsets are kept. Other streams are returned unchanged.
Stream resample_stream(const Stream& stream, double to_rate);

} // namespace xdfkit
