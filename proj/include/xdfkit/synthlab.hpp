#pragma once

#include "xdfkit/format.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace xdfkit {

/// Simulated phase-prediction session.
struct SynthConfig {
    double duration = 60.0;      ///< s of predictions and triggers
    double srate = 500.0;        ///< Hz
    double osc_freq = 10.0;      ///< Hz, unit-amplitude sine
    double noise_sigma = 0.5;    ///< white Gaussian noise
    double horizon = 0.2;        ///< s
    double target_phase = 0.0;   ///< rad, [-pi, pi)
    std::uint64_t seed = 1;
    double window = 0.5;         ///< s, trailing fit window
    double clock_offset = 0.0;   ///< s, device clock to recorder clock at t = 0
    double drift = 0.0;          ///< s per s, linear offset drift
    double offset_interval = 5.0;  ///< s between clock-offset records

    /// Throws ConfigError naming the first offending field.
    void validate() const;
};

/// Stream ids written by generate().
namespace synth_stream {
inline constexpr std::uint32_t raw = 1;
inline constexpr std::uint32_t filtered = 2;
inline constexpr std::uint32_t phase = 3;
inline constexpr std::uint32_t predicted = 4;
inline constexpr std::uint32_t triggers = 5;
} // namespace synth_stream

inline constexpr std::string_view trigger_label = "trigger";

/// Five streams: "raw" (float32, starts one window before t = 0 so the first
/// prediction has a full window), "filtered" (8-12 Hz zero-phase band-pass of
/// raw), "phase" and "predicted-phase" (double64, from t = 0), and "triggers"
/// (irregular string markers). Each regular stream is written in one-second
/// blocks with the first sample of a block stamped. Every stream carries
/// clock offsets every `offset_interval` seconds.
Recording generate(const SynthConfig& config);

/// Phase of the generating sine at recorder time 0, drawn from the seed.
double initial_phase(const SynthConfig& config);

/// Ground-truth phase of the generating sine at recorder time t.
double true_phase(const SynthConfig& config, double t);

// ---------------------------------------------------------------------------
// Phase estimation

/// Wraps to (-pi, pi].
double wrap_phase(double phase);

/// Least-squares fit of a*cos(wt) + b*sin(wt) over a fixed-length trailing
/// window, t measured from the last sample. The normal equations are solved
/// once, so each call costs two dot products.
class PhasePredictor {
public:
    /// Throws WindowError unless the window spans at least two cycles.
    PhasePredictor(std::size_t window_samples, double srate, double freq);

    std::size_t window_samples() const { return cos_.size(); }

    /// Phase of the fitted sine at window end plus 2*pi*f*horizon, wrapped.
    /// Throws WindowError on a length mismatch and PhaseUndefinedError when
    /// the fitted amplitude is below 1e-12.
    double operator()(std::span<const double> window, double horizon) const;

private:
    double freq_ = 0.0;
    std::vector<double> cos_;
    std::vector<double> sin_;
    std::array<double, 3> inverse_{};  ///< symmetric 2x2 inverse: [cc, cs, ss]
};

double predict_phase(std::span<const double> window, double srate, double freq, double horizon);

/// Symmetric four-cycle least-squares fit c + a*cos + b*sin around time t,
/// with sample i at i / srate. Throws EdgeError when t is closer than 2/f to
/// either end and PhaseUndefinedError for amplitude below 1e-12.
double oracle_phase(std::span<const double> signal, double srate, double freq, double t);

/// Same fit on explicitly timestamped samples (ascending times).
double oracle_phase(std::span<const double> signal, std::span<const double> times, double freq, double t);

// ---------------------------------------------------------------------------
// Band-pass

/// Second-order sections [b0, b1, b2, a0, a1, a2] with a0 = 1.
using Biquad = std::array<double, 6>;

/// Digital Butterworth band-pass of the given prototype order (2 * order
/// poles), designed via the bilinear transform with pre-warped edges.
std::vector<Biquad> butter_bandpass(int order, double low_hz, double high_hz, double srate);

/// Forward-backward filtering with odd-extension padding and steady-state
/// initial conditions (the conventional zero-phase scheme).
std::vector<double> sosfiltfilt(std::span<const Biquad> sections, std::span<const double> signal);

// ---------------------------------------------------------------------------
// Verification

struct PhaseEvent {
    double event_time = 0.0;
    double true_phase = 0.0;  ///< oracle phase at event_time
    double error = 0.0;       ///< wrap(true_phase - target)
};

struct PhaseReport {
    std::vector<PhaseEvent> per_event;
    double circular_mean_error = 0.0;
    double circular_std = 0.0;
    std::size_t n_events = 0;   ///< events that entered the statistics
    std::size_t skipped = 0;    ///< too close to an edge or no measurable phase
    bool defined = false;       ///< false when n_events == 0
};

struct CircularStats {
    double mean = 0.0;
    double stddev = 0.0;
};

/// Resultant-vector mean and sqrt(-2 ln R). Empty input gives NaNs.
CircularStats circular_stats(std::span<const double> angles);

/// Compares the oracle phase of the raw stream at each trigger with the
/// target. Streams are found by name ("raw", "triggers"), falling back to the
/// first regular numeric stream and the first marker stream. Clock offsets are
/// applied first. Throws MissingStreamError when either is absent.
PhaseReport verify(const Recording& rec, double target_phase, double freq);

} // namespace xdfkit
