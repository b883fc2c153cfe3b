#pragma once

#include "xdfkit/format.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace xdfkit {

enum class StampKind : std::uint8_t { explicit_stamp, deduced };

struct TimestampSeries {
    std::uint32_t stream_id = 0;
    std::vector<double> times;
    std::vector<StampKind> kinds;

    std::size_t size() const { return times.size(); }
};

/// Fills omitted stamps as previous + 1/nominal_srate. Throws
/// MissingStampError if an irregular stream has an unstamped sample or a
/// regular stream's first sample is unstamped.
TimestampSeries resolve_timestamps(std::span<const SampleBlock> blocks, const StreamInfo& info);

/// Replaces timestamps by a per-segment least-squares line of time against
/// sample index. Segments are split with detect_gaps.
TimestampSeries dejitter(const TimestampSeries& series, double nominal_srate);

// ---------------------------------------------------------------------------
// Clock synchronisation

enum class SyncMode { identity, constant, interpolate };

class SyncModel {
public:
    SyncModel() = default;
    /// Knots must already be sorted strictly ascending by collection time.
    SyncModel(std::uint32_t stream_id, std::vector<std::pair<double, double>> knots);

    std::uint32_t stream_id() const { return stream_id_; }
    SyncMode mode() const;
    const std::vector<std::pair<double, double>>& knots() const { return knots_; }

    /// Offset at time t: linear between knots, constant beyond both ends.
    double offset_at(double t) const;
    double correct(double t) const { return t + offset_at(t); }

private:
    std::uint32_t stream_id_ = 0;
    std::vector<std::pair<double, double>> knots_;
};

/// Sorts the records and collapses duplicate collection times to their mean
/// offset (noted in `warnings` when given).
SyncModel build_sync_model(std::span<const ClockOffsetRecord> offsets,
                           std::vector<std::string>* warnings = nullptr);

/// Fits offset = a + b * t by least squares, drops the `trim` fraction of
/// records with the largest residuals and refits. The result is a two-knot
/// model spanning the measured range. For drifting clocks with outliers.
SyncModel fit_linear_sync_model(std::span<const ClockOffsetRecord> offsets, double trim = 0.1);

TimestampSeries apply_sync(const TimestampSeries& series, const SyncModel& model);

/// One interpolating model per stream of the recording.
std::map<std::uint32_t, SyncModel> build_sync_models(const Recording& rec,
                                                     std::vector<std::string>* warnings = nullptr);

/// Resolved and synchronised timestamps of one stream.
TimestampSeries synced_timestamps(const Stream& stream, const SyncModel& model);

// ---------------------------------------------------------------------------
// Rates and gaps

inline constexpr double default_deviation_threshold = 0.01;

struct RateReport {
    std::uint32_t stream_id = 0;
    double nominal_srate = 0.0;
    double effective_srate = 0.0;
    double relative_deviation = 0.0;
    bool deviates = false;
    std::optional<std::string> note;  ///< set when the rate could not be measured
};

/// effective = (N - 1) / (last - first). Series with fewer than two samples
/// report the nominal rate with a note. Throws DegenerateError when the last
/// stamp is not after the first.
RateReport effective_rate(const TimestampSeries& series, double nominal_srate,
                          double threshold = default_deviation_threshold);

/// Half-open index range [begin, end).
struct Segment {
    std::size_t begin = 0;
    std::size_t end = 0;

    friend bool operator==(const Segment&, const Segment&) = default;
};

/// Splits wherever consecutive stamps are further apart than
/// max(1 s, 2 / nominal_srate).
std::vector<Segment> detect_gaps(const TimestampSeries& series, double nominal_srate);

// ---------------------------------------------------------------------------
// Display helpers

/// Common display rate: the user's choice, else the highest regular nominal
/// rate. Throws NoRegularStreamError when no stream has a regular rate.
double common_rate(std::span<const StreamInfo> infos, std::optional<double> user_rate = std::nullopt);

struct Scale {
    double offset = 0.0;
    double gain = 1.0;

    double apply(double value) const { return (value - offset) * gain; }
};

/// Maps the 2nd..98th percentile range onto [-1, 1]. Non-finite values are
/// ignored; an empty or flat channel gets gain 1.
Scale auto_scale(std::span<const double> channel);

/// Percentile with linear interpolation between order statistics.
double percentile(std::vector<double> values, double pct);

struct EnvelopeTile {
    std::size_t bucket_index = 0;
    double t_start = 0.0;
    double t_end = 0.0;
    double min_value = 0.0;  ///< NaN when sample_count is 0
    double max_value = 0.0;  ///< NaN when sample_count is 0
    std::size_t sample_count = 0;
};

/// Min/max per equal-width bucket of [t0, t1). A sample belongs to the bucket
/// whose [t_start, t_end) contains its timestamp. Throws WindowError unless
/// t0 < t1 and buckets >= 1.
std::vector<EnvelopeTile> envelope_tiles(std::span<const double> channel, std::span<const double> times,
                                         double t0, double t1, std::size_t buckets);

/// Convenience: one channel of a numeric stream as doubles, concatenated
/// across blocks.
std::vector<double> channel_values(const Stream& stream, std::size_t channel);

} // namespace xdfkit
