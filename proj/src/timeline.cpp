#include "xdfkit/timeline.hpp"

#include "xdfkit/errors.hpp"
#include "xdfkit/numbers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace xdfkit {

TimestampSeries resolve_timestamps(std::span<const SampleBlock> blocks, const StreamInfo& info)
{
    TimestampSeries series;
    series.stream_id = info.stream_id;
    std::size_t total = 0;
    for (const auto& block : blocks)
        total += block.rows();
    series.times.reserve(total);
    series.kinds.reserve(total);

    const bool regular = info.is_regular();
    const double step = regular ? 1.0 / info.nominal_srate : 0.0;
    for (const auto& block : blocks) {
        for (const auto& stamp : block.timestamps) {
            if (stamp) {
                series.times.push_back(*stamp);
                series.kinds.push_back(StampKind::explicit_stamp);
            } else if (regular && !series.times.empty()) {
                series.times.push_back(series.times.back() + step);
                series.kinds.push_back(StampKind::deduced);
            } else {
                throw MissingStampError("stream " + std::to_string(info.stream_id) + ": sample "
                                        + std::to_string(series.times.size()) + " has no timestamp"
                                        + (regular ? " and nothing precedes it" : " in an irregular-rate stream"));
            }
        }
    }
    return series;
}

TimestampSeries dejitter(const TimestampSeries& series, double nominal_srate)
{
    TimestampSeries out = series;
    for (const Segment& seg : detect_gaps(series, nominal_srate)) {
        const std::size_t n = seg.end - seg.begin;
        if (n < 2)
            continue;
        // Least squares of time against local index, centred for conditioning.
        const double mean_i = static_cast<double>(n - 1) / 2.0;
        double mean_t = 0.0;
        for (std::size_t k = seg.begin; k < seg.end; ++k)
            mean_t += series.times[k];
        mean_t /= static_cast<double>(n);
        double sxy = 0.0;
        double sxx = 0.0;
        for (std::size_t k = seg.begin; k < seg.end; ++k) {
            const double di = static_cast<double>(k - seg.begin) - mean_i;
            sxy += di * (series.times[k] - mean_t);
            sxx += di * di;
        }
        const double slope = sxy / sxx;
        for (std::size_t k = seg.begin; k < seg.end; ++k)
            out.times[k] = mean_t + slope * (static_cast<double>(k - seg.begin) - mean_i);
    }
    return out;
}

SyncModel::SyncModel(std::uint32_t stream_id, std::vector<std::pair<double, double>> knots)
    : stream_id_(stream_id), knots_(std::move(knots))
{
}

SyncMode SyncModel::mode() const
{
    if (knots_.empty())
        return SyncMode::identity;
    return knots_.size() == 1 ? SyncMode::constant : SyncMode::interpolate;
}

double SyncModel::offset_at(double t) const
{
    if (knots_.empty())
        return 0.0;
    if (t <= knots_.front().first)
        return knots_.front().second;
    if (t >= knots_.back().first)
        return knots_.back().second;
    const auto hi = std::upper_bound(knots_.begin(), knots_.end(), t,
                                     [](double value, const auto& knot) { return value < knot.first; });
    const auto lo = hi - 1;
    const double frac = (t - lo->first) / (hi->first - lo->first);
    return lo->second + (hi->second - lo->second) * frac;
}

SyncModel build_sync_model(std::span<const ClockOffsetRecord> offsets, std::vector<std::string>* warnings)
{
    std::vector<ClockOffsetRecord> sorted(offsets.begin(), offsets.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.collection_time < b.collection_time; });
    std::vector<std::pair<double, double>> knots;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        double sum = 0.0;
        while (j < sorted.size() && sorted[j].collection_time == sorted[i].collection_time)
            sum += sorted[j++].offset;
        if (j - i > 1 && warnings)
            warnings->push_back("stream " + std::to_string(sorted[i].stream_id) + ": "
                                + std::to_string(j - i) + " clock offsets at t=" + format_double(sorted[i].collection_time)
                                + " averaged");
        knots.emplace_back(sorted[i].collection_time, sum / static_cast<double>(j - i));
        i = j;
    }
    return SyncModel(offsets.empty() ? 0 : offsets.front().stream_id, std::move(knots));
}

SyncModel fit_linear_sync_model(std::span<const ClockOffsetRecord> offsets, double trim)
{
    if (offsets.size() < 2)
        return build_sync_model(offsets);

    auto fit = [](const std::vector<ClockOffsetRecord>& pts) {
        double mx = 0.0;
        double my = 0.0;
        for (const auto& p : pts) {
            mx += p.collection_time;
            my += p.offset;
        }
        mx /= static_cast<double>(pts.size());
        my /= static_cast<double>(pts.size());
        double sxy = 0.0;
        double sxx = 0.0;
        for (const auto& p : pts) {
            sxy += (p.collection_time - mx) * (p.offset - my);
            sxx += (p.collection_time - mx) * (p.collection_time - mx);
        }
        const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
        return std::pair{my - slope * mx, slope};
    };

    std::vector<ClockOffsetRecord> pts(offsets.begin(), offsets.end());
    auto [intercept, slope] = fit(pts);
    const auto keep = std::max<std::size_t>(2, pts.size() - static_cast<std::size_t>(trim * static_cast<double>(pts.size())));
    if (keep < pts.size()) {
        std::sort(pts.begin(), pts.end(), [&, a = intercept, b = slope](const auto& p, const auto& q) {
            return std::abs(p.offset - (a + b * p.collection_time)) < std::abs(q.offset - (a + b * q.collection_time));
        });
        pts.resize(keep);
        std::tie(intercept, slope) = fit(pts);
    }
    const auto [lo, hi] = std::minmax_element(offsets.begin(), offsets.end(), [](const auto& a, const auto& b) {
        return a.collection_time < b.collection_time;
    });
    std::vector<std::pair<double, double>> knots{{lo->collection_time, intercept + slope * lo->collection_time}};
    if (hi->collection_time > lo->collection_time)
        knots.emplace_back(hi->collection_time, intercept + slope * hi->collection_time);
    return SyncModel(offsets.front().stream_id, std::move(knots));
}

TimestampSeries apply_sync(const TimestampSeries& series, const SyncModel& model)
{
    TimestampSeries out = series;
    if (model.mode() == SyncMode::identity)
        return out;
    for (double& t : out.times)
        t = model.correct(t);
    return out;
}

std::map<std::uint32_t, SyncModel> build_sync_models(const Recording& rec, std::vector<std::string>* warnings)
{
    std::map<std::uint32_t, SyncModel> models;
    for (const auto& [id, stream] : rec.streams) {
        SyncModel model = build_sync_model(stream.offsets, warnings);
        models.emplace(id, model.mode() == SyncMode::identity ? SyncModel(id, {}) : std::move(model));
    }
    return models;
}

TimestampSeries synced_timestamps(const Stream& stream, const SyncModel& model)
{
    return apply_sync(resolve_timestamps(stream.blocks, stream.info), model);
}

RateReport effective_rate(const TimestampSeries& series, double nominal_srate, double threshold)
{
    RateReport report;
    report.stream_id = series.stream_id;
    report.nominal_srate = nominal_srate;
    const std::size_t n = series.size();
    if (n < 2) {
        report.effective_srate = nominal_srate;
        report.note = "fewer than two samples; effective rate not measurable";
        return report;
    }
    const double span = series.times.back() - series.times.front();
    if (!(span > 0.0))
        throw DegenerateError("stream " + std::to_string(series.stream_id)
                              + ": last timestamp is not after the first");
    report.effective_srate = static_cast<double>(n - 1) / span;
    if (nominal_srate > 0.0) {
        report.relative_deviation = std::abs(report.effective_srate - nominal_srate) / nominal_srate;
        report.deviates = report.relative_deviation > threshold;
    }
    return report;
}

std::vector<Segment> detect_gaps(const TimestampSeries& series, double nominal_srate)
{
    std::vector<Segment> segments;
    if (series.times.empty())
        return segments;
    const double limit = nominal_srate > 0.0 ? std::max(1.0, 2.0 / nominal_srate) : 1.0;
    std::size_t begin = 0;
    for (std::size_t i = 1; i < series.times.size(); ++i) {
        if (series.times[i] - series.times[i - 1] > limit) {
            segments.push_back({begin, i});
            begin = i;
        }
    }
    segments.push_back({begin, series.times.size()});
    return segments;
}

double common_rate(std::span<const StreamInfo> infos, std::optional<double> user_rate)
{
    if (user_rate) {
        if (!(*user_rate > 0.0) || !std::isfinite(*user_rate))
            throw RateError("display rate must be positive, got " + format_double(*user_rate));
        return *user_rate;
    }
    double best = 0.0;
    for (const auto& info : infos)
        if (info.is_regular())
            best = std::max(best, info.nominal_srate);
    if (best <= 0.0)
        throw NoRegularStreamError("no regular-rate stream to derive a common rate from");
    return best;
}

double percentile(std::vector<double> values, double pct)
{
    if (values.empty())
        return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

Scale auto_scale(std::span<const double> channel)
{
    std::vector<double> finite;
    finite.reserve(channel.size());
    for (double v : channel)
        if (std::isfinite(v))
            finite.push_back(v);
    if (finite.empty())
        return {};
    const double lo = percentile(finite, 2.0);
    const double hi = percentile(std::move(finite), 98.0);
    Scale scale;
    scale.offset = (lo + hi) / 2.0;
    const double range = hi - lo;
    scale.gain = range > 0.0 ? 2.0 / range : 1.0;
    return scale;
}

std::vector<EnvelopeTile> envelope_tiles(std::span<const double> channel, std::span<const double> times,
                                         double t0, double t1, std::size_t buckets)
{
    if (!(t0 < t1) || !std::isfinite(t0) || !std::isfinite(t1))
        throw WindowError("tile window needs t0 < t1, got [" + format_double(t0) + ", " + format_double(t1) + ")");
    if (buckets == 0)
        throw WindowError("at least one bucket is required");
    if (channel.size() != times.size())
        throw WindowError("channel and timestamps differ in length");

    const double width = (t1 - t0) / static_cast<double>(buckets);
    auto edge = [&](std::size_t i) { return i == buckets ? t1 : t0 + static_cast<double>(i) * width; };

    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<EnvelopeTile> tiles(buckets);
    for (std::size_t i = 0; i < buckets; ++i)
        tiles[i] = {i, edge(i), edge(i + 1), nan, nan, 0};

    for (std::size_t k = 0; k < times.size(); ++k) {
        const double t = times[k];
        if (!(t >= t0 && t < t1))
            continue;
        auto i = static_cast<std::size_t>(std::min((t - t0) / width, static_cast<double>(buckets - 1)));
        while (i > 0 && t < tiles[i].t_start)
            --i;
        while (i + 1 < buckets && t >= tiles[i].t_end)
            ++i;
        EnvelopeTile& tile = tiles[i];
        const double v = channel[k];
        if (tile.sample_count == 0) {
            tile.min_value = v;
            tile.max_value = v;
        } else {
            tile.min_value = std::min(tile.min_value, v);
            tile.max_value = std::max(tile.max_value, v);
        }
        ++tile.sample_count;
    }
    return tiles;
}

std::vector<double> channel_values(const Stream& stream, std::size_t channel)
{
    const std::size_t channels = stream.info.channel_count;
    if (channel >= channels)
        throw WindowError("channel " + std::to_string(channel) + " out of range");
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(stream.sample_count()));
    for (const auto& block : stream.blocks) {
        std::visit(
            [&](const auto& column) {
                using T = typename std::decay_t<decltype(column)>::value_type;
                if constexpr (std::is_same_v<T, std::string>)
                    throw FormatError("stream " + std::to_string(stream.info.stream_id) + " is not numeric");
                else
                    for (std::size_t r = 0; r < block.rows(); ++r)
                        out.push_back(static_cast<double>(column[r * channels + channel]));
            },
            block.values);
    }
    return out;
}

} // namespace xdfkit
