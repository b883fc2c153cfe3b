#pragma once

#include "xdfkit/format.hpp"
#include "xdfkit/timeline.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace xdfkit {

enum class EventOrigin { decoded, user };

struct Event {
    std::int64_t id = 0;
    double onset = 0.0;     ///< recorder clock, seconds
    double duration = 0.0;  ///< seconds, >= 0
    std::string label;
    std::optional<std::uint32_t> stream_id;
    EventOrigin origin = EventOrigin::user;
};

/// Events kept sorted by (onset, id). Ids are never reused.
class EventSet {
public:
    const std::vector<Event>& events() const { return events_; }
    std::size_t size() const { return events_.size(); }
    bool empty() const { return events_.empty(); }
    std::int64_t next_id() const { return next_id_; }

    /// Throws ValidationError for a non-finite onset, a negative or non-finite
    /// duration, or an empty label.
    std::int64_t add(double onset, double duration, std::string label,
                     std::optional<std::uint32_t> stream_id = std::nullopt,
                     EventOrigin origin = EventOrigin::user);
    bool remove(std::int64_t id);
    const Event* find(std::int64_t id) const;

    EventSet only(EventOrigin origin) const;

private:
    std::vector<Event> events_;
    std::int64_t next_id_ = 0;
};

/// Value-style insert: returns the updated set and the new id.
std::pair<EventSet, std::int64_t> add_event(EventSet set, double onset, double duration, std::string label);

/// Every irregular string stream is a marker stream; each stamped sample
/// becomes a zero-duration event labelled with its first channel, placed at
/// the synchronised time. Samples with empty labels are skipped.
EventSet derive_events(const Recording& rec, const std::map<std::uint32_t, SyncModel>& sync_models);

// ---------------------------------------------------------------------------
// CSV: header `onset,duration,label,stream_id`, LF line endings, shortest
// round-trip decimals, RFC 4180 quoting for labels.

inline constexpr std::string_view csv_header = "onset,duration,label,stream_id";

std::string export_csv(const EventSet& set);

/// Imported events all have origin user. Throws HeaderError or RowError.
EventSet import_csv(std::string_view text);

// ---------------------------------------------------------------------------
// Write-back

inline constexpr std::string_view annotation_stream_name = "sigviewer-annotations";

/// Label stored in the marker stream: `label`, or `label|duration=<d>` when
/// the event has a positive duration.
std::string marker_label(const Event& event);

/// Appends the user events of `set` to an XDF file image as a new marker
/// stream (StreamHeader, Samples, Boundary, StreamFooter). The original bytes
/// are left untouched and form a prefix of the result. With no user events
/// the input is returned as is. The input is parsed first, so a damaged file
/// raises its parse error.
Bytes append_annotations(ByteView original, const EventSet& set);

/// append_annotations applied to a file on disk; returns the new file image.
Bytes append_to_file(const std::filesystem::path& path, const EventSet& set);

} // namespace xdfkit
