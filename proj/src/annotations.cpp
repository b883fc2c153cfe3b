#include "xdfkit/annotations.hpp"

#include "xdfkit/errors.hpp"
#include "xdfkit/numbers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace xdfkit {

namespace {

bool before(const Event& a, const Event& b)
{
    return a.onset < b.onset || (a.onset == b.onset && a.id < b.id);
}

} // namespace

std::int64_t EventSet::add(double onset, double duration, std::string label, std::optional<std::uint32_t> stream_id,
                           EventOrigin origin)
{
    if (!std::isfinite(onset))
        throw ValidationError("event onset must be finite");
    if (!std::isfinite(duration) || duration < 0.0)
        throw ValidationError("event duration must be finite and >= 0, got " + format_double(duration));
    if (label.empty())
        throw ValidationError("event label must not be empty");
    const std::int64_t id = next_id_++;
    Event event{id, onset, duration, std::move(label), stream_id, origin};
    events_.insert(std::upper_bound(events_.begin(), events_.end(), event, before), std::move(event));
    return id;
}

bool EventSet::remove(std::int64_t id)
{
    const auto it = std::find_if(events_.begin(), events_.end(), [id](const Event& e) { return e.id == id; });
    if (it == events_.end())
        return false;
    events_.erase(it);
    return true;
}

const Event* EventSet::find(std::int64_t id) const
{
    const auto it = std::find_if(events_.begin(), events_.end(), [id](const Event& e) { return e.id == id; });
    return it == events_.end() ? nullptr : &*it;
}

EventSet EventSet::only(EventOrigin origin) const
{
    EventSet out = *this;
    std::erase_if(out.events_, [origin](const Event& e) { return e.origin != origin; });
    return out;
}

std::pair<EventSet, std::int64_t> add_event(EventSet set, double onset, double duration, std::string label)
{
    const auto id = set.add(onset, duration, std::move(label));
    return {std::move(set), id};
}

EventSet derive_events(const Recording& rec, const std::map<std::uint32_t, SyncModel>& sync_models)
{
    std::vector<Event> decoded;
    for (const auto& [id, stream] : rec.streams) {
        if (!stream.info.is_marker())
            continue;
        const auto model = sync_models.find(id);
        const std::size_t channels = stream.info.channel_count;
        for (const auto& block : stream.blocks) {
            for (std::size_t r = 0; r < block.rows(); ++r) {
                const auto& stamp = block.timestamps[r];
                const std::string& label = block.text(r, 0, channels);
                if (!stamp || label.empty())
                    continue;
                const double onset = model == sync_models.end() ? *stamp : model->second.correct(*stamp);
                decoded.push_back({0, onset, 0.0, label, id, EventOrigin::decoded});
            }
        }
    }
    // Stable by onset so that equal onsets keep stream/file order in their ids.
    std::stable_sort(decoded.begin(), decoded.end(), [](const Event& a, const Event& b) { return a.onset < b.onset; });
    EventSet set;
    for (auto& e : decoded)
        set.add(e.onset, e.duration, std::move(e.label), e.stream_id, EventOrigin::decoded);
    return set;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

void append_field(std::string& out, std::string_view label)
{
    if (label.find_first_of(",\"\n\r") == std::string_view::npos) {
        out += label;
        return;
    }
    out.push_back('"');
    for (char c : label) {
        if (c == '"')
            out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
}

struct CsvRow {
    std::size_t line = 0;
    std::vector<std::string> fields;
};

// RFC 4180 reader; quoted fields may span lines. Accepts CRLF.
std::vector<CsvRow> split_csv(std::string_view text)
{
    std::vector<CsvRow> rows;
    std::size_t line = 1;
    std::size_t i = 0;
    while (i < text.size()) {
        CsvRow row;
        row.line = line;
        std::string field;
        bool quoted_field = false;
        for (;;) {
            if (i < text.size() && text[i] == '"' && field.empty() && !quoted_field) {
                quoted_field = true;
                ++i;
                for (;;) {
                    if (i >= text.size())
                        throw RowError(row.line, "unterminated quoted field");
                    const char c = text[i++];
                    if (c == '"') {
                        if (i < text.size() && text[i] == '"') {
                            field.push_back('"');
                            ++i;
                        } else {
                            break;
                        }
                    } else {
                        if (c == '\n')
                            ++line;
                        field.push_back(c);
                    }
                }
                if (i < text.size() && text[i] != ',' && text[i] != '\n' && text[i] != '\r')
                    throw RowError(row.line, "characters after closing quote");
                continue;
            }
            if (i >= text.size() || text[i] == '\n' || (text[i] == '\r' && i + 1 < text.size() && text[i + 1] == '\n')) {
                row.fields.push_back(std::move(field));
                if (i < text.size())
                    i += text[i] == '\r' ? 2 : 1;
                ++line;
                break;
            }
            if (text[i] == ',') {
                row.fields.push_back(std::move(field));
                field.clear();
                quoted_field = false;
                ++i;
                continue;
            }
            if (quoted_field)
                throw RowError(row.line, "characters after closing quote");
            field.push_back(text[i++]);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

std::string export_csv(const EventSet& set)
{
    std::string out(csv_header);
    out.push_back('\n');
    for (const Event& e : set.events()) {
        out += format_double(e.onset);
        out.push_back(',');
        out += format_double(e.duration);
        out.push_back(',');
        append_field(out, e.label);
        out.push_back(',');
        if (e.stream_id)
            out += std::to_string(*e.stream_id);
        out.push_back('\n');
    }
    return out;
}

EventSet import_csv(std::string_view text)
{
    const std::vector<CsvRow> rows = split_csv(text);
    if (rows.empty() || rows.front().fields.size() != 4
        || rows.front().fields[0] + "," + rows.front().fields[1] + "," + rows.front().fields[2] + ","
                   + rows.front().fields[3]
               != csv_header)
        throw HeaderError("expected CSV header '" + std::string(csv_header) + "'");

    EventSet set;
    for (std::size_t k = 1; k < rows.size(); ++k) {
        const CsvRow& row = rows[k];
        if (row.fields.size() != 4)
            throw RowError(row.line, "expected 4 fields, found " + std::to_string(row.fields.size()));
        const auto onset = parse_double(row.fields[0]);
        if (!onset || !std::isfinite(*onset))
            throw RowError(row.line, "onset '" + row.fields[0] + "' is not a finite number");
        const auto duration = parse_double(row.fields[1]);
        if (!duration || !std::isfinite(*duration) || *duration < 0.0)
            throw RowError(row.line, "duration '" + row.fields[1] + "' is not a non-negative number");
        if (row.fields[2].empty())
            throw RowError(row.line, "empty label");
        std::optional<std::uint32_t> stream_id;
        if (!row.fields[3].empty()) {
            const auto id = parse_unsigned(row.fields[3]);
            if (!id || *id > std::numeric_limits<std::uint32_t>::max())
                throw RowError(row.line, "stream_id '" + row.fields[3] + "' is not a 32-bit unsigned integer");
            stream_id = static_cast<std::uint32_t>(*id);
        }
        set.add(*onset, *duration, row.fields[2], stream_id, EventOrigin::user);
    }
    return set;
}

// ---------------------------------------------------------------------------
// Write-back

std::string marker_label(const Event& event)
{
    if (event.duration > 0.0)
        return event.label + "|duration=" + format_double(event.duration);
    return event.label;
}

Bytes append_annotations(ByteView original, const EventSet& set)
{
    const LoadResult loaded = parse_recording(original);
    const EventSet user = set.only(EventOrigin::user);
    if (user.empty())
        return {original.begin(), original.end()};

    std::uint32_t max_id = 0;
    for (const auto& [id, stream] : loaded.recording.streams)
        max_id = std::max(max_id, id);
    if (max_id == std::numeric_limits<std::uint32_t>::max())
        throw ValidationError("no free stream id left for the annotation stream");

    StreamInfo info = make_stream_info(max_id + 1, std::string(annotation_stream_name), "Markers", 1, 0.0,
                                       ChannelFormat::string);
    SampleBlock block;
    block.stream_id = info.stream_id;
    std::vector<std::string> labels;
    for (const Event& e : user.events()) {
        block.timestamps.emplace_back(e.onset);
        labels.push_back(marker_label(e));
    }
    block.values = std::move(labels);
    info.footer = StreamFooter{user.events().front().onset, user.events().back().onset, user.size()};

    Bytes out(original.begin(), original.end());
    append_chunk(out, ChunkTag::stream_header, encode_stream_header(info));
    append_chunk(out, ChunkTag::samples, encode_samples(block, info));
    append_chunk(out, ChunkTag::boundary, boundary_signature);
    append_chunk(out, ChunkTag::stream_footer, encode_stream_footer(info));
    return out;
}

Bytes append_to_file(const std::filesystem::path& path, const EventSet& set)
{
    return append_annotations(read_file(path), set);
}

} // namespace xdfkit
