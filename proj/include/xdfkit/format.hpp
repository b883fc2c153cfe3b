#pragma once

#include "xdfkit/xml.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace xdfkit {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline constexpr std::string_view xdf_magic = "XDF:";

inline constexpr std::array<std::uint8_t, 16> boundary_signature{
    0x43, 0xA5, 0x46, 0xDC, 0xCB, 0xF5, 0x41, 0x0F,
    0xB3, 0x0E, 0xD5, 0x46, 0x73, 0x83, 0xCB, 0xE4};

enum class ChunkTag : std::uint16_t {
    file_header = 1,
    stream_header = 2,
    samples = 3,
    clock_offset = 4,
    boundary = 5,
    stream_footer = 6,
};

bool is_known_chunk_tag(std::uint16_t code);

// ---------------------------------------------------------------------------
// Variable-length integers: one width byte (1, 4 or 8) followed by the value
// in little-endian order.

struct Varlen {
    std::uint64_t value = 0;
    std::size_t consumed = 0;
};

/// Throws WidthError for a width byte outside {1,4,8}, TruncatedError when the
/// input ends early.
Varlen read_varlen(ByteView bytes);

/// Uses the smallest of the three widths that holds the value.
Bytes write_varlen(std::uint64_t value);
void append_varlen(Bytes& out, std::uint64_t value);

// ---------------------------------------------------------------------------
// Stream model

enum class ChannelFormat { int8, int16, int32, int64, float32, double64, string };

std::string_view to_string(ChannelFormat format);
std::optional<ChannelFormat> channel_format_from_string(std::string_view name);

/// Bytes per value for numeric formats, 0 for string.
std::size_t value_width(ChannelFormat format);

/// Row-major sample values (rows * channel_count entries), stored in the
/// stream's native type so that round trips are bit-exact.
using SampleValues = std::variant<
    std::vector<std::int8_t>,
    std::vector<std::int16_t>,
    std::vector<std::int32_t>,
    std::vector<std::int64_t>,
    std::vector<float>,
    std::vector<double>,
    std::vector<std::string>>;

SampleValues empty_values(ChannelFormat format);

struct StreamFooter {
    double first_timestamp = 0.0;
    double last_timestamp = 0.0;
    std::uint64_t sample_count = 0;

    friend bool operator==(const StreamFooter&, const StreamFooter&) = default;
};

struct StreamInfo {
    std::uint32_t stream_id = 0;
    std::string name;
    std::string content_type;
    std::uint32_t channel_count = 1;
    double nominal_srate = 0.0;  ///< 0 marks an irregular-rate stream
    ChannelFormat channel_format = ChannelFormat::float32;
    XmlNode header_tree;
    std::optional<XmlNode> footer_tree;
    std::optional<StreamFooter> footer;

    bool is_regular() const { return nominal_srate > 0.0; }
    bool is_numeric() const { return channel_format != ChannelFormat::string; }
    /// Irregular string streams carry events.
    bool is_marker() const { return !is_regular() && !is_numeric(); }
};

/// Builds an info with a matching <info> header tree.
StreamInfo make_stream_info(std::uint32_t stream_id, std::string name, std::string content_type,
                            std::uint32_t channel_count, double nominal_srate, ChannelFormat format);

/// Reads the fields from a StreamHeader tree. Throws FormatError if the
/// channel count or format is missing or invalid.
StreamInfo stream_info_from_header(std::uint32_t stream_id, XmlNode header);

XmlNode footer_tree(const StreamFooter& footer);

struct SampleBlock {
    std::uint32_t stream_id = 0;
    std::vector<std::optional<double>> timestamps;  ///< one entry per row
    SampleValues values;

    std::size_t rows() const { return timestamps.size(); }
    /// Numeric value as double; throws FormatError for string blocks.
    double numeric(std::size_t row, std::size_t channel, std::size_t channel_count) const;
    const std::string& text(std::size_t row, std::size_t channel, std::size_t channel_count) const;
};

struct ClockOffsetRecord {
    std::uint32_t stream_id = 0;
    double collection_time = 0.0;  ///< recorder clock
    double offset = 0.0;           ///< recorder time minus stream time

    friend bool operator==(const ClockOffsetRecord&, const ClockOffsetRecord&) = default;
};

struct Stream {
    StreamInfo info;
    std::vector<SampleBlock> blocks;
    std::vector<ClockOffsetRecord> offsets;  ///< sorted by collection_time

    std::uint64_t sample_count() const;
};

struct Recording {
    XmlNode file_header{"info", {}, {}};
    std::map<std::uint32_t, Stream> streams;
    std::vector<std::uint64_t> boundary_offsets;  ///< byte offsets of Boundary chunks
    std::uint64_t source_length = 0;
};

/// Sets every stream's footer from its decoded samples.
void refresh_footers(Recording& rec);

/// Semantic equality: same header trees, stream infos, block partitioning,
/// timestamps, values and clock offsets, compared bit for bit. Boundary
/// positions and source length are ignored. On mismatch, `why` describes the
/// first difference.
bool equivalent(const Recording& a, const Recording& b, std::string* why = nullptr);

// ---------------------------------------------------------------------------
// Reading

struct ParseOptions {
    /// On a damaged chunk, scan forward to the next Boundary signature and
    /// resume there instead of failing.
    bool recover = false;
};

struct ParseStats {
    std::uint64_t bytes = 0;
    std::uint64_t chunks = 0;
    std::uint64_t skipped_chunks = 0;  ///< unknown tags and undeclared stream ids
    std::uint64_t largest_chunk = 0;
    std::uint64_t recovered = 0;       ///< resynchronisations after damage
};

/// Receives decoded chunks in file order. The streaming parser keeps only the
/// current chunk in memory, so a sink that discards its input parses any file
/// in memory bounded by the largest chunk.
class RecordingSink {
public:
    virtual ~RecordingSink() = default;
    virtual void on_file_header(XmlNode /*tree*/) {}
    virtual void on_stream_header(const StreamInfo& /*info*/) {}
    virtual void on_samples(SampleBlock&& /*block*/) {}
    virtual void on_clock_offset(const ClockOffsetRecord& /*record*/) {}
    virtual void on_boundary(std::uint64_t /*byte_offset*/) {}
    virtual void on_stream_footer(std::uint32_t /*stream_id*/, XmlNode /*tree*/) {}
};

ParseStats parse_stream(std::istream& source, RecordingSink& sink,
                        std::vector<std::string>& warnings, const ParseOptions& options = {});
ParseStats parse_stream(ByteView source, RecordingSink& sink,
                        std::vector<std::string>& warnings, const ParseOptions& options = {});

struct LoadResult {
    Recording recording;
    std::vector<std::string> warnings;
    ParseStats stats;
};

LoadResult parse_recording(std::istream& source, const ParseOptions& options = {});
LoadResult parse_recording(ByteView source, const ParseOptions& options = {});
/// Throws IoError if the file cannot be opened.
LoadResult load_recording(const std::filesystem::path& path, const ParseOptions& options = {});

/// Decodes a Samples payload that starts right after the stream id.
/// Invalid UTF-8 in string values is replaced by U+FFFD with a warning.
SampleBlock parse_samples_payload(ByteView payload, const StreamInfo& info,
                                  std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------------------
// Writing

void append_chunk(Bytes& out, ChunkTag tag, ByteView payload);
Bytes encode_file_header(const XmlNode& tree);
Bytes encode_stream_header(const StreamInfo& info);
/// Samples payload including the stream id.
Bytes encode_samples(const SampleBlock& block, const StreamInfo& info);
Bytes encode_clock_offset(const ClockOffsetRecord& record);
Bytes encode_stream_footer(const StreamInfo& info);

/// Magic, FileHeader, StreamHeaders, Samples, ClockOffsets, Boundaries and
/// StreamFooters, in that order.
Bytes serialize_recording(const Recording& rec);

/// Writes via a temporary file and rename. Throws IoError.
void write_file(const std::filesystem::path& path, ByteView bytes);
Bytes read_file(const std::filesystem::path& path);

} // namespace xdfkit
