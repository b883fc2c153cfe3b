#include "xdfkit/format.hpp"

#include "xdfkit/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace xdfkit {

namespace {

template <typename T>
void put_le(Bytes& out, T value)
{
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(raw, raw + sizeof(T));
    out.insert(out.end(), raw, raw + sizeof(T));
}

void put_text(Bytes& out, std::string_view text)
{
    out.insert(out.end(), text.begin(), text.end());
}

} // namespace

void append_chunk(Bytes& out, ChunkTag tag, ByteView payload)
{
    append_varlen(out, payload.size() + 2);
    put_le(out, static_cast<std::uint16_t>(tag));
    out.insert(out.end(), payload.begin(), payload.end());
}

Bytes encode_file_header(const XmlNode& tree)
{
    Bytes out;
    put_text(out, serialize_xml(tree));
    return out;
}

Bytes encode_stream_header(const StreamInfo& info)
{
    Bytes out;
    put_le(out, info.stream_id);
    put_text(out, serialize_xml(info.header_tree));
    return out;
}

Bytes encode_samples(const SampleBlock& block, const StreamInfo& info)
{
    Bytes out;
    put_le(out, block.stream_id);
    append_varlen(out, block.rows());
    const std::size_t channels = info.channel_count;
    std::visit(
        [&](const auto& column) {
            using T = typename std::decay_t<decltype(column)>::value_type;
            if (column.size() != block.rows() * channels)
                throw FormatError("stream " + std::to_string(block.stream_id) + ": block holds "
                                  + std::to_string(column.size()) + " values for " + std::to_string(block.rows())
                                  + " rows of " + std::to_string(channels) + " channels");
            if constexpr (!std::is_same_v<T, std::string>)
                out.reserve(out.size() + block.rows() * (9 + channels * sizeof(T)));
            for (std::size_t r = 0; r < block.rows(); ++r) {
                if (const auto& stamp = block.timestamps[r]) {
                    out.push_back(8);
                    put_le(out, *stamp);
                } else {
                    out.push_back(0);
                }
                const auto* row = column.data() + r * channels;
                if constexpr (std::is_same_v<T, std::string>) {
                    for (std::size_t c = 0; c < channels; ++c) {
                        append_varlen(out, row[c].size());
                        put_text(out, row[c]);
                    }
                } else if constexpr (std::endian::native == std::endian::little) {
                    const auto* raw = reinterpret_cast<const std::uint8_t*>(row);
                    out.insert(out.end(), raw, raw + channels * sizeof(T));
                } else {
                    for (std::size_t c = 0; c < channels; ++c)
                        put_le(out, row[c]);
                }
            }
        },
        block.values);
    return out;
}

Bytes encode_clock_offset(const ClockOffsetRecord& record)
{
    Bytes out;
    put_le(out, record.stream_id);
    put_le(out, record.collection_time);
    put_le(out, record.offset);
    return out;
}

Bytes encode_stream_footer(const StreamInfo& info)
{
    Bytes out;
    put_le(out, info.stream_id);
    if (info.footer_tree)
        put_text(out, serialize_xml(*info.footer_tree));
    else if (info.footer)
        put_text(out, serialize_xml(footer_tree(*info.footer)));
    return out;
}

Bytes serialize_recording(const Recording& rec)
{
    Bytes out(xdf_magic.begin(), xdf_magic.end());
    append_chunk(out, ChunkTag::file_header, encode_file_header(rec.file_header));
    for (const auto& [id, stream] : rec.streams)
        append_chunk(out, ChunkTag::stream_header, encode_stream_header(stream.info));
    for (const auto& [id, stream] : rec.streams)
        for (const auto& block : stream.blocks)
            append_chunk(out, ChunkTag::samples, encode_samples(block, stream.info));
    for (const auto& [id, stream] : rec.streams)
        for (const auto& record : stream.offsets)
            append_chunk(out, ChunkTag::clock_offset, encode_clock_offset(record));
    for (std::size_t i = 0; i < rec.boundary_offsets.size(); ++i)
        append_chunk(out, ChunkTag::boundary, boundary_signature);
    for (const auto& [id, stream] : rec.streams)
        if (stream.info.footer_tree || stream.info.footer)
            append_chunk(out, ChunkTag::stream_footer, encode_stream_footer(stream.info));
    return out;
}

} // namespace xdfkit
