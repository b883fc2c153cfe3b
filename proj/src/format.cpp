#include "xdfkit/format.hpp"

#include "xdfkit/errors.hpp"
#include "xdfkit/numbers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace xdfkit {

bool is_known_chunk_tag(std::uint16_t code)
{
    return code >= 1 && code <= 6;
}

Varlen read_varlen(ByteView bytes)
{
    if (bytes.empty())
        throw TruncatedError("varlen: no width byte");
    const std::uint8_t width = bytes[0];
    if (width != 1 && width != 4 && width != 8)
        throw WidthError("varlen: invalid width byte " + std::to_string(width));
    if (bytes.size() < 1u + width)
        throw TruncatedError("varlen: need " + std::to_string(width) + " value bytes, have "
                             + std::to_string(bytes.size() - 1));
    std::uint64_t value = 0;
    for (std::size_t i = 0; i < width; ++i)
        value |= static_cast<std::uint64_t>(bytes[1 + i]) << (8 * i);
    return {value, 1u + width};
}

void append_varlen(Bytes& out, std::uint64_t value)
{
    std::size_t width = 8;
    if (value <= 0xFF)
        width = 1;
    else if (value <= 0xFFFFFFFFull)
        width = 4;
    out.push_back(static_cast<std::uint8_t>(width));
    for (std::size_t i = 0; i < width; ++i)
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

Bytes write_varlen(std::uint64_t value)
{
    Bytes out;
    append_varlen(out, value);
    return out;
}

namespace {

constexpr std::array<std::pair<ChannelFormat, std::string_view>, 7> format_names{{
    {ChannelFormat::int8, "int8"},
    {ChannelFormat::int16, "int16"},
    {ChannelFormat::int32, "int32"},
    {ChannelFormat::int64, "int64"},
    {ChannelFormat::float32, "float32"},
    {ChannelFormat::double64, "double64"},
    {ChannelFormat::string, "string"},
}};

template <typename T>
bool same_bits(const std::vector<T>& a, const std::vector<T>& b)
{
    if constexpr (std::is_same_v<T, std::string>)
        return a == b;
    else
        return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

bool same_bits(double a, double b)
{
    return std::memcmp(&a, &b, sizeof a) == 0;
}

bool same_bits(const std::optional<StreamFooter>& a, const std::optional<StreamFooter>& b)
{
    if (a.has_value() != b.has_value())
        return false;
    return !a || (same_bits(a->first_timestamp, b->first_timestamp)
                  && same_bits(a->last_timestamp, b->last_timestamp)
                  && a->sample_count == b->sample_count);
}

} // namespace

std::string_view to_string(ChannelFormat format)
{
    for (const auto& [f, name] : format_names)
        if (f == format)
            return name;
    return "unknown";
}

std::optional<ChannelFormat> channel_format_from_string(std::string_view name)
{
    for (const auto& [f, n] : format_names)
        if (n == name)
            return f;
    return std::nullopt;
}

std::size_t value_width(ChannelFormat format)
{
    switch (format) {
    case ChannelFormat::int8: return 1;
    case ChannelFormat::int16: return 2;
    case ChannelFormat::int32: return 4;
    case ChannelFormat::int64: return 8;
    case ChannelFormat::float32: return 4;
    case ChannelFormat::double64: return 8;
    case ChannelFormat::string: return 0;
    }
    return 0;
}

SampleValues empty_values(ChannelFormat format)
{
    switch (format) {
    case ChannelFormat::int8: return std::vector<std::int8_t>{};
    case ChannelFormat::int16: return std::vector<std::int16_t>{};
    case ChannelFormat::int32: return std::vector<std::int32_t>{};
    case ChannelFormat::int64: return std::vector<std::int64_t>{};
    case ChannelFormat::float32: return std::vector<float>{};
    case ChannelFormat::double64: return std::vector<double>{};
    case ChannelFormat::string: return std::vector<std::string>{};
    }
    return std::vector<float>{};
}

StreamInfo make_stream_info(std::uint32_t stream_id, std::string name, std::string content_type,
                            std::uint32_t channel_count, double nominal_srate, ChannelFormat format)
{
    StreamInfo info;
    info.stream_id = stream_id;
    info.name = std::move(name);
    info.content_type = std::move(content_type);
    info.channel_count = channel_count;
    info.nominal_srate = nominal_srate;
    info.channel_format = format;
    info.header_tree.name = "info";
    info.header_tree.add("name", info.name);
    info.header_tree.add("type", info.content_type);
    info.header_tree.add("channel_count", std::to_string(channel_count));
    info.header_tree.add("nominal_srate", format_double(nominal_srate));
    info.header_tree.add("channel_format", std::string(to_string(format)));
    return info;
}

StreamInfo stream_info_from_header(std::uint32_t stream_id, XmlNode header)
{
    StreamInfo info;
    info.stream_id = stream_id;
    info.name = header.child_text("name");
    info.content_type = header.child_text("type");

    const auto count = parse_unsigned(header.child_text("channel_count"));
    if (!count || *count < 1 || *count > 0xFFFFFFFFull)
        throw FormatError("stream " + std::to_string(stream_id) + ": invalid channel_count '"
                          + header.child_text("channel_count") + "'");
    info.channel_count = static_cast<std::uint32_t>(*count);

    const auto srate = parse_double(header.child_text("nominal_srate", "0"));
    if (!srate || !std::isfinite(*srate) || *srate < 0.0)
        throw FormatError("stream " + std::to_string(stream_id) + ": invalid nominal_srate '"
                          + header.child_text("nominal_srate") + "'");
    info.nominal_srate = *srate;

    const auto format = channel_format_from_string(header.child_text("channel_format"));
    if (!format)
        throw FormatError("stream " + std::to_string(stream_id) + ": invalid channel_format '"
                          + header.child_text("channel_format") + "'");
    info.channel_format = *format;
    info.header_tree = std::move(header);
    return info;
}

XmlNode footer_tree(const StreamFooter& footer)
{
    XmlNode tree{"info", {}, {}};
    tree.add("first_timestamp", format_double(footer.first_timestamp));
    tree.add("last_timestamp", format_double(footer.last_timestamp));
    tree.add("sample_count", std::to_string(footer.sample_count));
    return tree;
}

double SampleBlock::numeric(std::size_t row, std::size_t channel, std::size_t channel_count) const
{
    const std::size_t index = row * channel_count + channel;
    return std::visit(
        [&](const auto& column) -> double {
            using T = typename std::decay_t<decltype(column)>::value_type;
            if constexpr (std::is_same_v<T, std::string>)
                throw FormatError("numeric access to a string stream");
            else
                return static_cast<double>(column.at(index));
        },
        values);
}

const std::string& SampleBlock::text(std::size_t row, std::size_t channel, std::size_t channel_count) const
{
    const auto* column = std::get_if<std::vector<std::string>>(&values);
    if (!column)
        throw FormatError("string access to a numeric stream");
    return column->at(row * channel_count + channel);
}

std::uint64_t Stream::sample_count() const
{
    std::uint64_t total = 0;
    for (const auto& block : blocks)
        total += block.rows();
    return total;
}

void refresh_footers(Recording& rec)
{
    for (auto& [id, stream] : rec.streams) {
        StreamFooter footer;
        footer.sample_count = stream.sample_count();
        // First and last stamps are taken from explicit timestamps; rows that
        // only carry deduced stamps extend the range by whole sample periods.
        bool first_set = false;
        std::optional<double> last_explicit;
        std::uint64_t since_explicit = 0;
        for (const auto& block : stream.blocks) {
            for (const auto& stamp : block.timestamps) {
                if (stamp) {
                    if (!first_set) {
                        footer.first_timestamp = *stamp;
                        first_set = true;
                    }
                    last_explicit = stamp;
                    since_explicit = 0;
                } else {
                    ++since_explicit;
                }
            }
        }
        if (last_explicit) {
            footer.last_timestamp = *last_explicit;
            if (stream.info.is_regular())
                footer.last_timestamp += static_cast<double>(since_explicit) / stream.info.nominal_srate;
        }
        stream.info.footer = footer;
        stream.info.footer_tree = footer_tree(footer);
    }
}

bool equivalent(const Recording& a, const Recording& b, std::string* why)
{
    auto differ = [why](const std::string& what) {
        if (why)
            *why = what;
        return false;
    };
    if (!(a.file_header == b.file_header))
        return differ("file header trees differ");
    if (a.streams.size() != b.streams.size())
        return differ("stream counts differ");
    for (const auto& [id, sa] : a.streams) {
        const auto it = b.streams.find(id);
        if (it == b.streams.end())
            return differ("stream " + std::to_string(id) + " missing");
        const Stream& sb = it->second;
        const std::string tag = "stream " + std::to_string(id) + ": ";
        const StreamInfo& ia = sa.info;
        const StreamInfo& ib = sb.info;
        if (ia.stream_id != ib.stream_id || ia.name != ib.name || ia.content_type != ib.content_type
            || ia.channel_count != ib.channel_count || !same_bits(ia.nominal_srate, ib.nominal_srate)
            || ia.channel_format != ib.channel_format)
            return differ(tag + "info fields differ");
        if (!(ia.header_tree == ib.header_tree))
            return differ(tag + "header trees differ");
        if (ia.footer_tree != ib.footer_tree || !same_bits(ia.footer, ib.footer))
            return differ(tag + "footers differ");
        if (sa.blocks.size() != sb.blocks.size())
            return differ(tag + "block counts differ");
        for (std::size_t k = 0; k < sa.blocks.size(); ++k) {
            const SampleBlock& ba = sa.blocks[k];
            const SampleBlock& bb = sb.blocks[k];
            const std::string btag = tag + "block " + std::to_string(k) + ": ";
            if (ba.stream_id != bb.stream_id || ba.rows() != bb.rows())
                return differ(btag + "row counts differ");
            for (std::size_t r = 0; r < ba.rows(); ++r) {
                const auto& ta = ba.timestamps[r];
                const auto& tb = bb.timestamps[r];
                if (ta.has_value() != tb.has_value() || (ta && !same_bits(*ta, *tb)))
                    return differ(btag + "timestamp " + std::to_string(r) + " differs");
            }
            if (ba.values.index() != bb.values.index())
                return differ(btag + "value types differ");
            const bool values_equal = std::visit(
                [&](const auto& va) {
                    using V = std::decay_t<decltype(va)>;
                    return same_bits(va, std::get<V>(bb.values));
                },
                ba.values);
            if (!values_equal)
                return differ(btag + "values differ");
        }
        if (sa.offsets.size() != sb.offsets.size())
            return differ(tag + "clock offset counts differ");
        for (std::size_t k = 0; k < sa.offsets.size(); ++k) {
            const auto& oa = sa.offsets[k];
            const auto& ob = sb.offsets[k];
            if (oa.stream_id != ob.stream_id || !same_bits(oa.collection_time, ob.collection_time)
                || !same_bits(oa.offset, ob.offset))
                return differ(tag + "clock offset " + std::to_string(k) + " differs");
        }
    }
    return true;
}

void write_file(const std::filesystem::path& path, ByteView bytes)
{
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw IoError("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw IoError("cannot replace '" + path.string() + "': " + ec.message());
}

Bytes read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "'");
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw IoError("read from '" + path.string() + "' failed");
    return data;
}

} // namespace xdfkit
