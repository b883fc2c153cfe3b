#include "xdfkit/format.hpp"

#include "xdfkit/errors.hpp"
#include "xdfkit/numbers.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <set>

namespace xdfkit {

namespace {

// Largest single read request; payload buffers grow in steps of this size so a
// bogus chunk length on a non-seekable stream cannot force a huge allocation.
constexpr std::size_t read_step = std::size_t{1} << 20;

class Source {
public:
    virtual ~Source() = default;
    /// Reads up to n bytes, returns the count actually read.
    virtual std::size_t read(std::uint8_t* dst, std::size_t n) = 0;
    virtual std::optional<std::uint64_t> remaining() const = 0;
    virtual bool seek(std::uint64_t position) = 0;
    virtual std::uint64_t position() const = 0;
};

class MemorySource final : public Source {
public:
    explicit MemorySource(ByteView data) : data_(data) {}

    std::size_t read(std::uint8_t* dst, std::size_t n) override
    {
        n = std::min<std::size_t>(n, data_.size() - pos_);
        if (n)
            std::memcpy(dst, data_.data() + pos_, n);
        pos_ += n;
        return n;
    }
    std::optional<std::uint64_t> remaining() const override { return data_.size() - pos_; }
    bool seek(std::uint64_t position) override
    {
        if (position > data_.size())
            return false;
        pos_ = static_cast<std::size_t>(position);
        return true;
    }
    std::uint64_t position() const override { return pos_; }

private:
    ByteView data_;
    std::size_t pos_ = 0;
};

class StreamSource final : public Source {
public:
    explicit StreamSource(std::istream& in) : in_(in)
    {
        const auto start = in_.tellg();
        if (start != std::istream::pos_type(-1)) {
            in_.seekg(0, std::ios::end);
            const auto end = in_.tellg();
            in_.seekg(start);
            if (end != std::istream::pos_type(-1) && in_) {
                origin_ = static_cast<std::uint64_t>(start);
                size_ = static_cast<std::uint64_t>(end - start);
            }
        }
        in_.clear();
    }

    std::size_t read(std::uint8_t* dst, std::size_t n) override
    {
        in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        const auto got = static_cast<std::size_t>(in_.gcount());
        pos_ += got;
        return got;
    }
    std::optional<std::uint64_t> remaining() const override
    {
        if (!size_)
            return std::nullopt;
        return *size_ - std::min(*size_, pos_);
    }
    bool seek(std::uint64_t position) override
    {
        if (!size_ || position > *size_)
            return false;
        in_.clear();
        in_.seekg(static_cast<std::streamoff>(origin_ + position));
        if (!in_)
            return false;
        pos_ = position;
        return true;
    }
    std::uint64_t position() const override { return pos_; }

private:
    std::istream& in_;
    std::uint64_t origin_ = 0;
    std::optional<std::uint64_t> size_;
    std::uint64_t pos_ = 0;
};

template <typename T>
T load_le(const std::uint8_t* p)
{
    T value;
    std::memcpy(&value, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        auto* b = reinterpret_cast<std::uint8_t*>(&value);
        std::reverse(b, b + sizeof(T));
    }
    return value;
}

template <typename T>
void append_le(std::vector<T>& out, const std::uint8_t* p, std::size_t count)
{
    const auto old = out.size();
    out.resize(old + count);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data() + old, p, count * sizeof(T));
    } else {
        for (std::size_t i = 0; i < count; ++i)
            out[old + i] = load_le<T>(p + i * sizeof(T));
    }
}

// Replaces ill-formed sequences with U+FFFD, one replacement per bad byte.
std::string sanitize_utf8(std::string_view s, bool& changed)
{
    std::string out;
    out.reserve(s.size());
    const auto* p = reinterpret_cast<const unsigned char*>(s.data());
    const std::size_t n = s.size();
    std::size_t i = 0;
    while (i < n) {
        const unsigned char c = p[i];
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) { len = 1; cp = c; }
        else if ((c & 0xE0) == 0xC0) { len = 2; cp = c & 0x1F; }
        else if ((c & 0xF0) == 0xE0) { len = 3; cp = c & 0x0F; }
        else if ((c & 0xF8) == 0xF0) { len = 4; cp = c & 0x07; }
        bool ok = len != 0 && i + len <= n;
        for (std::size_t k = 1; ok && k < len; ++k) {
            if ((p[i + k] & 0xC0) != 0x80)
                ok = false;
            else
                cp = (cp << 6) | (p[i + k] & 0x3F);
        }
        if (ok) {
            static constexpr std::uint32_t min_for_len[5] = {0, 0, 0x80, 0x800, 0x10000};
            ok = cp >= min_for_len[len] && cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF);
        }
        if (ok) {
            out.append(s.substr(i, len));
            i += len;
        } else {
            out += "\xEF\xBF\xBD";
            changed = true;
            ++i;
        }
    }
    return out;
}

SampleBlock decode_samples(ByteView payload, const StreamInfo& info, std::vector<std::string>* warnings,
                           std::size_t& consumed)
{
    SampleBlock block;
    block.stream_id = info.stream_id;
    block.values = empty_values(info.channel_format);

    const Varlen count = read_varlen(payload);
    std::size_t pos = count.consumed;
    const std::uint64_t channels = info.channel_count;
    const std::uint64_t width = value_width(info.channel_format);
    // Every row needs its flag byte plus at least the minimal encoding of each value.
    const std::uint64_t min_row = 1 + channels * (width ? width : 2);
    if (count.value > (payload.size() - pos) / min_row)
        throw TruncatedError("samples: " + std::to_string(count.value) + " rows declared for stream "
                             + std::to_string(info.stream_id) + " but only "
                             + std::to_string(payload.size() - pos) + " payload bytes");
    const auto rows = static_cast<std::size_t>(count.value);
    block.timestamps.reserve(rows);

    auto need = [&](std::size_t bytes) {
        if (payload.size() - pos < bytes)
            throw TruncatedError("samples: payload ends inside row " + std::to_string(block.rows()));
    };

    std::visit(
        [&](auto& column) {
            using T = typename std::decay_t<decltype(column)>::value_type;
            column.reserve(rows * static_cast<std::size_t>(channels));
            bool replaced = false;
            for (std::size_t r = 0; r < rows; ++r) {
                need(1);
                const std::uint8_t flag = payload[pos++];
                if (flag == 8) {
                    need(8);
                    const double stamp = load_le<double>(payload.data() + pos);
                    pos += 8;
                    if (!std::isfinite(stamp))
                        throw FormatError("samples: non-finite timestamp in row " + std::to_string(r));
                    block.timestamps.emplace_back(stamp);
                } else if (flag == 0) {
                    block.timestamps.emplace_back(std::nullopt);
                } else {
                    throw FlagError("samples: invalid timestamp flag " + std::to_string(flag) + " in row "
                                    + std::to_string(r));
                }
                if constexpr (std::is_same_v<T, std::string>) {
                    for (std::uint64_t c = 0; c < channels; ++c) {
                        const Varlen len = read_varlen(payload.subspan(pos));
                        pos += len.consumed;
                        if (len.value > payload.size() - pos)
                            throw TruncatedError("samples: string value exceeds payload");
                        const std::string_view raw(reinterpret_cast<const char*>(payload.data() + pos),
                                                   static_cast<std::size_t>(len.value));
                        column.push_back(sanitize_utf8(raw, replaced));
                        pos += static_cast<std::size_t>(len.value);
                    }
                } else {
                    const auto bytes = static_cast<std::size_t>(channels * sizeof(T));
                    need(bytes);
                    append_le(column, payload.data() + pos, static_cast<std::size_t>(channels));
                    pos += bytes;
                }
            }
            if (replaced && warnings)
                warnings->push_back("stream " + std::to_string(info.stream_id)
                                    + ": invalid UTF-8 in string samples replaced with U+FFFD");
        },
        block.values);
    consumed = pos;
    return block;
}

class ChunkParser {
public:
    ChunkParser(Source& source, RecordingSink& sink, std::vector<std::string>& warnings, const ParseOptions& options)
        : source_(source), sink_(sink), warnings_(warnings), options_(options)
    {
    }

    ParseStats run()
    {
        std::array<std::uint8_t, 4> magic{};
        if (source_.read(magic.data(), magic.size()) != magic.size()
            || std::memcmp(magic.data(), xdf_magic.data(), magic.size()) != 0)
            throw MagicError("not an XDF file: missing \"XDF:\" magic");

        for (;;) {
            const std::uint64_t chunk_start = source_.position();
            std::uint8_t width = 0;
            if (source_.read(&width, 1) == 0)
                break;
            try {
                read_chunk(chunk_start, width);
            } catch (const MagicError&) {
                throw;
            } catch (const Error& e) {
                if (!options_.recover)
                    throw;
                warnings_.push_back("chunk at byte " + std::to_string(chunk_start) + ": " + e.what()
                                    + "; scanning for next boundary");
                if (!resync(chunk_start + 1))
                    break;
            }
        }
        stats_.bytes = source_.position();
        return stats_;
    }

private:
    void warn(std::uint64_t at, const std::string& what)
    {
        warnings_.push_back("chunk at byte " + std::to_string(at) + ": " + what);
    }

    void read_exact(std::uint8_t* dst, std::size_t n)
    {
        if (source_.read(dst, n) != n)
            throw TruncatedError("unexpected end of file");
    }

    void read_payload(std::uint64_t length)
    {
        if (const auto left = source_.remaining(); left && length > *left)
            throw TruncatedError("chunk length " + std::to_string(length) + " exceeds remaining "
                                 + std::to_string(*left) + " bytes");
        buffer_.clear();
        std::uint64_t done = 0;
        while (done < length) {
            const auto step = static_cast<std::size_t>(std::min<std::uint64_t>(length - done, read_step));
            buffer_.resize(static_cast<std::size_t>(done) + step);
            const auto got = source_.read(buffer_.data() + done, step);
            done += got;
            if (got != step)
                throw TruncatedError("chunk declares " + std::to_string(length) + " payload bytes, file has "
                                     + std::to_string(done));
        }
        buffer_.resize(static_cast<std::size_t>(length));
    }

    void read_chunk(std::uint64_t chunk_start, std::uint8_t width)
    {
        if (width != 1 && width != 4 && width != 8)
            throw WidthError("invalid chunk length width " + std::to_string(width));
        std::array<std::uint8_t, 9> head{};
        head[0] = width;
        read_exact(head.data() + 1, width);
        const std::uint64_t length = read_varlen(ByteView(head.data(), 1u + width)).value;
        if (length < 2)
            throw FormatError("chunk length " + std::to_string(length) + " is shorter than the tag");
        std::array<std::uint8_t, 2> tag_bytes{};
        read_exact(tag_bytes.data(), 2);
        const auto tag = load_le<std::uint16_t>(tag_bytes.data());
        read_payload(length - 2);
        ++stats_.chunks;
        stats_.largest_chunk = std::max(stats_.largest_chunk, length);

        if (!is_known_chunk_tag(tag)) {
            ++stats_.skipped_chunks;
            warn(chunk_start, "unknown chunk tag " + std::to_string(tag) + " skipped");
            return;
        }
        try {
            handle(static_cast<ChunkTag>(tag), chunk_start);
        } catch (const Error& e) {
            // The chunk was framed correctly, so recovery can resume right after it.
            if (!options_.recover)
                throw;
            ++stats_.skipped_chunks;
            warn(chunk_start, std::string(e.what()) + "; chunk skipped");
        }
    }

    std::uint32_t read_stream_id(ChunkTag tag) const
    {
        if (buffer_.size() < 4)
            throw TruncatedError("chunk tag " + std::to_string(static_cast<int>(tag)) + " too short for stream id");
        return load_le<std::uint32_t>(buffer_.data());
    }

    std::string_view text_after(std::size_t offset) const
    {
        return {reinterpret_cast<const char*>(buffer_.data()) + offset, buffer_.size() - offset};
    }

    void handle(ChunkTag tag, std::uint64_t chunk_start)
    {
        switch (tag) {
        case ChunkTag::file_header: {
            if (seen_file_header_)
                warn(chunk_start, "duplicate FileHeader");
            seen_file_header_ = true;
            sink_.on_file_header(parse_xml(text_after(0)));
            break;
        }
        case ChunkTag::stream_header: {
            const auto id = read_stream_id(tag);
            XmlNode tree = parse_xml(text_after(4));
            if (id == 0) {
                warn(chunk_start, "stream id 0 is reserved; stream ignored");
                break;
            }
            if (infos_.contains(id)) {
                warn(chunk_start, "duplicate StreamHeader for stream " + std::to_string(id) + " ignored");
                break;
            }
            auto [it, inserted] = infos_.emplace(id, stream_info_from_header(id, std::move(tree)));
            sink_.on_stream_header(it->second);
            break;
        }
        case ChunkTag::samples: {
            const auto id = read_stream_id(tag);
            const auto it = infos_.find(id);
            if (it == infos_.end()) {
                ++stats_.skipped_chunks;
                warn(chunk_start, "Samples for undeclared stream " + std::to_string(id) + " skipped");
                break;
            }
            std::size_t consumed = 0;
            SampleBlock block = decode_samples(ByteView(buffer_).subspan(4), it->second, &warnings_, consumed);
            if (consumed + 4 != buffer_.size())
                warn(chunk_start, std::to_string(buffer_.size() - 4 - consumed) + " trailing bytes after samples");
            sink_.on_samples(std::move(block));
            break;
        }
        case ChunkTag::clock_offset: {
            const auto id = read_stream_id(tag);
            if (buffer_.size() != 20)
                throw FormatError("ClockOffset payload must be 20 bytes, got " + std::to_string(buffer_.size()));
            if (!infos_.contains(id)) {
                ++stats_.skipped_chunks;
                warn(chunk_start, "ClockOffset for undeclared stream " + std::to_string(id) + " skipped");
                break;
            }
            ClockOffsetRecord record{id, load_le<double>(buffer_.data() + 4), load_le<double>(buffer_.data() + 12)};
            if (!std::isfinite(record.collection_time) || !std::isfinite(record.offset)) {
                ++stats_.skipped_chunks;
                warn(chunk_start, "non-finite clock offset skipped");
                break;
            }
            sink_.on_clock_offset(record);
            break;
        }
        case ChunkTag::boundary: {
            if (buffer_.size() != boundary_signature.size()
                || !std::equal(buffer_.begin(), buffer_.end(), boundary_signature.begin()))
                warn(chunk_start, "Boundary chunk with unexpected signature");
            sink_.on_boundary(chunk_start);
            break;
        }
        case ChunkTag::stream_footer: {
            const auto id = read_stream_id(tag);
            XmlNode tree = parse_xml(text_after(4));
            if (!infos_.contains(id)) {
                ++stats_.skipped_chunks;
                warn(chunk_start, "StreamFooter for undeclared stream " + std::to_string(id) + " skipped");
                break;
            }
            sink_.on_stream_footer(id, std::move(tree));
            break;
        }
        }
    }

    // Scans for the next Boundary signature at or after `from` and positions the
    // source just past it.
    bool resync(std::uint64_t from)
    {
        if (!source_.seek(from)) {
            warn(from, "source is not seekable; stopping");
            return false;
        }
        constexpr std::size_t sig = boundary_signature.size();
        std::vector<std::uint8_t> window;
        std::uint64_t window_start = from;
        std::vector<std::uint8_t> block(64 * 1024);
        for (;;) {
            const auto got = source_.read(block.data(), block.size());
            if (got == 0) {
                warn(from, "no further boundary found");
                return false;
            }
            window.insert(window.end(), block.begin(), block.begin() + static_cast<std::ptrdiff_t>(got));
            const auto hit = std::search(window.begin(), window.end(), boundary_signature.begin(),
                                         boundary_signature.end());
            if (hit != window.end()) {
                const std::uint64_t at = window_start + static_cast<std::uint64_t>(hit - window.begin());
                source_.seek(at + sig);
                ++stats_.recovered;
                // A well-formed Boundary chunk is [01 12][05 00][signature].
                sink_.on_boundary(at >= 4 ? at - 4 : 0);
                return true;
            }
            if (window.size() >= sig) {
                const auto keep = sig - 1;
                window_start += window.size() - keep;
                window.erase(window.begin(), window.end() - static_cast<std::ptrdiff_t>(keep));
            }
        }
    }

    Source& source_;
    RecordingSink& sink_;
    std::vector<std::string>& warnings_;
    const ParseOptions& options_;
    ParseStats stats_;
    Bytes buffer_;
    std::map<std::uint32_t, StreamInfo> infos_;
    bool seen_file_header_ = false;
};

class RecordingBuilder final : public RecordingSink {
public:
    explicit RecordingBuilder(std::vector<std::string>& warnings) : warnings_(warnings) {}

    void on_file_header(XmlNode tree) override { rec_.file_header = std::move(tree); }
    void on_stream_header(const StreamInfo& info) override { rec_.streams[info.stream_id].info = info; }
    void on_samples(SampleBlock&& block) override { rec_.streams[block.stream_id].blocks.push_back(std::move(block)); }
    void on_clock_offset(const ClockOffsetRecord& record) override
    {
        rec_.streams[record.stream_id].offsets.push_back(record);
    }
    void on_boundary(std::uint64_t offset) override { rec_.boundary_offsets.push_back(offset); }
    void on_stream_footer(std::uint32_t stream_id, XmlNode tree) override
    {
        StreamInfo& info = rec_.streams[stream_id].info;
        const auto first = parse_double(tree.child_text("first_timestamp"));
        const auto last = parse_double(tree.child_text("last_timestamp"));
        const auto count = parse_unsigned(tree.child_text("sample_count"));
        if (first && last && count)
            info.footer = StreamFooter{*first, *last, *count};
        else
            warnings_.push_back("stream " + std::to_string(stream_id) + ": footer lacks first_timestamp, "
                                "last_timestamp or sample_count");
        info.footer_tree = std::move(tree);
    }

    Recording finish(std::uint64_t length)
    {
        rec_.source_length = length;
        for (auto& [id, stream] : rec_.streams) {
            std::stable_sort(stream.offsets.begin(), stream.offsets.end(),
                             [](const auto& a, const auto& b) { return a.collection_time < b.collection_time; });
            if (const auto& footer = stream.info.footer) {
                if (footer->first_timestamp > footer->last_timestamp)
                    warnings_.push_back("stream " + std::to_string(id) + ": footer first_timestamp after last_timestamp");
                if (footer->sample_count != stream.sample_count())
                    warnings_.push_back("stream " + std::to_string(id) + ": footer sample_count "
                                        + std::to_string(footer->sample_count) + " but "
                                        + std::to_string(stream.sample_count()) + " samples decoded");
            }
        }
        return std::move(rec_);
    }

private:
    std::vector<std::string>& warnings_;
    Recording rec_;
};

LoadResult load_from(Source& source, const ParseOptions& options)
{
    LoadResult result;
    RecordingBuilder builder(result.warnings);
    result.stats = ChunkParser(source, builder, result.warnings, options).run();
    result.recording = builder.finish(result.stats.bytes);
    return result;
}

} // namespace

SampleBlock parse_samples_payload(ByteView payload, const StreamInfo& info, std::vector<std::string>* warnings)
{
    std::size_t consumed = 0;
    return decode_samples(payload, info, warnings, consumed);
}

ParseStats parse_stream(std::istream& source, RecordingSink& sink, std::vector<std::string>& warnings,
                        const ParseOptions& options)
{
    StreamSource src(source);
    return ChunkParser(src, sink, warnings, options).run();
}

ParseStats parse_stream(ByteView source, RecordingSink& sink, std::vector<std::string>& warnings,
                        const ParseOptions& options)
{
    MemorySource src(source);
    return ChunkParser(src, sink, warnings, options).run();
}

LoadResult parse_recording(std::istream& source, const ParseOptions& options)
{
    StreamSource src(source);
    return load_from(src, options);
}

LoadResult parse_recording(ByteView source, const ParseOptions& options)
{
    MemorySource src(source);
    return load_from(src, options);
}

LoadResult load_recording(const std::filesystem::path& path, const ParseOptions& options)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "'");
    return parse_recording(in, options);
}

} // namespace xdfkit
