#pragma once

// Shared helpers for the test binaries: fixture access and a random Recording
// generator used by the property tests.

#include "xdfkit/format.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <string>

namespace xdfkit::testing {

inline std::filesystem::path fixture_path(const std::string& name)
{
    return std::filesystem::path(XDFKIT_FIXTURES) / name;
}

inline Bytes fixture_bytes(const std::string& name)
{
    return read_file(fixture_path(name));
}

inline nlohmann::json fixture_json(const std::string& name)
{
    std::ifstream in(fixture_path(name));
    return nlohmann::json::parse(in);
}

/// True if `node` matches the {name, text, children} JSON emitted by the
/// reference decoder.
inline bool matches(const XmlNode& node, const nlohmann::json& expected)
{
    if (node.name != expected.at("name").get<std::string>() || node.text != expected.at("text").get<std::string>())
        return false;
    const auto& kids = expected.at("children");
    if (kids.size() != node.children.size())
        return false;
    for (std::size_t i = 0; i < kids.size(); ++i)
        if (!matches(node.children[i], kids[i]))
            return false;
    return true;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir()
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path()
                / ("xdfkit-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

class RecordingGenerator {
public:
    explicit RecordingGenerator(std::uint64_t seed) : rng_(seed) {}

    std::mt19937_64& rng() { return rng_; }

    int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    double uniform_real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }

    std::string random_label()
    {
        static const std::vector<std::string> pieces{
            "trigger", "artifact", "a,b", "say \"hi\"", "line\nbreak", "ümlaut", "日本", "x", " pad ", "€", "|", ";"};
        std::string out;
        const int n = uniform(1, 3);
        for (int i = 0; i < n; ++i)
            out += pieces[static_cast<std::size_t>(uniform(0, static_cast<int>(pieces.size()) - 1))];
        return out;
    }

    Recording recording()
    {
        Recording rec;
        rec.file_header.add("version", "1.0");
        if (chance(0.5))
            rec.file_header.add("datetime", "2017-02-06T12:00:00");

        const int stream_count = uniform(1, 8);
        std::set<std::uint32_t> ids;
        while (static_cast<int>(ids.size()) < stream_count)
            ids.insert(static_cast<std::uint32_t>(uniform(1, 1000)));

        for (const auto id : ids)
            rec.streams.emplace(id, stream(id));
        const int boundaries = uniform(0, 2);
        for (int i = 0; i < boundaries; ++i)
            rec.boundary_offsets.push_back(0);
        if (chance(0.5))
            refresh_footers(rec);
        return rec;
    }

private:
    Stream stream(std::uint32_t id)
    {
        const auto format = static_cast<ChannelFormat>(uniform(0, 6));
        const bool is_string = format == ChannelFormat::string;
        static const double rates[] = {0.0, 100.0, 250.0, 512.5, 1000.0};
        double srate = rates[uniform(0, 4)];
        if (is_string && chance(0.7))
            srate = 0.0;
        const auto channels = static_cast<std::uint32_t>(is_string ? uniform(1, 2) : uniform(1, 4));

        Stream s;
        s.info = make_stream_info(id, "stream" + std::to_string(id), is_string ? "Markers" : "EEG", channels,
                                  srate, format);
        XmlNode& desc = s.info.header_tree.add("desc");
        XmlNode& chans = desc.add("channels");
        for (std::uint32_t c = 0; c < channels; ++c) {
            XmlNode& ch = chans.add("channel");
            ch.add("@attr:index", std::to_string(c));
            ch.add("label", "C" + std::to_string(c));
            ch.add("unit", "µV & <co>");
        }

        const int blocks = uniform(0, 3);
        double t = uniform_real(-100.0, 1000.0);
        bool first = true;
        for (int b = 0; b < blocks; ++b) {
            SampleBlock block;
            block.stream_id = id;
            block.values = empty_values(format);
            const int rows = uniform(0, 20);
            for (int r = 0; r < rows; ++r) {
                t += srate > 0 ? 1.0 / srate : uniform_real(0.0, 2.0);
                const bool stamp = srate == 0.0 || first || chance(0.3);
                first = false;
                block.timestamps.push_back(stamp ? std::optional<double>(t) : std::nullopt);
                for (std::uint32_t c = 0; c < channels; ++c)
                    push_value(block.values);
            }
            s.blocks.push_back(std::move(block));
        }

        const int offsets = uniform(0, 3);
        double ct = uniform_real(0.0, 10.0);
        for (int k = 0; k < offsets; ++k) {
            ct += uniform_real(0.1, 5.0);
            s.offsets.push_back({id, ct, uniform_real(-1.0, 1.0)});
        }
        return s;
    }

    template <typename T>
    T integer()
    {
        return static_cast<T>(std::uniform_int_distribution<long long>(std::numeric_limits<T>::min(),
                                                                       std::numeric_limits<T>::max())(rng_));
    }

    template <typename T>
    T real()
    {
        switch (uniform(0, 20)) {
        case 0: return std::numeric_limits<T>::quiet_NaN();
        case 1: return std::numeric_limits<T>::infinity();
        case 2: return T(-0.0);
        case 3: return std::numeric_limits<T>::denorm_min();
        default: return static_cast<T>(std::normal_distribution<double>(0.0, 100.0)(rng_));
        }
    }

    void push_value(SampleValues& values)
    {
        std::visit(
            [&](auto& column) {
                using T = typename std::decay_t<decltype(column)>::value_type;
                if constexpr (std::is_same_v<T, std::string>)
                    column.push_back(chance(0.1) ? std::string() : random_label());
                else if constexpr (std::is_floating_point_v<T>)
                    column.push_back(real<T>());
                else
                    column.push_back(integer<T>());
            },
            values);
    }

    std::mt19937_64 rng_;
};

/// Byte-level mutations of seed files: bit flips, overwrites with boundary
/// values, inserted and deleted runs, truncation, splicing, and huge varlen
/// lengths written over arbitrary offsets.
class Mutator {
public:
    Mutator(std::vector<Bytes> seeds, std::uint64_t seed) : seeds_(std::move(seeds)), rng_(seed) {}

    Bytes next()
    {
        Bytes out = seeds_[pick(seeds_.size())];
        const int rounds = 1 + static_cast<int>(pick(4));
        for (int i = 0; i < rounds; ++i)
            mutate(out);
        return out;
    }

private:
    std::size_t pick(std::size_t n) { return n == 0 ? 0 : std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

    void mutate(Bytes& b)
    {
        static const std::uint8_t specials[] = {0x00, 0x01, 0x04, 0x08, 0x7F, 0x80, 0xFE, 0xFF, '<', '>', '"'};
        switch (pick(8)) {
        case 0:
            if (!b.empty())
                b[pick(b.size())] ^= static_cast<std::uint8_t>(1u << pick(8));
            break;
        case 1:
            if (!b.empty())
                b[pick(b.size())] = specials[pick(std::size(specials))];
            break;
        case 2: {
            const std::size_t at = pick(b.size() + 1);
            Bytes run(1 + pick(16));
            for (auto& v : run)
                v = static_cast<std::uint8_t>(pick(256));
            b.insert(b.begin() + static_cast<std::ptrdiff_t>(at), run.begin(), run.end());
            break;
        }
        case 3:
            if (!b.empty()) {
                const std::size_t at = pick(b.size());
                const std::size_t n = std::min(b.size() - at, 1 + pick(32));
                b.erase(b.begin() + static_cast<std::ptrdiff_t>(at), b.begin() + static_cast<std::ptrdiff_t>(at + n));
            }
            break;
        case 4:
            b.resize(pick(b.size() + 1));
            break;
        case 5: {
            const Bytes& other = seeds_[pick(seeds_.size())];
            const std::size_t from = pick(other.size() + 1);
            b.resize(pick(b.size() + 1));
            b.insert(b.end(), other.begin() + static_cast<std::ptrdiff_t>(from), other.end());
            break;
        }
        case 6:
            if (b.size() > 9) {
                const std::size_t at = pick(b.size() - 9);
                b[at] = 8;
                const std::uint64_t huge = std::uint64_t{1} << (20 + pick(44));
                for (int k = 0; k < 8; ++k)
                    b[at + 1 + static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(huge >> (8 * k));
            }
            break;
        default:
            if (b.size() > 4) {
                const std::size_t at = pick(b.size() - 4);
                const std::uint32_t v = static_cast<std::uint32_t>(rng_());
                for (int k = 0; k < 4; ++k)
                    b[at + static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(v >> (8 * k));
            }
            break;
        }
    }

    std::vector<Bytes> seeds_;
    std::mt19937_64 rng_;
};

} // namespace xdfkit::testing
