#include "xdfkit/service.hpp"

#include "xdfkit/cli.hpp"
#include "xdfkit/errors.hpp"
#include "xdfkit/numbers.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

namespace xdfkit {

using nlohmann::json;

namespace {

constexpr std::size_t max_buckets = 100000;

std::string dump(const json& value)
{
    return value.dump(-1, ' ', false, json::error_handler_t::replace);
}

HttpResponse reply(int status, const json& body)
{
    return {status, dump(body)};
}

HttpResponse error(int status, const std::string& message)
{
    return reply(status, json{{"error", message}});
}

json number_or_null(double v)
{
    return std::isfinite(v) ? json(v) : json(nullptr);
}

json tree_json(const XmlNode& node)
{
    json children = json::array();
    for (const XmlNode& child : node.children)
        children.push_back(tree_json(child));
    return {{"name", node.name}, {"text", node.text}, {"children", std::move(children)}};
}

json event_json(const Event& e)
{
    return {{"id", e.id},
            {"onset", e.onset},
            {"duration", e.duration},
            {"label", e.label},
            {"stream_id", e.stream_id ? json(*e.stream_id) : json(nullptr)},
            {"origin", e.origin == EventOrigin::user ? "user" : "decoded"}};
}

std::vector<std::string> split_path(const std::string& path)
{
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= path.size()) {
        const std::size_t slash = path.find('/', start);
        const std::size_t end = slash == std::string::npos ? path.size() : slash;
        if (end > start)
            parts.push_back(path.substr(start, end - start));
        if (slash == std::string::npos)
            break;
        start = slash + 1;
    }
    return parts;
}

std::optional<std::string> query_value(const std::multimap<std::string, std::string>& query, const std::string& key)
{
    const auto it = query.find(key);
    if (it == query.end())
        return std::nullopt;
    return it->second;
}

std::vector<std::string> channel_labels(const StreamInfo& info)
{
    std::vector<std::string> labels;
    if (const XmlNode* desc = info.header_tree.find("desc"))
        if (const XmlNode* channels = desc->find("channels"))
            for (const XmlNode& ch : channels->children)
                if (ch.name == "channel")
                    labels.push_back(ch.child_text("label", ""));
    labels.resize(info.channel_count);
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i].empty())
            labels[i] = "ch" + std::to_string(i);
    return labels;
}

} // namespace

Service::Service(Recording recording, std::filesystem::path source)
    : recording_(std::move(recording)), source_(std::move(source))
{
    const auto models = build_sync_models(recording_);
    double t_start = std::numeric_limits<double>::infinity();
    double t_end = -std::numeric_limits<double>::infinity();
    for (const auto& [id, stream] : recording_.streams) {
        if (stream.sample_count() == 0)
            continue;
        try {
            StreamView view;
            view.times = synced_timestamps(stream, models.at(id)).times;
            t_start = std::min(t_start, view.times.front());
            t_end = std::max(t_end, view.times.back());
            if (stream.info.is_numeric())
                for (std::size_t c = 0; c < stream.info.channel_count; ++c) {
                    Channel ch;
                    ch.values = channel_values(stream, c);
                    ch.scale = auto_scale(ch.values);
                    view.channels.push_back(std::move(ch));
                }
            views_.emplace(id, std::move(view));
        } catch (const Error&) {
            // Listed with its problem in the summary; no tiles.
        }
    }
    events_ = derive_events(recording_, models);

    json streams = json::array();
    for (const StreamSummary& row : summarize(recording_)) {
        const StreamInfo& info = row.info;
        json s{{"id", info.stream_id},
               {"name", info.name},
               {"type", info.content_type},
               {"channel_format", to_string(info.channel_format)},
               {"channel_count", info.channel_count},
               {"channels", channel_labels(info)},
               {"nominal_srate", info.nominal_srate},
               {"sample_count", row.sample_count},
               {"is_marker", info.is_marker()}};
        if (row.rate) {
            s["rate"] = {{"effective_srate", number_or_null(row.rate->effective_srate)},
                         {"relative_deviation", row.rate->relative_deviation},
                         {"deviates", row.rate->deviates},
                         {"note", row.rate->note ? json(*row.rate->note) : json(nullptr)}};
        } else {
            s["rate"] = nullptr;
        }
        s["problem"] = row.problem ? json(*row.problem) : json(nullptr);
        streams.push_back(std::move(s));
    }
    const bool any = t_start <= t_end;
    summary_json_ = dump(json{{"streams", std::move(streams)},
                              {"t_start", any ? json(t_start) : json(nullptr)},
                              {"t_end", any ? json(t_end) : json(nullptr)},
                              {"duration", any ? t_end - t_start : 0.0},
                              {"file_header", tree_json(recording_.file_header)}});
}

std::unique_ptr<Service> Service::load(const std::filesystem::path& path)
{
    return std::make_unique<Service>(load_recording(path).recording, path);
}

EventSet Service::events() const
{
    std::shared_lock lock(mutex_);
    return events_;
}

bool Service::dirty() const
{
    std::shared_lock lock(mutex_);
    return dirty_;
}

HttpResponse Service::handle(const std::string& method, const std::string& path,
                             const std::multimap<std::string, std::string>& query, const std::string& body)
{
    const auto parts = split_path(path);
    if (parts.size() < 2 || parts[0] != "api")
        return error(404, "no such endpoint: " + path);
    const auto wrong_method = [&] { return error(405, method + " not allowed on " + path); };

    if (parts.size() == 2 && parts[1] == "recording")
        return method == "GET" ? recording_json() : wrong_method();
    if (parts.size() == 2 && parts[1] == "save")
        return method == "POST" ? save(body) : wrong_method();
    if (parts[1] == "events") {
        if (parts.size() == 2) {
            if (method == "GET")
                return list_events();
            if (method == "POST")
                return add_event(body);
            return wrong_method();
        }
        if (parts.size() == 3)
            return method == "DELETE" ? delete_event(parts[2]) : wrong_method();
    }
    if (parts[1] == "streams" && parts.size() == 4) {
        const auto id = parse_unsigned(parts[2]);
        if (!id || *id > std::numeric_limits<std::uint32_t>::max() || !recording_.streams.count(*id))
            return error(404, "unknown stream " + parts[2]);
        if (method != "GET")
            return wrong_method();
        if (parts[3] == "tiles")
            return tiles(static_cast<std::uint32_t>(*id), query);
        if (parts[3] == "meta")
            return meta(static_cast<std::uint32_t>(*id));
    }
    return error(404, "no such endpoint: " + path);
}

HttpResponse Service::recording_json() const
{
    return {200, summary_json_};
}

HttpResponse Service::tiles(std::uint32_t id, const std::multimap<std::string, std::string>& query) const
{
    const Stream& stream = recording_.streams.at(id);
    if (!stream.info.is_numeric())
        return error(400, "stream " + std::to_string(id) + " is not numeric");

    const auto channel = parse_unsigned(query_value(query, "channel").value_or("0"));
    const auto t0 = parse_double(query_value(query, "t0").value_or(""));
    const auto t1 = parse_double(query_value(query, "t1").value_or(""));
    const auto buckets = parse_unsigned(query_value(query, "buckets").value_or("512"));
    if (!channel || !t0 || !t1 || !buckets)
        return error(400, "tiles needs numeric channel, t0, t1 and buckets");
    if (*channel >= stream.info.channel_count)
        return error(400, "channel " + std::to_string(*channel) + " out of range");
    if (*buckets > max_buckets)
        return error(400, "at most " + std::to_string(max_buckets) + " buckets");
    if (!std::isfinite(*t0) || !std::isfinite(*t1))
        return error(400, "t0 and t1 must be finite");

    static const StreamView empty_view;
    const auto found = views_.find(id);
    const StreamView& view = found == views_.end() ? empty_view : found->second;
    const std::vector<double> no_values;
    const std::vector<double>& values = view.channels.empty() ? no_values : view.channels[*channel].values;
    const Scale scale = view.channels.empty() ? Scale{} : view.channels[*channel].scale;

    std::vector<EnvelopeTile> result;
    try {
        result = envelope_tiles(values, view.channels.empty() ? no_values : view.times, *t0, *t1, *buckets);
    } catch (const WindowError& e) {
        return error(400, e.what());
    }
    json tiles = json::array();
    for (const EnvelopeTile& t : result)
        tiles.push_back({{"bucket_index", t.bucket_index},
                         {"t_start", t.t_start},
                         {"t_end", t.t_end},
                         {"sample_count", t.sample_count},
                         {"min", number_or_null(t.min_value)},
                         {"max", number_or_null(t.max_value)},
                         {"scaled_min", number_or_null(scale.apply(t.min_value))},
                         {"scaled_max", number_or_null(scale.apply(t.max_value))}});
    return reply(200, json{{"stream_id", id},
                           {"channel", *channel},
                           {"scale", {{"offset", scale.offset}, {"gain", scale.gain}}},
                           {"tiles", std::move(tiles)}});
}

HttpResponse Service::meta(std::uint32_t id) const
{
    const StreamInfo& info = recording_.streams.at(id).info;
    return reply(200, tree_json(info.header_tree));
}

HttpResponse Service::list_events() const
{
    std::shared_lock lock(mutex_);
    json list = json::array();
    for (const Event& e : events_.events())
        list.push_back(event_json(e));
    return reply(200, json{{"events", std::move(list)}, {"next_id", events_.next_id()}, {"dirty", dirty_}});
}

HttpResponse Service::add_event(const std::string& body)
{
    const json request = json::parse(body, nullptr, false);
    if (request.is_discarded() || !request.is_object())
        return error(400, "body must be a JSON object");
    const auto onset = request.find("onset");
    const auto duration = request.find("duration");
    const auto label = request.find("label");
    if (onset == request.end() || !onset->is_number() || label == request.end() || !label->is_string()
        || (duration != request.end() && !duration->is_number()))
        return error(400, "expected {onset: number, duration?: number, label: string}");

    std::unique_lock lock(mutex_);
    try {
        const std::int64_t id = events_.add(onset->get<double>(),
                                            duration == request.end() ? 0.0 : duration->get<double>(),
                                            label->get<std::string>());
        dirty_ = true;
        return reply(201, event_json(*events_.find(id)));
    } catch (const ValidationError& e) {
        return error(422, e.what());
    }
}

HttpResponse Service::delete_event(const std::string& id_text)
{
    const auto id = parse_unsigned(id_text);
    if (!id || *id > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
        return error(400, "event id must be a non-negative integer");
    std::unique_lock lock(mutex_);
    const Event* event = events_.find(static_cast<std::int64_t>(*id));
    if (!event)
        return error(404, "unknown event " + id_text);
    if (event->origin != EventOrigin::user)
        return error(403, "decoded events cannot be deleted");
    events_.remove(static_cast<std::int64_t>(*id));
    if (events_.only(EventOrigin::user).empty())
        dirty_ = false;
    return {204, {}};
}

HttpResponse Service::save(const std::string& body)
{
    const json request = json::parse(body, nullptr, false);
    if (request.is_discarded() || !request.is_object())
        return error(400, "body must be a JSON object");
    const auto mode = request.find("mode");
    const auto path = request.find("path");
    if (mode == request.end() || !mode->is_string() || (path != request.end() && !path->is_string()))
        return error(400, "expected {mode: \"append\"|\"csv\", path?: string}");
    const std::filesystem::path target = path == request.end() ? source_ : std::filesystem::path(path->get<std::string>());

    std::unique_lock lock(mutex_);
    try {
        Bytes bytes;
        if (*mode == "append") {
            if (source_.empty())
                return error(400, "no source file to append to");
            if (target.empty())
                return error(400, "path required");
            bytes = append_to_file(source_, events_);
        } else if (*mode == "csv") {
            if (path == request.end())
                return error(400, "csv mode needs a path");
            const std::string text = export_csv(events_);
            bytes.assign(text.begin(), text.end());
        } else {
            return error(400, "mode must be \"append\" or \"csv\"");
        }
        write_file(target, bytes);
        dirty_ = false;
        return reply(200, json{{"mode", *mode},
                               {"path", target.string()},
                               {"bytes", bytes.size()},
                               {"user_events", events_.only(EventOrigin::user).size()}});
    } catch (const Error& e) {
        return error(500, e.what());
    }
}

// ---------------------------------------------------------------------------

struct Server::Impl {
    explicit Impl(Service& s) : service(s) {}

    Service& service;
    httplib::Server http;
    std::thread thread;
};

Server::Server(Service& service) : impl_(std::make_unique<Impl>(service))
{
    const auto forward = [this](const httplib::Request& req, httplib::Response& res) {
        std::multimap<std::string, std::string> query(req.params.begin(), req.params.end());
        const HttpResponse r = impl_->service.handle(req.method, req.path, query, req.body);
        res.status = r.status;
        if (r.status != 204)
            res.set_content(r.body, "application/json");
    };
    impl_->http.Get(".*", forward);
    impl_->http.Post(".*", forward);
    impl_->http.Delete(".*", forward);
    impl_->http.Put(".*", forward);
    impl_->http.Patch(".*", forward);
    impl_->http.set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
}

Server::~Server()
{
    stop();
    wait();
}

unsigned Server::start(const std::string& host, unsigned port)
{
    int bound = 0;
    if (port == 0)
        bound = impl_->http.bind_to_any_port(host);
    else
        bound = impl_->http.bind_to_port(host, static_cast<int>(port)) ? static_cast<int>(port) : -1;
    if (bound <= 0)
        throw IoError("cannot listen on " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
    impl_->http.wait_until_ready();
    return static_cast<unsigned>(bound);
}

void Server::wait()
{
    if (impl_->thread.joinable())
        impl_->thread.join();
}

void Server::stop()
{
    impl_->http.stop();
}

} // namespace xdfkit
