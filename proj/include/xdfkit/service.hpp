#pragma once

#include "xdfkit/annotations.hpp"
#include "xdfkit/format.hpp"
#include "xdfkit/timeline.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

namespace xdfkit {

struct HttpResponse {
    int status = 200;
    std::string body;  ///< JSON, empty for 204
};

/// Loaded recording plus the event set behind a reader/writer lock. Request
/// handling is transport-free; `Server` puts it on a socket.
class Service {
public:
    /// `source` is the file user events are appended to when a save request
    /// names no path.
    Service(Recording recording, std::filesystem::path source = {});

    static std::unique_ptr<Service> load(const std::filesystem::path& path);

    /// Dispatches one request. `query` holds decoded query parameters.
    HttpResponse handle(const std::string& method, const std::string& path,
                        const std::multimap<std::string, std::string>& query, const std::string& body);

    EventSet events() const;
    bool dirty() const;

private:
    struct Channel {
        std::vector<double> values;
        Scale scale;
    };
    struct StreamView {
        std::vector<double> times;
        std::vector<Channel> channels;
    };

    HttpResponse recording_json() const;
    HttpResponse tiles(std::uint32_t id, const std::multimap<std::string, std::string>& query) const;
    HttpResponse meta(std::uint32_t id) const;
    HttpResponse list_events() const;
    HttpResponse add_event(const std::string& body);
    HttpResponse delete_event(const std::string& id_text);
    HttpResponse save(const std::string& body);

    Recording recording_;
    std::filesystem::path source_;
    std::string summary_json_;
    std::map<std::uint32_t, StreamView> views_;

    mutable std::shared_mutex mutex_;
    EventSet events_;
    bool dirty_ = false;
};

/// HTTP front end on a background thread.
class Server {
public:
    explicit Server(Service& service);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and starts listening; port 0 picks a free port. Returns the bound
    /// port. Throws IoError when the address cannot be bound.
    unsigned start(const std::string& host, unsigned port);

    /// Blocks until stop() is called (from another thread or a signal).
    void wait();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace xdfkit
