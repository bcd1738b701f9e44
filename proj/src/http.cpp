#include "httplib.h"

#include "evrank/http.hpp"

#include <chrono>
#include <thread>

#include "evrank/error.hpp"

namespace evrank {

namespace {

struct Target {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path prefix without trailing slash
};

Target split_url(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw Error("endpoint '" + url + "' has no scheme (expected http:// or https://)");
    const auto slash = url.find('/', scheme + 3);
    Target t;
    t.origin = url.substr(0, slash);
    t.prefix = slash == std::string::npos ? "" : url.substr(slash);
    while (!t.prefix.empty() && t.prefix.back() == '/') t.prefix.pop_back();
    return t;
}

}  // namespace

std::string post_json(const std::string& base_url, const std::string& path, const std::string& body,
                      const HttpOptions& options) {
    const auto target = split_url(base_url);
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= options.retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::duration<double>(options.backoff_seconds * double(1u << (attempt - 1))));
        httplib::Client client(target.origin);
        const auto timeout = std::chrono::duration<double>(options.timeout_seconds);
        client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        httplib::Headers headers;
        if (!options.bearer_token.empty()) headers.emplace("Authorization", "Bearer " + options.bearer_token);
        auto res = client.Post(target.prefix + path, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) return res->body;
        last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
        if (res->status != 429 && res->status < 500) break;
    }
    throw Error("POST " + base_url + path + " failed: " + last_error);
}

}  // namespace evrank
