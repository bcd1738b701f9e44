#pragma once

// JSON-over-HTTP POST with retries, shared by the chat and embedding clients.

#include <string>

namespace evrank {

struct HttpOptions {
    std::string bearer_token;
    double timeout_seconds = 60.0;
    std::size_t retries = 3;
    double backoff_seconds = 1.0;
};

/// POSTs `body` to base_url + path ("https://host[:port]/prefix" + "/route").
/// Retries transport failures, 429 and 5xx; other non-2xx statuses fail at
/// once with the response body in the message.
std::string post_json(const std::string& base_url, const std::string& path, const std::string& body,
                      const HttpOptions& options);

}  // namespace evrank
