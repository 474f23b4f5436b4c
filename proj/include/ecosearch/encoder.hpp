#pragma once

#include <chrono>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "ecosearch/error.hpp"
#include "ecosearch/kmeans.hpp"
#include "ecosearch/mapped_file.hpp"
#include "ecosearch/vector_ops.hpp"

namespace ecosearch {

enum class EncoderKind { remote_endpoint, lookup_file, deterministic_test };

/// Where query text vectors come from. `location` is the endpoint URL for
/// `remote_endpoint` and the table path for `lookup_file`.
struct EncoderBackend {
    EncoderKind kind = EncoderKind::deterministic_test;
    std::size_t dim = 0;
    std::string location;
    std::chrono::milliseconds timeout{10'000};
};

/// Parses the CLI form: `test`, `lookup FILE` or `remote URL`.
inline EncoderBackend parse_encoder_backend(std::string_view text, std::size_t dim) {
    EncoderBackend b;
    b.dim = dim;
    auto space = text.find(' ');
    std::string_view head = text.substr(0, space);
    std::string_view rest = space == std::string_view::npos ? std::string_view{} : text.substr(space + 1);
    if (head == "test" && rest.empty()) {
        b.kind = EncoderKind::deterministic_test;
    } else if (head == "lookup" && !rest.empty()) {
        b.kind = EncoderKind::lookup_file;
        b.location = std::string(rest);
    } else if (head == "remote" && !rest.empty()) {
        b.kind = EncoderKind::remote_endpoint;
        b.location = std::string(rest);
    } else {
        throw error(errc::configuration, "encoder must be 'test', 'lookup FILE' or 'remote URL', got '" +
                                             std::string(text) + "'");
    }
    return b;
}

namespace detail {

inline std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct UrlParts {
    std::string origin; // scheme://host[:port]
    std::string path;
};

inline UrlParts split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw error(errc::configuration, "encoder URL needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace detail

/// Turns query text into a unit vector of the configured dimensionality.
/// Remote endpoints receive `POST {"text": ...}` and must answer
/// `{"embedding": [..]}`. Lookup tables are JSON objects mapping text to a vector.
class Encoder {
  public:
    explicit Encoder(EncoderBackend backend) : backend_(std::move(backend)) {
        if (backend_.dim == 0) throw error(errc::configuration, "encoder dim must be positive");
        if (backend_.kind == EncoderKind::lookup_file) load_table();
        if (backend_.kind == EncoderKind::remote_endpoint) detail::split_url(backend_.location);
    }

    const EncoderBackend& backend() const noexcept { return backend_; }

    std::vector<float> encode(std::string_view text) const {
        if (text.empty()) throw error(errc::domain, "query text is empty");
        std::vector<float> v;
        switch (backend_.kind) {
        case EncoderKind::deterministic_test: v = hashed_vector(text); break;
        case EncoderKind::lookup_file: {
            auto it = table_.find(std::string(text));
            if (it == table_.end())
                throw error(errc::not_found, "no embedding for '" + std::string(text) + "' in " + backend_.location);
            v = it->second;
            break;
        }
        case EncoderKind::remote_endpoint: v = fetch_remote(text); break;
        }
        if (v.size() != backend_.dim)
            throw error(errc::configuration, "encoder returned dim " + std::to_string(v.size()) +
                                                 ", configured " + std::to_string(backend_.dim));
        if (!normalize_in_place(v))
            throw error(errc::degenerate_vector, "encoder returned a zero or non-finite vector");
        return v;
    }

  private:
    std::vector<float> hashed_vector(std::string_view text) const {
        std::mt19937_64 rng(detail::fnv1a64(text));
        std::vector<float> v(backend_.dim);
        for (auto& x : v) x = static_cast<float>(detail::uniform01(rng) * 2.0 - 1.0);
        return v;
    }

    void load_table() {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(detail::read_file(backend_.location));
        } catch (const nlohmann::json::exception& e) {
            throw error(errc::parse, backend_.location + ": " + e.what());
        }
        if (!j.is_object()) throw error(errc::parse, backend_.location + ": expected a JSON object");
        for (const auto& [text, vec] : j.items()) {
            auto values = vec.get<std::vector<float>>();
            if (values.size() != backend_.dim)
                throw error(errc::configuration, backend_.location + ": entry '" + text + "' has dim " +
                                                     std::to_string(values.size()) + ", configured " +
                                                     std::to_string(backend_.dim));
            table_.emplace(text, std::move(values));
        }
    }

    std::vector<float> fetch_remote(std::string_view text) const {
        auto url = detail::split_url(backend_.location);
        httplib::Client client(url.origin);
        auto secs = std::chrono::duration_cast<std::chrono::seconds>(backend_.timeout);
        auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(backend_.timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        nlohmann::json body = {{"text", std::string(text)}};
        auto res = client.Post(url.path, body.dump(), "application/json");
        if (!res)
            throw error(errc::encoder_unavailable,
                        backend_.location + ": " + httplib::to_string(res.error()));
        if (res->status != 200)
            throw error(errc::encoder_unavailable,
                        backend_.location + ": HTTP status " + std::to_string(res->status));
        try {
            return nlohmann::json::parse(res->body).at("embedding").get<std::vector<float>>();
        } catch (const nlohmann::json::exception& e) {
            throw error(errc::encoder_unavailable, backend_.location + ": malformed response: " + e.what());
        }
    }

    EncoderBackend backend_;
    std::unordered_map<std::string, std::vector<float>> table_;
};

inline std::vector<float> encode_text(const Encoder& encoder, std::string_view text) {
    return encoder.encode(text);
}

} // namespace ecosearch
