#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ecosearch {

enum class errc {
    io,
    format,
    corruption,
    degenerate_vector,
    parse,
    range,
    domain,
    alignment,
    uniqueness,
    capacity,
    shape,
    normalization,
    not_found,
    invalid_mark,
    empty_export,
    encoder_unavailable,
    configuration,
    empty_denominator,
    degenerate_series,
    consistency,
};

constexpr std::string_view to_string(errc code) noexcept {
    switch (code) {
    case errc::io: return "io";
    case errc::format: return "format";
    case errc::corruption: return "corruption";
    case errc::degenerate_vector: return "degenerate_vector";
    case errc::parse: return "parse";
    case errc::range: return "range";
    case errc::domain: return "domain";
    case errc::alignment: return "alignment";
    case errc::uniqueness: return "uniqueness";
    case errc::capacity: return "capacity";
    case errc::shape: return "shape";
    case errc::normalization: return "normalization";
    case errc::not_found: return "not_found";
    case errc::invalid_mark: return "invalid_mark";
    case errc::empty_export: return "empty_export";
    case errc::encoder_unavailable: return "encoder_unavailable";
    case errc::configuration: return "configuration";
    case errc::empty_denominator: return "empty_denominator";
    case errc::degenerate_series: return "degenerate_series";
    case errc::consistency: return "consistency";
    }
    return "unknown";
}

/// Every failure raised by the library carries one of the `errc` categories so
/// callers (CLI, HTTP layer, tests) can dispatch without parsing messages.
class error : public std::runtime_error {
  public:
    error(errc code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    errc code() const noexcept { return code_; }

  private:
    errc code_;
};

} // namespace ecosearch
