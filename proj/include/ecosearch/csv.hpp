#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ecosearch/error.hpp"

namespace ecosearch::csv {

using Row = std::vector<std::string>;

/// RFC 4180 field: quoted only when it contains a comma, quote, CR or LF.
inline std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::string format_row(const Row& row) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) line += ',';
        line += escape(row[i]);
    }
    line += "\r\n";
    return line;
}

inline std::string write(const std::vector<Row>& rows) {
    std::string out;
    for (const auto& row : rows) out += format_row(row);
    return out;
}

/// Parses RFC 4180 text. Accepts CRLF or LF record terminators; a trailing
/// terminator does not produce an empty record.
inline std::vector<Row> parse(std::string_view text) {
    std::vector<Row> rows;
    Row row;
    std::string field;
    bool quoted = false, field_started = false;
    std::size_t line = 1;
    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        rows.push_back(std::move(row));
        row.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                    if (i + 1 < text.size() && text[i + 1] != ',' && text[i + 1] != '\r' && text[i + 1] != '\n')
                        throw error(errc::parse, "csv line " + std::to_string(line) +
                                                     ": text after closing quote");
                }
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        switch (c) {
        case '"':
            if (field_started || !field.empty())
                throw error(errc::parse, "csv line " + std::to_string(line) + ": stray quote");
            quoted = true;
            field_started = true;
            break;
        case ',': end_field(); break;
        case '\r':
            if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
            [[fallthrough]];
        case '\n':
            end_row();
            ++line;
            break;
        default: field += c; field_started = true;
        }
    }
    if (quoted) throw error(errc::parse, "csv: unterminated quoted field");
    if (field_started || !field.empty() || !row.empty()) end_row();
    return rows;
}

/// Parsed file with a header row and name-based column lookup.
class Table {
  public:
    explicit Table(std::string_view text) {
        auto rows = parse(text);
        if (rows.empty()) throw error(errc::parse, "csv: missing header row");
        header_ = std::move(rows.front());
        rows.erase(rows.begin());
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (rows[i].size() != header_.size())
                throw error(errc::parse, "csv record " + std::to_string(i + 2) + " has " +
                                             std::to_string(rows[i].size()) + " fields, header has " +
                                             std::to_string(header_.size()));
        rows_ = std::move(rows);
    }

    const Row& header() const noexcept { return header_; }
    const std::vector<Row>& rows() const noexcept { return rows_; }

    std::optional<std::size_t> find_column(std::string_view name) const {
        for (std::size_t i = 0; i < header_.size(); ++i)
            if (header_[i] == name) return i;
        return std::nullopt;
    }

    std::size_t column(std::string_view name) const {
        if (auto c = find_column(name)) return *c;
        throw error(errc::not_found, "csv has no column '" + std::string(name) + "'");
    }

  private:
    Row header_;
    std::vector<Row> rows_;
};

} // namespace ecosearch::csv
