#include "orthotrace/formats/csv.hpp"

#include "orthotrace/error.hpp"
#include "orthotrace/io.hpp"
#include "orthotrace/number_format.hpp"

namespace orthotrace::formats {

std::string csv_escape(const std::string& field)
{
    if (field.find_first_of(",\"\r\n") == std::string::npos)
        return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

std::string csv_line(const CsvRow& row)
{
    std::string out;
    for (size_t i = 0; i < row.size(); ++i) {
        if (i)
            out += ',';
        out += csv_escape(row[i]);
    }
    return out;
}

std::vector<CsvRow> parse_csv(const std::string& text)
{
    std::vector<CsvRow> rows;
    CsvRow row;
    std::string field;
    bool in_quotes = false, field_started = false, row_has_content = false;
    int line = 1;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        if (row_has_content || !row.empty() || field_started) {
            end_field();
            rows.push_back(std::move(row));
        }
        row.clear();
        row_has_content = false;
    };

    for (size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n')
                    ++line;
                field += c;
            }
            continue;
        }
        switch (c) {
        case '"':
            if (field_started && !field.empty())
                throw ParseError("CSV: quote inside an unquoted field", line);
            in_quotes = true;
            field_started = row_has_content = true;
            break;
        case ',':
            end_field();
            row_has_content = true;
            break;
        case '\r':
            break;
        case '\n':
            end_row();
            ++line;
            break;
        default:
            field += c;
            field_started = row_has_content = true;
        }
    }
    if (in_quotes)
        throw ParseError("CSV: unterminated quoted field", line);
    end_row();
    return rows;
}

std::vector<CsvRow> read_csv(const std::string& path)
{
    try {
        return parse_csv(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void write_csv(const std::string& path, const CsvRow& header, const std::vector<CsvRow>& rows)
{
    std::string out = csv_line(header) + "\n";
    for (const auto& r : rows)
        out += csv_line(r) + "\n";
    write_text_file(path, out);
}

CsvTable::CsvTable(std::vector<CsvRow> rows)
{
    if (rows.empty())
        throw ParseError("CSV: missing header row");
    header_ = std::move(rows.front());
    rows_.assign(std::make_move_iterator(rows.begin() + 1), std::make_move_iterator(rows.end()));
    for (size_t i = 0; i < header_.size(); ++i) {
        std::string name = header_[i];
        const auto b = name.find_first_not_of(" \t");
        const auto e = name.find_last_not_of(" \t");
        name = b == std::string::npos ? "" : name.substr(b, e - b + 1);
        header_[i] = name;
        index_.emplace(name, i);
    }
    for (size_t r = 0; r < rows_.size(); ++r)
        if (rows_[r].size() != header_.size())
            throw ParseError("CSV: expected " + std::to_string(header_.size()) + " fields, found "
                                 + std::to_string(rows_[r].size()),
                             static_cast<int>(line_of(r)));
}

CsvTable CsvTable::read(const std::string& path)
{
    try {
        return CsvTable(read_csv(path));
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

const std::string& CsvTable::get(size_t row, const std::string& column) const
{
    auto it = index_.find(column);
    if (it == index_.end())
        throw ParseError("CSV: missing column '" + column + "'");
    return rows_.at(row)[it->second];
}

double CsvTable::number(size_t row, const std::string& column) const
{
    try {
        return parse_double(get(row, column));
    } catch (const ParseError&) {
        throw ParseError("CSV: column '" + column + "' is not a number", static_cast<int>(line_of(row)));
    }
}

}  // namespace orthotrace::formats
