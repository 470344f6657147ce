#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace orthotrace::formats {

using CsvRow = std::vector<std::string>;

/// Quotes a field when it contains a comma, quote, CR or LF.
std::string csv_escape(const std::string& field);
std::string csv_line(const CsvRow& row);

/// RFC-4180 reader: quoted fields may contain commas, doubled quotes and
/// newlines. Blank lines are skipped.
std::vector<CsvRow> parse_csv(const std::string& text);
std::vector<CsvRow> read_csv(const std::string& path);

void write_csv(const std::string& path, const CsvRow& header, const std::vector<CsvRow>& rows);

/// Header-addressed view over parsed rows.
class CsvTable {
public:
    explicit CsvTable(std::vector<CsvRow> rows);
    static CsvTable read(const std::string& path);

    const CsvRow& header() const { return header_; }
    size_t size() const { return rows_.size(); }
    bool has(const std::string& column) const { return index_.count(column) != 0; }
    /// Throws ParseError naming the row when the column is missing.
    const std::string& get(size_t row, const std::string& column) const;
    double number(size_t row, const std::string& column) const;
    /// 1-based line number of a data row, for error messages.
    size_t line_of(size_t row) const { return row + 2; }

private:
    CsvRow header_;
    std::vector<CsvRow> rows_;
    std::map<std::string, size_t> index_;
};

}  // namespace orthotrace::formats
