#include "csv.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace dhm {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_fixed(double v, int digits) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

int CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_io("cannot open " + path);
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split(line, ',');
        if (first) {
            t.header = cells;
            first = false;
        } else {
            if (cells.size() != t.header.size())
                fail_io(path + ": row with " + std::to_string(cells.size()) +
                        " cells, expected " + std::to_string(t.header.size()));
            t.rows.push_back(cells);
        }
    }
    if (first) fail_io(path + ": empty csv");
    return t;
}

void write_csv(const std::string& path, const CsvTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail_io("cannot write " + path);
    auto emit = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out << ',';
            out << cells[i];
        }
        out << '\n';
    };
    emit(table.header);
    for (const auto& row : table.rows) emit(row);
    if (!out) fail_io("write failed: " + path);
}

}  // namespace dhm
