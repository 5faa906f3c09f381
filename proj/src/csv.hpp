#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace dhm {

// Canonical float formatting used by every emitted file. %.17g round-trips
// doubles exactly, which is what makes save(load(x)) byte-identical.
std::string format_double(double v);
// Fixed-precision variant for report tables.
std::string format_fixed(double v, int digits);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

std::vector<std::string> split(const std::string& s, char sep);

}  // namespace dhm
