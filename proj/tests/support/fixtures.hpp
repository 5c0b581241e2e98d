#pragma once

#include <string>
#include <vector>

#include "datg/detail/text.hpp"
#include "datg/reporting.hpp"
#include "paths.hpp"

namespace testsupport {

inline datg::Table load_csv_fixture(const std::string& rel) {
    return datg::parse_csv(datg::detail::read_file(fixture_path(rel)));
}

inline size_t column_index(const datg::Table& table, const std::string& name) {
    for (size_t i = 0; i < table.columns.size(); ++i)
        if (table.columns[i] == name) return i;
    throw std::runtime_error("fixture column missing: " + name);
}

// Per-cell accuracy rows (model, difficulty, direction, language, accuracy).
inline std::vector<datg::Row> direction_accuracy_rows() {
    datg::Table table = load_csv_fixture("tables/direction_accuracy.csv");
    std::vector<datg::Row> rows;
    for (const auto& r : table.rows) {
        datg::Row row;
        row.dims["model"] = r[0];
        row.dims["difficulty"] = r[1];
        row.dims["direction"] = r[2];
        row.dims["language"] = r[3];
        row.vals["accuracy"] = std::stod(r[4]);
        rows.push_back(std::move(row));
    }
    return rows;
}

// Correctness-stratified cells expanded into weighted C/I rows. Each cell is
// 125 traces; the C row weighs accuracy * 125, the I row the complement.
// Dash cells contribute nothing.
inline std::vector<datg::Row> correctness_rows(bool include_en_en = false) {
    datg::Table table = load_csv_fixture("tables/datg_correctness.csv");
    std::vector<datg::Row> rows;
    const double cell_n = 125.0;
    for (const auto& r : table.rows) {
        std::string pair = r[0];
        if (!include_en_en && pair == "en-en") continue;
        std::string difficulty = r[1];
        for (const auto& [model, base] : std::vector<std::pair<std::string, size_t>>{
                 {"1.7B", 2}, {"4B", 9}, {"8B", 16}}) {
            double acc = std::stod(r[base]);
            auto cell = [&](size_t offset) { return r[base + offset]; };
            auto push = [&](const char* correct, double weight, size_t first) {
                if (weight <= 0) return;
                datg::Row row;
                row.dims["pair"] = pair;
                row.dims["difficulty"] = difficulty;
                row.dims["model"] = model;
                row.dims["correct"] = correct;
                row.weight = weight;
                if (cell(first) != "--") row.vals["car"] = std::stod(cell(first));
                if (cell(first + 2) != "--") row.vals["pmf"] = std::stod(cell(first + 2));
                if (cell(first + 4) != "--") row.vals["har"] = std::stod(cell(first + 4));
                rows.push_back(std::move(row));
            };
            push("C", acc * cell_n, 1);
            push("I", (1.0 - acc) * cell_n, 2);
        }
    }
    return rows;
}

}  // namespace testsupport
