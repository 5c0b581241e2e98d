#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "datg/detail/text.hpp"
#include "datg/errors.hpp"

namespace datg {

// ---------------------------------------------------------------------------
// Wilson score interval.
// ---------------------------------------------------------------------------

inline std::pair<double, double> wilson_interval(size_t successes, size_t n, double z = 1.96) {
    if (n == 0) throw ZeroSample("wilson interval needs n >= 1");
    double p = static_cast<double>(successes) / static_cast<double>(n);
    double z2 = z * z;
    double denom = 1.0 + z2 / static_cast<double>(n);
    double center = (p + z2 / (2.0 * static_cast<double>(n))) / denom;
    double half = (z / denom) * std::sqrt(p * (1.0 - p) / static_cast<double>(n) +
                                          z2 / (4.0 * static_cast<double>(n) *
                                                static_cast<double>(n)));
    double lo = center - half;
    double hi = center + half;
    if (lo < 0.0) lo = 0.0;
    if (hi > 1.0) hi = 1.0;
    return {lo, hi};
}

// ---------------------------------------------------------------------------
// Printed-precision formatting. Rounding is half away from zero on the
// decimal value, computed in integer space to avoid binary-float ties.
// ---------------------------------------------------------------------------

inline long long round_decimal(double value, int decimals) {
    double scale = std::pow(10.0, decimals);
    double scaled = value * scale;
    // nudge values that sit a hair under a .5 boundary from decimal inputs
    return std::llround(scaled + (scaled >= 0 ? 1e-9 : -1e-9));
}

// Paper-style fraction: 3 decimals, no leading zero (".909", "1.000").
inline std::string format_fraction(double value, int decimals = 3) {
    long long scaled = round_decimal(value, decimals);
    long long denom = static_cast<long long>(std::llround(std::pow(10.0, decimals)));
    bool neg = scaled < 0;
    if (neg) scaled = -scaled;
    long long whole = scaled / denom;
    long long frac = scaled % denom;
    std::ostringstream os;
    if (neg) os << '-';
    if (whole != 0) os << whole;
    os << '.' << std::setw(decimals) << std::setfill('0') << frac;
    return os.str();
}

// Percentage to 0.1: "33.2".
inline std::string format_percent(double value) {
    long long scaled = round_decimal(value, 1);
    bool neg = scaled < 0;
    if (neg) scaled = -scaled;
    std::ostringstream os;
    if (neg) os << '-';
    os << scaled / 10 << '.' << scaled % 10;
    return os.str();
}

// ---------------------------------------------------------------------------
// Rows and tables.
// ---------------------------------------------------------------------------

// One observation: grouping dimensions, metric values, and a weight. Per-
// trace records use weight 1; per-cell fixtures use the cell trace count.
struct Row {
    std::map<std::string, std::string> dims;
    std::map<std::string, double> vals;
    double weight = 1.0;
};

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

inline constexpr const char* kEmptyCell = "--";

// Record row fields shared by the scoring pipeline and the report command.
struct RecordRow {
    std::string language;
    std::string difficulty;
    std::string model;
    std::string direction;
    std::optional<bool> correct;
    std::optional<double> car, pmf, har;
    std::optional<double> tokens, trials;

    Row to_row() const {
        Row row;
        row.dims["language"] = language;
        row.dims["difficulty"] = difficulty;
        row.dims["model"] = model;
        row.dims["direction"] = direction;
        if (correct) {
            row.dims["correct"] = *correct ? "C" : "I";
            row.vals["accuracy"] = *correct ? 1.0 : 0.0;
        }
        if (car) row.vals["car"] = *car;
        if (pmf) row.vals["pmf"] = *pmf;
        if (har) row.vals["har"] = *har;
        if (tokens) row.vals["tokens"] = *tokens;
        if (trials) row.vals["trials"] = *trials;
        return row;
    }

    static RecordRow from_json(const nlohmann::json& doc) {
        RecordRow r;
        r.language = doc.value("language", "");
        r.difficulty = doc.value("difficulty", "");
        r.model = doc.value("model", "");
        r.direction = doc.value("direction", "");
        if (doc.contains("correct") && doc["correct"].is_boolean())
            r.correct = doc["correct"].get<bool>();
        auto opt = [&](const char* key) -> std::optional<double> {
            if (doc.contains(key) && doc[key].is_number()) return doc[key].get<double>();
            return std::nullopt;
        };
        r.car = opt("car");
        r.pmf = opt("pmf");
        r.har = opt("har");
        r.tokens = opt("tokens");
        r.trials = opt("trials");
        return r;
    }
};

// Language resource groups of the benchmark.
inline std::string resource_group(const std::string& lang) {
    static const std::set<std::string> hrl = {"en", "fr", "zh", "ja", "ru", "ko"};
    static const std::set<std::string> mrl = {"id", "ms", "th", "bn"};
    static const std::set<std::string> lrl = {"sw", "te"};
    if (hrl.count(lang)) return "HRL";
    if (mrl.count(lang)) return "MRL";
    if (lrl.count(lang)) return "LRL";
    return "other";
}

namespace detail_report {

struct Accumulator {
    double weighted_sum = 0.0;
    double weight = 0.0;
    void add(double value, double w) {
        weighted_sum += value * w;
        weight += w;
    }
    std::optional<double> mean() const {
        if (weight <= 0.0) return std::nullopt;
        return weighted_sum / weight;
    }
};

inline std::string key_of(const Row& row, std::span<const std::string> keys) {
    std::string out;
    for (const auto& k : keys) {
        auto it = row.dims.find(k);
        out += it == row.dims.end() ? std::string() : it->second;
        out.push_back('\x1f');
    }
    return out;
}

}  // namespace detail_report

// Weighted arithmetic mean per (group key, metric). Group order is first
// appearance in the input; missing metrics render as the empty-cell dash.
inline Table aggregate(std::span<const Row> rows, const std::vector<std::string>& keys,
                       const std::vector<std::string>& metrics,
                       int print_decimals = 3) {
    Table table;
    table.columns = keys;
    for (const auto& m : metrics) table.columns.push_back(m);
    table.columns.push_back("n");

    std::vector<std::string> order;
    std::map<std::string, std::vector<std::string>> group_dims;
    std::map<std::string, std::map<std::string, detail_report::Accumulator>> cells;
    std::map<std::string, size_t> counts;

    for (const Row& row : rows) {
        std::string gk = detail_report::key_of(row, keys);
        if (!cells.count(gk)) {
            order.push_back(gk);
            std::vector<std::string> dims;
            for (const auto& k : keys) {
                auto it = row.dims.find(k);
                dims.push_back(it == row.dims.end() ? std::string() : it->second);
            }
            group_dims[gk] = std::move(dims);
        }
        ++counts[gk];
        for (const auto& m : metrics) {
            auto it = row.vals.find(m);
            if (it != row.vals.end()) cells[gk][m].add(it->second, row.weight);
        }
    }

    for (const auto& gk : order) {
        std::vector<std::string> out = group_dims[gk];
        for (const auto& m : metrics) {
            auto mean = cells[gk][m].mean();
            out.push_back(mean ? format_fraction(*mean, print_decimals)
                               : std::string(kEmptyCell));
        }
        out.push_back(std::to_string(counts[gk]));
        table.rows.push_back(std::move(out));
    }
    return table;
}

// Resource-group averaging is unweighted across languages: first a mean per
// language, then the plain mean of the language means within each group.
inline Table resource_group_average(std::span<const Row> rows, const std::string& metric,
                                    const std::vector<std::string>& within_keys) {
    struct LangCell {
        detail_report::Accumulator acc;
    };
    std::vector<std::string> order;
    std::map<std::string, std::map<std::string, detail_report::Accumulator>> per_lang;
    std::map<std::string, std::vector<std::string>> group_dims;

    std::vector<std::string> keys = within_keys;
    for (const Row& row : rows) {
        auto lang_it = row.dims.find("language");
        if (lang_it == row.dims.end()) continue;
        auto val_it = row.vals.find(metric);
        if (val_it == row.vals.end()) continue;
        std::string gk = detail_report::key_of(row, keys) + resource_group(lang_it->second);
        if (!per_lang.count(gk)) {
            order.push_back(gk);
            std::vector<std::string> dims;
            for (const auto& k : keys) {
                auto it = row.dims.find(k);
                dims.push_back(it == row.dims.end() ? std::string() : it->second);
            }
            dims.push_back(resource_group(lang_it->second));
            group_dims[gk] = std::move(dims);
        }
        per_lang[gk][lang_it->second].add(val_it->second, row.weight);
    }

    Table table;
    table.columns = keys;
    table.columns.push_back("group");
    table.columns.push_back(metric);
    table.columns.push_back("languages");
    for (const auto& gk : order) {
        double sum = 0.0;
        size_t langs = 0;
        for (const auto& [lang, acc] : per_lang[gk]) {
            if (auto m = acc.mean()) {
                sum += *m;
                ++langs;
            }
        }
        std::vector<std::string> out = group_dims[gk];
        out.push_back(langs ? format_percent(sum / static_cast<double>(langs))
                            : std::string(kEmptyCell));
        out.push_back(std::to_string(langs));
        table.rows.push_back(std::move(out));
    }
    return table;
}

// Correctness-stratified means: per difficulty plus an All row, each metric
// cell formatted "C/I". Rows carry their own weights, so per-trace records
// and per-cell fixture rows aggregate through the same path.
inline Table stratify_correctness(std::span<const Row> rows,
                                  const std::vector<std::string>& metrics = {"car", "pmf",
                                                                             "har"}) {
    struct Cell {
        detail_report::Accumulator c, i;
    };
    std::vector<std::string> order;
    std::map<std::string, std::map<std::string, Cell>> by_difficulty;

    auto add_row = [&](const std::string& difficulty, const Row& row) {
        auto correct_it = row.dims.find("correct");
        if (correct_it == row.dims.end()) return;
        if (!by_difficulty.count(difficulty)) order.push_back(difficulty);
        for (const auto& m : metrics) {
            auto it = row.vals.find(m);
            if (it == row.vals.end()) continue;
            Cell& cell = by_difficulty[difficulty][m];
            if (correct_it->second == "C") cell.c.add(it->second, row.weight);
            else cell.i.add(it->second, row.weight);
        }
    };
    for (const Row& row : rows) {
        auto it = row.dims.find("difficulty");
        add_row(it == row.dims.end() ? std::string() : it->second, row);
        add_row("All", row);
    }

    auto rank = [](const std::string& d) {
        if (d == "low") return 0;
        if (d == "medium") return 1;
        if (d == "high") return 2;
        if (d == "All") return 4;
        return 3;
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](const std::string& a, const std::string& b) { return rank(a) < rank(b); });

    Table table;
    table.columns.push_back("difficulty");
    for (const auto& m : metrics) table.columns.push_back(m + " (C/I)");
    for (const auto& d : order) {
        std::vector<std::string> out{d};
        for (const auto& m : metrics) {
            const Cell& cell = by_difficulty[d][m];
            auto fmt = [](const std::optional<double>& v) {
                return v ? format_fraction(*v) : std::string(kEmptyCell);
            };
            out.push_back(fmt(cell.c.mean()) + "/" + fmt(cell.i.mean()));
        }
        table.rows.push_back(std::move(out));
    }
    return table;
}

// ---------------------------------------------------------------------------
// Emission. Deterministic column order in every format; text mirrors the
// aligned table layout, JSON round-trips through parse.
// ---------------------------------------------------------------------------

namespace detail_report {

inline std::string csv_escape(const std::string& field) {
    bool quote = field.find_first_of(",\"\n") != std::string::npos;
    if (!quote) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace detail_report

inline std::string emit(const Table& table, const std::string& format) {
    if (format == "csv") {
        std::ostringstream os;
        for (size_t i = 0; i < table.columns.size(); ++i) {
            if (i) os << ',';
            os << detail_report::csv_escape(table.columns[i]);
        }
        os << '\n';
        for (const auto& row : table.rows) {
            for (size_t i = 0; i < row.size(); ++i) {
                if (i) os << ',';
                os << detail_report::csv_escape(row[i]);
            }
            os << '\n';
        }
        return os.str();
    }
    if (format == "json") {
        nlohmann::ordered_json doc;
        doc["columns"] = table.columns;
        doc["rows"] = nlohmann::ordered_json::array();
        for (const auto& row : table.rows) doc["rows"].push_back(row);
        return doc.dump(2) + "\n";
    }
    if (format == "text") {
        std::vector<size_t> widths(table.columns.size(), 0);
        for (size_t i = 0; i < table.columns.size(); ++i)
            widths[i] = table.columns[i].size();
        for (const auto& row : table.rows)
            for (size_t i = 0; i < row.size() && i < widths.size(); ++i)
                widths[i] = std::max(widths[i], row[i].size());
        std::string out;
        auto line = [&](const std::vector<std::string>& cells) {
            std::string s;
            for (size_t i = 0; i < cells.size(); ++i) {
                if (i) s += "  ";
                s += cells[i];
                if (i + 1 < cells.size() && widths[i] > cells[i].size())
                    s.append(widths[i] - cells[i].size(), ' ');
            }
            while (!s.empty() && s.back() == ' ') s.pop_back();
            out += s;
            out += '\n';
        };
        line(table.columns);
        for (const auto& row : table.rows) line(row);
        return out;
    }
    throw UnknownFormat("unknown table format: " + format + " (want text|csv|json)");
}

// CSV parser for table round-trips and fixture ingestion. Handles quoted
// fields with embedded commas, quotes, and newlines.
inline Table parse_csv(const std::string& bytes) {
    Table table;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool any = false;
    auto end_field = [&] {
        record.push_back(field);
        field.clear();
    };
    auto end_record = [&] {
        end_field();
        if (!any) {
            table.columns = record;
            any = true;
        } else {
            table.rows.push_back(record);
        }
        record.clear();
    };
    for (size_t i = 0; i < bytes.size(); ++i) {
        char c = bytes[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < bytes.size() && bytes[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_record();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    if (!field.empty() || !record.empty()) end_record();
    return table;
}

inline nlohmann::ordered_json to_json(const Table& table) {
    nlohmann::ordered_json doc;
    doc["columns"] = table.columns;
    doc["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : table.rows) doc["rows"].push_back(row);
    return doc;
}

}  // namespace datg
