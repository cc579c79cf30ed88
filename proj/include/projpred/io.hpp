#pragma once

#include "core.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace projpred::io {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        std::size_t b = 0;
        while (b < cell.size() && cell[b] == ' ') ++b;
        out.push_back(cell.substr(b));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_number(const std::string& s, const std::string& where)
{
    if (s.empty()) fail_validation(where + ": empty cell");
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) fail_validation(where + ": cannot parse '" + s + "' as a number");
    if (!std::isfinite(v)) fail_validation(where + ": non-finite value '" + s + "'");
    return v;
}

inline CsvTable parse_csv(std::istream& in, const std::string& source)
{
    CsvTable t;
    std::string line;
    bool have_header = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!have_header) {
            if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
            t.header = split_csv_line(line);
            have_header = true;
            continue;
        }
        auto cells = split_csv_line(line);
        if (cells.size() != t.header.size())
            fail_validation(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                            " columns, found " + std::to_string(cells.size()));
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(parse_number(c, source + ":" + std::to_string(lineno)));
        t.rows.push_back(std::move(row));
    }
    if (!have_header) fail_validation(source + ": missing header row");
    return t;
}

inline CsvTable read_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) fail_validation("cannot open '" + path + "'");
    return parse_csv(in, path);
}

/// Shortest round-trippable representation is not needed; 17 significant
/// digits is enough for lossless double round trips.
inline std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Data CSV: header `y,<name1>,...,<namep>`
// ---------------------------------------------------------------------------

inline Dataset dataset_from_table(const CsvTable& t, Family family, const std::string& source = "data")
{
    if (t.header.size() < 2) fail_validation(source + ": need a response column and at least one predictor");
    if (t.rows.empty()) fail_validation(source + ": no observations");
    const Index n = static_cast<Index>(t.rows.size());
    const Index p = static_cast<Index>(t.header.size()) - 1;
    Matrix x(n, p);
    Vector y(n);
    for (Index i = 0; i < n; ++i) {
        const auto& r = t.rows[static_cast<std::size_t>(i)];
        y(i) = r[0];
        for (Index j = 0; j < p; ++j) x(i, j) = r[static_cast<std::size_t>(j + 1)];
    }
    std::vector<std::string> names(t.header.begin() + 1, t.header.end());
    return Dataset(std::move(x), std::move(y), std::move(names), family);
}

inline Dataset read_dataset(const std::string& path, Family family)
{
    return dataset_from_table(read_csv(path), family, path);
}

inline void write_dataset(std::ostream& out, const Dataset& data)
{
    out << "y";
    for (const auto& name : data.predictor_names()) out << ',' << name;
    out << '\n';
    for (Index i = 0; i < data.n(); ++i) {
        out << format_double(data.y()(i));
        for (Index j = 0; j < data.p(); ++j) out << ',' << format_double(data.x()(i, j));
        out << '\n';
    }
}

inline void write_dataset(const std::string& path, const Dataset& data)
{
    std::ofstream out(path);
    if (!out) fail_validation("cannot write '" + path + "'");
    write_dataset(out, data);
}

// ---------------------------------------------------------------------------
// Draws CSV: header `b0,b1,...,bp[,sigma]`
// ---------------------------------------------------------------------------

inline PosteriorDraws draws_from_table(const CsvTable& t, const std::string& source = "draws")
{
    if (t.header.empty()) fail_validation(source + ": empty header");
    if (t.rows.empty()) fail_validation(source + ": no draws");
    const bool has_sigma = t.header.back() == "sigma";
    const Index ncoef = static_cast<Index>(t.header.size()) - (has_sigma ? 1 : 0);
    if (ncoef < 1) fail_validation(source + ": need at least the intercept column b0");
    for (Index j = 0; j < ncoef; ++j)
        if (t.header[static_cast<std::size_t>(j)] != "b" + std::to_string(j))
            fail_validation(source + ": expected column 'b" + std::to_string(j) + "', found '" +
                            t.header[static_cast<std::size_t>(j)] + "'");
    const Index s = static_cast<Index>(t.rows.size());
    Matrix coef(s, ncoef);
    std::optional<Vector> sigma;
    if (has_sigma) sigma = Vector(s);
    for (Index r = 0; r < s; ++r) {
        const auto& row = t.rows[static_cast<std::size_t>(r)];
        for (Index j = 0; j < ncoef; ++j) coef(r, j) = row[static_cast<std::size_t>(j)];
        if (has_sigma) (*sigma)(r) = row.back();
    }
    return PosteriorDraws(std::move(coef), std::move(sigma));
}

inline PosteriorDraws read_draws(const std::string& path) { return draws_from_table(read_csv(path), path); }

inline void write_draws(std::ostream& out, const PosteriorDraws& draws)
{
    for (Index j = 0; j < draws.coefficients().cols(); ++j) out << (j ? "," : "") << 'b' << j;
    if (draws.dispersion()) out << ",sigma";
    out << '\n';
    for (Index s = 0; s < draws.size(); ++s) {
        for (Index j = 0; j < draws.coefficients().cols(); ++j)
            out << (j ? "," : "") << format_double(draws.coefficients()(s, j));
        if (draws.dispersion()) out << ',' << format_double((*draws.dispersion())(s));
        out << '\n';
    }
}

inline void write_draws(const std::string& path, const PosteriorDraws& draws)
{
    std::ofstream out(path);
    if (!out) fail_validation("cannot write '" + path + "'");
    write_draws(out, draws);
}

/// Reads and cross-validates a data file and a draws file.
inline std::pair<Dataset, PosteriorDraws> ingest_draws(const std::string& draws_path, const std::string& data_path,
                                                       Family family)
{
    Dataset data = read_dataset(data_path, family);
    PosteriorDraws draws = read_draws(draws_path);
    if (draws.num_predictors() != data.p())
        fail_validation("draws have " + std::to_string(draws.num_predictors()) + " coefficients besides b0 but data has " +
                        std::to_string(data.p()) + " predictors");
    if (family.has_dispersion() && !draws.dispersion())
        fail_validation("gaussian family requires a 'sigma' column in the draws file");
    if (!family.has_dispersion() && draws.dispersion())
        fail_validation("family '" + std::string(family.name()) + "' has no dispersion but draws carry 'sigma'");
    return {std::move(data), std::move(draws)};
}

}  // namespace projpred::io
