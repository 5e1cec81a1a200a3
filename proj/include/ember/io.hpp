#pragma once

// File formats.
//
// Samples: CSV with header `x,y[,z_coord],value,<secondary names...>`.
// Rasters: ASCII grid with a 6 line header (ncols, nrows, xllcorner,
// yllcorner, cellsize, NODATA_value) followed by nrows lines of ncols values.
// Data rows are stored bottom row first, matching the in memory layout where
// row 0 touches yllcorner.
//
// Doubles are written with 17 significant digits so write/read round trips are
// bit exact.

#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ember/core.hpp"

namespace ember {

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(std::string_view tok, const std::string& where) {
    double v = 0.0;
    const char* b = tok.data();
    const char* e = tok.data() + tok.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    while (e > b && (e[-1] == ' ' || e[-1] == '\t' || e[-1] == '\r')) --e;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e)
        throw ParseError(where + ": bad number '" + std::string(tok) + "'");
    return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    for (auto& t : out) {
        std::size_t b = t.find_first_not_of(" \t");
        std::size_t e = t.find_last_not_of(" \t");
        t = b == std::string::npos ? std::string() : t.substr(b, e - b + 1);
    }
    return out;
}

} // namespace detail

inline SampleSet load_samples(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open sample file " + path.string());
    std::string line;
    std::size_t lineno = 0;
    // Header.
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        header = detail::split_csv(line);
        break;
    }
    const std::string at = path.filename().string();
    if (header.size() < 3 || header[0] != "x" || header[1] != "y")
        throw ParseError(at + ": header must start with x,y");
    bool has_zc = header.size() > 2 && (header[2] == "z_coord" || header[2] == "z");
    std::size_t vcol = has_zc ? 3 : 2;
    if (header.size() <= vcol || header[vcol] != "value")
        throw ParseError(at + ": expected 'value' column after coordinates");
    SampleSet s;
    s.secondary_names.assign(header.begin() + static_cast<long>(vcol) + 1, header.end());
    std::size_t width = header.size();
    std::vector<double> yrow(s.secondary_names.size());
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto tok = detail::split_csv(line);
        std::string where = at + ":" + std::to_string(lineno);
        if (tok.size() != width)
            throw ParseError(where + ": expected " + std::to_string(width) + " fields, got " +
                             std::to_string(tok.size()));
        double x = detail::parse_double(tok[0], where);
        double y = detail::parse_double(tok[1], where);
        Location loc = has_zc ? Location(x, y, detail::parse_double(tok[2], where))
                              : Location(x, y);
        double z = detail::parse_double(tok[vcol], where);
        for (std::size_t j = 0; j < yrow.size(); ++j)
            yrow[j] = detail::parse_double(tok[vcol + 1 + j], where);
        s.push_back(loc, z, yrow);
    }
    s.validate();
    return s;
}

inline void save_samples(const SampleSet& s, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write sample file " + path.string());
    bool has_zc = s.dim() == 3;
    out << "x,y";
    if (has_zc) out << ",z_coord";
    out << ",value";
    for (const auto& n : s.secondary_names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < s.size(); ++i) {
        const Location& p = s.locations[i];
        out << detail::format_double(p.x()) << ',' << detail::format_double(p.y());
        if (has_zc) out << ',' << detail::format_double(p[2]);
        out << ',' << detail::format_double(s.z[i]);
        for (std::size_t j = 0; j < s.n_secondary(); ++j)
            out << ',' << detail::format_double(s.y_at(i, j));
        out << '\n';
    }
    if (!out) throw ParseError("write failed for " + path.string());
}

// Loads a single layer raster; the layer is named after the file stem.
inline RasterGrid load_grid(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open grid file " + path.string());
    const std::string at = path.filename().string();
    auto read_header = [&](const char* key) -> double {
        std::string k;
        double v;
        if (!(in >> k >> v)) throw ParseError(at + ": truncated header");
        std::string lk = k;
        for (auto& ch : lk) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (lk != key) throw ParseError(at + ": expected header key '" + std::string(key) +
                                        "', got '" + k + "'");
        return v;
    };
    double ncols_d = read_header("ncols");
    double nrows_d = read_header("nrows");
    double xll = read_header("xllcorner");
    double yll = read_header("yllcorner");
    double cs = read_header("cellsize");
    double nodata = read_header("nodata_value");
    int ncols = static_cast<int>(ncols_d), nrows = static_cast<int>(nrows_d);
    if (ncols <= 0 || nrows <= 0 || ncols_d != ncols || nrows_d != nrows)
        throw ParseError(at + ": ncols/nrows must be positive integers");
    if (!(cs > 0.0)) throw ParseError(at + ": cellsize must be positive");
    RasterGrid g(ncols, nrows, cs, xll, yll);
    g.nodata = nodata;
    std::vector<double> values(g.n_cells());
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(in >> values[i]))
            throw ParseError(at + ": expected " + std::to_string(values.size()) +
                             " cell values, got " + std::to_string(i));
    }
    double extra;
    if (in >> extra) throw ParseError(at + ": trailing data after cell values");
    g.add_layer(path.stem().string(), std::move(values));
    return g;
}

inline void save_grid(const RasterGrid& g, const std::string& layer,
                      const std::filesystem::path& path) {
    const std::vector<double>& v = g.layer(layer);
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write grid file " + path.string());
    out << "ncols " << g.ncols << "\nnrows " << g.nrows << "\nxllcorner "
        << detail::format_double(g.xll) << "\nyllcorner " << detail::format_double(g.yll)
        << "\ncellsize " << detail::format_double(g.cell) << "\nNODATA_value "
        << detail::format_double(g.nodata) << '\n';
    for (int r = 0; r < g.nrows; ++r) {
        for (int c = 0; c < g.ncols; ++c) {
            if (c) out << ' ';
            out << detail::format_double(v[g.index_of(c, r)]);
        }
        out << '\n';
    }
    if (!out) throw ParseError("write failed for " + path.string());
}

// 8-bit grayscale preview, linearly stretched over the finite data range.
// PGM rows run top to bottom, so grid rows are flipped on output.
inline void save_pgm(const RasterGrid& g, const std::string& layer,
                     const std::filesystem::path& path) {
    const std::vector<double>& v = g.layer(layer);
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (double x : v) {
        if (g.is_nodata(x) || !std::isfinite(x)) continue;
        if (!any) {
            lo = hi = x;
            any = true;
        } else {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
    }
    double span = hi > lo ? hi - lo : 1.0;
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write image file " + path.string());
    out << "P2\n" << g.ncols << ' ' << g.nrows << "\n255\n";
    for (int r = g.nrows - 1; r >= 0; --r) {
        for (int c = 0; c < g.ncols; ++c) {
            double x = v[g.index_of(c, r)];
            int px = 0;
            if (!g.is_nodata(x) && std::isfinite(x))
                px = static_cast<int>(std::lround(255.0 * (x - lo) / span));
            out << px << (c + 1 == g.ncols ? '\n' : ' ');
        }
    }
    if (!out) throw ParseError("write failed for " + path.string());
}

} // namespace ember
