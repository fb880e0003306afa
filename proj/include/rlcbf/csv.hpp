#pragma once

// The experiment artifact format: comma-separated, one header row, UTF-8,
// '.' decimal, doubles printed with %.17g so files reload bit-exactly.

#include <rlcbf/common.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace rlcbf {

inline std::string fmt_g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// Shortest decimal that parses back to the same double; keeps serialized
// configs readable without losing a bit.
inline std::string fmt_shortest(double x) {
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

inline std::string episode_csv_header() {
    return "episode,return,safety_metric,max_eps,mean_ucbf,unsafe";
}

struct EpisodeRow {
    int episode = 0;
    double ret = 0.0;
    double safety = 0.0;     // pendulum: max|theta|; car: min headway
    double max_eps = 0.0;
    double mean_ucbf = 0.0;  // mean ||u_cbf|| over the episode's steps
    int unsafe = 0;

    bool operator==(const EpisodeRow&) const = default;
};

inline std::string format_episode_row(const EpisodeRow& r) {
    std::string out = std::to_string(r.episode);
    for (double v : {r.ret, r.safety, r.max_eps, r.mean_ucbf}) {
        out += ',';
        out += fmt_g17(v);
    }
    out += ',';
    out += std::to_string(r.unsafe);
    return out;
}

// Each step row carries both endpoints of the transition so an audit can
// rebuild the full state chain from the file alone.
inline std::string step_csv_header(int state_dim, int action_dim) {
    std::string h = "episode,step";
    for (int i = 0; i < state_dim; ++i) h += ",s" + std::to_string(i);
    for (const char* base : {"u_rl", "u_bar", "u_cbf"}) {
        if (action_dim == 1)
            h += std::string(",") + base;
        else
            for (int i = 0; i < action_dim; ++i) h += "," + std::string(base) + std::to_string(i);
    }
    h += ",eps,reward";
    for (int i = 0; i < state_dim; ++i) h += ",sn" + std::to_string(i);
    return h;
}

inline std::string format_step_row(int episode, int step, const Vec& s, const Vec& u_rl,
                                   const Vec& u_bar, const Vec& u_cbf, double eps, double reward,
                                   const Vec& s_next) {
    std::string out = std::to_string(episode) + "," + std::to_string(step);
    auto append = [&out](const Vec& v) {
        for (int i = 0; i < v.size(); ++i) {
            out += ',';
            out += fmt_g17(v[i]);
        }
    };
    append(s);
    append(u_rl);
    append(u_bar);
    append(u_cbf);
    out += ',';
    out += fmt_g17(eps);
    out += ',';
    out += fmt_g17(reward);
    append(s_next);
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    int column(const std::string& name) const {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return int(i);
        throw ConfigError("csv: no column named '" + name + "'");
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
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
    return out;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("csv: cannot open '" + path + "'");
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("csv: '" + path + "' is empty");
    t.header = split_csv_line(line);
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != t.header.size())
            throw ConfigError("csv: '" + path + "' line " + std::to_string(lineno) + " has " +
                              std::to_string(cells.size()) + " cells, header has " +
                              std::to_string(t.header.size()));
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& cell : cells) {
            char* end = nullptr;
            double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0')
                throw ConfigError("csv: '" + path + "' line " + std::to_string(lineno) +
                                  ": non-numeric cell '" + cell + "'");
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

// Merge per-seed episode CSVs into per-episode mean/min/max (and a count of
// unsafe flags). All inputs must share the episode schema and row count.
inline void aggregate_csvs(const std::vector<std::string>& paths, const std::string& out_path) {
    if (paths.empty()) throw ConfigError("aggregate: no input files");
    std::vector<CsvTable> tables;
    for (const auto& p : paths) {
        CsvTable t = read_csv(p);
        if (t.header != split_csv_line(episode_csv_header()))
            throw ConfigError("aggregate: '" + p + "' does not have the episode CSV schema");
        if (!tables.empty() && t.rows.size() != tables.front().rows.size())
            throw ConfigError("aggregate: '" + p + "' has " + std::to_string(t.rows.size()) +
                              " rows, expected " + std::to_string(tables.front().rows.size()));
        tables.push_back(std::move(t));
    }

    std::ofstream out(out_path);
    if (!out) throw ConfigError("aggregate: cannot write '" + out_path + "'");
    out << "episode";
    for (const char* base : {"return", "safety", "max_eps", "mean_ucbf"})
        out << ',' << base << "_mean," << base << "_min," << base << "_max";
    out << ",unsafe_count\n";

    const size_t n_rows = tables.front().rows.size();
    for (size_t r = 0; r < n_rows; ++r) {
        out << Eigen::Index(tables.front().rows[r][0]);
        for (int col : {1, 2, 3, 4}) {
            double sum = 0, lo = tables[0].rows[r][size_t(col)], hi = lo;
            for (const auto& t : tables) {
                double v = t.rows[r][size_t(col)];
                sum += v;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            out << ',' << fmt_g17(sum / double(tables.size())) << ',' << fmt_g17(lo) << ','
                << fmt_g17(hi);
        }
        int unsafe = 0;
        for (const auto& t : tables) unsafe += int(t.rows[r][5]);
        out << ',' << unsafe << "\n";
    }
}

}  // namespace rlcbf
