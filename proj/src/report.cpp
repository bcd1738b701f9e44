// CSV and SVG output for the report stage.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>

#include "evrank/error.hpp"
#include "evrank/metrics.hpp"

namespace evrank {

namespace {

struct Point {
    double x, y, lo, hi;
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

/// Line plot of metric vs M, one series per method, with CI whiskers.
std::string line_plot(const std::string& title, const std::map<std::string, std::vector<Point>>& series) {
    const double w = 480, h = 320, left = 60, right = 120, top = 40, bottom = 50;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& [name, pts] : series)
        for (const auto& p : pts) {
            x0 = std::min(x0, p.x);
            x1 = std::max(x1, p.x);
            y0 = std::min(y0, p.lo);
            y1 = std::max(y1, p.hi);
        }
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * (w - left - right); };
    auto sy = [&](double y) { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
    o << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = y0 + (y1 - y0) * i / 4.0;
        o << "<text x=\"" << left - 6 << "\" y=\"" << sy(y) + 4 << "\" text-anchor=\"end\">" << fmt(y) << "</text>\n";
    }
    for (const auto& [name, pts] : series)
        for (const auto& p : pts)
            o << "<text x=\"" << sx(p.x) << "\" y=\"" << h - bottom + 16 << "\" text-anchor=\"middle\">" << p.x
              << "</text>\n";
    o << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">M</text>\n";
    std::size_t c = 0;
    for (const auto& [name, pts] : series) {
        const char* color = kColors[c % 5];
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& p : pts) o << sx(p.x) << "," << sy(p.y) << " ";
        o << "\"/>\n";
        for (const auto& p : pts) {
            o << "<line x1=\"" << sx(p.x) << "\" y1=\"" << sy(p.lo) << "\" x2=\"" << sx(p.x) << "\" y2=\"" << sy(p.hi)
              << "\" stroke=\"" << color << "\"/>\n";
            o << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        o << "<text x=\"" << w - right + 10 << "\" y=\"" << top + 16 * (c + 1) << "\" fill=\"" << color << "\">" << name
          << "</text>\n";
        ++c;
    }
    o << "</svg>\n";
    return o.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

}  // namespace

void write_report_files(const std::filesystem::path& dir, std::span<const MetricReport> reports) {
    std::filesystem::create_directories(dir);
    // method -> M -> metric -> report
    std::map<std::string, std::map<std::size_t, std::map<std::string, const MetricReport*>>> table;
    std::map<std::string, const MetricReport*> rmse;
    for (const auto& r : reports) {
        if (r.metric == "rmse")
            rmse[r.method] = &r;
        else
            table[r.method][r.m][r.metric] = &r;
    }
    std::ostringstream csv;
    csv.precision(10);
    const char* metrics[] = {"mean_rank", "map", "mar"};
    csv << "method,M";
    for (const char* m : metrics) csv << ',' << m << ',' << m << "_ci_low," << m << "_ci_high";
    csv << ",rmse,rmse_ci_low,rmse_ci_high,n_records\n";
    for (const auto& [method, by_m] : table)
        for (const auto& [m, by_metric] : by_m) {
            csv << method << ',' << m;
            std::size_t n = 0;
            for (const char* name : metrics) {
                const auto it = by_metric.find(name);
                const MetricReport* r = it == by_metric.end() ? nullptr : it->second;
                csv << ',';
                if (r && r->value) csv << *r->value;
                csv << ',';
                if (r && r->ci) csv << r->ci->low;
                csv << ',';
                if (r && r->ci) csv << r->ci->high;
                if (r) n = r->n_records;
            }
            const auto rt = rmse.find(method);
            const MetricReport* r = rt == rmse.end() ? nullptr : rt->second;
            csv << ',';
            if (r && r->value) csv << *r->value;
            csv << ',';
            if (r && r->ci) csv << r->ci->low;
            csv << ',';
            if (r && r->ci) csv << r->ci->high;
            csv << ',' << n << '\n';
        }
    write_file(dir / "report.csv", csv.str());

    const std::pair<const char*, const char*> plots[] = {
        {"mean_rank", "Mean rank vs M"}, {"map", "MAP@M"}, {"mar", "MAR@M"}};
    for (const auto& [metric, title] : plots) {
        std::map<std::string, std::vector<Point>> series;
        for (const auto& [method, by_m] : table)
            for (const auto& [m, by_metric] : by_m) {
                const auto it = by_metric.find(metric);
                if (it == by_metric.end() || !it->second->value) continue;
                const auto* r = it->second;
                const double v = *r->value;
                series[method].push_back({static_cast<double>(m), v, r->ci ? r->ci->low : v, r->ci ? r->ci->high : v});
            }
        if (!series.empty()) write_file(dir / (std::string(metric) + ".svg"), line_plot(title, series));
    }
    if (!rmse.empty()) {
        std::map<std::string, std::vector<Point>> series;
        double x = 1;
        for (const auto& [method, r] : rmse) {
            if (!r->value) continue;
            series[method].push_back({x++, *r->value, r->ci ? r->ci->low : *r->value, r->ci ? r->ci->high : *r->value});
        }
        if (!series.empty()) write_file(dir / "rmse.svg", line_plot("Time RMSE by method", series));
    }
}

}  // namespace evrank
