#include "gazeswap/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "gazeswap/csv.hpp"

namespace gazeswap {
namespace {

constexpr const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3"};

std::string num(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    return os.str();
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

class Svg {
public:
    Svg(double w, double h) : w_(w), h_(h) {}

    void text(double x, double y, const std::string& s, const std::string& anchor = "middle", double size = 12,
              double rotate = 0) {
        body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << num(size)
              << "\" text-anchor=\"" << anchor << "\"";
        if (rotate != 0) {
            body_ << " transform=\"rotate(" << num(rotate) << " " << num(x) << " " << num(y) << ")\"";
        }
        body_ << ">" << escape(s) << "</text>\n";
    }
    void line(double x1, double y1, double x2, double y2, const std::string& stroke = "#000", double width = 1) {
        body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
              << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"/>\n";
    }
    void raw(const std::string& s) { body_ << s; }

    std::string str() const {
        std::ostringstream os;
        os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
           << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w_) << "\" height=\"" << num(h_)
           << "\" viewBox=\"0 0 " << num(w_) << " " << num(h_) << "\">\n"
           << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n"
           << body_.str() << "</svg>\n";
        return os.str();
    }

private:
    double w_, h_;
    std::ostringstream body_;
};

struct PerVideo {
    std::vector<ConditionId> methods;
    std::vector<std::string> videos;
    std::map<std::pair<std::string, ConditionId>, double> mean_deg;
};

PerVideo per_video_means(const std::vector<ExperimentRecord>& records) {
    if (records.empty()) {
        throw ContractViolation("cannot plot an empty record set");
    }
    PerVideo pv;
    std::set<ConditionId> methods;
    std::set<std::string> videos;
    for (const auto& row : aggregate_individual(records)) {
        methods.insert(row.method);
        videos.insert(row.individual);
        pv.mean_deg[{row.individual, row.method}] = row.mean_error_deg;
    }
    pv.methods.assign(methods.begin(), methods.end());
    pv.videos.assign(videos.begin(), videos.end());
    return pv;
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    double pos = q * static_cast<double>(v.size() - 1);
    size_t lo = static_cast<size_t>(std::floor(pos));
    size_t hi = std::min(v.size() - 1, lo + 1);
    return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

double nice_max(double v) {
    if (v <= 0.0) {
        return 1.0;
    }
    double mag = std::pow(10.0, std::floor(std::log10(v)));
    for (double step : {1.0, 2.0, 2.5, 5.0, 10.0}) {
        if (step * mag >= v) {
            return step * mag;
        }
    }
    return 10.0 * mag;
}

void y_axis(Svg& svg, double x0, double y0, double y1, double vmax, const std::string& label) {
    svg.line(x0, y0, x0, y1);
    for (int i = 0; i <= 5; ++i) {
        double v = vmax * i / 5.0;
        double y = y0 - (y0 - y1) * i / 5.0;
        svg.line(x0 - 4, y, x0, y);
        svg.text(x0 - 6, y + 4, num(v), "end", 10);
    }
    svg.text(x0 - 40, (y0 + y1) / 2, label, "middle", 12, -90);
}

}  // namespace

PlotKind parse_plot_kind(const std::string& text) {
    if (text == "box_whisker") {
        return PlotKind::BoxWhisker;
    }
    if (text == "per_video_bars") {
        return PlotKind::PerVideoBars;
    }
    if (text == "gaze_scatter") {
        return PlotKind::GazeScatter;
    }
    throw ConfigError("unknown plot kind '" + text + "' (expected box_whisker, per_video_bars or gaze_scatter)");
}

std::string plot_kind_name(PlotKind k) {
    switch (k) {
        case PlotKind::BoxWhisker: return "box_whisker";
        case PlotKind::PerVideoBars: return "per_video_bars";
        case PlotKind::GazeScatter: return "gaze_scatter";
    }
    return "?";
}

std::string box_whisker_svg(const std::vector<ExperimentRecord>& records, PlotSummary* summary,
                            const std::string& y_label) {
    PerVideo pv = per_video_means(records);
    const double slot = 120.0;
    const double left = 70.0, top = 30.0, plot_h = 320.0;
    const double width = left + slot * pv.methods.size() + 30.0;
    const double height = top + plot_h + 70.0;
    double vmax = 0.0;
    for (const auto& [k, v] : pv.mean_deg) {
        vmax = std::max(vmax, v);
    }
    vmax = nice_max(vmax * 1.05);
    auto ypos = [&](double v) { return top + plot_h - plot_h * v / vmax; };
    auto xpos = [&](size_t i) { return left + slot * (i + 0.5); };

    Svg svg(width, height);
    PlotSummary s;
    y_axis(svg, left, top + plot_h, top, vmax, y_label);
    svg.line(left, top + plot_h, width - 20, top + plot_h);
    for (size_t i = 0; i < pv.methods.size(); ++i) {
        std::vector<double> vals;
        for (const auto& v : pv.videos) {
            auto it = pv.mean_deg.find({v, pv.methods[i]});
            if (it != pv.mean_deg.end()) {
                vals.push_back(it->second);
            }
        }
        double q1 = quantile(vals, 0.25), q2 = quantile(vals, 0.5), q3 = quantile(vals, 0.75);
        double iqr = q3 - q1;
        double lo = q1, hi = q3;
        for (double v : vals) {
            if (v >= q1 - 1.5 * iqr) {
                lo = std::min(lo, v);
            }
            if (v <= q3 + 1.5 * iqr) {
                hi = std::max(hi, v);
            }
        }
        const double x = xpos(i);
        const char* color = kPalette[i % 7];
        svg.line(x, ypos(lo), x, ypos(q1));
        svg.line(x, ypos(q3), x, ypos(hi));
        svg.line(x - 15, ypos(lo), x + 15, ypos(lo));
        svg.line(x - 15, ypos(hi), x + 15, ypos(hi));
        std::ostringstream box;
        box << "<rect class=\"box\" data-method=\"" << condition_name(pv.methods[i]) << "\" x=\"" << num(x - 35)
            << "\" y=\"" << num(ypos(q3)) << "\" width=\"70\" height=\"" << num(std::max(0.5, ypos(q1) - ypos(q3)))
            << "\" fill=\"" << color << "\" fill-opacity=\"0.4\" stroke=\"" << color << "\"/>\n";
        svg.raw(box.str());
        svg.line(x - 35, ypos(q2), x + 35, ypos(q2), "#222", 2);
        svg.text(x, top + plot_h + 18, std::string(condition_label(pv.methods[i])), "middle", 11);
        ++s.boxes;
    }
    for (const auto& v : pv.videos) {
        std::ostringstream pts;
        std::ostringstream marks;
        for (size_t i = 0; i < pv.methods.size(); ++i) {
            auto it = pv.mean_deg.find({v, pv.methods[i]});
            if (it == pv.mean_deg.end()) {
                continue;
            }
            pts << num(xpos(i)) << "," << num(ypos(it->second)) << " ";
            marks << "<circle class=\"pt\" cx=\"" << num(xpos(i)) << "\" cy=\"" << num(ypos(it->second))
                  << "\" r=\"3\" fill=\"#333\"/>\n";
            ++s.points;
        }
        svg.raw("<polyline class=\"video-line\" data-video=\"" + escape(v) + "\" points=\"" + pts.str() +
                "\" fill=\"none\" stroke=\"#666\" stroke-opacity=\"0.6\"/>\n");
        svg.raw(marks.str());
        ++s.lines;
    }
    if (summary) {
        *summary = s;
    }
    return svg.str();
}

std::string per_video_bars_svg(const std::vector<ExperimentRecord>& records, PlotSummary* summary,
                               const std::string& y_label) {
    PerVideo pv = per_video_means(records);
    const double bar = 14.0;
    const double group_w = bar * pv.methods.size() + 20.0;
    const double left = 70.0, top = 30.0, plot_h = 300.0;
    const double legend_w = 180.0;
    const double width = left + group_w * pv.videos.size() + legend_w;
    const double height = top + plot_h + 90.0;
    double vmax = 0.0;
    for (const auto& [k, v] : pv.mean_deg) {
        vmax = std::max(vmax, v);
    }
    vmax = nice_max(vmax * 1.05);
    auto ypos = [&](double v) { return top + plot_h - plot_h * v / vmax; };

    Svg svg(width, height);
    PlotSummary s;
    y_axis(svg, left, top + plot_h, top, vmax, y_label);
    svg.line(left, top + plot_h, left + group_w * pv.videos.size(), top + plot_h);
    for (size_t g = 0; g < pv.videos.size(); ++g) {
        const double gx = left + g * group_w + 10.0;
        std::ostringstream grp;
        grp << "<g class=\"bar-group\" data-video=\"" << escape(pv.videos[g]) << "\">\n";
        for (size_t m = 0; m < pv.methods.size(); ++m) {
            auto it = pv.mean_deg.find({pv.videos[g], pv.methods[m]});
            if (it == pv.mean_deg.end()) {
                continue;
            }
            grp << "<rect class=\"bar\" data-method=\"" << condition_name(pv.methods[m]) << "\" x=\""
                << num(gx + m * bar) << "\" y=\"" << num(ypos(it->second)) << "\" width=\"" << num(bar - 1)
                << "\" height=\"" << num(top + plot_h - ypos(it->second)) << "\" fill=\"" << kPalette[m % 7]
                << "\"/>\n";
            ++s.bars;
        }
        grp << "</g>\n";
        svg.raw(grp.str());
        svg.text(gx + bar * pv.methods.size() / 2.0, top + plot_h + 14, pv.videos[g], "end", 10, -45);
        ++s.groups;
    }
    for (size_t m = 0; m < pv.methods.size(); ++m) {
        const double lx = width - legend_w + 10;
        const double ly = top + 18.0 * m;
        std::ostringstream key;
        key << "<rect x=\"" << num(lx) << "\" y=\"" << num(ly) << "\" width=\"12\" height=\"12\" fill=\""
            << kPalette[m % 7] << "\"/>\n";
        svg.raw(key.str());
        svg.text(lx + 18, ly + 10, std::string(condition_label(pv.methods[m])), "start", 11);
    }
    if (summary) {
        *summary = s;
    }
    return svg.str();
}

std::string gaze_scatter_svg(const std::vector<GazeSeries>& series, PlotSummary* summary, const std::string& x_label,
                             const std::string& y_label) {
    if (series.empty()) {
        throw ContractViolation("cannot plot an empty gaze series set");
    }
    std::vector<std::string> videos;
    std::vector<std::string> names;
    for (const auto& s : series) {
        if (std::find(videos.begin(), videos.end(), s.video) == videos.end()) {
            videos.push_back(s.video);
        }
        if (std::find(names.begin(), names.end(), s.series) == names.end()) {
            names.push_back(s.series);
        }
    }
    double pmin = 1e9, pmax = -1e9, ymin = 1e9, ymax = -1e9;
    for (const auto& s : series) {
        for (const auto& g : s.points) {
            pmin = std::min(pmin, g.pitch_mu);
            pmax = std::max(pmax, g.pitch_mu);
            ymin = std::min(ymin, g.yaw_phi);
            ymax = std::max(ymax, g.yaw_phi);
        }
    }
    if (pmin > pmax) {
        throw ContractViolation("gaze series contain no points");
    }
    const double pad_p = std::max(1e-3, 0.05 * (pmax - pmin));
    const double pad_y = std::max(1e-3, 0.05 * (ymax - ymin));
    pmin -= pad_p;
    pmax += pad_p;
    ymin -= pad_y;
    ymax += pad_y;

    const double cell = 170.0, gap = 30.0, left = 90.0, top = 40.0;
    const double width = left + names.size() * (cell + gap);
    const double height = top + videos.size() * (cell + gap) + 30.0;
    Svg svg(width, height);
    PlotSummary out;
    for (size_t c = 0; c < names.size(); ++c) {
        svg.text(left + c * (cell + gap) + cell / 2, top - 12, names[c], "middle", 12);
    }
    for (size_t r = 0; r < videos.size(); ++r) {
        const double oy = top + r * (cell + gap);
        svg.text(left - 50, oy + cell / 2, videos[r], "middle", 11, -90);
        for (size_t c = 0; c < names.size(); ++c) {
            const double ox = left + c * (cell + gap);
            std::ostringstream panel;
            panel << "<g class=\"panel\" data-row=\"" << escape(videos[r]) << "\" data-col=\"" << escape(names[c])
                  << "\">\n<rect x=\"" << num(ox) << "\" y=\"" << num(oy) << "\" width=\"" << num(cell)
                  << "\" height=\"" << num(cell) << "\" fill=\"none\" stroke=\"#999\"/>\n";
            for (const auto& s : series) {
                if (s.video != videos[r] || s.series != names[c]) {
                    continue;
                }
                for (const auto& g : s.points) {
                    double x = ox + cell * (g.pitch_mu - pmin) / (pmax - pmin);
                    double y = oy + cell - cell * (g.yaw_phi - ymin) / (ymax - ymin);
                    panel << "<circle class=\"pt\" cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"1.6\" fill=\""
                          << kPalette[c % 7] << "\" fill-opacity=\"0.6\"/>\n";
                    ++out.points;
                }
            }
            panel << "</g>\n";
            svg.raw(panel.str());
            ++out.panels;
            if (r + 1 == videos.size()) {
                svg.text(ox, oy + cell + 14, num(pmin), "start", 9);
                svg.text(ox + cell, oy + cell + 14, num(pmax), "end", 9);
                svg.text(ox + cell / 2, oy + cell + 26, x_label, "middle", 11);
            }
            if (c == 0) {
                svg.text(ox - 4, oy + cell, num(ymin), "end", 9);
                svg.text(ox - 4, oy + 9, num(ymax), "end", 9);
                svg.text(ox - 22, oy + cell / 2, y_label, "middle", 10, -90);
            }
        }
    }
    out.groups = videos.size();
    if (summary) {
        *summary = out;
    }
    return svg.str();
}

void write_gaze_csv(const std::filesystem::path& path, const std::vector<ExperimentRecord>& keys,
                    const std::vector<FrameGaze>& gazes) {
    if (keys.size() != gazes.size()) {
        throw ContractViolation("gaze rows must align with records");
    }
    CsvTable t;
    t.header = {"individual", "method", "frame_index", "source_pitch", "source_yaw", "swap_pitch", "swap_yaw"};
    for (size_t i = 0; i < keys.size(); ++i) {
        t.rows.push_back({keys[i].individual, std::string(condition_name(keys[i].method)),
                          std::to_string(gazes[i].frame_index), format_double(gazes[i].source.pitch_mu),
                          format_double(gazes[i].source.yaw_phi), format_double(gazes[i].swap.pitch_mu),
                          format_double(gazes[i].swap.yaw_phi)});
    }
    write_csv(path, t);
}

std::vector<GazeSeries> read_gaze_series(const std::filesystem::path& path) {
    CsvTable t = read_csv(path);
    std::vector<GazeSeries> out;
    auto series_for = [&](const std::string& video, const std::string& name) -> GazeSeries& {
        for (auto& s : out) {
            if (s.video == video && s.series == name) {
                return s;
            }
        }
        out.push_back({video, name, {}});
        return out.back();
    };
    bool is_meta = std::find(t.header.begin(), t.header.end(), "yaw_phi") != t.header.end();
    if (is_meta) {
        std::string video = path.parent_path().filename().string();
        size_t cp = t.column("pitch_mu");
        size_t cy = t.column("yaw_phi");
        for (const auto& row : t.rows) {
            series_for(video, "source").points.push_back({parse_double(row[cp]), parse_double(row[cy])});
        }
        return out;
    }
    size_t ci = t.column("individual"), cm = t.column("method"), cf = t.column("frame_index");
    size_t sp = t.column("source_pitch"), sy = t.column("source_yaw");
    size_t wp = t.column("swap_pitch"), wy = t.column("swap_yaw");
    // The source series is taken once per video, from the first method seen.
    std::map<std::string, std::string> source_owner;
    for (const auto& row : t.rows) {
        const std::string& video = row[ci];
        parse_int(row[cf]);
        auto [it, fresh] = source_owner.emplace(video, row[cm]);
        if (it->second == row[cm]) {
            series_for(video, "source").points.push_back({parse_double(row[sp]), parse_double(row[sy])});
        }
        std::string label(condition_label(parse_condition(row[cm])));
        series_for(video, label).points.push_back({parse_double(row[wp]), parse_double(row[wy])});
    }
    return out;
}

PlotSummary render_plot(const PlotSpec& spec) {
    PlotSummary s;
    std::string svg;
    switch (spec.kind) {
        case PlotKind::BoxWhisker:
            svg = box_whisker_svg(read_records(spec.input), &s,
                                  spec.y_label.empty() ? "mean gaze error (deg)" : spec.y_label);
            break;
        case PlotKind::PerVideoBars:
            svg = per_video_bars_svg(read_records(spec.input), &s,
                                     spec.y_label.empty() ? "mean gaze error (deg)" : spec.y_label);
            break;
        case PlotKind::GazeScatter:
            svg = gaze_scatter_svg(read_gaze_series(spec.input), &s,
                                   spec.x_label.empty() ? "pitch (rad)" : spec.x_label,
                                   spec.y_label.empty() ? "yaw (rad)" : spec.y_label);
            break;
    }
    if (spec.output.has_parent_path()) {
        std::filesystem::create_directories(spec.output.parent_path());
    }
    std::ofstream out(spec.output, std::ios::binary);
    if (!out) {
        throw IoError("cannot write plot " + spec.output.string());
    }
    out << svg;
    return s;
}

}  // namespace gazeswap
