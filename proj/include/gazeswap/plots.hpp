#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gazeswap/eval_stats.hpp"

namespace gazeswap {

enum class PlotKind { BoxWhisker, PerVideoBars, GazeScatter };

PlotKind parse_plot_kind(const std::string& text);  ///< box_whisker | per_video_bars | gaze_scatter
std::string plot_kind_name(PlotKind k);

struct PlotSpec {
    PlotKind kind = PlotKind::BoxWhisker;
    std::filesystem::path input;   ///< records CSV, or gaze CSV / meta.csv for scatter plots
    std::filesystem::path output;  ///< SVG file
    std::string x_label;
    std::string y_label;
};

/// Counts of the drawn primitives, for shape checks.
struct PlotSummary {
    size_t boxes = 0;
    size_t lines = 0;
    size_t groups = 0;
    size_t bars = 0;
    size_t panels = 0;
    size_t points = 0;
};

/// Per-frame gaze of one series ("source" or a method) within one video.
struct GazeSeries {
    std::string video;
    std::string series;
    std::vector<GazeAngles> points;
};

/// Gaze CSV written next to records: individual,method,frame_index,source_pitch,source_yaw,swap_pitch,swap_yaw
void write_gaze_csv(const std::filesystem::path& path, const std::vector<ExperimentRecord>& keys,
                    const std::vector<FrameGaze>& gazes);

/// Reads either the gaze CSV above (source plus one series per method) or a
/// dataset meta.csv (a single "source" series named after its directory).
std::vector<GazeSeries> read_gaze_series(const std::filesystem::path& path);

/// Per-condition boxes over per-video mean errors, with each video's points
/// connected across conditions.
std::string box_whisker_svg(const std::vector<ExperimentRecord>& records, PlotSummary* summary = nullptr,
                            const std::string& y_label = "mean gaze error (deg)");

/// One group per video, one bar per condition.
std::string per_video_bars_svg(const std::vector<ExperimentRecord>& records, PlotSummary* summary = nullptr,
                               const std::string& y_label = "mean gaze error (deg)");

/// Pitch (horizontal) against yaw (vertical); one row per video, one panel per series.
std::string gaze_scatter_svg(const std::vector<GazeSeries>& series, PlotSummary* summary = nullptr,
                             const std::string& x_label = "pitch (rad)", const std::string& y_label = "yaw (rad)");

/// Reads the input, renders the requested kind, writes the SVG.
PlotSummary render_plot(const PlotSpec& spec);

}  // namespace gazeswap
