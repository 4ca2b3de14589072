#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "pdl/corpus.hpp"
#include "pdl/io.hpp"

namespace pdl::trends {

using corpus::Day;

/// A window's day and the label it carries in some label space.
struct DatedLabel {
    Day day;
    std::string label;
};

struct PeriodDistribution {
    Day start;
    Day end;
    std::map<std::string, std::size_t> counts;
    std::map<std::string, double> shares;
    std::size_t total = 0;

    double share_of(const std::string& label) const;
};

/// Window shares per label over the windows whose day lies in [start, end].
/// Throws ValidationError when start > end or no window falls in the range.
PeriodDistribution period_distribution(std::span<const DatedLabel> labeled, Day start, Day end);

struct LabelDelta {
    std::string label;
    double share1 = 0.0;
    double share2 = 0.0;
    double delta_pp = 0.0;  // (share2 - share1) * 100
};

struct TrendDelta {
    std::vector<LabelDelta> rows;  // by |delta_pp| descending, then label

    /// Zero for labels absent from both periods.
    double delta_of(const std::string& label) const;
};

/// Per-label percentage-point change over the union of both label sets; missing labels count as share 0.
TrendDelta compare_periods(const PeriodDistribution& first, const PeriodDistribution& second);

/// Joins windows with per-window labels by window id; windows without a label are skipped.
std::vector<DatedLabel> date_labels(const std::vector<corpus::Window>& windows,
                                    const std::map<WindowId, std::string>& labels);

/// Ground-truth label space: each window's majority event label.
std::vector<DatedLabel> truth_labels(const std::vector<corpus::Window>& windows,
                                     const std::vector<corpus::SensorEvent>& events);

/// label,count1,share1,count2,share2,delta_pp
std::string report_csv(const PeriodDistribution& first, const PeriodDistribution& second, const TrendDelta& delta);
io::Json report_json(const PeriodDistribution& first, const PeriodDistribution& second, const TrendDelta& delta,
                     const std::string& space);
/// Whitespace-separated columns (label share1 share2 delta_pp) with a commented header, for plotting tools.
std::string plot_data(const TrendDelta& delta);

}  // namespace pdl::trends
