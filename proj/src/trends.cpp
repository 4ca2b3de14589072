#include "pdl/trends.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace pdl::trends {

double PeriodDistribution::share_of(const std::string& label) const {
    auto it = shares.find(label);
    return it == shares.end() ? 0.0 : it->second;
}

PeriodDistribution period_distribution(std::span<const DatedLabel> labeled, Day start, Day end) {
    if (!start.ok() || !end.ok()) {
        throw ValidationError("period bounds must be valid dates");
    }
    if (end < start) {
        throw ValidationError(fmt::format("period start {} is after end {}", corpus::format_day(start),
                                          corpus::format_day(end)));
    }
    PeriodDistribution out{start, end, {}, {}, 0};
    for (const auto& w : labeled) {
        if (start <= w.day && w.day <= end) {
            ++out.counts[w.label];
            ++out.total;
        }
    }
    if (out.total == 0) {
        throw ValidationError(fmt::format("no windows between {} and {}", corpus::format_day(start),
                                          corpus::format_day(end)));
    }
    for (const auto& [label, n] : out.counts) {
        out.shares[label] = static_cast<double>(n) / static_cast<double>(out.total);
    }
    return out;
}

double TrendDelta::delta_of(const std::string& label) const {
    for (const auto& r : rows) {
        if (r.label == label) {
            return r.delta_pp;
        }
    }
    return 0.0;
}

TrendDelta compare_periods(const PeriodDistribution& first, const PeriodDistribution& second) {
    std::map<std::string, LabelDelta> merged;
    for (const auto& [label, share] : first.shares) {
        merged[label].share1 = share;
    }
    for (const auto& [label, share] : second.shares) {
        merged[label].share2 = share;
    }
    TrendDelta out;
    for (auto& [label, row] : merged) {
        row.label = label;
        row.delta_pp = (row.share2 - row.share1) * 100.0;
        out.rows.push_back(row);
    }
    std::stable_sort(out.rows.begin(), out.rows.end(), [](const LabelDelta& a, const LabelDelta& b) {
        return std::abs(a.delta_pp) > std::abs(b.delta_pp);
    });
    return out;
}

std::vector<DatedLabel> date_labels(const std::vector<corpus::Window>& windows,
                                    const std::map<WindowId, std::string>& labels) {
    std::vector<DatedLabel> out;
    out.reserve(labels.size());
    for (const auto& w : windows) {
        auto it = labels.find(w.window_id);
        if (it != labels.end()) {
            out.push_back({w.day_key, it->second});
        }
    }
    return out;
}

std::vector<DatedLabel> truth_labels(const std::vector<corpus::Window>& windows,
                                     const std::vector<corpus::SensorEvent>& events) {
    std::vector<DatedLabel> out;
    out.reserve(windows.size());
    for (const auto& w : windows) {
        out.push_back({w.day_key, corpus::window_truth_label(w, events)});
    }
    return out;
}

std::string report_csv(const PeriodDistribution& first, const PeriodDistribution& second, const TrendDelta& delta) {
    auto count = [](const PeriodDistribution& d, const std::string& label) {
        auto it = d.counts.find(label);
        return it == d.counts.end() ? std::size_t{0} : it->second;
    };
    std::string out = "label,count1,share1,count2,share2,delta_pp\n";
    for (const auto& r : delta.rows) {
        out += fmt::format("{},{},{},{},{},{}\n", io::csv_escape(r.label), count(first, r.label),
                           io::format_double(r.share1), count(second, r.label), io::format_double(r.share2),
                           io::format_double(r.delta_pp));
    }
    return out;
}

io::Json report_json(const PeriodDistribution& first, const PeriodDistribution& second, const TrendDelta& delta,
                     const std::string& space) {
    auto period = [](const PeriodDistribution& d) {
        return io::Json{{"start", corpus::format_day(d.start)},
                        {"end", corpus::format_day(d.end)},
                        {"windows", d.total},
                        {"shares", d.shares}};
    };
    io::Json rows = io::Json::array();
    for (const auto& r : delta.rows) {
        rows.push_back({{"label", r.label}, {"share1", r.share1}, {"share2", r.share2}, {"delta_pp", r.delta_pp}});
    }
    return {{"v", 1}, {"space", space}, {"period1", period(first)}, {"period2", period(second)}, {"deltas", rows}};
}

std::string plot_data(const TrendDelta& delta) {
    std::string out = "# label share1 share2 delta_pp\n";
    for (const auto& r : delta.rows) {
        out += fmt::format("\"{}\" {} {} {}\n", r.label, io::format_double(r.share1), io::format_double(r.share2),
                           io::format_double(r.delta_pp));
    }
    return out;
}

}  // namespace pdl::trends
