#pragma once

#include <chrono>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pdl/common.hpp"

namespace pdl::corpus {

using Timestamp = std::chrono::sys_time<std::chrono::microseconds>;
using Day = std::chrono::year_month_day;

/// One timestamped sensor reading.
struct SensorEvent {
    Timestamp timestamp;
    std::string sensor_id;
    std::string value;
    /// Ground-truth activity; empty outside annotated spans.
    std::optional<std::string> truth_label;

    Day day_key() const;
    /// The truth label, or "No Label" when absent.
    std::string label_or_no_label() const;

    bool operator==(const SensorEvent&) const = default;
};

struct SkippedLine {
    std::size_t line_number;  // 1-based
    std::string reason;
    std::string text;
};

struct ParseReport {
    std::vector<SkippedLine> skipped;
    std::size_t out_of_order = 0;
    std::vector<std::string> warnings;
};

struct ParseResult {
    std::vector<SensorEvent> events;
    ParseReport report;
};

/// Parses a CASAS-style log: `date time sensor value [activity [begin|end]]`.
///
/// Lines with an activity followed by `begin`/`end` open and close a labeled span
/// (the closing line is inside the span); a bare fifth token labels that line only.
/// Timestamp inversions are reported and the events stably sorted.
ParseResult parse_event_log(std::istream& in);
ParseResult parse_event_log_text(std::string_view text);

/// Serializes events in the raw log layout; labels are written per line.
std::string serialize_event_log(const std::vector<SensorEvent>& events);

Timestamp parse_timestamp(std::string_view date, std::string_view time);
std::string format_timestamp(Timestamp ts);
std::string format_day(Day day);
Day parse_day(std::string_view text);

/// Bijective token <-> id map with the four special tokens at ids 0..3.
class Vocabulary {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kMask = 1;
    static constexpr TokenId kCls = 2;
    static constexpr TokenId kUnk = 3;
    static constexpr TokenId kFirstSensorToken = 4;

    Vocabulary(std::vector<std::string> sensor_tokens, double temperature_bin_width);

    std::size_t size() const { return tokens_.size(); }
    double temperature_bin_width() const { return bin_width_; }

    TokenId id_of(std::string_view token) const;  // [UNK] when unknown
    const std::string& token_of(TokenId id) const;
    bool contains(std::string_view token) const;

    /// The token for one event, e.g. "M003_ON" or "T002_21".
    std::string token_for(const SensorEvent& event) const;
    TokenId encode(const SensorEvent& event) const { return id_of(token_for(event)); }

    const std::vector<std::string>& tokens() const { return tokens_; }

    std::string to_json() const;
    static Vocabulary from_json(std::string_view text);

private:
    std::vector<std::string> tokens_;
    std::map<std::string, TokenId, std::less<>> index_;
    double bin_width_;
};

/// Token text for (sensor, value), binning numeric readings down to multiples of `bin_width`.
std::string make_token(std::string_view sensor_id, std::string_view value, double bin_width);

Vocabulary build_vocabulary(const std::vector<SensorEvent>& events, double temperature_bin_width = 1.0);

/// True for sensors whose readings are continuous (numeric values).
bool is_numeric_value(std::string_view value);

struct Window {
    WindowId window_id = 0;
    std::vector<TokenId> token_ids;
    std::size_t start_event_index = 0;
    std::size_t end_event_index = 0;  // inclusive
    Day day_key{};

    bool operator==(const Window&) const = default;
};

/// Sliding windows at offsets 0, stride, 2*stride, ...; window_id equals the ordinal.
std::vector<Window> make_windows(const std::vector<SensorEvent>& events, const Vocabulary& vocab,
                                 std::size_t length, std::size_t stride, Diagnostics* diag = nullptr);

/// Number of windows make_windows produces for n events.
std::size_t window_count(std::size_t n_events, std::size_t length, std::size_t stride);

/// Uniform sample of floor(fraction * n) windows (at least one) without replacement, order preserved.
std::vector<Window> sample_windows(const std::vector<Window>& windows, double fraction, std::uint64_t seed);

struct SplitPlan {
    std::set<Day> train_days;
    std::set<Day> test_days;
    std::uint64_t seed = 0;

    bool is_train(Day day) const { return train_days.count(day) != 0; }
};

/// Random day-level split; |train_days| = round(train_ratio * days), clamped to [1, days-1].
SplitPlan split_by_days(const std::vector<Window>& windows, double train_ratio, std::uint64_t seed);

struct Partition {
    std::vector<Window> train;
    std::vector<Window> test;
};
Partition partition(const std::vector<Window>& windows, const SplitPlan& plan);

/// Drops events whose values are numeric readings (temperature streams).
std::vector<SensorEvent> drop_numeric_events(const std::vector<SensorEvent>& events);

/// Majority truth label over a window's events; ties go to the label of the latest event among the tied.
std::string window_truth_label(const Window& window, const std::vector<SensorEvent>& events);

/// Raw-activity -> unified-category table (tab or comma separated `raw<TAB>unified`).
class LabelMapping {
public:
    LabelMapping() = default;
    explicit LabelMapping(const std::map<std::string, std::string>& table) : table_(table.begin(), table.end()) {}
    static LabelMapping parse(std::string_view text);

    /// Unified label; "No Label" passes through, unknown activities become "Other".
    std::string map(std::string_view raw) const;
    bool empty() const { return table_.empty(); }

private:
    std::map<std::string, std::string, std::less<>> table_;
};

std::vector<SensorEvent> apply_label_mapping(std::vector<SensorEvent> events, const LabelMapping& mapping);

// Columnar / manifest formats.
std::string events_to_csv(const std::vector<SensorEvent>& events);
std::vector<SensorEvent> events_from_csv(std::string_view text);
std::string windows_to_jsonl(const std::vector<Window>& windows);
std::vector<Window> windows_from_jsonl(std::string_view text);

}  // namespace pdl::corpus
