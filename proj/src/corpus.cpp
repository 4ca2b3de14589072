#include "pdl/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "pdl/io.hpp"

namespace pdl::corpus {

namespace chr = std::chrono;
using nlohmann::json;

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) {
            ++i;
        }
        std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') {
            ++i;
        }
        if (i > start) {
            out.push_back(line.substr(start, i - start));
        }
    }
    return out;
}

template <class Int>
bool parse_int(std::string_view text, Int& out) {
    if (text.empty()) {
        return false;
    }
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc{} && ptr == text.data() + text.size();
}

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

std::string join(const std::vector<std::string_view>& parts, std::size_t first, std::size_t last, char sep) {
    std::string out;
    for (std::size_t i = first; i < last; ++i) {
        if (i > first) {
            out += sep;
        }
        out += parts[i];
    }
    return out;
}

}  // namespace

Day SensorEvent::day_key() const { return Day{chr::floor<chr::days>(timestamp)}; }

std::string SensorEvent::label_or_no_label() const { return truth_label.value_or(kNoLabel); }

Timestamp parse_timestamp(std::string_view date, std::string_view time) {
    auto bad = [&] { return ValidationError(fmt::format("unparseable timestamp '{} {}'", date, time)); };
    if (date.size() != 10 || date[4] != '-' || date[7] != '-') {
        throw bad();
    }
    int y = 0;
    unsigned mo = 0;
    unsigned d = 0;
    if (!parse_int(date.substr(0, 4), y) || !parse_int(date.substr(5, 2), mo) || !parse_int(date.substr(8, 2), d)) {
        throw bad();
    }
    Day day{chr::year{y}, chr::month{mo}, chr::day{d}};
    if (!day.ok()) {
        throw bad();
    }
    if (time.size() < 8 || time[2] != ':' || time[5] != ':') {
        throw bad();
    }
    int hh = 0;
    int mm = 0;
    int ss = 0;
    if (!parse_int(time.substr(0, 2), hh) || !parse_int(time.substr(3, 2), mm) || !parse_int(time.substr(6, 2), ss) ||
        hh > 23 || mm > 59 || ss > 60) {
        throw bad();
    }
    std::int64_t micros = 0;
    if (time.size() > 8) {
        if (time[8] != '.' || time.size() == 9) {
            throw bad();
        }
        auto frac = time.substr(9);
        if (!std::all_of(frac.begin(), frac.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            throw bad();
        }
        std::string digits(frac.substr(0, std::min<std::size_t>(6, frac.size())));
        digits.resize(6, '0');
        parse_int(std::string_view(digits), micros);
    }
    return Timestamp{chr::sys_days{day}.time_since_epoch()} + chr::hours{hh} + chr::minutes{mm} + chr::seconds{ss} +
           chr::microseconds{micros};
}

std::string format_day(Day day) {
    return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(day.year()), static_cast<unsigned>(day.month()),
                       static_cast<unsigned>(day.day()));
}

Day parse_day(std::string_view text) {
    auto ts = parse_timestamp(text, "00:00:00");
    return Day{chr::floor<chr::days>(ts)};
}

std::string format_timestamp(Timestamp ts) {
    auto days = chr::floor<chr::days>(ts);
    auto rest = ts - days;
    auto h = chr::duration_cast<chr::hours>(rest);
    rest -= h;
    auto m = chr::duration_cast<chr::minutes>(rest);
    rest -= m;
    auto s = chr::duration_cast<chr::seconds>(rest);
    rest -= s;
    return fmt::format("{} {:02d}:{:02d}:{:02d}.{:06d}", format_day(Day{days}), h.count(), m.count(), s.count(),
                       rest.count());
}

ParseResult parse_event_log(std::istream& in) {
    ParseResult result;
    std::vector<std::string> open_spans;
    std::string line;
    std::size_t line_number = 0;
    bool saw_content = false;
    while (std::getline(in, line)) {
        ++line_number;
        auto fields = split_ws(line);
        if (fields.empty()) {
            continue;
        }
        saw_content = true;
        if (fields.size() < 4) {
            result.report.skipped.push_back({line_number, "fewer than 4 fields", line});
            continue;
        }
        SensorEvent ev;
        try {
            ev.timestamp = parse_timestamp(fields[0], fields[1]);
        } catch (const ValidationError& e) {
            result.report.skipped.push_back({line_number, e.what(), line});
            continue;
        }
        ev.sensor_id = std::string(fields[2]);
        ev.value = std::string(fields[3]);

        const bool marker = fields.size() >= 6 && (iequals(fields.back(), "begin") || iequals(fields.back(), "end"));
        if (marker) {
            std::string activity = join(fields, 4, fields.size() - 1, ' ');
            if (iequals(fields.back(), "begin")) {
                open_spans.push_back(activity);
                ev.truth_label = activity;
            } else {
                ev.truth_label = activity;
                auto it = std::find(open_spans.rbegin(), open_spans.rend(), activity);
                if (it != open_spans.rend()) {
                    open_spans.erase(std::next(it).base());
                } else {
                    result.report.warnings.push_back(
                        fmt::format("line {}: '{} end' without matching begin", line_number, activity));
                }
            }
        } else if (fields.size() >= 5) {
            ev.truth_label = join(fields, 4, fields.size(), ' ');
        } else if (!open_spans.empty()) {
            ev.truth_label = open_spans.back();
        }
        result.events.push_back(std::move(ev));
    }
    if (!saw_content) {
        result.report.warnings.push_back("empty event log");
    }
    for (std::size_t i = 1; i < result.events.size(); ++i) {
        if (result.events[i].timestamp < result.events[i - 1].timestamp) {
            ++result.report.out_of_order;
        }
    }
    if (result.report.out_of_order > 0) {
        result.report.warnings.push_back(
            fmt::format("{} timestamp inversion(s); events stably sorted", result.report.out_of_order));
        std::stable_sort(result.events.begin(), result.events.end(),
                         [](const SensorEvent& a, const SensorEvent& b) { return a.timestamp < b.timestamp; });
    }
    if (!result.report.skipped.empty()) {
        result.report.warnings.push_back(fmt::format("{} malformed line(s) skipped", result.report.skipped.size()));
    }
    return result;
}

ParseResult parse_event_log_text(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse_event_log(in);
}

std::string serialize_event_log(const std::vector<SensorEvent>& events) {
    std::string out;
    for (const auto& ev : events) {
        out += fmt::format("{}\t{}\t{}", format_timestamp(ev.timestamp), ev.sensor_id, ev.value);
        if (ev.truth_label) {
            out += '\t';
            out += *ev.truth_label;
        }
        out += '\n';
    }
    return out;
}

bool is_numeric_value(std::string_view value) {
    if (value.empty()) {
        return false;
    }
    double v = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    return ec == std::errc{} && ptr == value.data() + value.size() && std::isfinite(v);
}

std::string make_token(std::string_view sensor_id, std::string_view value, double bin_width) {
    if (is_numeric_value(value)) {
        double v = 0;
        std::from_chars(value.data(), value.data() + value.size(), v);
        double binned = std::floor(v / bin_width) * bin_width + 0.0;
        if (binned == 0.0) {
            binned = 0.0;  // no "-0"
        }
        return fmt::format("{}_{}", sensor_id, io::format_double(binned));
    }
    return fmt::format("{}_{}", sensor_id, value);
}

Vocabulary::Vocabulary(std::vector<std::string> sensor_tokens, double temperature_bin_width)
    : bin_width_(temperature_bin_width) {
    if (!(temperature_bin_width > 0.0)) {
        throw ValidationError("temperature_bin_width must be positive");
    }
    tokens_ = {"[PAD]", "[MASK]", "[CLS]", "[UNK]"};
    std::sort(sensor_tokens.begin(), sensor_tokens.end());
    sensor_tokens.erase(std::unique(sensor_tokens.begin(), sensor_tokens.end()), sensor_tokens.end());
    for (auto& t : sensor_tokens) {
        if (t.size() >= 2 && t.front() == '[' && t.back() == ']') {
            throw ValidationError(fmt::format("sensor token '{}' collides with special token syntax", t));
        }
        tokens_.push_back(std::move(t));
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        index_.emplace(tokens_[i], static_cast<TokenId>(i));
    }
}

TokenId Vocabulary::id_of(std::string_view token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw ValidationError(fmt::format("token id {} out of range", id));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return index_.find(token) != index_.end(); }

std::string Vocabulary::token_for(const SensorEvent& event) const {
    return make_token(event.sensor_id, event.value, bin_width_);
}

std::string Vocabulary::to_json() const {
    json j;
    j["v"] = 1;
    j["temperature_bin_width"] = bin_width_;
    j["tokens"] = tokens_;
    return j.dump(1) + "\n";
}

Vocabulary Vocabulary::from_json(std::string_view text) {
    auto j = json::parse(text);
    auto tokens = j.at("tokens").get<std::vector<std::string>>();
    if (tokens.size() < 4 || tokens[0] != "[PAD]" || tokens[1] != "[MASK]" || tokens[2] != "[CLS]" ||
        tokens[3] != "[UNK]") {
        throw ValidationError("vocabulary file lacks the special-token prefix");
    }
    tokens.erase(tokens.begin(), tokens.begin() + 4);
    return Vocabulary(std::move(tokens), j.at("temperature_bin_width").get<double>());
}

Vocabulary build_vocabulary(const std::vector<SensorEvent>& events, double temperature_bin_width) {
    if (events.empty()) {
        throw ValidationError("build_vocabulary requires at least one event");
    }
    std::vector<std::string> tokens;
    tokens.reserve(events.size());
    for (const auto& ev : events) {
        tokens.push_back(make_token(ev.sensor_id, ev.value, temperature_bin_width));
    }
    return Vocabulary(std::move(tokens), temperature_bin_width);
}

std::size_t window_count(std::size_t n_events, std::size_t length, std::size_t stride) {
    if (length == 0 || stride == 0 || n_events < length) {
        return 0;
    }
    return (n_events - length) / stride + 1;
}

std::vector<Window> make_windows(const std::vector<SensorEvent>& events, const Vocabulary& vocab, std::size_t length,
                                 std::size_t stride, Diagnostics* diag) {
    if (length < 1 || stride < 1) {
        throw ValidationError("window length and stride must be >= 1");
    }
    std::vector<Window> windows;
    if (events.size() < length) {
        warn(diag, fmt::format("{} events is fewer than the window length {}; no windows", events.size(), length));
        return windows;
    }
    std::vector<TokenId> ids(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        ids[i] = vocab.encode(events[i]);
    }
    const std::size_t count = window_count(events.size(), length, stride);
    windows.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        const std::size_t start = w * stride;
        Window win;
        win.window_id = static_cast<WindowId>(w);
        win.start_event_index = start;
        win.end_event_index = start + length - 1;
        win.token_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(start),
                             ids.begin() + static_cast<std::ptrdiff_t>(start + length));
        win.day_key = events[start].day_key();
        windows.push_back(std::move(win));
    }
    return windows;
}

std::vector<Window> sample_windows(const std::vector<Window>& windows, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ValidationError(fmt::format("sample fraction {} outside (0, 1]", fraction));
    }
    if (windows.empty()) {
        return {};
    }
    auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(windows.size()) + 1e-9));
    count = std::clamp<std::size_t>(count, 1, windows.size());
    std::vector<Window> out;
    out.reserve(count);
    std::mt19937_64 rng(seed);
    std::sample(windows.begin(), windows.end(), std::back_inserter(out), count, rng);
    return out;
}

SplitPlan split_by_days(const std::vector<Window>& windows, double train_ratio, std::uint64_t seed) {
    if (windows.empty()) {
        throw ValidationError("split_by_days requires windows");
    }
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
        throw ValidationError(fmt::format("train ratio {} outside (0, 1)", train_ratio));
    }
    std::set<Day> days;
    for (const auto& w : windows) {
        days.insert(w.day_key);
    }
    if (days.size() < 2) {
        throw ValidationError("day split needs at least 2 distinct days");
    }
    std::vector<Day> order(days.begin(), days.end());
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(order.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, order.size() - 1);
    SplitPlan plan;
    plan.seed = seed;
    plan.train_days.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    plan.test_days.insert(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    return plan;
}

Partition partition(const std::vector<Window>& windows, const SplitPlan& plan) {
    Partition p;
    for (const auto& w : windows) {
        (plan.is_train(w.day_key) ? p.train : p.test).push_back(w);
    }
    return p;
}

std::vector<SensorEvent> drop_numeric_events(const std::vector<SensorEvent>& events) {
    std::vector<SensorEvent> out;
    out.reserve(events.size());
    std::copy_if(events.begin(), events.end(), std::back_inserter(out),
                 [](const SensorEvent& e) { return !is_numeric_value(e.value); });
    return out;
}

std::string window_truth_label(const Window& window, const std::vector<SensorEvent>& events) {
    if (window.end_event_index >= events.size() || window.start_event_index > window.end_event_index) {
        throw ValidationError(fmt::format("window {} references events outside the log", window.window_id));
    }
    std::map<std::string, int> counts;
    for (std::size_t i = window.start_event_index; i <= window.end_event_index; ++i) {
        ++counts[events[i].label_or_no_label()];
    }
    int best = 0;
    for (const auto& [label, c] : counts) {
        best = std::max(best, c);
    }
    for (std::size_t i = window.end_event_index + 1; i-- > window.start_event_index;) {
        auto label = events[i].label_or_no_label();
        if (counts[label] == best) {
            return label;
        }
    }
    return kNoLabel;
}

LabelMapping LabelMapping::parse(std::string_view text) {
    std::map<std::string, std::string> table;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line[0] == '#') {
            continue;
        }
        auto sep = line.find('\t');
        if (sep == std::string::npos) {
            sep = line.find(',');
        }
        if (sep == std::string::npos) {
            throw ValidationError(fmt::format("label map line without separator: '{}'", line));
        }
        table[line.substr(0, sep)] = line.substr(sep + 1);
    }
    return LabelMapping(std::move(table));
}

std::string LabelMapping::map(std::string_view raw) const {
    if (table_.empty() || raw == kNoLabel) {
        return std::string(raw);
    }
    auto it = table_.find(raw);
    return it == table_.end() ? std::string(kOtherLabel) : it->second;
}

std::vector<SensorEvent> apply_label_mapping(std::vector<SensorEvent> events, const LabelMapping& mapping) {
    for (auto& ev : events) {
        if (ev.truth_label) {
            ev.truth_label = mapping.map(*ev.truth_label);
        }
    }
    return events;
}

std::string events_to_csv(const std::vector<SensorEvent>& events) {
    std::string out = "timestamp,sensor,value,truth_label\n";
    for (const auto& ev : events) {
        out += fmt::format("{},{},{},{}\n", format_timestamp(ev.timestamp), io::csv_escape(ev.sensor_id),
                           io::csv_escape(ev.value), io::csv_escape(ev.truth_label.value_or("")));
    }
    return out;
}

std::vector<SensorEvent> events_from_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::vector<SensorEvent> events;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) {
            continue;
        }
        auto f = io::csv_split(line);
        if (f.size() != 4) {
            throw ValidationError(fmt::format("events CSV row has {} fields", f.size()));
        }
        auto space = f[0].find(' ');
        SensorEvent ev;
        ev.timestamp = parse_timestamp(std::string_view(f[0]).substr(0, space), std::string_view(f[0]).substr(space + 1));
        ev.sensor_id = f[1];
        ev.value = f[2];
        if (!f[3].empty()) {
            ev.truth_label = f[3];
        }
        events.push_back(std::move(ev));
    }
    return events;
}

std::string windows_to_jsonl(const std::vector<Window>& windows) {
    std::string out;
    for (const auto& w : windows) {
        json j;
        j["window_id"] = w.window_id;
        j["day"] = format_day(w.day_key);
        j["start"] = w.start_event_index;
        j["end"] = w.end_event_index;
        j["tokens"] = w.token_ids;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<Window> windows_from_jsonl(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::vector<Window> windows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto j = json::parse(line);
        Window w;
        w.window_id = j.at("window_id").get<WindowId>();
        w.day_key = parse_day(j.at("day").get<std::string>());
        w.start_event_index = j.at("start").get<std::size_t>();
        w.end_event_index = j.at("end").get<std::size_t>();
        w.token_ids = j.at("tokens").get<std::vector<TokenId>>();
        windows.push_back(std::move(w));
    }
    return windows;
}

}  // namespace pdl::corpus
