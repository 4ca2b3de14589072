#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "pdl/corpus.hpp"
#include "pdl/synth.hpp"

#include <fmt/format.h>

using namespace pdl;
using namespace pdl::corpus;

namespace {

// Random log with motion, door and temperature readings, optional labels, strictly increasing times.
std::vector<SensorEvent> random_events(std::mt19937_64& rng, std::size_t n, int days = 3) {
    const char* sensors[] = {"M001", "M002", "M003", "D001", "T001"};
    std::uniform_int_distribution<int> pick(0, 4);
    std::bernoulli_distribution labeled(0.5);
    std::uniform_real_distribution<double> temp(18.0, 26.0);
    const auto start = parse_timestamp("2010-03-01", "00:00:00");
    const auto span_us = std::int64_t{days} * 86'400'000'000LL;
    std::vector<std::int64_t> offsets(n);
    std::uniform_int_distribution<std::int64_t> at(0, span_us - 1);
    for (auto& o : offsets) {
        o = at(rng);
    }
    std::sort(offsets.begin(), offsets.end());
    std::vector<SensorEvent> out;
    for (std::size_t i = 0; i < n; ++i) {
        SensorEvent e;
        e.timestamp = start + std::chrono::microseconds(offsets[i] / 10'000 * 10'000);
        e.sensor_id = sensors[pick(rng)];
        if (e.sensor_id[0] == 'T') {
            e.value = fmt::format("{:.1f}", temp(rng));
        } else if (e.sensor_id[0] == 'D') {
            e.value = pick(rng) % 2 ? "OPEN" : "CLOSE";
        } else {
            e.value = pick(rng) % 2 ? "ON" : "OFF";
        }
        if (labeled(rng)) {
            e.truth_label = pick(rng) % 2 ? "Cook" : "Sleep";
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<SensorEvent> toggles(std::size_t n, const char* day = "2010-03-01") {
    std::vector<SensorEvent> out;
    for (std::size_t i = 0; i < n; ++i) {
        SensorEvent e;
        e.timestamp = parse_timestamp(day, "08:00:00") + std::chrono::seconds(i);
        e.sensor_id = "M1";
        e.value = i % 2 ? "OFF" : "ON";
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

TEST_CASE("parse_event_log examples") {
    auto r = parse_event_log_text("2009-12-11 08:45:00.00 M003 ON\n");
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].sensor_id == "M003");
    CHECK(r.events[0].value == "ON");
    CHECK_FALSE(r.events[0].truth_label.has_value());
    CHECK(r.events[0].label_or_no_label() == kNoLabel);
    CHECK(format_day(r.events[0].day_key()) == "2009-12-11");

    auto empty = parse_event_log_text("");
    CHECK(empty.events.empty());
    CHECK_FALSE(empty.report.warnings.empty());

    auto garbage = parse_event_log_text("garbage\n");
    CHECK(garbage.events.empty());
    REQUIRE(garbage.report.skipped.size() == 1);
    CHECK(garbage.report.skipped[0].line_number == 1);

    auto bad_time = parse_event_log_text("2009-12-11 25:99:00 M003 ON\n2009-12-11 08:00:00 M001 OFF\n");
    CHECK(bad_time.events.size() == 1);
    REQUIRE(bad_time.report.skipped.size() == 1);
    CHECK(bad_time.report.skipped[0].line_number == 1);
}

TEST_CASE("begin/end markers label the enclosed span") {
    const char* log =
        "2009-12-11 08:00:00.00 M001 ON\n"
        "2009-12-11 08:00:01.00 M002 ON Cook begin\n"
        "2009-12-11 08:00:02.00 M003 ON\n"
        "2009-12-11 08:00:03.00 M002 OFF Cook end\n"
        "2009-12-11 08:00:04.00 M001 OFF\n"
        "2009-12-11 08:00:05.00 M004 ON Sleep\n";
    auto r = parse_event_log_text(log);
    REQUIRE(r.events.size() == 6);
    CHECK(r.events[0].label_or_no_label() == kNoLabel);
    CHECK(r.events[1].label_or_no_label() == "Cook");
    CHECK(r.events[2].label_or_no_label() == "Cook");
    CHECK(r.events[3].label_or_no_label() == "Cook");
    CHECK(r.events[4].label_or_no_label() == kNoLabel);
    CHECK(r.events[5].label_or_no_label() == "Sleep");
}

TEST_CASE("out-of-order timestamps are reported and stably sorted") {
    auto r = parse_event_log_text(
        "2009-12-11 08:00:02 M001 ON\n"
        "2009-12-11 08:00:01 M002 ON\n"
        "2009-12-11 08:00:01 M003 ON\n");
    CHECK(r.report.out_of_order == 1);
    REQUIRE(r.events.size() == 3);
    CHECK(r.events[0].sensor_id == "M002");
    CHECK(r.events[1].sensor_id == "M003");
    CHECK(r.events[2].sensor_id == "M001");
}

TEST_CASE("parse, serialize, parse round-trips") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto events = random_events(rng, 1 + rng() % 200);
        auto again = parse_event_log_text(serialize_event_log(events));
        CHECK(again.report.skipped.empty());
        CHECK(again.events == events);
        CHECK(events_from_csv(events_to_csv(events)) == events);
    }
    synth::SynthConfig sc;
    sc.days = 2;
    sc.events_per_day = 300;
    const auto planted = synth::generate(sc);
    CHECK(parse_event_log_text(serialize_event_log(planted)).events == planted);
}

TEST_CASE("build_vocabulary examples") {
    CHECK(make_token("M1", "ON", 1.0) == "M1_ON");
    CHECK(make_token("T002", "21.4", 1.0) == "T002_21");
    CHECK(make_token("T002", "21.4", 0.5) == "T002_21");
    CHECK(make_token("T002", "21.6", 0.5) == "T002_21.5");

    const auto v = build_vocabulary(toggles(10));
    CHECK(v.size() == 6);
    CHECK(v.token_of(Vocabulary::kPad) == "[PAD]");
    CHECK(v.token_of(Vocabulary::kMask) == "[MASK]");
    CHECK(v.token_of(Vocabulary::kCls) == "[CLS]");
    CHECK(v.token_of(Vocabulary::kUnk) == "[UNK]");
    CHECK(v.contains("M1_ON"));
    CHECK(v.contains("M1_OFF"));
}

TEST_CASE("vocabulary covers training tokens, maps unseen to [UNK], and round-trips") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto events = random_events(rng, 50 + rng() % 100);
        const auto v = build_vocabulary(events, trial % 2 ? 0.5 : 1.0);
        std::set<TokenId> ids;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto id = static_cast<TokenId>(i);
            CHECK(v.id_of(v.token_of(id)) == id);
            ids.insert(id);
        }
        CHECK(ids.size() == v.size());
        for (const auto& e : events) {
            CHECK(v.encode(e) >= Vocabulary::kFirstSensorToken);
            CHECK(v.token_for(e).rfind(e.sensor_id + "_", 0) == 0);
        }
        SensorEvent unseen{events.front().timestamp, "M999", "ON", std::nullopt};
        CHECK(v.encode(unseen) == Vocabulary::kUnk);
        const auto back = Vocabulary::from_json(v.to_json());
        CHECK(back.tokens() == v.tokens());
        CHECK(back.temperature_bin_width() == v.temperature_bin_width());
    }
}

TEST_CASE("make_windows examples and boundaries") {
    const auto events = toggles(25);
    const auto v = build_vocabulary(events);
    CHECK(make_windows(toggles(20), v, 20, 1).size() == 1);
    CHECK(make_windows(events, v, 20, 5).size() == 2);
    CHECK(window_count(433'665, 20, 1) == 433'646);

    Diagnostics diag;
    CHECK(make_windows(toggles(19), v, 20, 1, &diag).empty());
    CHECK_FALSE(diag.empty());
}

TEST_CASE("make_windows count and shape over random parameters") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t l = 1 + rng() % 25;
        const std::size_t stride = 1 + rng() % 7;
        const std::size_t n = l + rng() % 80;
        const auto events = random_events(rng, n);
        const auto v = build_vocabulary(events);
        const auto windows = make_windows(events, v, l, stride);
        REQUIRE(windows.size() == (n - l) / stride + 1);
        CHECK(window_count(n, l, stride) == windows.size());
        for (std::size_t i = 0; i < windows.size(); ++i) {
            const auto& w = windows[i];
            CHECK(w.window_id == static_cast<WindowId>(i));
            CHECK(w.start_event_index == i * stride);
            CHECK(w.token_ids.size() == l);
            CHECK(w.end_event_index - w.start_event_index + 1 == l);
            CHECK(w.day_key == events[w.start_event_index].day_key());
            for (std::size_t j = 0; j < l; ++j) {
                CHECK(w.token_ids[j] == v.encode(events[w.start_event_index + j]));
            }
        }
        CHECK(windows_from_jsonl(windows_to_jsonl(windows)) == windows);
    }
}

TEST_CASE("midnight-spanning window belongs to its first event's day") {
    auto events = toggles(3, "2010-03-01");
    for (std::size_t i = 0; i < events.size(); ++i) {
        events[i].timestamp = parse_timestamp("2010-03-01", "23:59:58") + std::chrono::seconds(i);
    }
    const auto w = make_windows(events, build_vocabulary(events), 3, 1);
    REQUIRE(w.size() == 1);
    CHECK(format_day(w[0].day_key) == "2010-03-01");
    CHECK(format_day(events[2].day_key()) == "2010-03-02");
}

TEST_CASE("sample_windows") {
    const auto events = toggles(300);
    const auto windows = make_windows(events, build_vocabulary(events), 20, 1);
    CHECK(sample_windows(windows, 1.0, 9) == windows);

    const auto a = sample_windows(windows, 0.1, 42);
    const auto b = sample_windows(windows, 0.1, 42);
    CHECK(a == b);
    CHECK(a.size() == windows.size() / 10);
    for (std::size_t i = 1; i < a.size(); ++i) {
        CHECK(a[i - 1].window_id < a[i].window_id);
    }
    CHECK(sample_windows(windows, 1e-9, 1).size() == 1);
    CHECK_THROWS_AS(sample_windows(windows, 0.0, 1), ValidationError);
    CHECK_THROWS_AS(sample_windows(windows, 1.5, 1), ValidationError);
}

TEST_CASE("split_by_days partitions days and windows") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        const int days = 2 + static_cast<int>(rng() % 12);
        const auto events = random_events(rng, 40 * static_cast<std::size_t>(days), days);
        const auto windows = make_windows(events, build_vocabulary(events), 5, 1);
        std::set<Day> all;
        for (const auto& w : windows) {
            all.insert(w.day_key);
        }
        if (all.size() < 2) {
            continue;
        }
        const auto plan = split_by_days(windows, 0.8, rng());
        std::set<Day> both;
        std::set_intersection(plan.train_days.begin(), plan.train_days.end(), plan.test_days.begin(),
                              plan.test_days.end(), std::inserter(both, both.end()));
        CHECK(both.empty());
        CHECK(plan.train_days.size() + plan.test_days.size() == all.size());
        const auto expected = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(all.size()))), 1, all.size() - 1);
        CHECK(plan.train_days.size() == expected);
        const auto parts = partition(windows, plan);
        CHECK(parts.train.size() + parts.test.size() == windows.size());
        for (const auto& w : parts.train) {
            CHECK(plan.is_train(w.day_key));
        }
        for (const auto& w : parts.test) {
            CHECK_FALSE(plan.is_train(w.day_key));
        }
    }
}

TEST_CASE("split_by_days examples and errors") {
    std::vector<Window> windows;
    for (int d = 1; d <= 10; ++d) {
        Window w;
        w.window_id = d;
        w.day_key = parse_day(fmt::format("2010-03-{:02}", d));
        windows.push_back(w);
    }
    const auto plan = split_by_days(windows, 0.8, 1);
    CHECK(plan.train_days.size() == 8);
    CHECK(plan.test_days.size() == 2);
    CHECK(split_by_days(windows, 0.8, 1).train_days == plan.train_days);

    windows.resize(1);
    CHECK_THROWS_AS(split_by_days(windows, 0.8, 1), ValidationError);
    CHECK_THROWS_AS(split_by_days({}, 0.8, 1), ValidationError);
}

TEST_CASE("label mapping, numeric dropping and window truth label") {
    const auto mapping = LabelMapping::parse("# comment\nMeal_Preparation\tCook\nEating,Eat\n");
    CHECK(mapping.map("Meal_Preparation") == "Cook");
    CHECK(mapping.map("Eating") == "Eat");
    CHECK(mapping.map("Unknown_Activity") == kOtherLabel);
    CHECK(mapping.map(kNoLabel) == kNoLabel);
    CHECK_THROWS_AS(LabelMapping::parse("no separator here\n"), ValidationError);

    auto events = parse_event_log_text(
                      "2010-03-01 08:00:00 M001 ON Meal_Preparation begin\n"
                      "2010-03-01 08:00:01 T001 21.5\n"
                      "2010-03-01 08:00:02 M001 OFF Meal_Preparation end\n"
                      "2010-03-01 08:00:03 M002 ON Eating\n")
                      .events;
    events = apply_label_mapping(std::move(events), mapping);
    CHECK(events[0].label_or_no_label() == "Cook");
    CHECK(events[3].label_or_no_label() == "Eat");

    const auto motion = drop_numeric_events(events);
    CHECK(motion.size() == 3);
    CHECK(is_numeric_value("21.5"));
    CHECK_FALSE(is_numeric_value("ON"));

    const auto v = build_vocabulary(events);
    const auto windows = make_windows(events, v, 4, 1);
    CHECK(window_truth_label(windows[0], events) == "Cook");
    // One Cook and one Eat event: the tie goes to the later event.
    const auto tie = make_windows(motion, v, 2, 1);
    CHECK(window_truth_label(tie[1], motion) == "Eat");
}
