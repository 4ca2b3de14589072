#include <doctest.h>

#include <algorithm>
#include <random>

#include "pdl/trends.hpp"

using namespace pdl;
using namespace pdl::trends;
using corpus::parse_day;

namespace {

std::vector<DatedLabel> week(const char* day, std::vector<std::string> labels) {
    std::vector<DatedLabel> out;
    for (auto& l : labels) {
        out.push_back({parse_day(day), std::move(l)});
    }
    return out;
}

double share_sum(const PeriodDistribution& d) {
    double s = 0.0;
    for (const auto& [label, share] : d.shares) {
        s += share;
    }
    return s;
}

}  // namespace

TEST_CASE("period_distribution examples") {
    auto one = week("2009-11-25", {"Cook", "Cook", "Cook"});
    CHECK(period_distribution(one, parse_day("2009-11-25"), parse_day("2009-11-25")).share_of("Cook") == 1.0);

    auto aab = week("2009-11-25", {"A", "A", "B"});
    auto d = period_distribution(aab, parse_day("2009-11-20"), parse_day("2009-11-30"));
    CHECK(d.share_of("A") == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(d.share_of("B") == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(d.total == 3);
    CHECK(d.counts.at("A") == 2);
}

TEST_CASE("period bounds are inclusive and validated") {
    std::vector<DatedLabel> ws{{parse_day("2009-11-24"), "X"},
                               {parse_day("2009-11-25"), "A"},
                               {parse_day("2009-12-01"), "B"},
                               {parse_day("2009-12-02"), "Y"}};
    auto d = period_distribution(ws, parse_day("2009-11-25"), parse_day("2009-12-01"));
    CHECK(d.total == 2);
    CHECK(d.share_of("X") == 0.0);
    CHECK_THROWS_AS(period_distribution(ws, parse_day("2009-12-05"), parse_day("2009-12-09")), ValidationError);
    CHECK_THROWS_AS(period_distribution(ws, parse_day("2009-12-01"), parse_day("2009-11-25")), ValidationError);
}

TEST_CASE("compare_periods examples") {
    auto p1 = period_distribution(week("2009-11-25", {"A", "A"}), parse_day("2009-11-25"), parse_day("2009-11-25"));
    auto p2 = period_distribution(week("2009-12-23", {"A", "A", "B", "B", "B"}), parse_day("2009-12-23"),
                                  parse_day("2009-12-23"));
    auto delta = compare_periods(p1, p2);
    REQUIRE(delta.rows.size() == 2);
    CHECK(delta.delta_of("A") == doctest::Approx(-60.0).epsilon(1e-12));
    CHECK(delta.delta_of("B") == doctest::Approx(60.0).epsilon(1e-12));
    CHECK(delta.delta_of("absent") == 0.0);

    auto same = compare_periods(p2, p2);
    for (const auto& r : same.rows) {
        CHECK(r.delta_pp == 0.0);
    }
}

TEST_CASE("distribution and delta properties on random periods") {
    std::mt19937_64 rng(2024);
    const std::vector<std::string> labels{"Cook", "Eat", "Relax", "Sleep", "Work", "Other"};
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<DatedLabel> ws;
        const int n = 1 + static_cast<int>(rng() % 300);
        for (int i = 0; i < n; ++i) {
            const auto day = std::chrono::sys_days{parse_day("2009-11-20")} + std::chrono::days(rng() % 40);
            // Label sets differ between halves of the month, so some labels exist in one period only.
            const auto pool = std::chrono::year_month_day{day} < parse_day("2009-12-05") ? 4u : 6u;
            ws.push_back({std::chrono::year_month_day{day}, labels[rng() % pool]});
        }
        ws.push_back({parse_day("2009-11-22"), "Cook"});
        ws.push_back({parse_day("2009-12-20"), "Other"});
        auto p1 = period_distribution(ws, parse_day("2009-11-20"), parse_day("2009-11-30"));
        auto p2 = period_distribution(ws, parse_day("2009-12-15"), parse_day("2009-12-29"));
        CHECK(share_sum(p1) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(share_sum(p2) == doctest::Approx(1.0).epsilon(1e-9));

        auto shuffled = ws;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        auto p1s = period_distribution(shuffled, parse_day("2009-11-20"), parse_day("2009-11-30"));
        CHECK(p1s.counts == p1.counts);
        CHECK(p1s.shares == p1.shares);

        auto forward = compare_periods(p1, p2);
        auto backward = compare_periods(p2, p1);
        double total = 0.0;
        for (const auto& r : forward.rows) {
            total += r.delta_pp;
            CHECK(backward.delta_of(r.label) == -r.delta_pp);
        }
        CHECK(std::abs(total) < 1e-6);
        for (std::size_t i = 1; i < forward.rows.size(); ++i) {
            CHECK(std::abs(forward.rows[i - 1].delta_pp) >= std::abs(forward.rows[i].delta_pp));
        }
    }
}

TEST_CASE("report formats") {
    auto p1 = period_distribution(week("2009-11-25", {"A", "A"}), parse_day("2009-11-25"), parse_day("2009-11-25"));
    auto p2 = period_distribution(week("2009-12-23", {"A", "A", "B", "B", "B"}), parse_day("2009-12-23"),
                                  parse_day("2009-12-23"));
    auto delta = compare_periods(p1, p2);
    CHECK(report_csv(p1, p2, delta) ==
          "label,count1,share1,count2,share2,delta_pp\n"
          "A,2,1,2,0.4,-60\n"
          "B,0,0,3,0.6,60\n");
    CHECK(plot_data(delta) == "# label share1 share2 delta_pp\n\"A\" 1 0.4 -60\n\"B\" 0 0.6 60\n");
    auto json = report_json(p1, p2, delta, "truth");
    CHECK(json["v"] == 1);
    CHECK(json["space"] == "truth");
    CHECK(json["period1"]["start"] == "2009-11-25");
    CHECK(json["deltas"].size() == 2);
}

TEST_CASE("label spaces from windows") {
    std::vector<corpus::SensorEvent> evs;
    for (int i = 0; i < 6; ++i) {
        evs.push_back({corpus::parse_timestamp(i < 3 ? "2009-11-25" : "2009-12-23", "10:00:00"), "M001", "ON",
                       i < 3 ? std::optional<std::string>("Cook") : std::nullopt});
    }
    std::vector<corpus::Window> ws;
    for (std::size_t s = 0; s + 3 <= evs.size(); s += 3) {
        corpus::Window w;
        w.window_id = static_cast<WindowId>(ws.size());
        w.start_event_index = s;
        w.end_event_index = s + 2;
        w.day_key = evs[s].day_key();
        ws.push_back(w);
    }
    auto truth = truth_labels(ws, evs);
    REQUIRE(truth.size() == 2);
    CHECK(truth[0].label == "Cook");
    CHECK(truth[1].label == kNoLabel);
    auto discovered = date_labels(ws, {{1, "Movement in Kitchen"}});
    REQUIRE(discovered.size() == 1);
    CHECK(discovered[0].day == parse_day("2009-12-23"));
}
