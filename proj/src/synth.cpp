#include "pdl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <fmt/format.h>

#include "pdl/encoder.hpp"

namespace pdl::synth {

HouseholdSpec HouseholdSpec::planted_default() {
    HouseholdSpec h;
    h.rooms = {{"Kitchen", {"M001", "M002", "M003", "M004", "M005", "M006", "D001", "T001"}},
               {"Living Room", {"M007", "M008", "M009"}},
               {"Bedroom", {"M010", "M011", "M012"}},
               {"Bathroom", {"M013", "M014", "D002"}},
               {"Hallway", {"M015", "M016"}}};
    RoutineSpec cook;
    cook.label = "Cook";
    cook.sensors = {"M001", "M002", "M003", "M004", "M005", "M006", "D001", "T001"};
    // Food preparation near the fridge, then stove use, alternating in long runs.
    cook.phases = {{"M001", "M002", "M003", "D001"}, {"M004", "M005", "M006", "T001"}};
    cook.min_phase_events = 25;
    cook.max_phase_events = 50;
    cook.mean_gap_seconds = 15.0;
    RoutineSpec relax;
    relax.label = "Relax";
    relax.sensors = {"M007", "M008", "M009"};
    relax.mean_gap_seconds = 40.0;
    RoutineSpec sleep;
    sleep.label = "Sleep";
    sleep.sensors = {"M010", "M011", "M012"};
    sleep.mean_gap_seconds = 120.0;
    RoutineSpec bathing;
    bathing.label = "Bathing";
    bathing.sensors = {"M013", "M014", "D002"};
    bathing.mean_gap_seconds = 10.0;
    h.routines = {cook, relax, sleep, bathing};
    return h;
}

std::vector<std::string> HouseholdSpec::all_sensors() const {
    std::set<std::string> ids;
    for (const auto& r : rooms) {
        ids.insert(r.sensors.begin(), r.sensors.end());
    }
    return {ids.begin(), ids.end()};
}

void HouseholdSpec::validate() const {
    if (rooms.empty() || routines.size() < 2) {
        throw ValidationError("household needs at least one room and two routines");
    }
    std::set<std::string> placed;
    for (const auto& r : rooms) {
        for (const auto& s : r.sensors) {
            if (s.empty() || (s[0] != 'M' && s[0] != 'D' && s[0] != 'T')) {
                throw ValidationError(fmt::format("sensor '{}' must start with M, D or T", s));
            }
            if (!placed.insert(s).second) {
                throw ValidationError(fmt::format("sensor '{}' placed in two rooms", s));
            }
        }
    }
    for (const auto& r : routines) {
        if (r.label.empty() || r.sensors.empty()) {
            throw ValidationError("routine needs a label and sensors");
        }
        if (r.min_events < 2 || r.max_events < r.min_events) {
            throw ValidationError(fmt::format("routine '{}': need 2 <= min_events <= max_events", r.label));
        }
        if (!(r.mean_gap_seconds > 0.0)) {
            throw ValidationError(fmt::format("routine '{}': mean_gap_seconds must be positive", r.label));
        }
        if (!r.weights.empty() && (r.weights.size() != r.sensors.size() ||
                                   std::any_of(r.weights.begin(), r.weights.end(), [](double w) { return !(w > 0.0); }))) {
            throw ValidationError(fmt::format("routine '{}': one positive weight per sensor", r.label));
        }
        for (const auto& phase : r.phases) {
            if (phase.empty()) {
                throw ValidationError(fmt::format("routine '{}': empty phase", r.label));
            }
            for (const auto& s : phase) {
                if (std::find(r.sensors.begin(), r.sensors.end(), s) == r.sensors.end()) {
                    throw ValidationError(fmt::format("routine '{}': phase sensor '{}' not in the routine", r.label, s));
                }
            }
        }
        if (!r.phases.empty() && (r.min_phase_events < 1 || r.max_phase_events < r.min_phase_events)) {
            throw ValidationError(fmt::format("routine '{}': need 1 <= min_phase_events <= max_phase_events", r.label));
        }
        for (const auto& s : r.sensors) {
            if (!placed.contains(s)) {
                throw ValidationError(fmt::format("routine '{}' uses unplaced sensor '{}'", r.label, s));
            }
        }
    }
    if (!transitions.empty()) {
        if (transitions.size() != routines.size()) {
            throw ValidationError("transition matrix must be routines x routines");
        }
        for (const auto& row : transitions) {
            double sum = 0.0;
            for (double p : row) {
                if (p < 0.0) {
                    throw ValidationError("transition probabilities must be non-negative");
                }
                sum += p;
            }
            if (row.size() != routines.size() || std::abs(sum - 1.0) > 1e-9) {
                throw ValidationError("each transition row must have one entry per routine and sum to 1");
            }
        }
    }
}

io::Json HouseholdSpec::to_json() const {
    io::Json rooms_j = io::Json::array();
    for (const auto& r : rooms) {
        rooms_j.push_back({{"name", r.name}, {"sensors", r.sensors}});
    }
    io::Json routines_j = io::Json::array();
    for (const auto& r : routines) {
        routines_j.push_back({{"label", r.label},
                              {"sensors", r.sensors},
                              {"weights", r.weights},
                              {"phases", r.phases},
                              {"min_phase_events", r.min_phase_events},
                              {"max_phase_events", r.max_phase_events},
                              {"min_events", r.min_events},
                              {"max_events", r.max_events},
                              {"mean_gap_seconds", r.mean_gap_seconds}});
    }
    return {{"v", 1}, {"name", name}, {"rooms", rooms_j}, {"routines", routines_j}, {"transitions", transitions}};
}

HouseholdSpec HouseholdSpec::from_json(const io::Json& j) {
    HouseholdSpec h;
    h.name = j.value("name", std::string("synthetic"));
    for (const auto& r : j.at("rooms")) {
        h.rooms.push_back({r.at("name").get<std::string>(), r.at("sensors").get<std::vector<std::string>>()});
    }
    for (const auto& r : j.at("routines")) {
        RoutineSpec spec;
        spec.label = r.at("label").get<std::string>();
        spec.sensors = r.at("sensors").get<std::vector<std::string>>();
        spec.weights = r.value("weights", std::vector<double>{});
        spec.phases = r.value("phases", std::vector<std::vector<std::string>>{});
        spec.min_phase_events = r.value("min_phase_events", spec.min_phase_events);
        spec.max_phase_events = r.value("max_phase_events", spec.max_phase_events);
        spec.min_events = r.value("min_events", spec.min_events);
        spec.max_events = r.value("max_events", spec.max_events);
        spec.mean_gap_seconds = r.value("mean_gap_seconds", spec.mean_gap_seconds);
        h.routines.push_back(std::move(spec));
    }
    if (j.contains("transitions")) {
        h.transitions = j["transitions"].get<std::vector<std::vector<double>>>();
    }
    h.validate();
    return h;
}

namespace {

std::string reading(const std::string& sensor, bool first_half, std::mt19937_64& rng) {
    switch (sensor[0]) {
        case 'D':
            return first_half ? "OPEN" : "CLOSE";
        case 'T': {
            std::uniform_real_distribution<double> temp(19.0, 25.0);
            return fmt::format("{:.1f}", temp(rng));
        }
        default:
            return first_half ? "ON" : "OFF";
    }
}

}  // namespace

std::vector<corpus::SensorEvent> generate(const SynthConfig& config) {
    const auto& house = config.household;
    house.validate();
    if (config.days == 0 || config.events_per_day < 2) {
        throw ValidationError("synth needs at least one day and two events per day");
    }
    if (config.noise < 0.0 || config.noise > 1.0) {
        throw ValidationError("noise must lie in [0,1]");
    }
    const auto everywhere = house.all_sensors();
    const auto n_routines = house.routines.size();
    auto transition_row = [&](std::size_t from) {
        if (!house.transitions.empty()) {
            return house.transitions[from];
        }
        std::vector<double> row(n_routines, 1.0 / static_cast<double>(n_routines - 1));
        row[from] = 0.0;
        return row;
    };

    std::mt19937_64 rng(encoder::mix_seed(config.seed, 0x5e7d));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<corpus::SensorEvent> events;
    const auto first_day = std::chrono::sys_days{corpus::parse_day(config.start_day)};
    std::size_t routine = rng() % n_routines;

    for (std::size_t d = 0; d < config.days; ++d) {
        const auto day_start = first_day + std::chrono::days(d);
        const auto day_end = corpus::Timestamp(day_start + std::chrono::hours(23) + std::chrono::minutes(50));
        corpus::Timestamp t = day_start + std::chrono::hours(6) +
                              std::chrono::microseconds(static_cast<std::int64_t>(unit(rng) * 3.6e9));
        std::size_t today = 0;
        while (today < config.events_per_day && t < day_end) {
            const auto& spec = house.routines[routine];
            const std::size_t length =
                spec.min_events + static_cast<std::size_t>(rng() % (spec.max_events - spec.min_events + 1));
            std::exponential_distribution<double> gap(1.0 / spec.mean_gap_seconds);
            std::vector<double> weights = spec.weights;
            if (weights.empty()) {
                weights.assign(spec.sensors.size(), 1.0);
            }
            std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
            std::string open_sensor;
            std::size_t phase = spec.phases.empty() ? 0 : rng() % spec.phases.size();
            std::size_t phase_left = 0;
            auto draw_phase_run = [&] {
                return spec.min_phase_events +
                       static_cast<std::size_t>(rng() % (spec.max_phase_events - spec.min_phase_events + 1));
            };
            if (!spec.phases.empty()) {
                phase_left = draw_phase_run();
            }
            for (std::size_t i = 0; i < length && t < day_end; ++i) {
                if (!spec.phases.empty() && phase_left-- == 0) {
                    if (spec.phases.size() > 1) {
                        phase = (phase + 1 + rng() % (spec.phases.size() - 1)) % spec.phases.size();
                    }
                    phase_left = draw_phase_run() - 1;
                }
                std::string sensor;
                bool first_half = true;
                if (!open_sensor.empty() && unit(rng) < 0.7) {
                    sensor = open_sensor;
                    first_half = false;
                    open_sensor.clear();
                } else if (unit(rng) < config.noise) {
                    sensor = everywhere[rng() % everywhere.size()];
                } else if (!spec.phases.empty()) {
                    const auto& pool = spec.phases[phase];
                    sensor = pool[rng() % pool.size()];
                } else {
                    sensor = spec.sensors[pick(rng)];
                }
                if (first_half && sensor[0] != 'T') {
                    open_sensor = sensor;
                }
                events.push_back({t, sensor, reading(sensor, first_half, rng), spec.label});
                t += std::chrono::microseconds(100'000 + static_cast<std::int64_t>(gap(rng) * 1e6));
                ++today;
            }
            t += std::chrono::minutes(5 + static_cast<int>(rng() % 85));
            const auto row = transition_row(routine);
            std::discrete_distribution<std::size_t> next(row.begin(), row.end());
            routine = next(rng);
        }
    }
    return events;
}

serve::HouseLayout make_layout(const HouseholdSpec& household) {
    household.validate();
    serve::HouseLayout layout;
    layout.dataset = household.name;
    const auto n = household.rooms.size();
    const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    const auto rows = (n + cols - 1) / cols;
    const double w = 1.0 / static_cast<double>(cols);
    const double h = 1.0 / static_cast<double>(rows);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& room = household.rooms[i];
        const double x0 = static_cast<double>(i % cols) * w;
        const double y0 = static_cast<double>(i / cols) * h;
        layout.rooms.push_back({room.name, {{x0, y0}, {x0 + w, y0}, {x0 + w, y0 + h}, {x0, y0 + h}}});
        const auto m = room.sensors.size();
        for (std::size_t s = 0; s < m; ++s) {
            // Sensors sit on a circle inside the room so markers never overlap the walls.
            const double angle = 2.0 * M_PI * static_cast<double>(s) / static_cast<double>(std::max<std::size_t>(m, 1));
            const double r = m == 1 ? 0.0 : 0.3;
            layout.sensors[room.sensors[s]] = {x0 + w * (0.5 + r * std::cos(angle)), y0 + h * (0.5 + r * std::sin(angle))};
        }
    }
    return layout;
}

}  // namespace pdl::synth
