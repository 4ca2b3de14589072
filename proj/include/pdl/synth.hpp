#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pdl/corpus.hpp"
#include "pdl/io.hpp"
#include "pdl/serve.hpp"

namespace pdl::synth {

struct RoomSpec {
    std::string name;
    std::vector<std::string> sensors;  // ids starting with M (motion), D (door) or T (temperature)
};

/// A planted routine: a labeled activity drawing its events from a sensor pool.
struct RoutineSpec {
    std::string label;
    std::vector<std::string> sensors;
    /// Relative draw weight per sensor; empty means uniform.
    std::vector<double> weights;
    /// Optional sub-activities: disjoint subsets of `sensors` visited in runs; empty means one phase.
    std::vector<std::vector<std::string>> phases;
    std::size_t min_phase_events = 6;
    std::size_t max_phase_events = 14;
    std::size_t min_events = 80;
    std::size_t max_events = 200;
    double mean_gap_seconds = 20.0;
};

struct HouseholdSpec {
    std::string name = "synthetic";
    std::vector<RoomSpec> rooms;
    std::vector<RoutineSpec> routines;
    /// Row-stochastic routine-to-routine transition matrix; empty means uniform over the other routines.
    std::vector<std::vector<double>> transitions;

    /// Four routines in four rooms plus a hallway whose sensors only fire as noise; cooking alternates
    /// between two sub-activities with their own sensors.
    static HouseholdSpec planted_default();

    std::vector<std::string> all_sensors() const;
    void validate() const;

    io::Json to_json() const;
    static HouseholdSpec from_json(const io::Json& j);
};

struct SynthConfig {
    HouseholdSpec household = HouseholdSpec::planted_default();
    std::size_t days = 10;
    std::size_t events_per_day = 450;
    /// Probability that an event comes from a random sensor anywhere in the house.
    double noise = 0.05;
    std::string start_day = "2009-11-01";
    std::uint64_t seed = 0;
};

/// Events in time order with truth labels set to the routine that produced them.
std::vector<corpus::SensorEvent> generate(const SynthConfig& config);

/// Rooms tiled on a grid in the unit square with each room's sensors spread inside it.
serve::HouseLayout make_layout(const HouseholdSpec& household);

}  // namespace pdl::synth
