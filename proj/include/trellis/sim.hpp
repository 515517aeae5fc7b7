#pragma once
// Deterministic sensor fleet simulator. The default clock is virtual: a run
// is pure arithmetic over a seed, so two runs of the same config produce
// byte-identical traces. Wall clock mode replays the same emission schedule
// against a live broker and realtime server to measure pipeline latency.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trellis/core.hpp"
#include "trellis/rng.hpp"

namespace trellis {

using json = nlohmann::json;

// ---------------- coffee pot node ----------------

enum class CoffeeEvent { pot_removed, new_pot, pot_poured, pot_empty, coffee_grinding };
const char* coffee_event_name(CoffeeEvent ev);

enum class CoffeePhase { idle, grinding, brewing, fresh, emptying };

// Detection thresholds. The bare pot weighs about 0.5 kg and holds 2 kg of
// coffee; a cup taken is about 0.25 kg. The rearm values put hysteresis
// around each trigger so borderline samples cannot chatter.
struct CoffeeThresholds {
    double power_on_w = 40.0;      // upward crossing means grinder or brewer runs
    double power_rearm_w = 30.0;   // power must fall back here before the next firing
    double absent_kg = 0.4;        // below the bare pot weight: pot is off the plate
    double new_pot_kg = 1.5;       // rise past this after a grind or brew: fresh pot
    double new_pot_rearm_kg = 1.2;
    double pour_drop_kg = 0.15;    // single-step drop at least this: cup poured
    double empty_kg = 0.6;         // present with only dregs left
    double empty_rearm_kg = 0.8;

    // Partial overrides, e.g. {"power_on_w": 50}. Unknown keys rejected.
    static CoffeeThresholds from_json(const json& j);
};

struct CoffeeInputs {
    double weight_kg = 0;
    double grinder_w = 0;
    double brewer_w = 0;
};

struct CoffeeState {
    bool primed = false;  // the first step only records a baseline
    bool pot_present = true;
    double weight_kg = 0;
    double grinder_w = 0;
    double brewer_w = 0;
    CoffeePhase phase = CoffeePhase::idle;

    // event latches
    bool grind_armed = true;
    bool new_pot_armed = true;
    bool empty_armed = true;
    bool brew_cycle = false;  // a grind or brew happened since the last new pot

    // conservation ledger: you cannot pour more than was brewed
    double total_brewed_kg = 0;     // weight rises while the pot sat present
    double total_dispensed_kg = 0;  // sum of pour drops
};

// Advances the state by one sample and returns the events that fired, each
// at most once per transition. Inputs must be finite and non-negative,
// otherwise Err::invalid_argument.
std::vector<CoffeeEvent> coffee_step(CoffeeState& state, const CoffeeInputs& in,
                                     const Timestamp& t, const CoffeeThresholds& th = {});

// ---------------- scripted brew day ----------------

struct BrewSample {
    Timestamp t;
    double weight_kg = 0;
    double grinder_w = 0;
    double brewer_w = 0;
};

struct TruthEvent {
    Timestamp t;
    std::string event;
    std::string acp_id;  // empty in a bare script
};

// A scripted day at the pot: brew cycles, cups poured, the occasional trip
// to the sink. truth lists the events the script performed and when, derived
// from the script construction itself, so a detector run over the samples
// can be scored against it. Weight noise perturbs the emitted samples only;
// the same seed yields the same truth at any noise level.
struct BrewDayScript {
    std::vector<BrewSample> samples;
    std::vector<TruthEvent> truth;
};

BrewDayScript make_brew_day(std::uint64_t seed, const Timestamp& start, double hours = 10.0,
                            double noise_sigma_kg = 0.0, double cadence_s = 10.0);

// ---------------- smart reporting filter ----------------

struct SmartSample {
    Timestamp t;
    double v = 0;
};

struct FilterPolicy {
    double deadband = 0.0;         // emit when |v - last emitted| exceeds this
    double min_interval_s = 3600;  // heartbeat when this much time has passed
    std::function<bool(double)> alert;  // immediate emit while true
};

// Streaming form. The first sample always goes out.
class SmartFilterState {
public:
    bool accept(const Timestamp& t, double v, const FilterPolicy& policy);

private:
    bool primed_ = false;
    double last_v_ = 0;
    Timestamp last_t_;
};

// Emitted messages are a subset of the raw samples with value and time
// untouched. Samples must already be time-ordered.
std::vector<SmartSample> smart_filter(const std::vector<SmartSample>& raw,
                                      const FilterPolicy& policy);

// ---------------- latency injection ----------------

struct LatencyModel {
    enum class Kind { none, fixed, normal };
    Kind kind = Kind::none;
    double mean_ms = 0;
    double stddev_ms = 0;
    double drop_p = 0;  // fixed per-message loss probability on this hop

    double sample_ms(Rng& rng) const;  // never negative
    static LatencyModel from_json(const json& j);
};

// ---------------- scenario configuration ----------------

enum class ValueModel { constant, uniform, normal, ramp, sine, random_walk, scripted };

struct ValueGenCfg {
    ValueModel model = ValueModel::constant;
    double a = 0;            // constant value | uniform lo | normal mean | ramp start |
                             // sine mean | walk start
    double b = 0;            // uniform hi | normal sigma | ramp slope per s | sine
                             // amplitude | walk step sigma
    double period_s = 3600;  // sine only
    double noise = 0;        // additive noise, uniform half-width or gaussian sigma
    bool noise_gauss = false;
    std::vector<std::pair<double, double>> script;  // (offset s, value), step hold
};

class ValueGen {
public:
    explicit ValueGen(ValueGenCfg cfg) : cfg_(std::move(cfg)) {}
    double at(double t_s, Rng& rng);

private:
    ValueGenCfg cfg_;
    double walk_ = 0;
    bool walk_started_ = false;
};

enum class Emission { periodic, on_event, smart_coffee };

struct SensorCfg {
    std::string acp_id;
    std::string acp_type = "sensor";
    std::string topic;  // default csn/status/<acp_id>
    Emission emission = Emission::periodic;
    std::string feature = "co2";
    double interval_s = 300;       // periodic cadence, coffee telemetry heartbeat
    double sample_interval_s = 1;  // on_event internal sampling cadence
    ValueGenCfg value;

    // on_event reporting policy
    double deadband = 0;
    double min_interval_s = 3600;
    std::optional<double> alert_above;

    // smart_coffee
    CoffeeThresholds coffee;
    double noise_sigma_kg = 0;
};

struct ScenarioConfig {
    std::uint64_t seed = 1;
    double duration_s = 3600;
    bool wall_clock = false;
    Timestamp start = Timestamp::from_seconds(1600000000);
    std::map<std::string, LatencyModel> latency_models;  // "gateway" is the injected hop
    std::vector<SensorCfg> sensors;

    // Err::invalid_argument names the offending path, e.g. "sensors[2].interval_s".
    static ScenarioConfig from_json(const json& j);
};

// ---------------- traces ----------------

struct TraceRecord {
    std::string sim_mid;  // "<acp_id>:<seq>", joins stamps across pipeline stages
    std::string acp_id;
    std::string topic;
    json body;  // exactly what the sensor published
    Timestamp t_emit, t_gateway, t_broker, t_bus, t_client;
    bool dropped = false;  // lost on the gateway hop; later stamps stay at t_emit
};

struct ScenarioTrace {
    std::vector<TraceRecord> records;  // ordered by (t_emit, acp_id, seq)
    std::vector<TruthEvent> truth;
};

// Virtual clock: the whole run is computed instantly and platform hops cost
// nothing, so only injected latency shows up in the stamps. Wall clock:
// sensors run as threads publishing through a real broker and realtime
// server, and the broker, bus and client stamps are measured.
ScenarioTrace run_scenario(const ScenarioConfig& cfg);

void write_trace_ndjson(const ScenarioTrace& trace, std::ostream& out);
void write_truth_ndjson(const ScenarioTrace& trace, std::ostream& out);

// Inverse of write_trace_ndjson; the truth stream is a separate file and is
// not recovered here. Throws Err::parse_error on a malformed line.
ScenarioTrace read_trace_ndjson(std::istream& in);

// ---------------- latency report ----------------

struct StageStats {
    double mean_ms = 0;
    double stddev_ms = 0;  // population
    double p50_ms = 0;     // nearest rank
    double p99_ms = 0;
    std::size_t n = 0;
};

struct LatencyReport {
    // cumulative from emission: gateway, broker, bus, client;
    // hop deltas: gateway_to_broker, broker_to_bus, bus_to_client
    std::map<std::string, StageStats> stages;
    std::map<std::string, std::vector<double>> samples_ms;  // sorted ascending

    // CSV "ms,fraction" rows, one per sample. Err::not_found for bad names.
    std::string ecdf_csv(const std::string& stage) const;
    json to_json() const;
};

// Dropped records carry no pipeline stamps and are excluded. An empty or
// fully dropped trace is Err::no_data.
LatencyReport latency_report(const ScenarioTrace& trace);

}  // namespace trellis
