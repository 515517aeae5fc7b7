#pragma once
// Complex event processing: statistical atomic-event detection over per-sensor
// feature windows, plus an incremental rule matcher over a bounded FIFO fact
// window. Detected complex events feed back into the window so rules can
// build on each other.

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "trellis/core.hpp"

namespace trellis {

using json = nlohmann::json;

// ---- pure scoring -------------------------------------------------------

struct PearsonResult {
    double r = 0.0;
    bool flat = false;  // zero variance on either side; treat as r == 0
};

// Throws Err::length_mismatch, Err::too_few_samples (needs >= 2 pairs).
PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y);

// |mean(window) - mean(baseline)| / (stddev(baseline) + 1e-9).
// Throws Err::too_few_samples unless |baseline| >= 10 and |window| >= 3.
double divergence_score(const std::vector<double>& window, const std::vector<double>& baseline);

// UTC (month, day-of-month, hour).
std::tuple<int, int, int> temporal_params(const Timestamp& ts);

// ---- atomic detection ----------------------------------------------------

struct FeatureVector {
    std::string sensor;
    std::string sensor_type;
    std::string feature;
    std::vector<double> X;         // samples inside the window, oldest first
    std::vector<double> baseline;  // retained samples older than the window
    std::vector<double> C;         // vicinity correlations, one per comparable neighbour
    int m = 0, d = 0, h = 0;
};

struct AtomicEvent {
    std::string e;  // event-type id
    Timestamp t;
    double v = 0.0;  // triggering value
    std::string s;   // sensor
    double confidence = 0.0;
};

class Detector {
public:
    virtual ~Detector() = default;
    virtual std::vector<AtomicEvent> detect(const FeatureVector& fv,
                                            const Timestamp& now) const = 0;
};

// Fires `<feature>_DIVERGE` when the window mean diverges from baseline by
// more than theta baseline deviations, corroborated by the vicinity unless
// no neighbour was comparable.
class StatisticalDetector : public Detector {
public:
    explicit StatisticalDetector(double theta = 3.0, double c_min = 0.3)
        : theta_(theta), c_min_(c_min) {}
    std::vector<AtomicEvent> detect(const FeatureVector& fv, const Timestamp& now) const override;

    double theta() const noexcept { return theta_; }
    double c_min() const noexcept { return c_min_; }

private:
    double theta_;
    double c_min_;
};

std::vector<AtomicEvent> detect_atomic(const FeatureVector& fv, const Detector& detector,
                                       const Timestamp& now);

// ---- rules ---------------------------------------------------------------

enum class CmpOp { lt, le, gt, ge };
const char* cmp_op_text(CmpOp op);
bool cmp_apply(CmpOp op, double lhs, double rhs);

struct RuleTerm {
    std::string event_id;
    std::string var;
};

struct TemporalConstraint {
    std::string before_var;
    std::string after_var;  // t(before) < t(after)
};

struct ValueConstraint {
    std::string var;
    CmpOp op = CmpOp::lt;
    double threshold = 0.0;
};

enum class SpatialKind { none, distance, same_crate };

struct SpatialConstraint {
    SpatialKind kind = SpatialKind::none;
    std::string a, b;
    double max_distance_m = 0.0;
};

struct Rule {
    std::string id;    // defaults to the output event name
    std::string name;  // output complex event id
    std::vector<RuleTerm> terms;
    std::vector<TemporalConstraint> temporal;
    std::vector<ValueConstraint> values;
    SpatialConstraint spatial;
    // Programmatic only, not part of the file grammar: bound on the span
    // between the earliest and latest matched fact.
    std::optional<double> max_span_seconds;

    std::string pretty() const;
};

// One rule per line. `t`, `val`, `dist`, `samecrate` are reserved and cannot
// name events. Throws Err::parse_error carrying "line L, col C: ...".
Rule parse_rule(const std::string& line);
// Whole file; blank lines and lines starting with '#' are skipped.
std::vector<Rule> parse_rules(const std::string& text);

// ---- facts and complex events ---------------------------------------------

struct Fact {
    std::uint64_t uid = 0;  // assigned on assertion
    std::string e;
    Timestamp t;
    std::optional<double> v;           // triggering value; complex facts carry none
    std::vector<std::string> sensors;  // exactly one for atomic facts
    double confidence = 1.0;
    bool complex = false;

    static Fact from_atomic(const AtomicEvent& ev);
};

struct ComplexEvent {
    std::string e;
    Timestamp t;
    std::vector<std::string> sensor_ids;  // sorted unique sensors of matched facts
    double confidence = 0.0;              // min over matched facts (see ledger)
    std::string rule_id;
    std::vector<std::uint64_t> matched;  // fact uids in term order

    json to_json() const;  // {acp_event, acp_ts, sensor_ids, acp_confidence}
};

class FactWindow {
public:
    explicit FactWindow(std::size_t capacity);
    // Returns the evicted fact when the window was full.
    std::optional<Fact> push(Fact fact);
    const std::deque<Fact>& facts() const noexcept { return facts_; }
    std::size_t capacity() const noexcept { return capacity_; }

private:
    std::size_t capacity_;
    std::deque<Fact> facts_;
};

// ---- engine ----------------------------------------------------------------

struct VicinityConfig {
    enum class Mode { same_crate, radius, explicit_list };
    Mode mode = Mode::same_crate;
    double radius_m = 10.0;
    std::vector<std::string> sensors;  // explicit_list
    double omega_seconds = 900.0;      // window duration
    std::size_t min_overlap = 3;       // paired samples needed for a correlation
};

struct SensorGeo {
    std::string building;
    double x = 0.0, y = 0.0, z = 0.0;  // metres in the building frame
    std::optional<std::string> parent_crate;
};

class CepEngine {
public:
    struct Options {
        std::size_t window_capacity = 100;
        std::size_t binding_cap = 10000;  // exploration bound per evaluate()
        VicinityConfig vicinity;
    };

    CepEngine() : CepEngine(Options{}) {}
    explicit CepEngine(Options opts, std::shared_ptr<const Detector> detector =
                                         std::make_shared<StatisticalDetector>());

    void load_rules(std::vector<Rule> rules);  // replaces; sorted by rule id
    const std::vector<Rule>& rules() const noexcept { return rules_; }
    void set_geo(std::map<std::string, SensorGeo> geo);

    // Full pipeline for one sample: update feature state, run the detector,
    // assert fired events, evaluate rules, feed complex events back.
    // Returns every complex event the sample caused (transitively).
    std::vector<ComplexEvent> ingest(const std::string& sensor, const std::string& sensor_type,
                                     const std::string& feature, double value,
                                     const Timestamp& ts);

    std::optional<Fact> assert_fact(Fact fact);
    // Incremental: explores only bindings that involve new_fact, which must
    // already be in the window.
    std::vector<ComplexEvent> evaluate(const Fact& new_fact);

    // Correlations of the sensor's current feature window against its
    // vicinity; empty when no neighbour is comparable.
    std::vector<double> correlation_vector(const std::string& sensor, const std::string& feature,
                                           const Timestamp& now) const;

    const FactWindow& window() const noexcept { return window_; }
    const Options& options() const noexcept { return opts_; }

    std::uint64_t facts_asserted() const noexcept { return facts_asserted_; }
    std::uint64_t atomic_events() const noexcept { return atomic_events_; }
    std::uint64_t complex_events() const noexcept { return complex_events_; }
    std::uint64_t bindings_explored() const noexcept { return bindings_explored_; }
    std::uint64_t binding_overflows() const noexcept { return binding_overflows_; }
    std::uint64_t feedback_truncated() const noexcept { return feedback_truncated_; }
    json stats() const;

    // Called for every detected complex event (bus wiring hangs off this).
    std::function<void(const ComplexEvent&)> on_complex;

private:
    struct SeriesState {
        std::deque<std::pair<Timestamp, double>> samples;  // ascending time
        std::string sensor_type;
    };

    bool spatial_ok(const SpatialConstraint& sc,
                    const std::map<std::string, const Fact*>& binding) const;
    void match_rule(const Rule& rule, const Fact& new_fact, std::uint64_t* budget,
                    std::vector<ComplexEvent>& out);
    std::vector<double> window_values(const SeriesState& st, const Timestamp& now) const;
    std::vector<double> baseline_values(const SeriesState& st, const Timestamp& now) const;

    Options opts_;
    std::shared_ptr<const Detector> detector_;
    std::vector<Rule> rules_;
    std::map<std::string, SensorGeo> geo_;
    std::map<std::pair<std::string, std::string>, SeriesState> series_;  // (sensor, feature)
    FactWindow window_;
    std::uint64_t next_uid_ = 1;
    std::uint64_t facts_asserted_ = 0;
    std::uint64_t atomic_events_ = 0;
    std::uint64_t complex_events_ = 0;
    std::uint64_t bindings_explored_ = 0;
    std::uint64_t binding_overflows_ = 0;
    std::uint64_t feedback_truncated_ = 0;
};

}  // namespace trellis
