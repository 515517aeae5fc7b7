#include "trellis/sim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <ostream>
#include <string_view>
#include <thread>
#include <unordered_map>

#include "trellis/broker.hpp"
#include "trellis/decoders.hpp"
#include "trellis/rts.hpp"

namespace trellis {

namespace {

// splitmix64: per-sensor child seeds independent of scheduling order
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::int64_t nanos_of(double seconds) {
    return static_cast<std::int64_t>(std::llround(seconds * 1e9));
}

[[noreturn]] void cfg_fail(const std::string& path, const std::string& why) {
    throw Error(Err::invalid_argument, path + ": " + why);
}

}  // namespace

// ---------------- coffee pot node ----------------

const char* coffee_event_name(CoffeeEvent ev) {
    switch (ev) {
        case CoffeeEvent::pot_removed: return "pot-removed";
        case CoffeeEvent::new_pot: return "new-pot";
        case CoffeeEvent::pot_poured: return "pot-poured";
        case CoffeeEvent::pot_empty: return "pot-empty";
        case CoffeeEvent::coffee_grinding: return "coffee-grinding";
    }
    return "?";
}

CoffeeThresholds CoffeeThresholds::from_json(const json& j) {
    CoffeeThresholds th;
    if (!j.is_object()) throw Error(Err::invalid_argument, "thresholds must be an object");
    const std::map<std::string, double*> keys{
        {"power_on_w", &th.power_on_w},       {"power_rearm_w", &th.power_rearm_w},
        {"absent_kg", &th.absent_kg},         {"new_pot_kg", &th.new_pot_kg},
        {"new_pot_rearm_kg", &th.new_pot_rearm_kg}, {"pour_drop_kg", &th.pour_drop_kg},
        {"empty_kg", &th.empty_kg},           {"empty_rearm_kg", &th.empty_rearm_kg}};
    for (const auto& [key, val] : j.items()) {
        auto it = keys.find(key);
        if (it == keys.end()) throw Error(Err::invalid_argument, key + ": unknown threshold");
        if (!val.is_number() || val.get<double>() <= 0)
            throw Error(Err::invalid_argument, key + ": must be a positive number");
        *it->second = val.get<double>();
    }
    if (th.power_rearm_w >= th.power_on_w)
        throw Error(Err::invalid_argument, "power_rearm_w: must stay below power_on_w");
    if (th.new_pot_rearm_kg >= th.new_pot_kg)
        throw Error(Err::invalid_argument, "new_pot_rearm_kg: must stay below new_pot_kg");
    if (th.empty_rearm_kg <= th.empty_kg)
        throw Error(Err::invalid_argument, "empty_rearm_kg: must sit above empty_kg");
    if (th.absent_kg >= th.empty_kg)
        throw Error(Err::invalid_argument, "absent_kg: must stay below empty_kg");
    return th;
}

std::vector<CoffeeEvent> coffee_step(CoffeeState& s, const CoffeeInputs& in, const Timestamp&,
                                     const CoffeeThresholds& th) {
    for (double v : {in.weight_kg, in.grinder_w, in.brewer_w})
        if (!std::isfinite(v) || v < 0)
            throw Error(Err::invalid_argument, "coffee inputs must be finite and non-negative");

    std::vector<CoffeeEvent> fired;
    const double w = in.weight_kg;
    const bool grinder_on = in.grinder_w >= th.power_on_w;
    const bool brewer_on = in.brewer_w >= th.power_on_w;

    if (!s.primed) {
        // first sample is a baseline, not a transition
        s.primed = true;
        s.pot_present = w >= th.absent_kg;
        s.weight_kg = w;
        s.grinder_w = in.grinder_w;
        s.brewer_w = in.brewer_w;
        s.grind_armed = in.grinder_w < th.power_rearm_w;
        s.new_pot_armed = w < th.new_pot_rearm_kg;
        s.empty_armed = w > th.empty_rearm_kg;
        s.brew_cycle = false;
        s.phase = grinder_on  ? CoffeePhase::grinding
                  : brewer_on ? CoffeePhase::brewing
                              : CoffeePhase::idle;
        return fired;
    }

    const double prev_w = s.weight_kg;
    const bool was_present = s.pot_present;
    const bool present = w >= th.absent_kg;

    // rearm latches; no sample can rearm and fire the same latch at once
    if (!s.grind_armed && in.grinder_w < th.power_rearm_w) s.grind_armed = true;
    if (!s.new_pot_armed && w < th.new_pot_rearm_kg) s.new_pot_armed = true;
    if (!s.empty_armed && w > th.empty_rearm_kg) s.empty_armed = true;

    bool f_grind = false, f_removed = false, f_new = false, f_pour = false, f_empty = false;

    if (s.grind_armed && grinder_on) {
        f_grind = true;
        s.grind_armed = false;
        s.brew_cycle = true;
    }
    if (brewer_on) s.brew_cycle = true;
    if (was_present && !present) f_removed = true;
    if (s.new_pot_armed && s.brew_cycle && present && w > th.new_pot_kg) {
        f_new = true;
        s.new_pot_armed = false;
        s.brew_cycle = false;
    }
    // epsilon absorbs float error in the subtraction; a cup-sized drop must count
    if (was_present && present && (prev_w - w) >= th.pour_drop_kg - 1e-9) {
        f_pour = true;
        s.total_dispensed_kg += prev_w - w;
    }
    if (s.empty_armed && present && w <= th.empty_kg) {
        f_empty = true;
        s.empty_armed = false;
    }
    if (was_present && present && w > prev_w) s.total_brewed_kg += w - prev_w;

    if (f_grind) fired.push_back(CoffeeEvent::coffee_grinding);
    if (f_removed) fired.push_back(CoffeeEvent::pot_removed);
    if (f_new) fired.push_back(CoffeeEvent::new_pot);
    if (f_pour) fired.push_back(CoffeeEvent::pot_poured);
    if (f_empty) fired.push_back(CoffeeEvent::pot_empty);

    if (grinder_on)
        s.phase = CoffeePhase::grinding;
    else if (brewer_on)
        s.phase = CoffeePhase::brewing;
    else if (f_new)
        s.phase = CoffeePhase::fresh;
    else if (f_empty || f_removed)
        s.phase = CoffeePhase::idle;
    else if (f_pour)
        s.phase = CoffeePhase::emptying;
    else if (s.phase == CoffeePhase::grinding || s.phase == CoffeePhase::brewing)
        s.phase = (present && !s.new_pot_armed && w > th.new_pot_rearm_kg) ? CoffeePhase::fresh
                                                                           : CoffeePhase::idle;

    s.weight_kg = w;
    s.grinder_w = in.grinder_w;
    s.brewer_w = in.brewer_w;
    s.pot_present = present;
    return fired;
}

// ---------------- scripted brew day ----------------

BrewDayScript make_brew_day(std::uint64_t seed, const Timestamp& start, double hours,
                            double noise_sigma_kg, double cadence_s) {
    if (!(hours > 0) || !(cadence_s > 0))
        throw Error(Err::invalid_argument, "brew day needs positive hours and cadence");
    // the planner and the noise source never share draws, so the truth for a
    // seed is identical at every noise level
    Rng plan(mix_seed(seed, 0xb4e3));
    Rng noise(mix_seed(seed, 0x701e));
    const CoffeeThresholds th{};
    const std::size_t n = static_cast<std::size_t>(hours * 3600.0 / cadence_s);

    std::vector<double> weight(n, 0.0), grinder(n, 0.0), brewer(n, 0.0);
    BrewDayScript out;
    auto t_at = [&](std::size_t k) { return start.plus_nanos(nanos_of(k * cadence_s)); };

    double w = 0.5;  // empty pot on the plate
    std::size_t k = 0;
    auto hold = [&](std::size_t upto) {
        for (; k < upto && k < n; ++k) weight[k] = w;
    };

    while (k < n) {
        hold(k + static_cast<std::size_t>(plan.irange(48, 210)));  // idle 8 to 35 min
        if (k >= n) break;

        // grind burst
        const double grind_w = plan.uniform(80.0, 130.0);
        out.truth.push_back({t_at(k), "coffee-grinding", ""});
        for (int i = 0; i < 3 && k < n; ++i, ++k) {
            weight[k] = w;
            grinder[k] = grind_w;
        }
        for (int i = 0; i < 2 && k < n; ++i, ++k) weight[k] = w;  // settle

        // brew: pot fills to 2.5 kg gross over two minutes
        const double from = w;
        bool crossed = false;
        for (int i = 1; i <= 12 && k < n; ++i, ++k) {
            w = from + (2.5 - from) * (i / 12.0);
            weight[k] = w;
            brewer[k] = 85.0;
            if (!crossed && w > th.new_pot_kg) {
                out.truth.push_back({t_at(k), "new-pot", ""});
                crossed = true;
            }
        }

        // cups until only dregs remain
        while (w - 0.25 >= th.absent_kg && w > th.empty_kg && k < n) {
            hold(k + static_cast<std::size_t>(plan.irange(6, 48)));  // 1 to 8 min
            if (k >= n) break;
            w -= 0.25;
            weight[k] = w;
            out.truth.push_back({t_at(k), "pot-poured", ""});
            if (w <= th.empty_kg && w >= th.absent_kg)
                out.truth.push_back({t_at(k), "pot-empty", ""});
            ++k;
        }

        // the odd trip to the sink
        if (plan.chance(0.4) && k < n) {
            hold(k + static_cast<std::size_t>(plan.irange(3, 12)));
            if (k < n) {
                out.truth.push_back({t_at(k), "pot-removed", ""});
                const std::size_t away = static_cast<std::size_t>(plan.irange(3, 9));
                for (std::size_t i = 0; i < away && k < n; ++i, ++k) weight[k] = 0.05;
                w = 0.5;  // back, rinsed and empty
            }
        }
    }

    out.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        double wn = weight[i];
        if (noise_sigma_kg > 0) wn = std::max(0.0, wn + noise.normal(0.0, noise_sigma_kg));
        out.samples.push_back({t_at(i), wn, grinder[i], brewer[i]});
    }
    return out;
}

// ---------------- smart reporting filter ----------------

bool SmartFilterState::accept(const Timestamp& t, double v, const FilterPolicy& policy) {
    bool emit = false;
    if (!primed_)
        emit = true;
    else if (policy.alert && policy.alert(v))
        emit = true;
    else if (std::abs(v - last_v_) > policy.deadband)
        emit = true;
    else if (t.unix_nanos() - last_t_.unix_nanos() >= nanos_of(policy.min_interval_s))
        emit = true;
    if (emit) {
        primed_ = true;
        last_v_ = v;
        last_t_ = t;
    }
    return emit;
}

std::vector<SmartSample> smart_filter(const std::vector<SmartSample>& raw,
                                      const FilterPolicy& policy) {
    std::vector<SmartSample> out;
    SmartFilterState state;
    for (const auto& s : raw)
        if (state.accept(s.t, s.v, policy)) out.push_back(s);
    return out;
}

// ---------------- latency injection ----------------

double LatencyModel::sample_ms(Rng& rng) const {
    switch (kind) {
        case Kind::none: return 0.0;
        case Kind::fixed: return mean_ms < 0 ? 0.0 : mean_ms;
        case Kind::normal: return std::max(0.0, rng.normal(mean_ms, stddev_ms));
    }
    return 0.0;
}

LatencyModel LatencyModel::from_json(const json& j) {
    LatencyModel m;
    if (!j.is_object()) throw Error(Err::invalid_argument, "latency model must be an object");
    const std::string kind = j.value("kind", "none");
    if (kind == "none")
        m.kind = Kind::none;
    else if (kind == "fixed")
        m.kind = Kind::fixed;
    else if (kind == "normal")
        m.kind = Kind::normal;
    else
        throw Error(Err::invalid_argument, "kind: unknown latency model '" + kind + "'");
    m.mean_ms = j.value("mean_ms", 0.0);
    m.stddev_ms = j.value("stddev_ms", 0.0);
    m.drop_p = j.value("drop_p", 0.0);
    if (m.mean_ms < 0 || m.stddev_ms < 0)
        throw Error(Err::invalid_argument, "mean_ms: must be non-negative");
    if (m.drop_p < 0 || m.drop_p > 1)
        throw Error(Err::invalid_argument, "drop_p: must lie in [0, 1]");
    return m;
}

// ---------------- value generators ----------------

double ValueGen::at(double t_s, Rng& rng) {
    double v = 0;
    switch (cfg_.model) {
        case ValueModel::constant: v = cfg_.a; break;
        case ValueModel::uniform: v = rng.uniform(cfg_.a, cfg_.b); break;
        case ValueModel::normal: v = rng.normal(cfg_.a, cfg_.b); break;
        case ValueModel::ramp: v = cfg_.a + cfg_.b * t_s; break;
        case ValueModel::sine:
            v = cfg_.a + cfg_.b * std::sin(2.0 * 3.14159265358979323846 * t_s / cfg_.period_s);
            break;
        case ValueModel::random_walk:
            if (!walk_started_) {
                walk_ = cfg_.a;
                walk_started_ = true;
            }
            walk_ += rng.normal(0.0, cfg_.b);
            v = walk_;
            break;
        case ValueModel::scripted: {
            // step hold: last row at or before t
            v = cfg_.script.empty() ? 0.0 : cfg_.script.front().second;
            for (const auto& [off, val] : cfg_.script) {
                if (off > t_s) break;
                v = val;
            }
            break;
        }
    }
    if (cfg_.noise > 0)
        v += cfg_.noise_gauss ? rng.normal(0.0, cfg_.noise)
                              : rng.uniform(-cfg_.noise, cfg_.noise);
    return v;
}

// ---------------- configuration parsing ----------------

namespace {

ValueGenCfg parse_value(const json& j, const std::string& path) {
    ValueGenCfg v;
    if (!j.is_object()) cfg_fail(path, "must be an object");
    const std::string model = j.value("model", "constant");
    if (model == "constant")
        v.model = ValueModel::constant;
    else if (model == "uniform")
        v.model = ValueModel::uniform;
    else if (model == "normal")
        v.model = ValueModel::normal;
    else if (model == "ramp")
        v.model = ValueModel::ramp;
    else if (model == "sine")
        v.model = ValueModel::sine;
    else if (model == "random_walk")
        v.model = ValueModel::random_walk;
    else if (model == "scripted")
        v.model = ValueModel::scripted;
    else
        cfg_fail(path + ".model", "unknown model '" + model + "'");
    v.a = j.value("a", 0.0);
    v.b = j.value("b", 0.0);
    v.period_s = j.value("period_s", 3600.0);
    v.noise = j.value("noise", 0.0);
    v.noise_gauss = j.value("noise_gauss", false);
    if (v.model == ValueModel::sine && !(v.period_s > 0))
        cfg_fail(path + ".period_s", "must be positive");
    if (v.noise < 0) cfg_fail(path + ".noise", "must be non-negative");
    if (j.contains("script")) {
        const json& rows = j["script"];
        if (!rows.is_array()) cfg_fail(path + ".script", "must be an array of [offset, value]");
        double prev = -1;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const json& r = rows[i];
            if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number())
                cfg_fail(path + ".script[" + std::to_string(i) + "]", "must be [offset, value]");
            const double off = r[0].get<double>();
            if (off < 0 || off < prev)
                cfg_fail(path + ".script[" + std::to_string(i) + "]",
                         "offsets must be non-negative and non-decreasing");
            prev = off;
            v.script.emplace_back(off, r[1].get<double>());
        }
    }
    if (v.model == ValueModel::scripted && v.script.empty())
        cfg_fail(path + ".script", "scripted model needs at least one row");
    return v;
}

SensorCfg parse_sensor(const json& j, const std::string& path) {
    SensorCfg s;
    if (!j.is_object()) cfg_fail(path, "must be an object");
    if (!j.contains("acp_id") || !j["acp_id"].is_string() || j["acp_id"].get<std::string>().empty())
        cfg_fail(path + ".acp_id", "required non-empty string");
    s.acp_id = j["acp_id"].get<std::string>();
    s.acp_type = j.value("acp_type", std::string("sensor"));
    s.topic = j.value("topic", std::string());
    if (s.topic.empty()) s.topic = "csn/status/" + s.acp_id;
    const std::string em = j.value("emission", "periodic");
    if (em == "periodic")
        s.emission = Emission::periodic;
    else if (em == "on_event")
        s.emission = Emission::on_event;
    else if (em == "smart_coffee")
        s.emission = Emission::smart_coffee;
    else
        cfg_fail(path + ".emission", "unknown emission '" + em + "'");
    s.feature = j.value("feature", std::string("co2"));
    s.interval_s = j.value("interval_s", 300.0);
    s.sample_interval_s = j.value("sample_interval_s", 1.0);
    if (!(s.interval_s > 0)) cfg_fail(path + ".interval_s", "must be positive");
    if (!(s.sample_interval_s > 0)) cfg_fail(path + ".sample_interval_s", "must be positive");
    if (j.contains("value")) s.value = parse_value(j["value"], path + ".value");
    s.deadband = j.value("deadband", 0.0);
    s.min_interval_s = j.value("min_interval_s", 3600.0);
    if (s.deadband < 0) cfg_fail(path + ".deadband", "must be non-negative");
    if (j.contains("alert_above")) {
        if (!j["alert_above"].is_number()) cfg_fail(path + ".alert_above", "must be a number");
        s.alert_above = j["alert_above"].get<double>();
    }
    if (j.contains("coffee")) {
        try {
            s.coffee = CoffeeThresholds::from_json(j["coffee"]);
        } catch (const Error& e) {
            cfg_fail(path + ".coffee", e.what());
        }
    }
    s.noise_sigma_kg = j.value("noise_sigma_kg", 0.0);
    if (s.noise_sigma_kg < 0) cfg_fail(path + ".noise_sigma_kg", "must be non-negative");
    return s;
}

}  // namespace

ScenarioConfig ScenarioConfig::from_json(const json& j) {
    ScenarioConfig cfg;
    if (!j.is_object()) cfg_fail("config", "must be an object");
    cfg.seed = j.value("seed", std::uint64_t{1});
    if (!j.contains("duration_s") || !j["duration_s"].is_number())
        cfg_fail("duration_s", "required number");
    cfg.duration_s = j["duration_s"].get<double>();
    if (!(cfg.duration_s > 0) || !std::isfinite(cfg.duration_s))
        cfg_fail("duration_s", "must be positive");
    const std::string clock = j.value("clock", "virtual");
    if (clock == "virtual")
        cfg.wall_clock = false;
    else if (clock == "wall")
        cfg.wall_clock = true;
    else
        cfg_fail("clock", "must be 'virtual' or 'wall'");
    if (j.contains("start_ts")) {
        try {
            cfg.start = Timestamp::parse(j["start_ts"].get_ref<const std::string&>());
        } catch (const std::exception& e) {
            cfg_fail("start_ts", e.what());
        }
    }
    if (j.contains("latency_models")) {
        const json& lm = j["latency_models"];
        if (!lm.is_object()) cfg_fail("latency_models", "must be an object");
        for (const auto& [hop, spec] : lm.items()) {
            try {
                cfg.latency_models[hop] = LatencyModel::from_json(spec);
            } catch (const Error& e) {
                cfg_fail("latency_models." + hop, e.what());
            }
        }
    }
    if (j.contains("sensors")) {
        const json& arr = j["sensors"];
        if (!arr.is_array()) cfg_fail("sensors", "must be an array");
        for (std::size_t i = 0; i < arr.size(); ++i)
            cfg.sensors.push_back(parse_sensor(arr[i], "sensors[" + std::to_string(i) + "]"));
    }
    for (std::size_t i = 0; i < cfg.sensors.size(); ++i)
        for (std::size_t k = i + 1; k < cfg.sensors.size(); ++k)
            if (cfg.sensors[i].acp_id == cfg.sensors[k].acp_id)
                cfg_fail("sensors[" + std::to_string(k) + "].acp_id",
                         "duplicate '" + cfg.sensors[i].acp_id + "'");
    return cfg;
}

// ---------------- scenario runner ----------------

namespace {

struct Planned {
    std::int64_t t_nanos = 0;  // offset from scenario start
    std::uint64_t seq = 0;
    json body;
    double gw_ms = 0;
    bool dropped = false;
};

struct SensorPlan {
    const SensorCfg* cfg = nullptr;
    std::string topic;  // resolved: falls back to csn/status/<acp_id>
    std::vector<Planned> emissions;
};

// All value and latency draws happen here, per sensor, in emission order,
// so the plan is the single deterministic source for both clock modes.
SensorPlan plan_sensor(const SensorCfg& sc, std::size_t idx, const ScenarioConfig& cfg,
                       const LatencyModel& gw, std::vector<TruthEvent>& truth) {
    SensorPlan plan;
    plan.cfg = &sc;
    plan.topic = sc.topic.empty() ? "csn/status/" + sc.acp_id : sc.topic;
    Rng rng(mix_seed(cfg.seed, idx));
    std::uint64_t seq = 0;

    auto add = [&](double t_s, json body) {
        Planned p;
        p.t_nanos = nanos_of(t_s);
        p.seq = seq;
        body["acp_id"] = sc.acp_id;
        body["acp_ts"] = cfg.start.plus_nanos(p.t_nanos).str();
        body["sim_mid"] = sc.acp_id + ":" + std::to_string(seq);
        p.body = std::move(body);
        ++seq;
        if (gw.drop_p > 0 && rng.chance(gw.drop_p))
            p.dropped = true;
        else
            p.gw_ms = gw.sample_ms(rng);
        plan.emissions.push_back(std::move(p));
    };

    switch (sc.emission) {
        case Emission::periodic: {
            ValueGen gen(sc.value);
            for (std::uint64_t k = 0;; ++k) {
                const double t = static_cast<double>(k) * sc.interval_s;
                if (t >= cfg.duration_s) break;
                add(t, json{{sc.feature, gen.at(t, rng)}});
            }
            break;
        }
        case Emission::on_event: {
            ValueGen gen(sc.value);
            SmartFilterState st;
            FilterPolicy pol;
            pol.deadband = sc.deadband;
            pol.min_interval_s = sc.min_interval_s;
            if (sc.alert_above) {
                const double limit = *sc.alert_above;
                pol.alert = [limit](double v) { return v > limit; };
            }
            for (std::uint64_t k = 0;; ++k) {
                const double t = static_cast<double>(k) * sc.sample_interval_s;
                if (t >= cfg.duration_s) break;
                const double v = gen.at(t, rng);
                if (st.accept(cfg.start.plus_nanos(nanos_of(t)), v, pol))
                    add(t, json{{sc.feature, v}});
            }
            // the script rows are the ground truth for change events
            if (sc.value.model == ValueModel::scripted) {
                auto first_sample_at = [&](double off) {
                    const double k0 = std::ceil(off / sc.sample_interval_s - 1e-9);
                    return k0 * sc.sample_interval_s;
                };
                for (std::size_t r = 1; r < sc.value.script.size(); ++r) {
                    const auto& [off, val] = sc.value.script[r];
                    const double prev = sc.value.script[r - 1].second;
                    const double t = first_sample_at(off);
                    if (t >= cfg.duration_s) continue;
                    if (std::abs(val - prev) > sc.deadband)
                        truth.push_back(
                            {cfg.start.plus_nanos(nanos_of(t)), "value-step", sc.acp_id});
                    if (sc.alert_above && prev <= *sc.alert_above && val > *sc.alert_above)
                        truth.push_back({cfg.start.plus_nanos(nanos_of(t)), "alert", sc.acp_id});
                }
            }
            break;
        }
        case Emission::smart_coffee: {
            BrewDayScript script = make_brew_day(rng.u64(), cfg.start, cfg.duration_s / 3600.0,
                                                 sc.noise_sigma_kg);
            CoffeeState state;
            double next_hb = 0;
            for (const auto& smp : script.samples) {
                const double t =
                    static_cast<double>(smp.t.unix_nanos() - cfg.start.unix_nanos()) / 1e9;
                const auto events = coffee_step(
                    state, {smp.weight_kg, smp.grinder_w, smp.brewer_w}, smp.t, sc.coffee);
                if (t >= next_hb) {
                    add(t, json{{"weight", smp.weight_kg}});
                    next_hb += sc.interval_s;
                }
                for (const CoffeeEvent ev : events)
                    add(t, json{{"acp_event", coffee_event_name(ev)},
                                {"weight", smp.weight_kg}});
            }
            for (auto& te : script.truth) {
                te.acp_id = sc.acp_id;
                truth.push_back(te);
            }
            break;
        }
    }
    return plan;
}

void sort_records(std::vector<TraceRecord>& records, const std::vector<std::uint64_t>& seqs) {
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto ka = std::make_tuple(records[a].t_emit.unix_nanos(), records[a].acp_id, seqs[a]);
        const auto kb = std::make_tuple(records[b].t_emit.unix_nanos(), records[b].acp_id, seqs[b]);
        return ka < kb;
    });
    std::vector<TraceRecord> sorted;
    sorted.reserve(records.size());
    for (std::size_t i : order) sorted.push_back(std::move(records[i]));
    records = std::move(sorted);
}

void assemble_virtual(const ScenarioConfig& cfg, const std::vector<SensorPlan>& plans,
                      ScenarioTrace& trace) {
    std::vector<std::uint64_t> seqs;
    for (const auto& plan : plans)
        for (const auto& e : plan.emissions) {
            TraceRecord rec;
            rec.sim_mid = e.body["sim_mid"].get<std::string>();
            rec.acp_id = plan.cfg->acp_id;
            rec.topic = plan.topic;
            rec.body = e.body;
            rec.t_emit = cfg.start.plus_nanos(e.t_nanos);
            rec.dropped = e.dropped;
            rec.t_gateway = e.dropped ? rec.t_emit
                                      : rec.t_emit.plus_nanos(nanos_of(e.gw_ms / 1e3));
            rec.t_broker = rec.t_gateway;
            rec.t_bus = rec.t_gateway;
            rec.t_client = rec.t_gateway;
            trace.records.push_back(std::move(rec));
            seqs.push_back(e.seq);
        }
    sort_records(trace.records, seqs);
}

void assemble_wall(const std::vector<SensorPlan>& plans, ScenarioTrace& trace) {
    struct Slot {
        TraceRecord rec;
        std::uint64_t seq = 0;
        bool complete = false;
    };
    std::vector<Slot> slots;
    std::unordered_map<std::string, std::size_t> by_mid;
    std::int64_t expected = 0;
    for (const auto& plan : plans)
        for (const auto& e : plan.emissions) {
            Slot slot;
            slot.rec.sim_mid = e.body["sim_mid"].get<std::string>();
            slot.rec.acp_id = plan.cfg->acp_id;
            slot.rec.topic = plan.topic;
            slot.rec.body = e.body;
            slot.rec.dropped = e.dropped;
            slot.seq = e.seq;
            by_mid[slot.rec.sim_mid] = slots.size();
            slots.push_back(std::move(slot));
            if (!e.dropped) ++expected;
        }

    Broker broker("sim-gw");
    DecoderManager decoders;
    Rts rts(broker, decoders, RtsOptions{.system_id = "sim-rts", .mailbox_depth = 65536});

    std::mutex mu;
    std::atomic<std::int64_t> pending{expected};

    auto mid_of = [](const json& body) -> std::string {
        auto po = body.find("payload_original");
        if (po == body.end() || !po->is_object()) return {};
        auto mid = po->find("sim_mid");
        if (mid == po->end() || !mid->is_string()) return {};
        return mid->get<std::string>();
    };

    rts.stage_tap = [&](const json& body, const char* stage, std::int64_t nanos) {
        const std::string mid = mid_of(body);
        if (mid.empty()) return;
        std::lock_guard lk(mu);
        auto it = by_mid.find(mid);
        if (it == by_mid.end()) return;
        TraceRecord& rec = slots[it->second].rec;
        if (std::string_view(stage) == "broker")
            rec.t_broker = Timestamp::from_nanos(nanos);
        else
            rec.t_bus = Timestamp::from_nanos(nanos);
    };

    std::vector<std::string> filters;
    for (const auto& plan : plans) {
        const std::string& topic = plan.topic;
        const std::string filter = topic.substr(0, topic.find('/')) + "/#";
        if (std::find(filters.begin(), filters.end(), filter) == filters.end())
            filters.push_back(filter);
    }
    rts.start_feed_handler(filters);

    RtFilter feed_all;
    feed_all.address = kFeedAddress;
    feed_all.mailbox_depth = 65536;
    auto sub = rts.rtmonitor_subscribe(feed_all);
    std::atomic<bool> stop{false};
    std::thread client([&] {
        while (!stop.load()) {
            auto ev = sub->poll(std::chrono::milliseconds(20));
            if (!ev) continue;
            const std::string mid = mid_of(ev->body);
            if (mid.empty()) continue;
            const Timestamp now = wallclock_now();
            std::lock_guard lk(mu);
            auto it = by_mid.find(mid);
            if (it == by_mid.end() || slots[it->second].complete) continue;
            slots[it->second].rec.t_client = now;
            slots[it->second].complete = true;
            pending.fetch_sub(1);
        }
    });

    const auto epoch = std::chrono::steady_clock::now();
    std::vector<std::thread> producers;
    producers.reserve(plans.size());
    for (const auto& plan : plans)
        producers.emplace_back([&, planp = &plan] {
            for (const auto& e : planp->emissions) {
                std::this_thread::sleep_until(epoch + std::chrono::nanoseconds(e.t_nanos));
                const std::int64_t emit_ns = wallclock_nanos();
                json body = e.body;
                body["acp_ts"] = Timestamp::from_nanos(emit_ns).str();
                std::size_t idx;
                {
                    std::lock_guard lk(mu);
                    idx = by_mid.at(e.body["sim_mid"].get<std::string>());
                    TraceRecord& rec = slots[idx].rec;
                    rec.body = body;
                    rec.t_emit = Timestamp::from_nanos(emit_ns);
                    rec.t_gateway = rec.t_broker = rec.t_bus = rec.t_client = rec.t_emit;
                }
                if (e.dropped) continue;
                if (e.gw_ms > 0)
                    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(e.gw_ms));
                const std::int64_t gw_ns = wallclock_nanos();
                std::string payload;
                {
                    std::lock_guard lk(mu);
                    slots[idx].rec.t_gateway = Timestamp::from_nanos(gw_ns);
                    payload = slots[idx].rec.body.dump();
                }
                broker.publish(planp->topic, std::move(payload));
            }
        });
    for (auto& th : producers) th.join();

    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
    while (pending.load() > 0 && std::chrono::steady_clock::now() < deadline)
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    stop.store(true);
    sub->cancel();
    client.join();
    rts.shutdown();

    std::vector<std::uint64_t> seqs;
    trace.records.reserve(slots.size());
    {
        std::lock_guard lk(mu);
        for (auto& slot : slots) {
            if (!slot.rec.dropped && !slot.complete) {
                // never made it through the pipeline within the grace window
                slot.rec.dropped = true;
                slot.rec.t_gateway = slot.rec.t_broker = slot.rec.t_bus = slot.rec.t_client =
                    slot.rec.t_emit;
            }
            trace.records.push_back(std::move(slot.rec));
            seqs.push_back(slot.seq);
        }
    }
    sort_records(trace.records, seqs);
}

}  // namespace

ScenarioTrace run_scenario(const ScenarioConfig& cfg) {
    if (!(cfg.duration_s > 0) || !std::isfinite(cfg.duration_s))
        throw Error(Err::invalid_argument, "duration_s: must be positive");
    for (std::size_t i = 0; i < cfg.sensors.size(); ++i)
        for (std::size_t k = i + 1; k < cfg.sensors.size(); ++k)
            if (cfg.sensors[i].acp_id == cfg.sensors[k].acp_id)
                throw Error(Err::invalid_argument,
                            "sensors: duplicate acp_id '" + cfg.sensors[i].acp_id + "'");
    LatencyModel gw;
    if (auto it = cfg.latency_models.find("gateway"); it != cfg.latency_models.end())
        gw = it->second;

    ScenarioTrace trace;
    std::vector<SensorPlan> plans;
    plans.reserve(cfg.sensors.size());
    for (std::size_t i = 0; i < cfg.sensors.size(); ++i)
        plans.push_back(plan_sensor(cfg.sensors[i], i, cfg, gw, trace.truth));
    std::sort(trace.truth.begin(), trace.truth.end(), [](const TruthEvent& a, const TruthEvent& b) {
        return std::make_tuple(a.t.unix_nanos(), a.acp_id, a.event) <
               std::make_tuple(b.t.unix_nanos(), b.acp_id, b.event);
    });

    if (cfg.wall_clock)
        assemble_wall(plans, trace);
    else
        assemble_virtual(cfg, plans, trace);
    return trace;
}

void write_trace_ndjson(const ScenarioTrace& trace, std::ostream& out) {
    for (const auto& r : trace.records) {
        json j{{"sim_mid", r.sim_mid},        {"acp_id", r.acp_id},
               {"topic", r.topic},            {"body", r.body},
               {"t_emit", r.t_emit.str()},    {"t_gateway", r.t_gateway.str()},
               {"t_broker", r.t_broker.str()}, {"t_bus", r.t_bus.str()},
               {"t_client", r.t_client.str()}, {"dropped", r.dropped}};
        out << j.dump() << '\n';
    }
}

void write_truth_ndjson(const ScenarioTrace& trace, std::ostream& out) {
    for (const auto& te : trace.truth) {
        json j{{"acp_ts", te.t.str()}, {"acp_id", te.acp_id}, {"event", te.event}};
        out << j.dump() << '\n';
    }
}

ScenarioTrace read_trace_ndjson(std::istream& in) {
    ScenarioTrace trace;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            TraceRecord rec;
            rec.sim_mid = j.at("sim_mid").get<std::string>();
            rec.acp_id = j.at("acp_id").get<std::string>();
            rec.topic = j.at("topic").get<std::string>();
            rec.body = j.at("body");
            rec.t_emit = Timestamp::parse(j.at("t_emit").get<std::string>());
            rec.t_gateway = Timestamp::parse(j.at("t_gateway").get<std::string>());
            rec.t_broker = Timestamp::parse(j.at("t_broker").get<std::string>());
            rec.t_bus = Timestamp::parse(j.at("t_bus").get<std::string>());
            rec.t_client = Timestamp::parse(j.at("t_client").get<std::string>());
            rec.dropped = j.at("dropped").get<bool>();
            trace.records.push_back(std::move(rec));
        } catch (const std::exception& e) {
            throw Error(Err::parse_error,
                        "trace line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return trace;
}

// ---------------- latency report ----------------

namespace {

StageStats stats_of(const std::vector<double>& sorted) {
    StageStats st;
    st.n = sorted.size();
    if (sorted.empty()) return st;
    double sum = 0;
    for (double v : sorted) sum += v;
    st.mean_ms = sum / static_cast<double>(st.n);
    double dev = 0;
    for (double v : sorted) dev += (v - st.mean_ms) * (v - st.mean_ms);
    st.stddev_ms = std::sqrt(dev / static_cast<double>(st.n));
    auto rank = [&](double p) {
        std::size_t r = static_cast<std::size_t>(std::ceil(p * static_cast<double>(st.n)));
        if (r < 1) r = 1;
        if (r > st.n) r = st.n;
        return sorted[r - 1];
    };
    st.p50_ms = rank(0.50);
    st.p99_ms = rank(0.99);
    return st;
}

}  // namespace

LatencyReport latency_report(const ScenarioTrace& trace) {
    LatencyReport rep;
    auto& s = rep.samples_ms;
    for (const auto& r : trace.records) {
        if (r.dropped) continue;
        // subtract in integers first: absolute stamps are ~1e18 ns where a
        // double's resolution is worse than the deltas we are measuring
        const std::int64_t e = r.t_emit.unix_nanos();
        const std::int64_t g = r.t_gateway.unix_nanos();
        const std::int64_t br = r.t_broker.unix_nanos();
        const std::int64_t bu = r.t_bus.unix_nanos();
        const std::int64_t c = r.t_client.unix_nanos();
        auto ms = [](std::int64_t ns) { return static_cast<double>(ns) / 1e6; };
        s["gateway"].push_back(ms(g - e));
        s["broker"].push_back(ms(br - e));
        s["bus"].push_back(ms(bu - e));
        s["client"].push_back(ms(c - e));
        s["gateway_to_broker"].push_back(ms(br - g));
        s["broker_to_bus"].push_back(ms(bu - br));
        s["bus_to_client"].push_back(ms(c - bu));
    }
    if (s.empty()) throw Error(Err::no_data, "trace has no delivered messages");
    for (auto& [name, vals] : s) {
        std::sort(vals.begin(), vals.end());
        rep.stages[name] = stats_of(vals);
    }
    return rep;
}

std::string LatencyReport::ecdf_csv(const std::string& stage) const {
    auto it = samples_ms.find(stage);
    if (it == samples_ms.end()) throw Error(Err::not_found, "no such stage: " + stage);
    std::string out = "ms,fraction\n";
    const std::size_t n = it->second.size();
    char line[64];
    for (std::size_t i = 0; i < n; ++i) {
        std::snprintf(line, sizeof line, "%.6f,%.8f\n", it->second[i],
                      static_cast<double>(i + 1) / static_cast<double>(n));
        out += line;
    }
    return out;
}

json LatencyReport::to_json() const {
    json stages = json::object();
    for (const auto& [name, st] : this->stages)
        stages[name] = json{{"mean_ms", st.mean_ms},
                            {"stddev_ms", st.stddev_ms},
                            {"p50_ms", st.p50_ms},
                            {"p99_ms", st.p99_ms},
                            {"n", st.n}};
    return json{{"stages", stages}};
}

}  // namespace trellis
