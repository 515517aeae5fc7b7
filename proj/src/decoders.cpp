#include "trellis/decoders.hpp"

#include <algorithm>

namespace trellis {

json DeadLetter::to_json() const {
    return json{{"topic", topic},
                {"raw", raw_b64},
                {"error", error},
                {"receipt_ts", receipt_ts.str()}};
}

namespace {

std::size_t count_literals(const Topic& t) {
    std::size_t n = 0;
    for (const auto& seg : t.segments)
        if (seg != "+" && seg != "#") ++n;
    return n;
}

std::string topic_joined_id(const Topic& t) {
    std::string out;
    for (const auto& seg : t.segments) {
        if (!out.empty()) out += '-';
        out += seg;
    }
    return out;
}

std::optional<Timestamp> ts_from_field(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end()) return std::nullopt;
    if (it->is_string()) return Timestamp::try_parse(it->get<std::string>());
    if (it->is_number_unsigned() || it->is_number_integer()) {
        auto v = it->get<std::int64_t>();
        if (v < 0) return std::nullopt;
        return Timestamp::from_seconds(static_cast<std::uint64_t>(v));
    }
    if (it->is_number_float()) {
        double v = it->get<double>();
        if (v < 0) return std::nullopt;
        return Timestamp::from_nanos(static_cast<std::int64_t>(v * 1e9));
    }
    return std::nullopt;
}

std::optional<Timestamp> body_sensor_ts(const json& body) {
    if (!body.is_object()) return std::nullopt;
    if (auto ts = ts_from_field(body, "acp_ts")) return ts;
    return ts_from_field(body, "ts");
}

DecoderSpec make_passthrough() {
    DecoderSpec spec;
    spec.name = "passthrough";
    spec.filter = Topic::parse("#", true);
    spec.transform = [](const Topic& topic, const json& payload) {
        DecoderResult r;
        if (payload.is_object() && payload.contains("acp_id") && payload["acp_id"].is_string())
            r.acp_id = payload["acp_id"].get<std::string>();
        else
            r.acp_id = topic_joined_id(topic);
        r.acp_type = "unknown";
        r.sensor_ts = body_sensor_ts(payload);
        return r;
    };
    return spec;
}

double require_number(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end() || !it->is_number())
        throw Error(Err::decode_failure, std::string("missing numeric field ") + key);
    return it->get<double>();
}

}  // namespace

namespace {
void register_standard(DecoderManager& mgr);
}

DecoderManager::DecoderManager(DecoderSet set) {
    passthrough_ = std::make_unique<Entry>();
    passthrough_->spec = make_passthrough();
    passthrough_->literal_segments = 0;
    if (set == DecoderSet::standard) register_standard(*this);
}

void DecoderManager::register_decoder(DecoderSpec spec) {
    std::unique_lock lock(mu_);
    for (const auto& e : entries_)
        if (e->spec.name == spec.name)
            throw Error(Err::duplicate_name, "decoder already registered: " + spec.name);
    auto entry = std::make_unique<Entry>();
    entry->literal_segments = count_literals(spec.filter);
    entry->spec = std::move(spec);
    entries_.push_back(std::move(entry));
}

const DecoderSpec* DecoderManager::select(const Topic& topic, const json* parsed) const {
    std::shared_lock lock(mu_);
    const Entry* best = nullptr;
    for (const auto& e : entries_) {
        if (!topic_matches(e->spec.filter, topic)) continue;
        if (e->spec.match && !e->spec.match(topic, parsed)) continue;
        if (!best || e->literal_segments > best->literal_segments) best = e.get();
    }
    if (!best) best = passthrough_.get();
    return &best->spec;
}

std::variant<DecodeOutcome, DeadLetter> DecoderManager::decode(const Topic& topic,
                                                               const std::string& raw,
                                                               const Timestamp& receipt_ts) const {
    json payload;
    bool opaque = false;
    try {
        payload = json::parse(raw);
    } catch (const json::exception&) {
        opaque = true;
        payload = json{{"_raw_b64", base64_encode(raw)}};
    }

    const Entry* chosen = nullptr;
    {
        std::shared_lock lock(mu_);
        for (const auto& e : entries_) {
            if (!topic_matches(e->spec.filter, topic)) continue;
            if (e->spec.match && !e->spec.match(topic, opaque ? nullptr : &payload)) continue;
            if (!chosen || e->literal_segments > chosen->literal_segments) chosen = e.get();
        }
        if (!chosen) chosen = passthrough_.get();
    }

    DecoderResult result;
    try {
        result = chosen->spec.transform(topic, payload);
        if (result.acp_id.empty())
            throw Error(Err::decode_failure, "decoder produced empty acp_id");
    } catch (const std::exception& e) {
        return DeadLetter{topic.str(), base64_encode(raw), e.what(), receipt_ts};
    }
    chosen->matches.fetch_add(1, std::memory_order_relaxed);

    Envelope env;
    env.acp_id = result.acp_id;
    env.acp_type = result.acp_type;
    env.payload_original = payload;
    for (const auto& [name, value] : result.cooked)
        if (is_registry_feature(name)) env.payload_cooked[name] = value;

    env.ts_source = TsSource::platform;
    env.acp_ts = receipt_ts;
    if (result.sensor_ts) {
        std::int64_t delta = receipt_ts.unix_nanos() - result.sensor_ts->unix_nanos();
        if (delta <= kMaxSensorTsAgeNanos && -delta <= kMaxSensorTsAheadNanos) {
            env.acp_ts = *result.sensor_ts;
            env.ts_source = TsSource::sensor;
        }
    }

    if (result.event) {
        env.acp_event = *result.event;
        env.acp_event_value = result.event_value;
    }

    TsSource source = env.ts_source;
    return DecodeOutcome{std::move(env), source, chosen->spec.name};
}

json DecoderManager::stats() const {
    std::shared_lock lock(mu_);
    json per = json::object();
    for (const auto& e : entries_)
        per[e->spec.name] = e->matches.load(std::memory_order_relaxed);
    per[passthrough_->spec.name] = passthrough_->matches.load(std::memory_order_relaxed);
    return json{{"decoders", per}};
}

namespace {

void register_standard(DecoderManager& mgr) {
    // Tasmota-style smart plugs: csn/<device>/tele/SENSOR, power under ENERGY.
    {
        DecoderSpec spec;
        spec.name = "smartplug";
        spec.filter = Topic::parse("csn/+/tele/SENSOR", true);
        spec.transform = [](const Topic& topic, const json& payload) {
            DecoderResult r;
            r.acp_id = topic.segments[1];
            r.acp_type = "smartplug";
            if (!payload.is_object() || !payload.contains("ENERGY"))
                throw Error(Err::decode_failure, "smartplug payload missing ENERGY");
            r.cooked["power"] = require_number(payload["ENERGY"], "Power");
            r.sensor_ts = body_sensor_ts(payload);
            return r;
        };
        mgr.register_decoder(std::move(spec));
    }

    // Elsys CO2 nodes via a TTN-style uplink topic. The payload is either the
    // flat field map or a wrapper carrying it under payload_fields.
    {
        DecoderSpec spec;
        spec.name = "elsys-co2";
        spec.filter = Topic::parse("ttn/+/devices/+/up", true);
        spec.transform = [](const Topic& topic, const json& payload) {
            DecoderResult r;
            if (!payload.is_object())
                throw Error(Err::decode_failure, "elsys payload not an object");
            const json* fields = &payload;
            if (payload.contains("payload_fields") && payload["payload_fields"].is_object())
                fields = &payload["payload_fields"];
            if (payload.contains("dev_id") && payload["dev_id"].is_string())
                r.acp_id = payload["dev_id"].get<std::string>();
            else
                r.acp_id = topic.segments[3];
            r.acp_type = "co2";
            r.cooked["co2"] = require_number(*fields, "co2");
            static constexpr const char* extras[] = {"temperature", "humidity", "light",
                                                     "motion"};
            for (const char* key : extras) {
                auto it = fields->find(key);
                if (it != fields->end() && it->is_number()) r.cooked[key] = it->get<double>();
            }
            r.sensor_ts = body_sensor_ts(payload);
            return r;
        };
        mgr.register_decoder(std::move(spec));
    }

    // Coffee machine node: load cell plus two power channels.
    {
        DecoderSpec spec;
        spec.name = "coffee-node";
        spec.filter = Topic::parse("csn/coffee/+", true);
        spec.transform = [](const Topic& topic, const json& payload) {
            DecoderResult r;
            if (payload.is_object() && payload.contains("acp_id") &&
                payload["acp_id"].is_string())
                r.acp_id = payload["acp_id"].get<std::string>();
            else
                r.acp_id = topic.segments[2];
            r.acp_type = "coffee_machine";
            r.cooked["weight"] = require_number(payload, "weight");
            double power = 0.0;
            bool have_power = false;
            for (const char* key : {"grinder_W", "brewer_W"}) {
                auto it = payload.find(key);
                if (it != payload.end() && it->is_number()) {
                    power += it->get<double>();
                    have_power = true;
                }
            }
            if (have_power) r.cooked["power"] = power;
            r.sensor_ts = body_sensor_ts(payload);
            if (payload.contains("event") && payload["event"].is_string()) {
                r.event = payload["event"].get<std::string>();
                auto it = payload.find("event_value");
                if (it != payload.end() && it->is_number()) r.event_value = it->get<double>();
            }
            return r;
        };
        mgr.register_decoder(std::move(spec));
    }
}

}  // namespace

DecoderManager standard_decoders() { return DecoderManager(DecoderSet::standard); }

}  // namespace trellis
