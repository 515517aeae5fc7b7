#include <doctest.h>

#include <set>
#include <variant>

#include "trellis/decoders.hpp"
#include "trellis/rng.hpp"

using namespace trellis;

namespace {

const Timestamp kReceipt = Timestamp::parse("1589470000.250000");

DecodeOutcome expect_outcome(const DecoderManager& mgr, const std::string& topic,
                             const std::string& raw, const Timestamp& receipt = kReceipt) {
    auto result = mgr.decode(Topic::parse(topic), raw, receipt);
    REQUIRE(std::holds_alternative<DecodeOutcome>(result));
    return std::get<DecodeOutcome>(result);
}

DeadLetter expect_deadletter(const DecoderManager& mgr, const std::string& topic,
                             const std::string& raw, const Timestamp& receipt = kReceipt) {
    auto result = mgr.decode(Topic::parse(topic), raw, receipt);
    REQUIRE(std::holds_alternative<DeadLetter>(result));
    return std::get<DeadLetter>(result);
}

}  // namespace

TEST_CASE("selection prefers the most literal filter, then registration order") {
    DecoderManager mgr;
    auto stub = [](const char* type) {
        return [type](const Topic& topic, const json&) {
            DecoderResult r;
            r.acp_id = topic.segments.back();
            r.acp_type = type;
            return r;
        };
    };
    mgr.register_decoder({"broad", Topic::parse("a/#", true), nullptr, stub("broad")});
    mgr.register_decoder({"mid", Topic::parse("a/+/c", true), nullptr, stub("mid")});
    mgr.register_decoder({"exact", Topic::parse("a/b/c", true), nullptr, stub("exact")});
    mgr.register_decoder({"mid2", Topic::parse("a/b/+", true), nullptr, stub("mid2")});

    CHECK(mgr.select(Topic::parse("a/b/c"), nullptr)->name == "exact");
    CHECK(mgr.select(Topic::parse("a/x/c"), nullptr)->name == "mid");
    // mid and mid2 both have two literals for a/b/+ style topics; the first
    // registered wins
    CHECK(mgr.select(Topic::parse("a/b/z"), nullptr)->name == "mid2");
    CHECK(mgr.select(Topic::parse("a/q"), nullptr)->name == "broad");
    CHECK(mgr.select(Topic::parse("z/q"), nullptr)->name == "passthrough");

    CHECK_THROWS_AS(
        mgr.register_decoder({"exact", Topic::parse("x", true), nullptr, stub("dup")}), Error);
}

TEST_CASE("match predicates gate selection past the topic filter") {
    DecoderManager mgr;
    auto stub = [](const char* type) {
        return [type](const Topic&, const json&) {
            DecoderResult r;
            r.acp_id = "x";
            r.acp_type = type;
            return r;
        };
    };
    mgr.register_decoder({"picky", Topic::parse("t/+", true),
                          [](const Topic&, const json* parsed) {
                              return parsed && parsed->contains("magic");
                          },
                          stub("picky")});
    mgr.register_decoder({"fallback", Topic::parse("t/#", true), nullptr, stub("fallback")});

    auto with = expect_outcome(mgr, "t/1", R"({"magic": 1})");
    CHECK(with.decoder == "picky");
    auto without = expect_outcome(mgr, "t/1", R"({"plain": 1})");
    CHECK(without.decoder == "fallback");
}

TEST_CASE("smartplug decoding lifts power and names the device from the topic") {
    auto mgr = standard_decoders();
    auto out = expect_outcome(mgr, "csn/plug-kettle-01/tele/SENSOR",
                              R"({"ENERGY": {"Power": 1200.5, "Total": 3.2}})");
    CHECK(out.decoder == "smartplug");
    CHECK(out.envelope.acp_id == "plug-kettle-01");
    CHECK(out.envelope.acp_type == "smartplug");
    CHECK(out.envelope.payload_cooked.at("power") == doctest::Approx(1200.5));
    CHECK(out.ts_source == TsSource::platform);
    CHECK(out.envelope.acp_ts == kReceipt);
    // original kept verbatim
    CHECK(out.envelope.payload_original["ENERGY"]["Total"] == doctest::Approx(3.2));

    auto dl = expect_deadletter(mgr, "csn/plug-kettle-01/tele/SENSOR", R"({"Time":"x"})");
    CHECK(dl.topic == "csn/plug-kettle-01/tele/SENSOR");
    CHECK(dl.error.find("ENERGY") != std::string::npos);
    CHECK(base64_decode(dl.raw_b64) == R"({"Time":"x"})");
}

TEST_CASE("co2 node decoding cooks the registry features and keeps vendor extras raw") {
    auto mgr = standard_decoders();
    std::string raw = R"({"co2": 415, "device": "elsys_co2", "humidity": 36, "light": 0,)"
                      R"( "motion": 2, "temperature": 15.3, "vdd": 3659,)"
                      R"( "acp_ts": "1589469979.861816"})";
    auto out = expect_outcome(mgr, "ttn/app1/devices/elsys-co2-041ba9/up", raw);
    CHECK(out.decoder == "elsys-co2");
    CHECK(out.envelope.acp_id == "elsys-co2-041ba9");
    CHECK(out.envelope.acp_type == "co2");
    CHECK(out.envelope.payload_cooked.at("co2") == doctest::Approx(415));
    CHECK(out.envelope.payload_cooked.at("temperature") == doctest::Approx(15.3));
    CHECK(out.envelope.payload_cooked.at("humidity") == doctest::Approx(36));
    CHECK(out.envelope.payload_cooked.at("light") == doctest::Approx(0));
    CHECK(out.envelope.payload_cooked.at("motion") == doctest::Approx(2));
    CHECK(out.envelope.payload_cooked.count("vdd") == 0);
    CHECK(out.envelope.payload_original["vdd"] == 3659);
    CHECK(out.ts_source == TsSource::sensor);
    CHECK(out.envelope.acp_ts.str() == "1589469979.861816");

    auto wrapped = expect_outcome(
        mgr, "ttn/app1/devices/ignored/up",
        R"({"dev_id": "node-7", "payload_fields": {"co2": 500, "temperature": 20}})");
    CHECK(wrapped.envelope.acp_id == "node-7");
    CHECK(wrapped.envelope.payload_cooked.at("co2") == doctest::Approx(500));

    auto dl = expect_deadletter(mgr, "ttn/app1/devices/bad/up", R"({"temperature": 20})");
    CHECK(dl.error.find("co2") != std::string::npos);
}

TEST_CASE("coffee node decoding sums the power channels and carries alert markers") {
    auto mgr = standard_decoders();
    std::string raw = R"({"acp_id": "coffee-node-01", "weight": 2.35, "grinder_W": 42.0,)"
                      R"( "brewer_W": 3.5, "ts": 1589469979, "event": "COFFEE_NEW_POT",)"
                      R"( "event_value": 2.35})";
    auto out = expect_outcome(mgr, "csn/coffee/coffee-node-01", raw);
    CHECK(out.decoder == "coffee-node");
    CHECK(out.envelope.acp_id == "coffee-node-01");
    CHECK(out.envelope.acp_type == "coffee_machine");
    CHECK(out.envelope.payload_cooked.at("weight") == doctest::Approx(2.35));
    CHECK(out.envelope.payload_cooked.at("power") == doctest::Approx(45.5));
    REQUIRE(out.envelope.acp_event.has_value());
    CHECK(*out.envelope.acp_event == "COFFEE_NEW_POT");
    CHECK(out.envelope.acp_event_value == std::optional<double>(2.35));
    CHECK(out.ts_source == TsSource::sensor);

    auto quiet = expect_outcome(mgr, "csn/coffee/coffee-node-01",
                                R"({"weight": 2.0, "grinder_W": 0.0, "brewer_W": 0.0})");
    CHECK_FALSE(quiet.envelope.acp_event.has_value());
}

TEST_CASE("sensor timestamps outside the drift window fall back to receipt time") {
    auto mgr = standard_decoders();
    auto at = [&](const std::string& sensor_ts) {
        return expect_outcome(mgr, "csn/coffee/n1",
                              R"({"weight": 1.0, "ts": ")" + sensor_ts + R"("})");
    };
    std::uint64_t receipt = kReceipt.seconds();

    auto fresh = at(std::to_string(receipt - 3600));
    CHECK(fresh.ts_source == TsSource::sensor);

    auto old_ok = at(std::to_string(receipt - 23 * 3600));
    CHECK(old_ok.ts_source == TsSource::sensor);

    auto too_old = at(std::to_string(receipt - 25 * 3600));
    CHECK(too_old.ts_source == TsSource::platform);
    CHECK(too_old.envelope.acp_ts == kReceipt);

    auto slightly_ahead = at(std::to_string(receipt + 30));
    CHECK(slightly_ahead.ts_source == TsSource::sensor);

    auto far_ahead = at(std::to_string(receipt + 120));
    CHECK(far_ahead.ts_source == TsSource::platform);
}

TEST_CASE("cooked output is clamped to the feature registry") {
    DecoderManager mgr;
    mgr.register_decoder({"loose", Topic::parse("x", true), nullptr,
                          [](const Topic&, const json&) {
                              DecoderResult r;
                              r.acp_id = "s";
                              r.acp_type = "test";
                              r.cooked["co2"] = 400;
                              r.cooked["bogus_feature"] = 1;
                              r.cooked["vdd"] = 3000;
                              return r;
                          }});
    auto out = expect_outcome(mgr, "x", "{}");
    CHECK(out.envelope.payload_cooked.size() == 1);
    CHECK(out.envelope.payload_cooked.count("co2") == 1);
}

TEST_CASE("unknown topics pass through, binary payloads wrapped losslessly") {
    auto mgr = standard_decoders();
    auto out = expect_outcome(mgr, "misc/device9", R"({"acp_id": "dev-9", "val": 7})");
    CHECK(out.decoder == "passthrough");
    CHECK(out.envelope.acp_id == "dev-9");
    CHECK(out.envelope.acp_type == "unknown");
    CHECK(out.envelope.payload_cooked.empty());

    auto noid = expect_outcome(mgr, "misc/device9", R"({"val": 7})");
    CHECK(noid.envelope.acp_id == "misc-device9");

    std::string binary = std::string("\x00\x01\xfe\xff bytes", 10);
    auto blob = expect_outcome(mgr, "misc/blob", binary);
    auto b64 = blob.envelope.payload_original.at("_raw_b64").get<std::string>();
    CHECK(base64_decode(b64) == binary);
}

TEST_CASE("decoding is deterministic and envelopes reparse to the same bytes") {
    auto mgr = standard_decoders();
    Rng rng(0xb17e5);
    for (int i = 0; i < 16; ++i) {
        std::string raw;
        std::size_t len = 1 + rng.below(64);
        for (std::size_t k = 0; k < len; ++k)
            raw.push_back(static_cast<char>(rng.below(256)));
        std::string topic = (i % 2 == 0) ? "misc/blob" : "ttn/app/devices/d1/up";

        auto first = mgr.decode(Topic::parse(topic), raw, kReceipt);
        auto second = mgr.decode(Topic::parse(topic), raw, kReceipt);
        REQUIRE(first.index() == second.index());
        if (std::holds_alternative<DecodeOutcome>(first)) {
            const auto& a = std::get<DecodeOutcome>(first).envelope;
            const auto& b = std::get<DecodeOutcome>(second).envelope;
            CHECK(a.dump() == b.dump());
            // serialise, reparse, serialise: stable bytes
            json j = a.to_json();
            Envelope back = Envelope::from_json(j);
            CHECK(back.to_json() == j);
            CHECK(back.dump() == a.dump());
        } else {
            CHECK(std::get<DeadLetter>(first).to_json() ==
                  std::get<DeadLetter>(second).to_json());
        }
    }
}

TEST_CASE("decode stats count per-decoder matches") {
    auto mgr = standard_decoders();
    expect_outcome(mgr, "csn/p1/tele/SENSOR", R"({"ENERGY": {"Power": 5}})");
    expect_outcome(mgr, "csn/p1/tele/SENSOR", R"({"ENERGY": {"Power": 6}})");
    expect_outcome(mgr, "misc/x", "{}");
    expect_deadletter(mgr, "csn/p1/tele/SENSOR", "garbage");
    auto stats = mgr.stats();
    CHECK(stats["decoders"]["smartplug"] == 2);
    CHECK(stats["decoders"]["passthrough"] == 1);
    CHECK(stats["decoders"]["elsys-co2"] == 0);
}
