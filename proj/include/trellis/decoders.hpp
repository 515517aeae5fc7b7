#pragma once
// Decoder Manager: plug-in decoders normalising raw broker messages into
// Envelopes. A decoder may only add fields; the original payload is carried
// through untouched. A built-in passthrough makes decoding total; vendor
// transforms that reject their payload produce dead letters instead.

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "trellis/broker.hpp"
#include "trellis/envelope.hpp"

namespace trellis {

struct DecoderResult {
    std::string acp_id;
    std::string acp_type;
    std::map<std::string, double> cooked;
    std::optional<Timestamp> sensor_ts;
    std::optional<std::string> event;
    std::optional<double> event_value;
};

struct DecoderSpec {
    std::string name;
    Topic filter;
    // Extra gate past the topic filter; null means always eligible.
    std::function<bool(const Topic& topic, const json* parsed)> match;
    // May throw on vendor garbage; the manager turns that into a dead letter.
    std::function<DecoderResult(const Topic& topic, const json& payload)> transform;
};

struct DecodeOutcome {
    Envelope envelope;
    TsSource ts_source;
    std::string decoder;
};

struct DeadLetter {
    std::string topic;
    std::string raw_b64;
    std::string error;
    Timestamp receipt_ts;
    json to_json() const;
};

inline constexpr const char* kDeadLetterTopic = "platform/deadletter";

// Sensor clocks drift; timestamps too stale or too futuristic fall back to
// receipt time.
inline constexpr std::int64_t kMaxSensorTsAgeNanos = 24ll * 3600 * 1000000000;
inline constexpr std::int64_t kMaxSensorTsAheadNanos = 60ll * 1000000000;

enum class DecoderSet { none, standard };

class DecoderManager {
public:
    explicit DecoderManager(DecoderSet set = DecoderSet::none);

    // Throws Err::duplicate_name. Thread-safe; selection sees the decoder
    // for every subsequent message.
    void register_decoder(DecoderSpec spec);

    // Best match: most literal filter segments, then registration order.
    // Returns the passthrough when nothing matches.
    const DecoderSpec* select(const Topic& topic, const json* parsed) const;

    std::variant<DecodeOutcome, DeadLetter> decode(const Topic& topic, const std::string& raw,
                                                   const Timestamp& receipt_ts) const;

    json stats() const;

private:
    struct Entry {
        DecoderSpec spec;
        std::size_t literal_segments;
        mutable std::atomic<std::uint64_t> matches{0};
    };

    mutable std::shared_mutex mu_;
    std::vector<std::unique_ptr<Entry>> entries_;
    std::unique_ptr<Entry> passthrough_;
};

// smartplug, elsys-co2, and coffee-node decoders pre-registered.
DecoderManager standard_decoders();

}  // namespace trellis
