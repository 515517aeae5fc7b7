#pragma once
// The normalised message shape every reading takes after decode. Decoders
// add cooked fields next to the untouched original payload, never in place
// of it.

#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "trellis/core.hpp"
#include "trellis/location.hpp"

namespace trellis {

enum class TsSource { sensor, platform };

struct Envelope {
    std::string acp_id;
    Timestamp acp_ts;
    std::string acp_type;
    TsSource ts_source = TsSource::platform;

    // Exact parsed sensor payload. Non-JSON input is wrapped as
    // {"_raw_b64": "<base64>"}. Never mutated after construction.
    json payload_original = json::object();

    // Registry features extracted by the decoder. Keys are a subset of
    // feature_registry names.
    std::map<std::string, double> payload_cooked;

    std::optional<std::string> acp_event;
    std::optional<double> acp_event_value;
    std::optional<double> acp_confidence;
    std::optional<Location> acp_location;

    // Canonical serialisation: sorted keys, acp_ts as its decimal string.
    // Same envelope always dumps to the same bytes.
    json to_json() const;
    std::string dump() const;
    static Envelope from_json(const json& j);
};

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace trellis
