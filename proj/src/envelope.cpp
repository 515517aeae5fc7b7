#include "trellis/envelope.hpp"

namespace trellis {

json Envelope::to_json() const {
    json j = json::object();
    j["acp_id"] = acp_id;
    j["acp_ts"] = acp_ts.str();
    j["acp_type"] = acp_type;
    j["ts_source"] = ts_source == TsSource::sensor ? "SENSOR" : "PLATFORM";
    j["payload_original"] = payload_original;
    json cooked = json::object();
    for (const auto& [k, v] : payload_cooked) cooked[k] = v;
    j["payload_cooked"] = cooked;
    if (acp_event) j["acp_event"] = *acp_event;
    if (acp_event_value) j["acp_event_value"] = *acp_event_value;
    if (acp_confidence) j["acp_confidence"] = *acp_confidence;
    if (acp_location) j["acp_location"] = acp_location->to_json();
    return j;
}

std::string Envelope::dump() const { return to_json().dump(); }

Envelope Envelope::from_json(const json& j) {
    Envelope e;
    e.acp_id = j.at("acp_id").get<std::string>();
    e.acp_ts = Timestamp::parse(j.at("acp_ts").get<std::string>());
    e.acp_type = j.value("acp_type", "unknown");
    e.ts_source = j.value("ts_source", "PLATFORM") == "SENSOR" ? TsSource::sensor : TsSource::platform;
    if (j.contains("payload_original")) e.payload_original = j.at("payload_original");
    if (j.contains("payload_cooked")) {
        for (const auto& [k, v] : j.at("payload_cooked").items())
            e.payload_cooked[k] = v.get<double>();
    }
    if (j.contains("acp_event")) e.acp_event = j.at("acp_event").get<std::string>();
    if (j.contains("acp_event_value")) e.acp_event_value = j.at("acp_event_value").get<double>();
    if (j.contains("acp_confidence")) e.acp_confidence = j.at("acp_confidence").get<double>();
    if (j.contains("acp_location")) e.acp_location = Location::from_json(j.at("acp_location"));
    return e;
}

static constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(std::string_view bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 3 <= bytes.size()) {
        unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                     (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                     static_cast<unsigned char>(bytes[i + 2]);
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(kB64[(v >> 6) & 63]);
        out.push_back(kB64[v & 63]);
        i += 3;
    }
    std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out += "==";
    } else if (rest == 2) {
        unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                     (static_cast<unsigned char>(bytes[i + 1]) << 8);
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(kB64[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::string base64_decode(std::string_view text) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    int buf = 0, bits = 0;
    for (char c : text) {
        if (c == '=') break;
        int v = val(c);
        if (v < 0) continue;
        buf = (buf << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((buf >> bits) & 0xff));
        }
    }
    return out;
}

}  // namespace trellis
