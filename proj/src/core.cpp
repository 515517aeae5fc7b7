#include "trellis/core.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>

namespace trellis {

const char* err_name(Err code) noexcept {
    switch (code) {
        case Err::malformed_timestamp: return "MalformedTimestamp";
        case Err::timestamp_regression: return "TimestampRegression";
        case Err::unknown_system: return "UnknownSystem";
        case Err::no_coordinates: return "NoCoordinates";
        case Err::malformed_boundary: return "MalformedBoundary";
        case Err::bad_topic: return "BadTopic";
        case Err::duplicate_bridge: return "DuplicateBridge";
        case Err::duplicate_name: return "DuplicateName";
        case Err::not_found: return "NotFound";
        case Err::no_record_at: return "NoRecordAt";
        case Err::cyclic_parent: return "CyclicParent";
        case Err::unknown_crate: return "UnknownCrate";
        case Err::dangling_parent: return "DanglingParent";
        case Err::decode_failure: return "DecodeFailure";
        case Err::length_mismatch: return "LengthMismatch";
        case Err::too_few_samples: return "TooFewSamples";
        case Err::unknown_sensor: return "UnknownSensor";
        case Err::parse_error: return "ParseError";
        case Err::binding_overflow: return "BindingOverflow";
        case Err::unknown_person: return "UnknownPerson";
        case Err::no_data: return "NoData";
        case Err::too_many_subscriptions: return "TooManySubscriptions";
        case Err::storage_full: return "StorageFull";
        case Err::peer_down: return "PeerDown";
        case Err::invalid_argument: return "InvalidArgument";
    }
    return "Unknown";
}

Timestamp::Timestamp(std::uint64_t secs, std::string frac) : secs_(secs), frac_(std::move(frac)) {
    if (frac_.size() > 12) frac_.resize(12);
    for (char c : frac_) {
        if (c < '0' || c > '9')
            throw Error(Err::malformed_timestamp, "fraction must be decimal digits");
    }
}

Timestamp Timestamp::parse(std::string_view text) {
    auto parsed = try_parse(text);
    if (!parsed)
        throw Error(Err::malformed_timestamp, "bad timestamp: '" + std::string(text) + "'");
    return *parsed;
}

std::optional<Timestamp> Timestamp::try_parse(std::string_view text) noexcept {
    if (text.empty()) return std::nullopt;
    std::size_t dot = text.find('.');
    std::string_view whole = text.substr(0, dot);
    std::string_view frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
    if (whole.empty()) return std::nullopt;
    if (dot != std::string_view::npos && frac.empty()) return std::nullopt;
    std::uint64_t secs = 0;
    auto [ptr, ec] = std::from_chars(whole.data(), whole.data() + whole.size(), secs);
    if (ec != std::errc() || ptr != whole.data() + whole.size()) return std::nullopt;
    for (char c : frac)
        if (c < '0' || c > '9') return std::nullopt;
    if (frac.size() > 12) frac = frac.substr(0, 12);
    Timestamp ts;
    ts.secs_ = secs;
    ts.frac_.assign(frac.begin(), frac.end());
    return ts;
}

Timestamp Timestamp::from_nanos(std::int64_t unix_nanos) {
    if (unix_nanos < 0) unix_nanos = 0;
    std::uint64_t secs = static_cast<std::uint64_t>(unix_nanos) / 1000000000ull;
    std::uint64_t micros = (static_cast<std::uint64_t>(unix_nanos) % 1000000000ull) / 1000ull;
    char buf[8];
    std::snprintf(buf, sizeof buf, "%06" PRIu64, micros);
    Timestamp ts;
    ts.secs_ = secs;
    ts.frac_ = buf;
    return ts;
}

Timestamp Timestamp::from_seconds(double secs) {
    if (secs < 0) secs = 0;
    double ns = std::round(secs * 1e9);
    return from_nanos(static_cast<std::int64_t>(ns));
}

std::string Timestamp::str() const {
    std::string out = std::to_string(secs_);
    if (!frac_.empty()) {
        out.push_back('.');
        out += frac_;
    }
    return out;
}

double Timestamp::seconds() const noexcept {
    double f = 0.0;
    double scale = 0.1;
    for (char c : frac_) {
        f += (c - '0') * scale;
        scale *= 0.1;
    }
    return static_cast<double>(secs_) + f;
}

std::int64_t Timestamp::unix_nanos() const noexcept {
    std::int64_t ns = static_cast<std::int64_t>(secs_) * 1000000000ll;
    std::int64_t scale = 100000000ll;
    for (std::size_t i = 0; i < frac_.size() && scale > 0; ++i) {
        ns += (frac_[i] - '0') * scale;
        scale /= 10;
    }
    return ns;
}

Timestamp Timestamp::plus_nanos(std::int64_t delta) const {
    return from_nanos(unix_nanos() + delta);
}

static std::array<char, 12> padded(const std::string& frac) {
    std::array<char, 12> out;
    out.fill('0');
    std::copy(frac.begin(), frac.end(), out.begin());
    return out;
}

bool Timestamp::operator==(const Timestamp& other) const noexcept {
    return secs_ == other.secs_ && padded(frac_) == padded(other.frac_);
}

std::strong_ordering Timestamp::operator<=>(const Timestamp& other) const noexcept {
    if (auto c = secs_ <=> other.secs_; c != 0) return c;
    return padded(frac_) <=> padded(other.frac_);
}

// Days-to-civil conversion from the proleptic Gregorian calendar algorithm
// (Euclidean affine transform, exact for the whole uint64 range used here).
CivilTime civil_from_timestamp(const Timestamp& ts) {
    std::int64_t z = static_cast<std::int64_t>(ts.secs() / 86400);
    std::int64_t rem = static_cast<std::int64_t>(ts.secs() % 86400);
    z += 719468;
    std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    std::uint64_t doe = static_cast<std::uint64_t>(z - era * 146097);
    std::uint64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    std::uint64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    std::uint64_t mp = (5 * doy + 2) / 153;
    std::uint64_t d = doy - (153 * mp + 2) / 5 + 1;
    std::uint64_t m = mp < 10 ? mp + 3 : mp - 9;
    if (m <= 2) ++y;
    CivilTime out;
    out.year = static_cast<int>(y);
    out.month = static_cast<int>(m);
    out.day = static_cast<int>(d);
    out.hour = static_cast<int>(rem / 3600);
    out.minute = static_cast<int>((rem % 3600) / 60);
    out.second = static_cast<int>(rem % 60);
    return out;
}

bool is_registry_feature(std::string_view name) noexcept {
    for (const auto& def : feature_registry)
        if (def.name == name) return true;
    return false;
}

}  // namespace trellis
