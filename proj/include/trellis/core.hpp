#pragma once
// Core value types shared by every module: error codes, decimal timestamps,
// and the feature registry.

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace trellis {

enum class Err {
    malformed_timestamp,
    timestamp_regression,
    unknown_system,
    no_coordinates,
    malformed_boundary,
    bad_topic,
    duplicate_bridge,
    duplicate_name,
    not_found,
    no_record_at,
    cyclic_parent,
    unknown_crate,
    dangling_parent,
    decode_failure,
    length_mismatch,
    too_few_samples,
    unknown_sensor,
    parse_error,
    binding_overflow,
    unknown_person,
    no_data,
    too_many_subscriptions,
    storage_full,
    peer_down,
    invalid_argument,
};

// Single exception type; code() tells callers which contract was violated.
class Error : public std::runtime_error {
public:
    Error(Err code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Err code() const noexcept { return code_; }

private:
    Err code_;
};

const char* err_name(Err code) noexcept;

// Timestamp is a decimal string of UTC seconds since the epoch, preserved
// digit for digit. Never a float: payloads carry 6+ fractional digits and
// round-tripping through double would reorder equal-looking values.
//
// Invariants: frac holds 0..12 digits exactly as parsed; ordering compares
// the rational value (frac padded to 12 digits), so "5.1" == "5.10".
class Timestamp {
public:
    Timestamp() = default;
    Timestamp(std::uint64_t secs, std::string frac);

    // Accepts "<digits>" or "<digits>.<digits>". Fraction digits beyond 12
    // are truncated. Anything else throws Err::malformed_timestamp.
    static Timestamp parse(std::string_view text);
    static std::optional<Timestamp> try_parse(std::string_view text) noexcept;

    // Platform-generated stamps carry microsecond precision.
    static Timestamp from_nanos(std::int64_t unix_nanos);
    static Timestamp from_seconds(double secs);

    std::uint64_t secs() const noexcept { return secs_; }
    const std::string& frac() const noexcept { return frac_; }

    std::string str() const;
    double seconds() const noexcept;
    std::int64_t unix_nanos() const noexcept;
    std::uint64_t unix_day() const noexcept { return secs_ / 86400; }

    Timestamp plus_nanos(std::int64_t delta) const;

    bool operator==(const Timestamp& other) const noexcept;
    std::strong_ordering operator<=>(const Timestamp& other) const noexcept;

private:
    std::uint64_t secs_ = 0;
    std::string frac_;
};

// UTC calendar split used by the temporal feature extractor.
struct CivilTime {
    int year;
    int month;   // 1..12
    int day;     // 1..31
    int hour;    // 0..23
    int minute;
    int second;
};

CivilTime civil_from_timestamp(const Timestamp& ts);

struct FeatureDef {
    std::string_view name;
    std::string_view unit;
};

// Closed registry of cooked feature names. Decoders may only add these to
// payload_cooked; anything else stays in payload_original.
inline constexpr std::array<FeatureDef, 8> feature_registry{{
    {"co2", "ppm"},
    {"temperature", "degC"},
    {"humidity", "percent"},
    {"light", "lux"},
    {"motion", "count"},
    {"power", "W"},
    {"weight", "kg"},
    {"occupancy", "count"},
}};

bool is_registry_feature(std::string_view name) noexcept;

}  // namespace trellis
