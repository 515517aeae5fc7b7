#pragma once
// Who may read which sensor data. Default deny; allows come from occupancy
// (person occupies the measuring crate or one of its ancestors) or from
// explicit permission records on the sensor or any ancestor crate. A grant on
// a parent covers everything underneath it.

#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trellis/metastore.hpp"

namespace trellis {

using json = nlohmann::json;

inline constexpr const char* kVerbSensorDataRead = "sensor_data_read";

struct Decision {
    bool allow = false;
    std::vector<std::string> proof;  // witnessing chain for audit
};

// Pure over the snapshot; traverses only upward through parents.
// Throws Err::unknown_person / Err::unknown_sensor when the pre fails.
Decision check(const StoreSnapshot& snap, const std::string& person_id, const std::string& verb,
               const std::string& sensor_id);

// True only when every contributing sensor is readable. Complex events carry
// several sensors and take the conservative intersection (see ledger).
bool check_all(const StoreSnapshot& snap, const std::string& person_id, const std::string& verb,
               const std::vector<std::string>& sensor_ids);

struct AggregateView {
    double value = 0.0;
    std::size_t contributors = 0;  // count only, never identities
};

// Mean of the latest per-sensor `feature` value across sensors measuring the
// crate or its descendants. `latest` supplies the newest value for a sensor,
// or nullopt when it has none. Throws Err::no_data with zero contributors.
AggregateView aggregate_view(
    const StoreSnapshot& snap, const std::string& crate_id, const std::string& feature,
    const std::function<std::optional<double>(const std::string&)>& latest);

// Seed loader: one permission body per NDJSON line, each with an "id" field.
std::size_t import_permissions(MetadataStore& store, std::istream& in, const Timestamp& ts);

// Decision cache over a live store. Every cache entry is dropped whenever the
// store epoch moves, so a metadata change is visible on the next decision.
// Single ownership intended (one filter per consuming verticle); not
// internally synchronised.
class PrivacyFilter {
public:
    explicit PrivacyFilter(const MetadataStore& store) : store_(store) {}

    // Cached check; unknown person or sensor becomes a deny instead of an
    // error so a stream can carry traffic for sensors the store has not met.
    const Decision& decide(const std::string& person_id, const std::string& sensor_id);
    bool allowed(const std::string& person_id, const std::string& sensor_id) {
        return decide(person_id, sensor_id).allow;
    }
    bool allowed_all(const std::string& person_id, const std::vector<std::string>& sensor_ids);

    // One envelope: passes iff its acp_id is readable. No acp_id, no pass.
    bool pass(const std::string& person_id, const json& envelope_body);

    std::function<void(const json&)> audit;  // {person, sensor, decision, proof_path, ts}

    std::uint64_t cache_hits() const noexcept { return hits_; }
    std::uint64_t cache_misses() const noexcept { return misses_; }
    std::uint64_t epoch_flushes() const noexcept { return flushes_; }
    json stats() const;

private:
    void refresh();

    const MetadataStore& store_;
    std::optional<StoreSnapshot> snap_;
    std::uint64_t seen_epoch_ = 0;
    std::map<std::pair<std::string, std::string>, Decision> cache_;
    std::uint64_t hits_ = 0, misses_ = 0, flushes_ = 0;
};

// Keeps exactly the envelopes the person may read, in order.
std::vector<json> filter_stream(PrivacyFilter& filter, const std::string& person_id,
                                const std::vector<json>& envelopes);

}  // namespace trellis
