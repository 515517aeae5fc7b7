#pragma once
// Versioned metadata store for crates, sensors, people, organisations,
// permissions, and coordinate transforms. Two logical columns (id, JSON
// body); history lives in the same table, told apart by expiry timestamps.

#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "trellis/core.hpp"
#include "trellis/location.hpp"

namespace trellis {

struct VersionedRecord {
    std::string kind;
    std::string id;
    json body;
    Timestamp acp_ts;
    std::optional<Timestamp> acp_ts_end;

    bool live() const noexcept { return !acp_ts_end.has_value(); }
    bool tombstone() const noexcept {
        return body.is_object() && body.value("deleted", false);
    }
    json to_json() const;
    static VersionedRecord from_json(const json& j);
};

// Typed views over record bodies. Parsing is lenient about legacy key
// spellings; emission sticks to the canonical ones.
struct CrateView {
    std::string crate_id;
    std::string crate_type;
    std::optional<std::string> parent_crate_id;
    std::string long_name;
    std::string description;
    std::optional<Boundary> boundary;
    std::optional<Location> location;
    static CrateView from_body(const json& body);
};

struct SensorView {
    std::string acp_id;
    std::string acp_type;
    std::string owner;
    std::string source;
    std::vector<std::string> features;
    std::optional<Location> location;
    std::optional<std::string> parent_crate_id() const;
    static SensorView from_body(const json& body);
};

struct PersonView {
    std::string person_id;
    std::string display_name;
    std::vector<std::string> affiliations;
    std::vector<std::string> occupies;
    std::vector<std::string> roles;
    static PersonView from_body(const json& body);
};

struct PermissionView {
    std::string subject;  // person id, "building_manager", "department_member"
    std::string verb;
    std::string object;  // sensor acp_id or crate id
    std::optional<std::string> org;  // scopes department_member
    static PermissionView from_body(const json& body);
};

struct AncestorsResult {
    std::vector<std::string> chain;  // nearest first
    bool dangling = false;           // parent id missing somewhere up the chain
};

// Immutable point-in-time view. Copyable, lock-free to read, safe on any
// thread. Record fetches are counted (shared across copies) so callers can
// assert traversal bounds.
class StoreSnapshot {
public:
    const VersionedRecord* find(const std::string& kind, const std::string& id,
                                const Timestamp* at = nullptr) const;
    VersionedRecord get(const std::string& kind, const std::string& id) const;
    VersionedRecord get_at(const std::string& kind, const std::string& id,
                           const Timestamp& at) const;
    std::vector<VersionedRecord> history(const std::string& kind, const std::string& id) const;
    std::vector<VersionedRecord> live_of_kind(const std::string& kind) const;

    json crate_tree(const std::string& crate_id,
                    std::optional<std::size_t> depth = std::nullopt) const;
    AncestorsResult ancestors(const std::string& id) const;
    bool is_descendant(const std::string& id, const std::string& ancestor_id) const;
    std::vector<VersionedRecord> sensors_in_crate(const std::string& crate_id,
                                                  bool recursive) const;

    // Permission records indexed by object id, built once per snapshot.
    std::vector<PermissionView> permissions_for(const std::string& object_id) const;

    // True when org_id equals one of the person's affiliations or an
    // ancestor organisation of one (membership flows upward).
    bool member_of_org(const PersonView& person, const std::string& org_id) const;

    TransformRegistry transforms() const;

    std::uint64_t epoch() const noexcept { return epoch_; }
    std::uint64_t reads() const noexcept;
    void reset_reads() const noexcept;

private:
    friend class MetadataStore;
    using Key = std::pair<std::string, std::string>;
    using ChainPtr = std::shared_ptr<const std::vector<VersionedRecord>>;

    std::shared_ptr<const std::map<Key, ChainPtr>> chains_;
    std::shared_ptr<const std::multimap<std::string, PermissionView>> perm_index_;
    std::shared_ptr<std::atomic<std::uint64_t>> read_count_;
    std::uint64_t epoch_ = 0;
};

// Single-writer store. Mutations are serialised; every read goes through a
// snapshot, so readers never observe a half-applied write.
class MetadataStore {
public:
    // journal_path empty keeps the store memory-only.
    explicit MetadataStore(std::string journal_path = {});

    // Rebuilds from an NDJSON journal, then keeps appending to it unless
    // detach is true.
    static MetadataStore replay(const std::string& journal_path, bool detach = false);

    VersionedRecord upsert(const std::string& kind, const std::string& id, json body,
                           const Timestamp& at);
    // Tombstone write; the object stops resolving from `at` onward.
    VersionedRecord remove(const std::string& kind, const std::string& id, const Timestamp& at);

    StoreSnapshot snapshot() const;
    std::uint64_t epoch() const noexcept { return epoch_.load(); }

    // Conveniences that take a fresh snapshot per call.
    VersionedRecord get(const std::string& kind, const std::string& id) const;
    VersionedRecord get_at(const std::string& kind, const std::string& id,
                           const Timestamp& at) const;

private:
    struct ReplayTag {};
    MetadataStore(const std::string& journal_path, bool detach, ReplayTag);
    void append_journal(const VersionedRecord& rec);

    mutable std::shared_mutex mu_;
    std::map<StoreSnapshot::Key, StoreSnapshot::ChainPtr> chains_;
    std::atomic<std::uint64_t> epoch_{0};
    std::string journal_path_;
};

}  // namespace trellis
