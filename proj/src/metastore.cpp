#include "trellis/metastore.hpp"

#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

namespace trellis {

json VersionedRecord::to_json() const {
    json j = json::object();
    j["kind"] = kind;
    j["id"] = id;
    j["acp_ts"] = acp_ts.str();
    if (acp_ts_end) j["acp_ts_end"] = acp_ts_end->str();
    j["body"] = body;
    return j;
}

VersionedRecord VersionedRecord::from_json(const json& j) {
    VersionedRecord rec;
    rec.kind = j.at("kind").get<std::string>();
    rec.id = j.at("id").get<std::string>();
    rec.acp_ts = Timestamp::parse(j.at("acp_ts").get<std::string>());
    if (j.contains("acp_ts_end"))
        rec.acp_ts_end = Timestamp::parse(j.at("acp_ts_end").get<std::string>());
    rec.body = j.at("body");
    return rec;
}

namespace {

std::vector<std::string> string_list(const json& j, const char* key) {
    std::vector<std::string> out;
    if (!j.contains(key)) return out;
    const json& v = j.at(key);
    if (v.is_array()) {
        for (const auto& e : v) out.push_back(e.get<std::string>());
    } else if (v.is_string()) {
        // comma-separated legacy form
        std::stringstream ss(v.get<std::string>());
        std::string item;
        while (std::getline(ss, item, ',')) {
            std::size_t a = item.find_first_not_of(" \t\n");
            std::size_t b = item.find_last_not_of(" \t\n");
            if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
        }
    }
    return out;
}

}  // namespace

CrateView CrateView::from_body(const json& body) {
    CrateView v;
    v.crate_id = body.value("crate_id", "");
    v.crate_type = body.value("crate_type", "other");
    if (body.contains("parent_crate_id"))
        v.parent_crate_id = body.at("parent_crate_id").get<std::string>();
    if (body.contains("long-name"))
        v.long_name = body.at("long-name").get<std::string>();
    else
        v.long_name = body.value("long_name", "");
    v.description = body.value("description", "");
    if (body.contains("acp_location")) v.location = Location::from_json(body.at("acp_location"));
    if (body.contains("acp_boundary")) {
        std::string frame;
        if (v.location && v.location->system == LocationSystem::building)
            frame = v.location->building;
        v.boundary = Boundary::from_json(body.at("acp_boundary"), frame);
    }
    return v;
}

SensorView SensorView::from_body(const json& body) {
    SensorView v;
    v.acp_id = body.value("acp_id", "");
    v.acp_type = body.contains("acp_type") ? body.at("acp_type").get<std::string>()
                                           : body.value("type", "");
    v.owner = body.value("owner", "");
    v.source = body.value("source", "");
    v.features = string_list(body, "features");
    if (body.contains("acp_location")) v.location = Location::from_json(body.at("acp_location"));
    return v;
}

std::optional<std::string> SensorView::parent_crate_id() const {
    if (location && location->parent_crate_id) return location->parent_crate_id;
    return std::nullopt;
}

PersonView PersonView::from_body(const json& body) {
    PersonView v;
    v.person_id = body.value("person_id", "");
    v.display_name = body.contains("display_name") ? body.at("display_name").get<std::string>()
                                                   : body.value("name", "");
    v.affiliations = string_list(body, "affiliations");
    v.occupies = string_list(body, "occupies");
    v.roles = string_list(body, "roles");
    return v;
}

PermissionView PermissionView::from_body(const json& body) {
    PermissionView v;
    v.subject = body.value("subject", "");
    v.verb = body.value("verb", "read");
    v.object = body.value("object", "");
    if (body.contains("org")) v.org = body.at("org").get<std::string>();
    return v;
}

const VersionedRecord* StoreSnapshot::find(const std::string& kind, const std::string& id,
                                           const Timestamp* at) const {
    read_count_->fetch_add(1, std::memory_order_relaxed);
    auto it = chains_->find({kind, id});
    if (it == chains_->end()) return nullptr;
    const auto& chain = *it->second;
    if (chain.empty()) return nullptr;
    if (!at) {
        const VersionedRecord& last = chain.back();
        return last.tombstone() ? nullptr : &last;
    }
    for (const auto& rec : chain) {
        bool started = !(*at < rec.acp_ts);
        bool not_ended = !rec.acp_ts_end || *at < *rec.acp_ts_end;
        if (started && not_ended) return rec.tombstone() ? nullptr : &rec;
    }
    return nullptr;
}

VersionedRecord StoreSnapshot::get(const std::string& kind, const std::string& id) const {
    const auto* rec = find(kind, id);
    if (!rec) throw Error(Err::not_found, kind + "/" + id + " not found");
    return *rec;
}

VersionedRecord StoreSnapshot::get_at(const std::string& kind, const std::string& id,
                                      const Timestamp& at) const {
    auto it = chains_->find({kind, id});
    if (it == chains_->end() || it->second->empty())
        throw Error(Err::not_found, kind + "/" + id + " not found");
    if (at < it->second->front().acp_ts)
        throw Error(Err::no_record_at, kind + "/" + id + " has no record at " + at.str());
    const auto* rec = find(kind, id, &at);
    if (!rec) throw Error(Err::not_found, kind + "/" + id + " deleted at " + at.str());
    return *rec;
}

std::vector<VersionedRecord> StoreSnapshot::history(const std::string& kind,
                                                    const std::string& id) const {
    read_count_->fetch_add(1, std::memory_order_relaxed);
    auto it = chains_->find({kind, id});
    if (it == chains_->end()) throw Error(Err::not_found, kind + "/" + id + " not found");
    return *it->second;
}

std::vector<VersionedRecord> StoreSnapshot::live_of_kind(const std::string& kind) const {
    std::vector<VersionedRecord> out;
    for (auto it = chains_->lower_bound({kind, ""});
         it != chains_->end() && it->first.first == kind; ++it) {
        if (it->second->empty()) continue;
        const VersionedRecord& last = it->second->back();
        if (!last.tombstone()) out.push_back(last);
    }
    return out;
}

json StoreSnapshot::crate_tree(const std::string& crate_id,
                               std::optional<std::size_t> depth) const {
    VersionedRecord rec = get("crate", crate_id);
    json node = rec.body;
    node["acp_ts"] = rec.acp_ts.str();
    bool expand = !depth.has_value() || *depth > 0;
    if (!expand) return node;
    std::optional<std::size_t> next = depth ? std::optional<std::size_t>(*depth - 1) : std::nullopt;
    json children = json::array();
    for (const auto& child : live_of_kind("crate")) {
        CrateView cv = CrateView::from_body(child.body);
        if (cv.parent_crate_id == crate_id) children.push_back(crate_tree(child.id, next));
    }
    node["children"] = children;
    return node;
}

AncestorsResult StoreSnapshot::ancestors(const std::string& id) const {
    std::optional<std::string> cursor;
    if (const auto* crate = find("crate", id)) {
        cursor = CrateView::from_body(crate->body).parent_crate_id;
    } else if (const auto* sensor = find("sensor", id)) {
        cursor = SensorView::from_body(sensor->body).parent_crate_id();
    } else {
        throw Error(Err::not_found, id + " is neither a crate nor a sensor");
    }
    AncestorsResult out;
    std::set<std::string> visited{id};
    while (cursor) {
        if (visited.count(*cursor)) {
            out.dangling = true;  // defensive: accepted writes keep this acyclic
            break;
        }
        visited.insert(*cursor);
        const auto* parent = find("crate", *cursor);
        if (!parent) {
            out.dangling = true;  // chain holds resolvable crates only
            break;
        }
        out.chain.push_back(*cursor);
        cursor = CrateView::from_body(parent->body).parent_crate_id;
    }
    return out;
}

bool StoreSnapshot::is_descendant(const std::string& id, const std::string& ancestor_id) const {
    if (!find("crate", ancestor_id) && !find("sensor", ancestor_id))
        throw Error(Err::not_found, ancestor_id + " not found");
    if (id == ancestor_id) {
        if (!find("crate", id) && !find("sensor", id))
            throw Error(Err::not_found, id + " not found");
        return true;
    }
    auto anc = ancestors(id);  // throws NotFound when id is unknown
    for (const auto& a : anc.chain)
        if (a == ancestor_id) return true;
    return false;
}

std::vector<VersionedRecord> StoreSnapshot::sensors_in_crate(const std::string& crate_id,
                                                             bool recursive) const {
    if (!find("crate", crate_id)) throw Error(Err::not_found, "crate " + crate_id + " not found");
    std::vector<VersionedRecord> out;
    for (const auto& rec : live_of_kind("sensor")) {
        SensorView sv = SensorView::from_body(rec.body);
        auto parent = sv.parent_crate_id();
        if (!parent) continue;
        if (*parent == crate_id) {
            out.push_back(rec);
            continue;
        }
        if (!recursive) continue;
        std::optional<std::string> cursor = parent;
        std::set<std::string> visited;
        while (cursor && !visited.count(*cursor)) {
            if (*cursor == crate_id) {
                out.push_back(rec);
                break;
            }
            visited.insert(*cursor);
            const auto* crate = find("crate", *cursor);
            if (!crate) break;
            cursor = CrateView::from_body(crate->body).parent_crate_id;
        }
    }
    return out;  // map iteration keeps acp_id order
}

// Index probe, not a record fetch: the object index is built once per
// snapshot, so consulting it does not count against traversal read bounds.
std::vector<PermissionView> StoreSnapshot::permissions_for(const std::string& object_id) const {
    std::vector<PermissionView> out;
    auto [lo, hi] = perm_index_->equal_range(object_id);
    for (auto it = lo; it != hi; ++it) out.push_back(it->second);
    return out;
}

bool StoreSnapshot::member_of_org(const PersonView& person, const std::string& org_id) const {
    for (const auto& aff : person.affiliations) {
        std::optional<std::string> cursor = aff;
        std::set<std::string> visited;
        while (cursor && !visited.count(*cursor)) {
            if (*cursor == org_id) return true;
            visited.insert(*cursor);
            const auto* org = find("org", *cursor);
            if (!org) break;
            if (org->body.contains("parent_org_id"))
                cursor = org->body.at("parent_org_id").get<std::string>();
            else
                cursor = std::nullopt;
        }
    }
    return false;
}

TransformRegistry StoreSnapshot::transforms() const {
    TransformRegistry reg;
    for (const auto& rec : live_of_kind("transform")) {
        CoordinateTransform t;
        t.building = rec.body.value("building", rec.id);
        t.lat0 = rec.body.value("lat0", 0.0);
        t.lng0 = rec.body.value("lng0", 0.0);
        t.alt0 = rec.body.value("alt0", 0.0);
        t.rotation_deg = rec.body.value("rotation_deg", 0.0);
        t.metres_per_deg_lat = rec.body.value("metres_per_deg_lat", 111320.0);
        t.metres_per_deg_lng = rec.body.value("metres_per_deg_lng", 111320.0);
        t.floor_height_m = rec.body.value("floor_height_m", 3.0);
        reg.add(t);
    }
    return reg;
}

std::uint64_t StoreSnapshot::reads() const noexcept {
    return read_count_->load(std::memory_order_relaxed);
}

void StoreSnapshot::reset_reads() const noexcept {
    read_count_->store(0, std::memory_order_relaxed);
}

MetadataStore::MetadataStore(std::string journal_path) : journal_path_(std::move(journal_path)) {}

MetadataStore::MetadataStore(const std::string& journal_path, bool detach, ReplayTag) {
    std::ifstream in(journal_path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        VersionedRecord rec = VersionedRecord::from_json(json::parse(line));
        upsert(rec.kind, rec.id, rec.body, rec.acp_ts);
    }
    if (!detach) journal_path_ = journal_path;
}

MetadataStore MetadataStore::replay(const std::string& journal_path, bool detach) {
    return MetadataStore(journal_path, detach, ReplayTag{});
}

VersionedRecord MetadataStore::upsert(const std::string& kind, const std::string& id, json body,
                                      const Timestamp& at) {
    std::unique_lock lk(mu_);
    auto key = StoreSnapshot::Key{kind, id};
    auto it = chains_.find(key);
    if (it != chains_.end() && !it->second->empty()) {
        if (!(it->second->back().acp_ts < at))
            throw Error(Err::timestamp_regression,
                        kind + "/" + id + ": upsert at " + at.str() + " not after " +
                            it->second->back().acp_ts.str());
    }
    if (kind == "crate") {
        // Cycle check against the would-be hierarchy: walk up from the new
        // parent; reaching id again means the write would close a loop.
        CrateView nv = CrateView::from_body(body);
        std::optional<std::string> cursor = nv.parent_crate_id;
        std::set<std::string> visited{id};
        while (cursor) {
            if (visited.count(*cursor))
                throw Error(Err::cyclic_parent,
                            "crate " + id + " parent chain loops through " + *cursor);
            visited.insert(*cursor);
            auto pit = chains_.find({"crate", *cursor});
            if (pit == chains_.end() || pit->second->empty() || pit->second->back().tombstone())
                break;
            cursor = CrateView::from_body(pit->second->back().body).parent_crate_id;
        }
    }
    if (kind == "person") {
        PersonView pv = PersonView::from_body(body);
        for (const auto& crate : pv.occupies) {
            auto cit = chains_.find({"crate", crate});
            if (cit == chains_.end() || cit->second->empty() || cit->second->back().tombstone())
                throw Error(Err::unknown_crate,
                            "person " + id + " occupies unknown crate " + crate);
        }
    }

    VersionedRecord rec;
    rec.kind = kind;
    rec.id = id;
    rec.body = std::move(body);
    rec.acp_ts = at;

    std::vector<VersionedRecord> chain;
    if (it != chains_.end()) chain = *it->second;
    if (!chain.empty()) chain.back().acp_ts_end = at;
    chain.push_back(rec);
    chains_[key] = std::make_shared<const std::vector<VersionedRecord>>(std::move(chain));
    epoch_.fetch_add(1, std::memory_order_release);
    append_journal(rec);
    return rec;
}

VersionedRecord MetadataStore::remove(const std::string& kind, const std::string& id,
                                      const Timestamp& at) {
    return upsert(kind, id, json{{"deleted", true}}, at);
}

StoreSnapshot MetadataStore::snapshot() const {
    std::shared_lock lk(mu_);
    StoreSnapshot snap;
    snap.chains_ = std::make_shared<const std::map<StoreSnapshot::Key, StoreSnapshot::ChainPtr>>(chains_);
    auto perms = std::make_shared<std::multimap<std::string, PermissionView>>();
    for (auto it = chains_.lower_bound({"permission", ""});
         it != chains_.end() && it->first.first == "permission"; ++it) {
        if (it->second->empty()) continue;
        const VersionedRecord& last = it->second->back();
        if (last.tombstone()) continue;
        PermissionView pv = PermissionView::from_body(last.body);
        perms->emplace(pv.object, pv);
    }
    snap.perm_index_ = perms;
    snap.read_count_ = std::make_shared<std::atomic<std::uint64_t>>(0);
    snap.epoch_ = epoch_.load(std::memory_order_acquire);
    return snap;
}

VersionedRecord MetadataStore::get(const std::string& kind, const std::string& id) const {
    return snapshot().get(kind, id);
}

VersionedRecord MetadataStore::get_at(const std::string& kind, const std::string& id,
                                      const Timestamp& at) const {
    return snapshot().get_at(kind, id, at);
}

void MetadataStore::append_journal(const VersionedRecord& rec) {
    if (journal_path_.empty()) return;
    std::ofstream out(journal_path_, std::ios::app);
    out << rec.to_json().dump() << "\n";
}

}  // namespace trellis
