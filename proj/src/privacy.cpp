#include "trellis/privacy.hpp"

#include <algorithm>
#include <chrono>

namespace trellis {

namespace {

std::string join_path(const std::vector<std::string>& chain, std::size_t upto) {
    std::string out;
    for (std::size_t i = 0; i <= upto && i < chain.size(); ++i) {
        if (i) out += " -> ";
        out += chain[i];
    }
    return out;
}

}  // namespace

Decision check(const StoreSnapshot& snap, const std::string& person_id, const std::string& verb,
               const std::string& sensor_id) {
    const VersionedRecord* person = snap.find("person", person_id);
    if (!person) throw Error(Err::unknown_person, "no such person: " + person_id);
    const VersionedRecord* sensor = snap.find("sensor", sensor_id);
    if (!sensor) throw Error(Err::unknown_sensor, "no such sensor: " + sensor_id);

    const PersonView pv = PersonView::from_body(person->body);
    // chain[0] is the crate the sensor measures, then its ancestors upward.
    const AncestorsResult anc = snap.ancestors(sensor_id);
    const std::vector<std::string>& chain = anc.chain;

    // Occupancy: the measuring crate, or any ancestor of it, is occupied.
    for (const std::string& occupied : pv.occupies) {
        const auto hit = std::find(chain.begin(), chain.end(), occupied);
        if (hit == chain.end()) continue;
        Decision d;
        d.allow = true;
        const auto idx = static_cast<std::size_t>(hit - chain.begin());
        d.proof.push_back("sensor " + sensor_id + " measures " + chain.front());
        if (idx > 0) d.proof.push_back("crate path " + join_path(chain, idx));
        d.proof.push_back("person " + person_id + " occupies " + occupied);
        return d;
    }

    // Explicit grants on the sensor itself or any crate above it.
    std::vector<std::string> objects;
    objects.push_back(sensor_id);
    objects.insert(objects.end(), chain.begin(), chain.end());
    for (std::size_t i = 0; i < objects.size(); ++i) {
        for (const PermissionView& perm : snap.permissions_for(objects[i])) {
            if (perm.verb != verb) continue;
            std::optional<std::string> subject_line;
            if (perm.subject == person_id) {
                subject_line = "granted directly to " + person_id;
            } else if (perm.subject == "building_manager") {
                if (std::find(pv.roles.begin(), pv.roles.end(), "building_manager") !=
                    pv.roles.end())
                    subject_line = "person " + person_id + " holds role building_manager";
            } else if (perm.subject == "department_member") {
                if (perm.org && snap.member_of_org(pv, *perm.org))
                    subject_line =
                        "person " + person_id + " belongs to organisation " + *perm.org;
            }
            if (!subject_line) continue;
            Decision d;
            d.allow = true;
            d.proof.push_back("permission " + perm.subject + ":" + verb + " on " + objects[i]);
            if (i == 0) {
                d.proof.push_back("object is the sensor itself");
            } else {
                d.proof.push_back("sensor " + sensor_id + " measures " + chain.front());
                if (i > 1) d.proof.push_back("crate path " + join_path(chain, i - 1));
            }
            d.proof.push_back(*subject_line);
            return d;
        }
    }

    Decision d;
    d.proof.push_back("default deny: no occupancy or permission path");
    return d;
}

bool check_all(const StoreSnapshot& snap, const std::string& person_id, const std::string& verb,
               const std::vector<std::string>& sensor_ids) {
    if (sensor_ids.empty()) return false;
    for (const auto& id : sensor_ids)
        if (!check(snap, person_id, verb, id).allow) return false;
    return true;
}

AggregateView aggregate_view(
    const StoreSnapshot& snap, const std::string& crate_id, const std::string& feature,
    const std::function<std::optional<double>(const std::string&)>& latest) {
    AggregateView out;
    double sum = 0.0;
    for (const VersionedRecord& rec : snap.sensors_in_crate(crate_id, true)) {
        const SensorView sv = SensorView::from_body(rec.body);
        if (!sv.features.empty() &&
            std::find(sv.features.begin(), sv.features.end(), feature) == sv.features.end())
            continue;
        if (const auto value = latest(sv.acp_id)) {
            sum += *value;
            ++out.contributors;
        }
    }
    if (out.contributors == 0)
        throw Error(Err::no_data, "no " + feature + " readings under " + crate_id);
    out.value = sum / static_cast<double>(out.contributors);
    return out;
}

std::size_t import_permissions(MetadataStore& store, std::istream& in, const Timestamp& ts) {
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json body = json::parse(line);
        store.upsert("permission", body.at("id").get<std::string>(), body, ts);
        ++n;
    }
    return n;
}

void PrivacyFilter::refresh() {
    const std::uint64_t now_epoch = store_.epoch();
    if (snap_ && now_epoch == seen_epoch_) return;
    snap_ = store_.snapshot();
    seen_epoch_ = now_epoch;
    if (!cache_.empty()) ++flushes_;
    cache_.clear();
}

const Decision& PrivacyFilter::decide(const std::string& person_id,
                                      const std::string& sensor_id) {
    refresh();
    const auto key = std::make_pair(person_id, sensor_id);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
        ++hits_;
        return it->second;
    }
    ++misses_;
    Decision d;
    try {
        d = check(*snap_, person_id, kVerbSensorDataRead, sensor_id);
    } catch (const Error&) {
        d.allow = false;
        d.proof = {"deny: person or sensor not on record"};
    }
    if (audit) {
        const auto now = std::chrono::duration_cast<std::chrono::nanoseconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();
        audit(json{{"person", person_id},
                   {"sensor", sensor_id},
                   {"decision", d.allow ? "allow" : "deny"},
                   {"proof_path", d.proof},
                   {"ts", Timestamp::from_nanos(now).str()}});
    }
    return cache_.emplace(key, std::move(d)).first->second;
}

bool PrivacyFilter::allowed_all(const std::string& person_id,
                                const std::vector<std::string>& sensor_ids) {
    if (sensor_ids.empty()) return false;
    for (const auto& id : sensor_ids)
        if (!allowed(person_id, id)) return false;
    return true;
}

bool PrivacyFilter::pass(const std::string& person_id, const json& envelope_body) {
    if (!envelope_body.contains("acp_id") || !envelope_body.at("acp_id").is_string())
        return false;
    return allowed(person_id, envelope_body.at("acp_id").get<std::string>());
}

json PrivacyFilter::stats() const {
    return json{{"cache_size", cache_.size()},
                {"cache_hits", hits_},
                {"cache_misses", misses_},
                {"epoch_flushes", flushes_}};
}

std::vector<json> filter_stream(PrivacyFilter& filter, const std::string& person_id,
                                const std::vector<json>& envelopes) {
    std::vector<json> out;
    for (const json& env : envelopes)
        if (filter.pass(person_id, env)) out.push_back(env);
    return out;
}

}  // namespace trellis
