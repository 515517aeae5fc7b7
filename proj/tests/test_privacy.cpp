#include <doctest.h>

#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "trellis/fixtures.hpp"
#include "trellis/privacy.hpp"
#include "trellis/rng.hpp"

using namespace trellis;

namespace {

Timestamp ts(double secs) { return Timestamp::from_seconds(secs); }

json env_for(const std::string& acp_id, double t) {
    return json{{"acp_id", acp_id}, {"acp_ts", ts(t).str()}, {"payload_cooked", {{"co2", 400.0}}}};
}

// Test-side depth: walk parent pointers straight off the record bodies.
std::size_t crate_depth(const StoreSnapshot& snap, std::string id) {
    std::size_t depth = 0;
    std::set<std::string> seen;
    while (seen.insert(id).second) {
        const VersionedRecord* rec = snap.find("crate", id);
        if (!rec || !rec->body.contains("parent_crate_id")) break;
        id = rec->body.at("parent_crate_id").get<std::string>();
        ++depth;
    }
    return depth;
}

}  // namespace

TEST_CASE("demo fixture decisions match the access figure cell by cell") {
    MetadataStore store;
    seed_demo_metadata(store);
    const StoreSnapshot snap = store.snapshot();

    const std::vector<std::string> persons{"alice", "bob", "carol", "dave"};
    const std::vector<std::string> sensors{"lt1-co2-01", "fn05-co2-01", "elsys-co2-041ba9"};
    // rows: lt1 (shared teaching space), fn05 (private office), fe11 (other office)
    const std::map<std::string, std::map<std::string, bool>> expected{
        {"lt1-co2-01", {{"alice", true}, {"bob", true}, {"carol", true}, {"dave", false}}},
        {"fn05-co2-01", {{"alice", true}, {"bob", false}, {"carol", true}, {"dave", false}}},
        {"elsys-co2-041ba9",
         {{"alice", false}, {"bob", false}, {"carol", true}, {"dave", false}}},
    };
    for (const auto& sensor : sensors)
        for (const auto& person : persons) {
            const Decision d = check(snap, person, kVerbSensorDataRead, sensor);
            INFO(person << " / " << sensor);
            CHECK(d.allow == expected.at(sensor).at(person));
            CHECK(!d.proof.empty());
        }

    // proof paths name the witnessing relation
    const Decision occ = check(snap, "alice", kVerbSensorDataRead, "fn05-co2-01");
    bool mentions_occupies = false;
    for (const auto& line : occ.proof)
        if (line.find("occupies FN05") != std::string::npos) mentions_occupies = true;
    CHECK(mentions_occupies);

    const Decision dept = check(snap, "bob", kVerbSensorDataRead, "lt1-co2-01");
    bool mentions_perm = false;
    for (const auto& line : dept.proof)
        if (line.find("department_member") != std::string::npos) mentions_perm = true;
    CHECK(mentions_perm);

    // the wrong verb matches no permission, only occupancy still applies
    CHECK(!check(snap, "bob", "sensor_data_write", "lt1-co2-01").allow);
    CHECK(check(snap, "alice", "sensor_data_write", "fn05-co2-01").allow);
}

TEST_CASE("unknown person or sensor is an error for check and a deny for the filter") {
    MetadataStore store;
    seed_demo_metadata(store);
    const StoreSnapshot snap = store.snapshot();
    try {
        (void)check(snap, "nobody", kVerbSensorDataRead, "lt1-co2-01");
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Err::unknown_person);
    }
    try {
        (void)check(snap, "alice", kVerbSensorDataRead, "ghost-sensor");
        FAIL("expected a throw");
    } catch (const Error& e) {
        CHECK(e.code() == Err::unknown_sensor);
    }
    PrivacyFilter filter(store);
    CHECK(!filter.allowed("nobody", "lt1-co2-01"));
    CHECK(!filter.allowed("alice", "ghost-sensor"));
}

TEST_CASE("default deny holds with no relations and no permissions") {
    MetadataStore store;
    store.upsert("crate", "root", {{"crate_type", "building"}}, ts(1));
    store.upsert("person", "p1", {{"display_name", "P"}}, ts(1));
    store.upsert("sensor", "s1",
                 {{"acp_id", "s1"},
                  {"type", "co2"},
                  {"acp_location", {{"system", "root"}, {"parent_crate_id", "root"}}}},
                 ts(1));
    const StoreSnapshot snap = store.snapshot();
    const Decision d = check(snap, "p1", kVerbSensorDataRead, "s1");
    CHECK(!d.allow);
    CHECK(d.proof == std::vector<std::string>{"default deny: no occupancy or permission path"});
}

TEST_CASE("a grant on a crate covers every sensor underneath it") {
    MetadataStore store;
    seed_demo_metadata(store);
    store.upsert("permission", "perm-dave-wgb",
                 {{"subject", "dave"}, {"verb", kVerbSensorDataRead}, {"object", "WGB"}}, ts(2e9));
    const StoreSnapshot snap = store.snapshot();
    for (const char* sensor : {"lt1-co2-01", "lt1-co2-02", "fn05-co2-01", "elsys-co2-041ba9",
                               "coffee-node-01", "plug-kettle-01"})
        CHECK(check(snap, "dave", kVerbSensorDataRead, sensor).allow);
}

TEST_CASE("occupancy allows the crate itself and everything below it") {
    MetadataStore store;
    seed_demo_metadata(store);
    // eve occupies the whole first floor, so both FF offices open up
    store.upsert("person", "eve",
                 {{"display_name", "Eve"},
                  {"affiliations", json::array()},
                  {"occupies", json::array({"FF"})}},
                 ts(2e9));
    const StoreSnapshot snap = store.snapshot();
    CHECK(check(snap, "eve", kVerbSensorDataRead, "fn05-co2-01").allow);
    CHECK(check(snap, "eve", kVerbSensorDataRead, "elsys-co2-041ba9").allow);
    CHECK(!check(snap, "eve", kVerbSensorDataRead, "lt1-co2-01").allow);  // ground floor
}

TEST_CASE("adding permissions never turns an allow into a deny") {
    Rng rng(0xacce55);
    MetadataStore store;
    const Timestamp t0 = ts(1000);
    store.upsert("org", "o1", {{"org_id", "o1"}}, t0);
    store.upsert("org", "o2", {{"org_id", "o2"}, {"parent_org_id", "o1"}}, t0);
    store.upsert("crate", "bld", {{"crate_type", "building"}}, t0);
    std::vector<std::string> crates{"bld"};
    for (int i = 0; i < 11; ++i) {
        const std::string id = "c" + std::to_string(i);
        store.upsert("crate", id,
                     {{"crate_type", "room"}, {"parent_crate_id", crates[rng.below(crates.size())]}},
                     t0);
        crates.push_back(id);
    }
    std::vector<std::string> sensors;
    for (int i = 0; i < 20; ++i) {
        const std::string id = "s" + std::to_string(i);
        const std::string& crate = crates[rng.below(crates.size())];
        store.upsert("sensor", id,
                     {{"acp_id", id},
                      {"type", "co2"},
                      {"acp_location", {{"system", "bld"}, {"parent_crate_id", crate}}}},
                     t0);
        sensors.push_back(id);
    }
    std::vector<std::string> persons;
    for (int i = 0; i < 5; ++i) {
        const std::string id = "p" + std::to_string(i);
        json occupies = json::array();
        if (rng.chance(0.4)) occupies.push_back(crates[rng.below(crates.size())]);
        json affs = json::array();
        if (rng.chance(0.6)) affs.push_back(rng.chance(0.5) ? "o1" : "o2");
        json roles = json::array();
        if (rng.chance(0.2)) roles.push_back("building_manager");
        store.upsert("person", id,
                     {{"display_name", id}, {"occupies", occupies}, {"affiliations", affs},
                      {"roles", roles}},
                     t0);
        persons.push_back(id);
    }

    auto matrix = [&](const StoreSnapshot& snap) {
        std::map<std::pair<std::string, std::string>, bool> m;
        for (const auto& p : persons)
            for (const auto& s : sensors)
                m[{p, s}] = check(snap, p, kVerbSensorDataRead, s).allow;
        return m;
    };

    auto before = matrix(store.snapshot());
    for (int round = 0; round < 20; ++round) {
        const int pick = static_cast<int>(rng.below(3));
        json subject;
        if (pick == 0)
            subject = persons[rng.below(persons.size())];
        else if (pick == 1)
            subject = "building_manager";
        else
            subject = "department_member";
        json body{{"subject", subject},
                  {"verb", kVerbSensorDataRead},
                  {"object", rng.chance(0.5) ? crates[rng.below(crates.size())]
                                             : sensors[rng.below(sensors.size())]}};
        if (pick == 2) body["org"] = rng.chance(0.5) ? "o1" : "o2";
        store.upsert("permission", "perm-extra-" + std::to_string(round), body,
                     ts(2000 + round));
        auto after = matrix(store.snapshot());
        for (const auto& [key, was_allowed] : before)
            if (was_allowed) CHECK(after.at(key));
        before = std::move(after);
    }
}

TEST_CASE("checks read upward only, bounded by the two depths") {
    MetadataStore store;
    seed_demo_metadata(store);
    const StoreSnapshot snap = store.snapshot();
    for (const char* person : {"alice", "bob", "carol", "dave"})
        for (const char* sensor : {"lt1-co2-01", "fn05-co2-01", "elsys-co2-041ba9",
                                   "coffee-node-01"}) {
            const SensorView sv =
                SensorView::from_body(snap.get("sensor", sensor).body);
            std::size_t depth_q = 0;
            if (const auto parent = sv.parent_crate_id())
                depth_q = 1 + crate_depth(snap, *parent);
            std::size_t depth_o = 0;
            const PersonView pv = PersonView::from_body(snap.get("person", person).body);
            for (const auto& occ : pv.occupies)
                depth_o = std::max(depth_o, 1 + crate_depth(snap, occ));
            snap.reset_reads();
            (void)check(snap, person, kVerbSensorDataRead, sensor);
            CHECK(snap.reads() <= depth_q + depth_o + 10);
        }
}

TEST_CASE("filter stream passes exactly the readable envelopes in order") {
    MetadataStore store;
    seed_demo_metadata(store);
    PrivacyFilter filter(store);
    std::vector<json> stream{env_for("lt1-co2-01", 1), env_for("fn05-co2-01", 2),
                             env_for("lt1-co2-02", 3), env_for("fn05-co2-01", 4),
                             env_for("lt1-co2-01", 5)};
    const auto bob_sees = filter_stream(filter, "bob", stream);
    REQUIRE(bob_sees.size() == 3);
    CHECK(bob_sees[0].at("acp_id") == "lt1-co2-01");
    CHECK(bob_sees[1].at("acp_id") == "lt1-co2-02");
    CHECK(bob_sees[2].at("acp_id") == "lt1-co2-01");
    CHECK(bob_sees[0].at("acp_ts") == ts(1).str());
    CHECK(bob_sees[2].at("acp_ts") == ts(5).str());

    const auto alice_sees = filter_stream(filter, "alice", stream);
    CHECK(alice_sees.size() == 5);
    const auto dave_sees = filter_stream(filter, "dave", stream);
    CHECK(dave_sees.empty());
    CHECK(!filter.pass("bob", json{{"payload_cooked", {{"co2", 1.0}}}}));  // no acp_id
}

TEST_CASE("moving a sensor mid stream changes later decisions") {
    MetadataStore store;
    seed_demo_metadata(store);
    PrivacyFilter filter(store);

    CHECK(!filter.allowed("bob", "fn05-co2-01"));
    CHECK(!filter.allowed("bob", "fn05-co2-01"));  // cached
    CHECK(filter.cache_hits() == 1);
    CHECK(filter.cache_misses() == 1);

    // the office sensor gets rewired into the shared teaching room
    json body = store.snapshot().get("sensor", "fn05-co2-01").body;
    body["acp_location"]["parent_crate_id"] = "LT1";
    store.upsert("sensor", "fn05-co2-01", body, ts(2e9));

    CHECK(filter.allowed("bob", "fn05-co2-01"));
    CHECK(filter.epoch_flushes() >= 1);
    // fresh uncached evaluation agrees with the filter after the move
    const StoreSnapshot snap = store.snapshot();
    for (const char* person : {"alice", "bob", "carol", "dave"})
        CHECK(filter.allowed(person, "fn05-co2-01") ==
              check(snap, person, kVerbSensorDataRead, "fn05-co2-01").allow);
    // alice lost her occupancy claim on it but gains the department path
    CHECK(check(snap, "alice", kVerbSensorDataRead, "fn05-co2-01").allow);
    CHECK(!check(snap, "dave", kVerbSensorDataRead, "fn05-co2-01").allow);
}

TEST_CASE("audit sink sees one record per fresh decision") {
    MetadataStore store;
    seed_demo_metadata(store);
    PrivacyFilter filter(store);
    std::vector<json> log;
    filter.audit = [&](const json& rec) { log.push_back(rec); };
    (void)filter.allowed("bob", "lt1-co2-01");
    (void)filter.allowed("bob", "lt1-co2-01");  // cache hit, no audit line
    (void)filter.allowed("dave", "lt1-co2-01");
    REQUIRE(log.size() == 2);
    CHECK(log[0].at("person") == "bob");
    CHECK(log[0].at("decision") == "allow");
    CHECK(log[0].at("proof_path").is_array());
    CHECK(!log[0].at("proof_path").empty());
    CHECK(log[1].at("person") == "dave");
    CHECK(log[1].at("decision") == "deny");
    CHECK(log[1].contains("ts"));
    CHECK(filter.stats()["cache_misses"] == 2);
}

TEST_CASE("complex events need every contributing sensor") {
    MetadataStore store;
    seed_demo_metadata(store);
    const StoreSnapshot snap = store.snapshot();
    const std::vector<std::string> pair{"lt1-co2-01", "fn05-co2-01"};
    CHECK(check_all(snap, "alice", kVerbSensorDataRead, pair));
    CHECK(!check_all(snap, "bob", kVerbSensorDataRead, pair));
    CHECK(check_all(snap, "carol", kVerbSensorDataRead, pair));
    CHECK(!check_all(snap, "bob", kVerbSensorDataRead, {}));
    PrivacyFilter filter(store);
    CHECK(!filter.allowed_all("bob", pair));
    CHECK(filter.allowed_all("bob", {"lt1-co2-01", "lt1-co2-02"}));
}

TEST_CASE("aggregate view averages latest values without naming sensors") {
    MetadataStore store;
    seed_demo_metadata(store);
    const StoreSnapshot snap = store.snapshot();
    std::map<std::string, double> latest{
        {"lt1-co2-01", 400.0}, {"lt1-co2-02", 410.0}, {"fn05-co2-01", 420.0}};
    auto lookup = [&](const std::string& id) -> std::optional<double> {
        auto it = latest.find(id);
        if (it == latest.end()) return std::nullopt;
        return it->second;
    };
    // whole building: all three CO2 sensors contribute
    const AggregateView wgb = aggregate_view(snap, "WGB", "co2", lookup);
    CHECK(wgb.value == doctest::Approx(410.0));
    CHECK(wgb.contributors == 3);
    // one room, one sensor
    const AggregateView fn05 = aggregate_view(snap, "FN05", "co2", lookup);
    CHECK(fn05.value == doctest::Approx(420.0));
    CHECK(fn05.contributors == 1);
    // room with sensors but no readings
    CHECK_THROWS_AS((void)aggregate_view(snap, "GK1", "co2", lookup), Error);
    try {
        (void)aggregate_view(snap, "GK1", "co2", lookup);
    } catch (const Error& e) {
        CHECK(e.code() == Err::no_data);
    }
    CHECK_THROWS_AS((void)aggregate_view(snap, "missing-crate", "co2", lookup), Error);
}

TEST_CASE("aggregate view matches a recompute oracle on random fleets") {
    Rng rng(0xa66a);
    for (int round = 0; round < 25; ++round) {
        MetadataStore store;
        const Timestamp t0 = ts(1000);
        store.upsert("crate", "root", {{"crate_type", "building"}}, t0);
        std::vector<std::string> crates{"root"};
        for (int i = 0; i < 8; ++i) {
            const std::string id = "c" + std::to_string(i);
            store.upsert(
                "crate", id,
                {{"crate_type", "room"}, {"parent_crate_id", crates[rng.below(crates.size())]}},
                t0);
            crates.push_back(id);
        }
        std::map<std::string, std::string> sensor_crate;
        std::map<std::string, double> latest;
        for (int i = 0; i < 15; ++i) {
            const std::string id = "s" + std::to_string(i);
            const std::string& crate = crates[rng.below(crates.size())];
            const bool has_feature = rng.chance(0.8);
            store.upsert("sensor", id,
                         {{"acp_id", id},
                          {"type", "co2"},
                          {"features", has_feature ? json::array({"co2"})
                                                   : json::array({"temperature"})},
                          {"acp_location", {{"system", "root"}, {"parent_crate_id", crate}}}},
                         t0);
            if (has_feature) sensor_crate[id] = crate;
            if (rng.chance(0.7)) latest[id] = rng.uniform(300.0, 900.0);
        }
        const StoreSnapshot snap = store.snapshot();
        auto lookup = [&](const std::string& id) -> std::optional<double> {
            auto it = latest.find(id);
            if (it == latest.end()) return std::nullopt;
            return it->second;
        };
        // oracle: walk each sensor's parent chain straight off the bodies
        const std::string& query = crates[rng.below(crates.size())];
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& [sid, crate] : sensor_crate) {
            if (!latest.count(sid)) continue;
            std::string cur = crate;
            bool under = false;
            std::set<std::string> seen;
            while (seen.insert(cur).second) {
                if (cur == query) {
                    under = true;
                    break;
                }
                const VersionedRecord* rec = snap.find("crate", cur);
                if (!rec || !rec->body.contains("parent_crate_id")) break;
                cur = rec->body.at("parent_crate_id").get<std::string>();
            }
            if (under) {
                sum += latest.at(sid);
                ++n;
            }
        }
        if (n == 0) {
            CHECK_THROWS_AS((void)aggregate_view(snap, query, "co2", lookup), Error);
        } else {
            const AggregateView got = aggregate_view(snap, query, "co2", lookup);
            CHECK(got.contributors == n);
            CHECK(got.value == doctest::Approx(sum / static_cast<double>(n)).epsilon(1e-12));
        }
    }
}

TEST_CASE("permission seed lines import as versioned records") {
    MetadataStore store;
    seed_demo_metadata(store);
    std::istringstream in(
        R"({"id":"perm-x1","subject":"dave","verb":"sensor_data_read","object":"GK1"})"
        "\n\n"
        R"({"id":"perm-x2","subject":"department_member","org":"school-tech","verb":"sensor_data_read","object":"FE11"})"
        "\n");
    CHECK(import_permissions(store, in, ts(2e9)) == 2);
    const StoreSnapshot snap = store.snapshot();
    CHECK(check(snap, "dave", kVerbSensorDataRead, "coffee-node-01").allow);
    // org granted at the parent organisation: membership flows upward from dept-cs
    CHECK(check(snap, "bob", kVerbSensorDataRead, "elsys-co2-041ba9").allow);
    CHECK(!check(snap, "dave", kVerbSensorDataRead, "elsys-co2-041ba9").allow);
}
