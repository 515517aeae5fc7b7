#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

#include "trellis/fixtures.hpp"
#include "trellis/metastore.hpp"
#include "trellis/rng.hpp"

using namespace trellis;

namespace {

// Reference model: a flat list of (ts, body, tombstone) events per object.
// Resolution at time T scans the whole list, no intervals involved.
struct ScanOracle {
    using Key = std::pair<std::string, std::string>;
    std::map<Key, std::vector<std::tuple<std::uint64_t, json, bool>>> events;

    void apply(const std::string& kind, const std::string& id, std::uint64_t sec,
               const json& body, bool tomb) {
        events[{kind, id}].push_back({sec, body, tomb});
    }

    std::optional<json> at(const std::string& kind, const std::string& id,
                           std::uint64_t sec) const {
        auto it = events.find({kind, id});
        if (it == events.end()) return std::nullopt;
        const std::tuple<std::uint64_t, json, bool>* best = nullptr;
        for (const auto& ev : it->second) {
            if (std::get<0>(ev) <= sec)
                best = &ev;
            else
                break;
        }
        if (!best || std::get<2>(*best)) return std::nullopt;
        return std::get<1>(*best);
    }

    std::optional<json> latest(const std::string& kind, const std::string& id) const {
        return at(kind, id, ~0ull);
    }
};

std::string temp_path(const char* tag) {
    static std::atomic<int> n{0};
    auto dir = std::filesystem::temp_directory_path() / "trellis_tests";
    std::filesystem::create_directories(dir);
    return (dir / (std::string(tag) + "-" + std::to_string(::getpid()) + "-" +
                   std::to_string(n.fetch_add(1)) + ".ndjson"))
        .string();
}

}  // namespace

TEST_CASE("randomised upserts keep version chains contiguous and match a scan model") {
    Rng rng(0x5eedc0de);
    MetadataStore store;
    ScanOracle oracle;

    const std::vector<std::string> kinds = {"sensor", "doc"};
    const int object_count = 40;
    std::uint64_t sec = 1700000000;

    for (int op = 0; op < 10000; ++op) {
        const std::string& kind = kinds[rng.below(kinds.size())];
        std::string id = "o" + std::to_string(rng.below(object_count));
        sec += 1 + rng.below(3);
        Timestamp at = Timestamp::from_seconds(sec);
        if (rng.chance(0.03)) {
            auto rec = store.remove(kind, id, at);
            CHECK(rec.tombstone());
            oracle.apply(kind, id, sec, rec.body, true);
        } else {
            json body = {{"v", op}, {"tag", rng.below(1000)}};
            store.upsert(kind, id, body, at);
            oracle.apply(kind, id, sec, body, false);
        }
    }

    auto snap = store.snapshot();
    REQUIRE(oracle.events.size() > 0);
    for (const auto& [key, evs] : oracle.events) {
        auto hist = snap.history(key.first, key.second);
        REQUIRE(hist.size() == evs.size());
        for (std::size_t k = 0; k < hist.size(); ++k) {
            CHECK(hist[k].acp_ts == Timestamp::from_seconds(std::get<0>(evs[k])));
            if (k + 1 < hist.size()) {
                REQUIRE(hist[k].acp_ts_end.has_value());
                CHECK(*hist[k].acp_ts_end == hist[k + 1].acp_ts);
            } else {
                CHECK_FALSE(hist[k].acp_ts_end.has_value());
            }
        }

        // 20 random probes per object against the scan model
        std::uint64_t first = std::get<0>(evs.front());
        for (int probe = 0; probe < 20; ++probe) {
            std::uint64_t t = first - 5 + rng.below(sec - first + 10);
            Timestamp at = Timestamp::from_seconds(t);
            const VersionedRecord* got = snap.find(key.first, key.second, &at);
            auto want = oracle.at(key.first, key.second, t);
            if (want) {
                REQUIRE(got != nullptr);
                CHECK(got->body == *want);
            } else {
                CHECK(got == nullptr);
            }
        }

        const VersionedRecord* live = snap.find(key.first, key.second);
        auto want_live = oracle.latest(key.first, key.second);
        if (want_live) {
            REQUIRE(live != nullptr);
            CHECK(live->body == *want_live);
        } else {
            CHECK(live == nullptr);
        }
    }
}

TEST_CASE("upsert rejects stale timestamps") {
    MetadataStore store;
    auto t1 = Timestamp::parse("100.5");
    store.upsert("doc", "a", {{"v", 1}}, t1);
    CHECK_THROWS_AS(store.upsert("doc", "a", {{"v", 2}}, t1), Error);
    CHECK_THROWS_AS(store.upsert("doc", "a", {{"v", 2}}, Timestamp::parse("100.4")), Error);
    store.upsert("doc", "a", {{"v", 2}}, Timestamp::parse("100.500001"));
    CHECK(store.get("doc", "a").body["v"] == 2);
}

TEST_CASE("cyclic crate parents are rejected without mutating the store") {
    MetadataStore store;
    auto ts = [](std::uint64_t s) { return Timestamp::from_seconds(s); };
    store.upsert("crate", "a", {{"crate_id", "a"}, {"crate_type", "site"}}, ts(1));
    store.upsert("crate", "b",
                 {{"crate_id", "b"}, {"crate_type", "building"}, {"parent_crate_id", "a"}}, ts(2));
    store.upsert("crate", "c",
                 {{"crate_id", "c"}, {"crate_type", "floor"}, {"parent_crate_id", "b"}}, ts(3));

    auto epoch_before = store.epoch();
    json bad = {{"crate_id", "a"}, {"crate_type", "site"}, {"parent_crate_id", "c"}};
    CHECK_THROWS_AS(store.upsert("crate", "a", bad, ts(4)), Error);
    try {
        store.upsert("crate", "a", bad, ts(5));
    } catch (const Error& e) {
        CHECK(e.code() == Err::cyclic_parent);
    }
    CHECK(store.epoch() == epoch_before);
    auto snap = store.snapshot();
    CHECK(snap.history("crate", "a").size() == 1);
    CHECK_FALSE(snap.get("crate", "a").body.contains("parent_crate_id"));

    // self-parent is the smallest cycle
    json selfie = {{"crate_id", "d"}, {"crate_type", "room"}, {"parent_crate_id", "d"}};
    CHECK_THROWS_AS(store.upsert("crate", "d", selfie, ts(6)), Error);
}

TEST_CASE("person records may only occupy crates that exist") {
    MetadataStore store;
    auto ts = [](std::uint64_t s) { return Timestamp::from_seconds(s); };
    store.upsert("crate", "room1", {{"crate_id", "room1"}, {"crate_type", "room"}}, ts(1));
    store.upsert("person", "p1",
                 {{"person_id", "p1"}, {"occupies", json::array({"room1"})}}, ts(2));
    json bad = {{"person_id", "p2"}, {"occupies", json::array({"nowhere"})}};
    CHECK_THROWS_AS(store.upsert("person", "p2", bad, ts(3)), Error);
    try {
        store.upsert("person", "p2", bad, ts(4));
    } catch (const Error& e) {
        CHECK(e.code() == Err::unknown_crate);
    }
}

TEST_CASE("crate_tree matches a breadth-first closure model on random forests") {
    Rng rng(0xf07e57);
    MetadataStore store;
    auto ts = [](std::uint64_t s) { return Timestamp::from_seconds(s); };

    const int crate_count = 200;
    std::map<std::string, std::optional<std::string>> parent_of;
    std::map<std::string, std::vector<std::string>> children_of;
    for (int i = 0; i < crate_count; ++i) {
        std::string id = "c" + std::to_string(i);
        json body = {{"crate_id", id}, {"crate_type", i == 0 ? "site" : "room"}};
        std::optional<std::string> parent;
        if (i > 0 && !rng.chance(0.05)) {
            parent = "c" + std::to_string(rng.below(static_cast<std::uint64_t>(i)));
            body["parent_crate_id"] = *parent;
        }
        parent_of[id] = parent;
        if (parent) children_of[*parent].push_back(id);
        store.upsert("crate", id, body, ts(10 + i));
    }
    auto snap = store.snapshot();

    auto closure = [&](const std::string& root, std::optional<std::size_t> depth) {
        std::set<std::string> out{root};
        std::vector<std::pair<std::string, std::size_t>> frontier{{root, 0}};
        while (!frontier.empty()) {
            auto [id, d] = frontier.back();
            frontier.pop_back();
            if (depth && d >= *depth) continue;
            for (const auto& child : children_of[id]) {
                out.insert(child);
                frontier.push_back({child, d + 1});
            }
        }
        return out;
    };

    std::function<void(const json&, std::set<std::string>&)> collect =
        [&](const json& node, std::set<std::string>& out) {
            out.insert(node.at("crate_id").get<std::string>());
            if (node.contains("children"))
                for (const auto& child : node["children"]) collect(child, out);
        };

    for (int q = 0; q < 60; ++q) {
        std::string root = "c" + std::to_string(rng.below(crate_count));
        std::optional<std::size_t> depth;
        if (rng.chance(0.5)) depth = rng.below(4);
        json tree = snap.crate_tree(root, depth);
        std::set<std::string> got;
        collect(tree, got);
        CHECK(got == closure(root, depth));
    }

    // depth 0 returns the bare crate, children keyed only when they exist
    json bare = snap.crate_tree("c0", 0);
    CHECK_FALSE(bare.contains("children"));
    CHECK(bare["crate_id"] == "c0");
    CHECK(bare.contains("acp_ts"));

    // children come back sorted by crate id
    std::function<void(const json&)> check_sorted = [&](const json& node) {
        if (!node.contains("children")) return;
        std::vector<std::string> ids;
        for (const auto& child : node["children"]) {
            ids.push_back(child.at("crate_id").get<std::string>());
            check_sorted(child);
        }
        CHECK(std::is_sorted(ids.begin(), ids.end()));
    };
    check_sorted(snap.crate_tree("c0", std::nullopt));

    CHECK_THROWS_AS(snap.crate_tree("missing", std::nullopt), Error);
}

TEST_CASE("ancestors walks crate parents nearest-first and flags dangling chains") {
    MetadataStore store;
    seed_demo_metadata(store);
    auto snap = store.snapshot();

    auto r = snap.ancestors("FE11");
    CHECK(r.chain == std::vector<std::string>{"FF", "WGB", "West Campus"});
    CHECK_FALSE(r.dangling);

    auto s = snap.ancestors("elsys-co2-041ba9");
    CHECK(s.chain == std::vector<std::string>{"FE11", "FF", "WGB", "West Campus"});
    CHECK_FALSE(s.dangling);

    store.upsert("crate", "orphan",
                 {{"crate_id", "orphan"}, {"crate_type", "room"}, {"parent_crate_id", "ghost"}},
                 Timestamp::parse("1700000000"));
    auto t = store.snapshot().ancestors("orphan");
    CHECK(t.dangling);
    CHECK(t.chain.empty());

    CHECK_THROWS_AS(snap.ancestors("not-a-thing"), Error);
}

TEST_CASE("is_descendant agrees with chain walking on random forests") {
    Rng rng(0xdecaf);
    MetadataStore store;
    auto ts = [](std::uint64_t s) { return Timestamp::from_seconds(s); };
    const int n = 80;
    std::map<std::string, std::optional<std::string>> parent_of;
    for (int i = 0; i < n; ++i) {
        std::string id = "k" + std::to_string(i);
        json body = {{"crate_id", id}, {"crate_type", "room"}};
        std::optional<std::string> parent;
        if (i > 0 && rng.chance(0.9)) {
            parent = "k" + std::to_string(rng.below(static_cast<std::uint64_t>(i)));
            body["parent_crate_id"] = *parent;
        }
        parent_of[id] = parent;
        store.upsert("crate", id, body, ts(100 + i));
    }
    auto snap = store.snapshot();
    for (int q = 0; q < 500; ++q) {
        std::string a = "k" + std::to_string(rng.below(n));
        std::string b = "k" + std::to_string(rng.below(n));
        bool expect = false;
        for (std::optional<std::string> cur = a; cur;) {
            if (*cur == b) {
                expect = true;
                break;
            }
            cur = parent_of[*cur];
        }
        CHECK(snap.is_descendant(a, b) == expect);
    }
}

TEST_CASE("sensors_in_crate equals filtering all sensors by their ancestor set") {
    Rng rng(0xbea7);
    MetadataStore store;
    auto ts = [](std::uint64_t s) { return Timestamp::from_seconds(s); };

    const int crates = 60;
    std::map<std::string, std::optional<std::string>> parent_of;
    for (int i = 0; i < crates; ++i) {
        std::string id = "g" + std::to_string(i);
        json body = {{"crate_id", id}, {"crate_type", "room"}};
        std::optional<std::string> parent;
        if (i > 0) {
            parent = "g" + std::to_string(rng.below(static_cast<std::uint64_t>(i)));
            body["parent_crate_id"] = *parent;
        }
        parent_of[id] = parent;
        store.upsert("crate", id, body, ts(1000 + i));
    }
    std::map<std::string, std::string> sensor_parent;
    for (int i = 0; i < 100; ++i) {
        std::string id = "s" + std::to_string(i);
        std::string parent = "g" + std::to_string(rng.below(crates));
        sensor_parent[id] = parent;
        json body = {{"acp_id", id},
                     {"acp_location", Location::in_crate(parent).to_json()}};
        store.upsert("sensor", id, body, ts(2000 + i));
    }
    auto snap = store.snapshot();

    auto ancestor_set = [&](const std::string& leaf) {
        std::set<std::string> out;
        for (std::optional<std::string> cur = leaf; cur; cur = parent_of[*cur]) out.insert(*cur);
        return out;
    };

    for (int q = 0; q < 500; ++q) {
        std::string crate = "g" + std::to_string(rng.below(crates));
        bool recursive = rng.chance(0.5);
        std::set<std::string> expect;
        for (const auto& [sid, sparent] : sensor_parent) {
            if (recursive ? ancestor_set(sparent).count(crate) > 0 : sparent == crate)
                expect.insert(sid);
        }
        std::set<std::string> got;
        for (const auto& rec : snap.sensors_in_crate(crate, recursive)) got.insert(rec.id);
        CHECK(got == expect);
    }

    CHECK_THROWS_AS(snap.sensors_in_crate("g-missing", true), Error);
}

TEST_CASE("journal replay rebuilds the exact same histories") {
    std::string path = temp_path("journal");
    Rng rng(0x10aded);
    {
        MetadataStore store(path);
        std::uint64_t sec = 1600000000;
        for (int op = 0; op < 300; ++op) {
            std::string id = "j" + std::to_string(rng.below(12));
            sec += 1 + rng.below(5);
            if (rng.chance(0.08))
                store.remove("doc", id, Timestamp::from_seconds(sec));
            else
                store.upsert("doc", id, {{"op", op}}, Timestamp::from_seconds(sec));
        }

        auto replayed = MetadataStore::replay(path, /*detach=*/true);
        auto a = store.snapshot();
        auto b = replayed.snapshot();
        for (int i = 0; i < 12; ++i) {
            std::string id = "j" + std::to_string(i);
            auto ha = a.history("doc", id);
            auto hb = b.history("doc", id);
            REQUIRE(ha.size() == hb.size());
            for (std::size_t k = 0; k < ha.size(); ++k)
                CHECK(ha[k].to_json() == hb[k].to_json());
        }
    }
    std::filesystem::remove(path);
}

TEST_CASE("snapshots are isolated from later writes") {
    MetadataStore store;
    store.upsert("doc", "x", {{"v", 1}}, Timestamp::parse("10"));
    auto before = store.snapshot();
    store.upsert("doc", "x", {{"v", 2}}, Timestamp::parse("20"));
    store.upsert("doc", "y", {{"v", 9}}, Timestamp::parse("21"));

    CHECK(before.get("doc", "x").body["v"] == 1);
    CHECK(before.find("doc", "y") == nullptr);
    auto after = store.snapshot();
    CHECK(after.get("doc", "x").body["v"] == 2);
    CHECK(after.get("doc", "y").body["v"] == 9);
    CHECK(after.epoch() > before.epoch());
}

TEST_CASE("deletion tombstones hide the object but keep its history addressable") {
    MetadataStore store;
    store.upsert("doc", "d", {{"v", 1}}, Timestamp::parse("100"));
    store.upsert("doc", "d", {{"v", 2}}, Timestamp::parse("200"));
    store.remove("doc", "d", Timestamp::parse("300"));

    auto snap = store.snapshot();
    CHECK_THROWS_AS(snap.get("doc", "d"), Error);
    CHECK(snap.history("doc", "d").size() == 3);
    CHECK(snap.get_at("doc", "d", Timestamp::parse("250")).body["v"] == 2);
    CHECK(snap.get_at("doc", "d", Timestamp::parse("100")).body["v"] == 1);
    CHECK_THROWS_AS(snap.get_at("doc", "d", Timestamp::parse("300")), Error);
    CHECK_THROWS_AS(snap.get_at("doc", "d", Timestamp::parse("99")), Error);

    // a later upsert revives the object
    store.upsert("doc", "d", {{"v", 3}}, Timestamp::parse("400"));
    CHECK(store.get("doc", "d").body["v"] == 3);
}

TEST_CASE("live_of_kind skips tombstones and other kinds") {
    MetadataStore store;
    store.upsert("doc", "a", {{"v", 1}}, Timestamp::parse("1"));
    store.upsert("doc", "b", {{"v", 2}}, Timestamp::parse("2"));
    store.upsert("note", "c", {{"v", 3}}, Timestamp::parse("3"));
    store.remove("doc", "b", Timestamp::parse("4"));
    auto snap = store.snapshot();
    auto docs = snap.live_of_kind("doc");
    REQUIRE(docs.size() == 1);
    CHECK(docs[0].id == "a");
}

TEST_CASE("demo fixture wires the expected hierarchy, people, and permissions") {
    MetadataStore store;
    seed_demo_metadata(store);
    auto snap = store.snapshot();

    auto sensor = snap.get("sensor", "elsys-co2-041ba9");
    CHECK(sensor.body["type"] == "co2");
    CHECK(sensor.body["owner"] == "ijl20");
    CHECK(sensor.body["source"] == "mqtt_ttn");
    CHECK(sensor.acp_ts == demo_sensor_ts());
    auto sv = SensorView::from_body(sensor.body);
    CHECK(sv.acp_type == "co2");
    CHECK(sv.features == std::vector<std::string>{"co2", "humidity", "light", "motion",
                                                  "temperature"});
    CHECK(sv.parent_crate_id() == std::optional<std::string>("FE11"));

    auto wgb = CrateView::from_body(snap.get("crate", "WGB").body);
    CHECK(wgb.crate_type == "building");
    CHECK(wgb.long_name == "Computer Science Department");
    REQUIRE(wgb.boundary.has_value());
    CHECK(wgb.boundary->points.size() == 4);

    auto alice = PersonView::from_body(snap.get("person", "alice").body);
    CHECK(alice.occupies == std::vector<std::string>{"FN05"});
    CHECK(snap.member_of_org(alice, "dept-cs"));
    CHECK(snap.member_of_org(alice, "school-tech"));
    CHECK_FALSE(snap.member_of_org(alice, "estates"));
    auto dave = PersonView::from_body(snap.get("person", "dave").body);
    CHECK_FALSE(snap.member_of_org(dave, "dept-cs"));
    CHECK_FALSE(snap.member_of_org(dave, "school-tech"));

    auto perms = snap.permissions_for("LT1");
    REQUIRE(perms.size() == 1);
    CHECK(perms[0].subject == "department_member");
    CHECK(perms[0].org == std::optional<std::string>("dept-cs"));
    CHECK(snap.permissions_for("WGB").size() == 1);
    CHECK(snap.permissions_for("FN05").empty());

    auto reg = snap.transforms();
    CHECK(reg.find("WGB") != nullptr);
}

TEST_CASE("snapshot record fetches are counted for traversal bounds") {
    MetadataStore store;
    seed_demo_metadata(store);
    auto snap = store.snapshot();
    snap.reset_reads();
    CHECK(snap.reads() == 0);
    snap.get("crate", "FE11");
    CHECK(snap.reads() == 1);
    snap.reset_reads();
    auto r = snap.ancestors("elsys-co2-041ba9");
    CHECK(r.chain.size() == 4);
    // sensor + each crate on the chain, plus at most two misses
    CHECK(snap.reads() <= r.chain.size() + 3);
}

TEST_CASE("features parse from both array and comma-joined string bodies") {
    auto a = SensorView::from_body(
        {{"acp_id", "s1"}, {"features", json::array({"co2", "temperature"})}});
    CHECK(a.features == std::vector<std::string>{"co2", "temperature"});
    auto b = SensorView::from_body({{"acp_id", "s2"}, {"features", "co2,temperature,humidity"}});
    CHECK(b.features == std::vector<std::string>{"co2", "temperature", "humidity"});
}
