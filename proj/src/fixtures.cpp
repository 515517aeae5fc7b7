#include "trellis/fixtures.hpp"

namespace trellis {

Timestamp demo_seed_ts() { return Timestamp::parse("1589469825.165538"); }
Timestamp demo_sensor_ts() { return Timestamp::parse("1589469979.861816"); }

namespace {

json crate_body(const std::string& id, const std::string& type, const json& parent,
                const std::string& long_name, const std::string& description,
                const json& boundary, const json& location) {
    json body = json::object();
    body["crate_id"] = id;
    body["crate_type"] = type;
    if (!parent.is_null()) body["parent_crate_id"] = parent;
    body["long-name"] = long_name;
    body["description"] = description;
    if (!boundary.is_null()) body["acp_boundary"] = boundary;
    if (!location.is_null()) body["acp_location"] = location;
    return body;
}

json building_loc(double x, double y, int f) {
    return json{{"system", "WGB"}, {"x", x}, {"y", y}, {"f", f}, {"zf", 0.0}};
}

json sensor_body(const std::string& id, const std::string& type, const std::string& owner,
                 const std::string& source, const json& features, const json& location) {
    return json{{"acp_id", id},   {"type", type},          {"owner", owner},
                {"source", source}, {"features", features}, {"acp_location", location}};
}

}  // namespace

void seed_demo_metadata(MetadataStore& store) {
    const Timestamp t0 = demo_seed_ts();
    const Timestamp t1 = demo_sensor_ts();

    store.upsert("transform", "WGB",
                 json{{"building", "WGB"},
                      {"lat0", -27.116667},
                      {"lng0", -109.366667},
                      {"alt0", 0.0},
                      {"rotation_deg", 0.0},
                      {"metres_per_deg_lat", 111320.0},
                      {"metres_per_deg_lng", 99180.0},
                      {"floor_height_m", 3.0}},
                 t0);

    store.upsert("org", "school-tech",
                 json{{"org_id", "school-tech"}, {"long-name", "School of Technology"}}, t0);
    store.upsert("org", "dept-cs",
                 json{{"org_id", "dept-cs"},
                      {"long-name", "Computer Science Department"},
                      {"parent_org_id", "school-tech"}},
                 t0);
    store.upsert("org", "estates",
                 json{{"org_id", "estates"}, {"long-name", "Estates Division"}}, t0);
    store.upsert("org", "visitors", json{{"org_id", "visitors"}, {"long-name", "Visitors"}}, t0);

    const json rect_wgb = json::parse("[[0,0],[0,78],[73,78],[73,0]]");
    store.upsert("crate", "West Campus",
                 crate_body("West Campus", "site", nullptr, "West Campus",
                            "Campus site containing the department buildings", nullptr,
                            json{{"system", "GPS"},
                                 {"acp_lat", -27.116667},
                                 {"acp_lng", -109.366667},
                                 {"acp_alt", 0.0}}),
                 t0);
    store.upsert("crate", "WGB",
                 crate_body("WGB", "building", "West Campus", "Computer Science Department",
                            "Main department building", rect_wgb,
                            json{{"system", "GPS"},
                                 {"acp_lat", -27.116667},
                                 {"acp_lng", -109.366667},
                                 {"acp_alt", 0.0}}),
                 t0);
    store.upsert("crate", "GF",
                 crate_body("GF", "floor", "WGB", "Ground Floor", "Ground floor of WGB", rect_wgb,
                            building_loc(36.5, 39.0, 0)),
                 t0);
    store.upsert("crate", "FF",
                 crate_body("FF", "floor", "WGB", "First Floor", "First floor of WGB", rect_wgb,
                            building_loc(36.5, 39.0, 1)),
                 t0);
    store.upsert("crate", "FE11",
                 crate_body("FE11", "room", "FF", "Office FE11", "Crate Description",
                            json::parse("[[16,30],[16,40],[28,40],[28,30]]"),
                            building_loc(22.06, 34.67, 1)),
                 t0);
    store.upsert("crate", "FN05",
                 crate_body("FN05", "room", "FF", "Office FN05", "Single occupancy office",
                            json::parse("[[40,60],[40,70],[50,70],[50,60]]"),
                            building_loc(45.0, 65.0, 1)),
                 t0);
    store.upsert("crate", "LT1",
                 crate_body("LT1", "room", "GF", "Lecture Theatre 1", "Shared lecture theatre",
                            json::parse("[[5,5],[5,25],[25,25],[25,5]]"),
                            building_loc(15.0, 15.0, 0)),
                 t0);
    store.upsert("crate", "GK1",
                 crate_body("GK1", "room", "GF", "Kitchen GK1", "Shared kitchen and coffee point",
                            json::parse("[[60,60],[60,70],[70,70],[70,60]]"),
                            building_loc(65.0, 65.0, 0)),
                 t0);

    store.upsert("sensor", "elsys-co2-041ba9",
                 sensor_body("elsys-co2-041ba9", "co2", "ijl20", "mqtt_ttn",
                             json::array({"co2", "humidity", "light", "motion", "temperature"}),
                             json{{"system", "GPS"},
                                  {"acp_lat", -27.116667},
                                  {"acp_lng", -109.366667},
                                  {"acp_alt", 10},
                                  {"parent_crate_id", "FE11"}}),
                 t1);
    store.upsert("sensor", "lt1-co2-01",
                 sensor_body("lt1-co2-01", "co2", "estates", "mqtt_ttn",
                             json::array({"co2", "humidity", "temperature"}),
                             json{{"system", "WGB"}, {"x", 7.0}, {"y", 7.0}, {"f", 0}, {"zf", 2.5},
                                  {"parent_crate_id", "LT1"}}),
                 t1);
    store.upsert("sensor", "lt1-co2-02",
                 sensor_body("lt1-co2-02", "co2", "estates", "mqtt_ttn",
                             json::array({"co2", "humidity", "temperature"}),
                             json{{"system", "WGB"}, {"x", 23.0}, {"y", 23.0}, {"f", 0}, {"zf", 2.5},
                                  {"parent_crate_id", "LT1"}}),
                 t1);
    store.upsert("sensor", "fn05-co2-01",
                 sensor_body("fn05-co2-01", "co2", "alice", "mqtt_ttn",
                             json::array({"co2", "temperature"}),
                             json{{"system", "WGB"}, {"x", 45.0}, {"y", 65.0}, {"f", 1}, {"zf", 2.5},
                                  {"parent_crate_id", "FN05"}}),
                 t1);
    store.upsert("sensor", "coffee-node-01",
                 sensor_body("coffee-node-01", "coffee_machine", "estates", "mqtt_csn",
                             json::array({"weight", "power"}),
                             json{{"system", "WGB"}, {"x", 65.0}, {"y", 65.0}, {"f", 0}, {"zf", 1.0},
                                  {"parent_crate_id", "GK1"}}),
                 t1);
    store.upsert("sensor", "plug-kettle-01",
                 sensor_body("plug-kettle-01", "smartplug", "estates", "mqtt_csn",
                             json::array({"power"}),
                             json{{"system", "WGB"}, {"x", 61.0}, {"y", 61.0}, {"f", 0}, {"zf", 1.0},
                                  {"parent_crate_id", "GK1"}}),
                 t1);

    store.upsert("person", "alice",
                 json{{"person_id", "alice"},
                      {"display_name", "Alice"},
                      {"affiliations", json::array({"dept-cs"})},
                      {"occupies", json::array({"FN05"})}},
                 t0);
    store.upsert("person", "bob",
                 json{{"person_id", "bob"},
                      {"display_name", "Bob"},
                      {"affiliations", json::array({"dept-cs"})},
                      {"occupies", json::array()}},
                 t0);
    store.upsert("person", "carol",
                 json{{"person_id", "carol"},
                      {"display_name", "Carol"},
                      {"affiliations", json::array({"estates"})},
                      {"roles", json::array({"building_manager"})},
                      {"occupies", json::array()}},
                 t0);
    store.upsert("person", "dave",
                 json{{"person_id", "dave"},
                      {"display_name", "Dave"},
                      {"affiliations", json::array({"visitors"})},
                      {"occupies", json::array()}},
                 t0);

    store.upsert("permission", "perm-lt1-dept",
                 json{{"subject", "department_member"},
                      {"org", "dept-cs"},
                      {"verb", "sensor_data_read"},
                      {"object", "LT1"}},
                 t0);
    store.upsert("permission", "perm-wgb-manager",
                 json{{"subject", "building_manager"}, {"verb", "sensor_data_read"}, {"object", "WGB"}}, t0);
}

}  // namespace trellis
