#pragma once
// Query surface over the metadata store and the live reading cache: the four
// data endpoints, floor SVG rendering and room-bound heatmaps. Handlers are
// read-only over store snapshots; the cache is fed by a storage verticle (or
// ingest() directly), so concurrent requests need no locking beyond ours.

#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trellis/core.hpp"
#include "trellis/metastore.hpp"

namespace trellis {

using json = nlohmann::json;

class Rts;

struct ApiRequest {
    std::string method = "GET";
    std::string path;                          // decoded, e.g. "/bim/get/West Campus"
    std::map<std::string, std::string> query;  // decoded key -> value

    // "GET /bim/get/FE11?as=alice" -> method, path, query. Percent escapes
    // decode in both path and query; a bare path string also parses.
    static ApiRequest parse(const std::string& request_line);
};

struct ApiResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;

    json json_body() const;  // parses body, for tests and CLI
};

struct HeatmapCell {
    double x = 0.0;  // cell centre, building metres
    double y = 0.0;
    std::string crate_id;
    std::optional<double> value;  // null when the room has no usable sensor
};

struct HeatmapGrid {
    int floor = 0;
    double cell_size_m = 1.0;
    std::string feature;
    Timestamp as_of;  // newest contributing reading, epoch zero when none
    std::vector<HeatmapCell> cells;  // ordered by (crate_id, y, x)

    json to_json() const;
};

struct ApiOptions {
    double svg_px_per_m = 6.6;       // fits the demo floor plate onto a screen
    std::filesystem::path data_dir;  // day shards for range queries; empty disables
};

class QueryApi {
public:
    explicit QueryApi(const MetadataStore& store, ApiOptions opts = {});

    // Feed one decoded envelope body into the latest-reading cache.
    void ingest(const json& envelope_body);

    // Deploys a storage verticle on the feed address that calls ingest() for
    // every event. undeploy("api-cache") detaches it.
    void attach(Rts& rts);

    ApiResponse handle(const ApiRequest& req) const;
    ApiResponse handle(const std::string& request_line) const;

    // One polygon per crate sitting on the floor (rooms and the floor plate
    // itself), ordered by crate_id, vertices scaled by svg_px_per_m and
    // rounded to 0.1 px. Every polygon carries a <title> child.
    std::string render_floor_svg(int floor) const;

    // Per room on the floor: inverse-distance-squared interpolation of the
    // room's own sensors' latest `feature` values on a square grid. Values
    // never cross a room boundary. Throws Err::not_found for an empty floor
    // with no crates, Err::invalid_argument for a bad cell size or an
    // unregistered feature.
    HeatmapGrid heatmap(int floor, const std::string& feature, double cell_size_m) const;

    // Applies one envelope to the cache and recomputes only the cells of the
    // sensor's room. Returns how many cells were touched; zero when the
    // sensor is off-grid or carries no such feature.
    std::size_t heatmap_update(HeatmapGrid& grid, const json& envelope_body);

    // Most recent reading in wire shape: acp_id, acp_ts and a features map
    // merging decoded values with scalar originals.
    std::optional<json> latest_reading(const std::string& acp_id) const;

    std::size_t cache_size() const;
    json stats() const;

private:
    json reading_of(const json& envelope_body) const;
    std::optional<double> latest_value(const std::string& acp_id,
                                       const std::string& feature) const;
    ApiResponse route(const ApiRequest& req) const;
    ApiResponse range_readings(const std::string& acp_id, const std::string& from_s,
                               const std::string& to_s) const;
    void room_sources(const StoreSnapshot& snap, const TransformRegistry& reg,
                      const std::string& room, const std::string& building,
                      const std::string& feature, std::vector<std::pair<double, double>>& pts,
                      std::vector<double>& vals, Timestamp& newest) const;

    const MetadataStore& store_;
    ApiOptions opts_;
    mutable std::mutex mu_;
    std::map<std::string, json> latest_;  // acp_id -> envelope body
};

}  // namespace trellis
