#pragma once
// Spatial types: the three location systems, room boundaries, and the
// per-building affine transform between metric and GPS coordinates.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trellis/core.hpp"

namespace trellis {

using json = nlohmann::json;

enum class LocationSystem { gps, building, hierarchy };

// Exactly one coordinate variant is populated, selected by `system`.
// parent_crate_id may accompany any variant (it is the only payload of
// the hierarchy variant).
struct Location {
    LocationSystem system = LocationSystem::hierarchy;

    // gps
    double acp_lat = 0.0;
    double acp_lng = 0.0;
    double acp_alt = 0.0;

    // building: in-building metres, `building` names the frame (a building id)
    std::string building;
    double x = 0.0;
    double y = 0.0;
    int f = 0;
    double zf = 0.0;

    std::optional<std::string> parent_crate_id;

    static Location gps(double lat, double lng, double alt = 0.0);
    static Location in_building(std::string building, double x, double y, int f, double zf = 0.0);
    static Location in_crate(std::string parent);

    json to_json() const;
    // Accepts both the "zf" and the shorthand "z" key for relative height.
    static Location from_json(const json& j);
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// Closed polygon as ordered metre pairs. `system` names the coordinate frame.
struct Boundary {
    std::string system;
    std::vector<Point2> points;

    json to_json() const;  // bare [[x,y],...] array, the wire shape
    static Boundary from_json(const json& j, std::string system = {});
};

// Even-odd rule; points on an edge count as inside.
bool point_in_boundary(const Boundary& b, Point2 p);

// One affine mapping per building between in-building metres and GPS.
// alt encodes floors: alt = alt0 + f * floor_height_m + zf.
struct CoordinateTransform {
    std::string building;
    double lat0 = 0.0;
    double lng0 = 0.0;
    double alt0 = 0.0;
    double rotation_deg = 0.0;  // bearing of the building x axis from east, ccw
    double metres_per_deg_lat = 111320.0;
    double metres_per_deg_lng = 111320.0;
    double floor_height_m = 3.0;

    Location to_gps(const Location& loc) const;
    Location to_building(const Location& loc) const;
};

class TransformRegistry {
public:
    void add(CoordinateTransform t);
    const CoordinateTransform* find(const std::string& building) const noexcept;

private:
    std::map<std::string, CoordinateTransform> by_building_;
};

// Converts between location systems. target is "GPS" or a building id.
// Throws Err::unknown_system for an unregistered target and
// Err::no_coordinates when loc is hierarchy-only.
Location transform_location(const Location& loc, const std::string& target,
                            const TransformRegistry& reg);

}  // namespace trellis
