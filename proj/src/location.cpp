#include "trellis/location.hpp"

#include <cmath>

namespace trellis {

Location Location::gps(double lat, double lng, double alt) {
    Location loc;
    loc.system = LocationSystem::gps;
    loc.acp_lat = lat;
    loc.acp_lng = lng;
    loc.acp_alt = alt;
    return loc;
}

Location Location::in_building(std::string building, double x, double y, int f, double zf) {
    Location loc;
    loc.system = LocationSystem::building;
    loc.building = std::move(building);
    loc.x = x;
    loc.y = y;
    loc.f = f;
    loc.zf = zf;
    return loc;
}

Location Location::in_crate(std::string parent) {
    Location loc;
    loc.system = LocationSystem::hierarchy;
    loc.parent_crate_id = std::move(parent);
    return loc;
}

json Location::to_json() const {
    json j = json::object();
    switch (system) {
        case LocationSystem::gps:
            j["system"] = "GPS";
            j["acp_lat"] = acp_lat;
            j["acp_lng"] = acp_lng;
            j["acp_alt"] = acp_alt;
            break;
        case LocationSystem::building:
            j["system"] = building;
            j["x"] = x;
            j["y"] = y;
            j["f"] = f;
            j["zf"] = zf;
            break;
        case LocationSystem::hierarchy:
            j["system"] = "HIERARCHY";
            break;
    }
    if (parent_crate_id) j["parent_crate_id"] = *parent_crate_id;
    return j;
}

Location Location::from_json(const json& j) {
    if (!j.is_object() || !j.contains("system"))
        throw Error(Err::unknown_system, "location needs a system tag");
    Location loc;
    std::string system = j.at("system").get<std::string>();
    if (system == "GPS") {
        loc.system = LocationSystem::gps;
        loc.acp_lat = j.value("acp_lat", 0.0);
        loc.acp_lng = j.value("acp_lng", 0.0);
        loc.acp_alt = j.value("acp_alt", 0.0);
    } else if (system == "HIERARCHY") {
        loc.system = LocationSystem::hierarchy;
    } else {
        loc.system = LocationSystem::building;
        loc.building = system;
        loc.x = j.value("x", 0.0);
        loc.y = j.value("y", 0.0);
        loc.f = j.value("f", 0);
        if (j.contains("zf"))
            loc.zf = j.at("zf").get<double>();
        else
            loc.zf = j.value("z", 0.0);
    }
    if (j.contains("parent_crate_id")) loc.parent_crate_id = j.at("parent_crate_id").get<std::string>();
    return loc;
}

json Boundary::to_json() const {
    json arr = json::array();
    for (const auto& p : points) arr.push_back(json::array({p.x, p.y}));
    return arr;
}

Boundary Boundary::from_json(const json& j, std::string system) {
    const json* arr = &j;
    Boundary b;
    b.system = std::move(system);
    if (j.is_object()) {
        if (j.contains("system")) b.system = j.at("system").get<std::string>();
        if (!j.contains("boundary"))
            throw Error(Err::malformed_boundary, "boundary object lacks points");
        arr = &j.at("boundary");
    }
    if (!arr->is_array())
        throw Error(Err::malformed_boundary, "boundary must be an array of [x,y] pairs");
    for (const auto& pair : *arr) {
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number())
            throw Error(Err::malformed_boundary, "boundary vertex must be [x,y]");
        b.points.push_back({pair[0].get<double>(), pair[1].get<double>()});
    }
    if (!b.points.empty() && b.points.size() < 3)
        throw Error(Err::malformed_boundary, "polygon needs at least 3 vertices");
    return b;
}

namespace {

bool on_segment(Point2 a, Point2 b, Point2 p) {
    double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (std::abs(cross) > 1e-12 * (std::abs(b.x - a.x) + std::abs(b.y - a.y) + 1.0)) return false;
    double dot = (p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y);
    double len2 = (b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y);
    return dot >= -1e-12 && dot <= len2 + 1e-12;
}

}  // namespace

bool point_in_boundary(const Boundary& b, Point2 p) {
    const auto& pts = b.points;
    std::size_t n = pts.size();
    if (n < 3) return false;
    for (std::size_t i = 0; i < n; ++i) {
        if (on_segment(pts[i], pts[(i + 1) % n], p)) return true;
    }
    // Horizontal ray to +x, half-open vertex rule.
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        bool crosses = (pts[i].y > p.y) != (pts[j].y > p.y);
        if (!crosses) continue;
        double x_at = pts[j].x + (pts[i].x - pts[j].x) * (p.y - pts[j].y) / (pts[i].y - pts[j].y);
        if (p.x < x_at) inside = !inside;
    }
    return inside;
}

namespace {
constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
}

Location CoordinateTransform::to_gps(const Location& loc) const {
    if (loc.system != LocationSystem::building)
        throw Error(Err::no_coordinates, "to_gps needs a building-frame location");
    double th = rotation_deg * kDegToRad;
    double east = std::cos(th) * loc.x - std::sin(th) * loc.y;
    double north = std::sin(th) * loc.x + std::cos(th) * loc.y;
    Location out = Location::gps(lat0 + north / metres_per_deg_lat,
                                 lng0 + east / metres_per_deg_lng,
                                 alt0 + loc.f * floor_height_m + loc.zf);
    out.parent_crate_id = loc.parent_crate_id;
    return out;
}

Location CoordinateTransform::to_building(const Location& loc) const {
    if (loc.system != LocationSystem::gps)
        throw Error(Err::no_coordinates, "to_building needs a GPS location");
    double east = (loc.acp_lng - lng0) * metres_per_deg_lng;
    double north = (loc.acp_lat - lat0) * metres_per_deg_lat;
    double th = rotation_deg * kDegToRad;
    double x = std::cos(th) * east + std::sin(th) * north;
    double y = -std::sin(th) * east + std::cos(th) * north;
    double z = loc.acp_alt - alt0;
    int f = static_cast<int>(std::floor((z + 1e-9) / floor_height_m));
    Location out = Location::in_building(building, x, y, f, z - f * floor_height_m);
    out.parent_crate_id = loc.parent_crate_id;
    return out;
}

void TransformRegistry::add(CoordinateTransform t) {
    by_building_[t.building] = std::move(t);
}

const CoordinateTransform* TransformRegistry::find(const std::string& building) const noexcept {
    auto it = by_building_.find(building);
    return it == by_building_.end() ? nullptr : &it->second;
}

Location transform_location(const Location& loc, const std::string& target,
                            const TransformRegistry& reg) {
    if (loc.system == LocationSystem::hierarchy)
        throw Error(Err::no_coordinates, "hierarchy locations carry no coordinates");
    if (target == "GPS") {
        if (loc.system == LocationSystem::gps) return loc;
        const auto* t = reg.find(loc.building);
        if (!t) throw Error(Err::unknown_system, "no transform for building " + loc.building);
        return t->to_gps(loc);
    }
    const auto* t = reg.find(target);
    if (!t) throw Error(Err::unknown_system, "no transform for building " + target);
    if (loc.system == LocationSystem::building) {
        if (loc.building == target) return loc;
        const auto* src = reg.find(loc.building);
        if (!src) throw Error(Err::unknown_system, "no transform for building " + loc.building);
        return t->to_building(src->to_gps(loc));
    }
    return t->to_building(loc);
}

}  // namespace trellis
