#include "trellis/api.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "trellis/location.hpp"
#include "trellis/privacy.hpp"
#include "trellis/rts.hpp"

namespace trellis {

namespace {

int hex_val(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::string percent_decode(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%' && i + 2 < s.size()) {
            const int hi = hex_val(s[i + 1]), lo = hex_val(s[i + 2]);
            if (hi >= 0 && lo >= 0) {
                out.push_back(static_cast<char>(hi * 16 + lo));
                i += 2;
                continue;
            }
        }
        out.push_back(s[i]);
    }
    return out;
}

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> segs;
    std::string cur;
    for (std::size_t i = 1; i <= path.size(); ++i) {
        if (i == path.size() || path[i] == '/') {
            segs.push_back(percent_decode(cur));
            cur.clear();
        } else {
            cur.push_back(path[i]);
        }
    }
    if (!segs.empty() && segs.back().empty()) segs.pop_back();  // trailing slash
    return segs;
}

ApiResponse json_response(int status, const json& body) {
    ApiResponse r;
    r.status = status;
    r.body = body.dump();
    return r;
}

ApiResponse error_response(int status, const std::string& message) {
    return json_response(status, json{{"error", message}});
}

// px coordinates round to 0.1 so the generated plan prints like hand-made
// SVG; shortest round-trip formatting keeps "0" as 0 and "481.8" as 481.8
std::string px_str(double v) {
    const double snapped = std::round(v * 10.0) / 10.0;
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, snapped);
    (void)ec;
    return std::string(buf, end);
}

std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '\'': out += "&apos;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

bool known_feature(const std::string& name) {
    for (const auto& def : feature_registry)
        if (def.name == name) return true;
    return false;
}

struct FloorRoom {
    std::string crate_id;
    Boundary boundary;
};

struct RoomSensor {
    std::string acp_id;
    double x = 0.0;
    double y = 0.0;
};

// Sensor position in the building frame; GPS positions go through the
// registered transform. Hierarchy-only sensors have no usable position.
std::optional<std::pair<double, double>> sensor_xy(const SensorView& sv,
                                                   const std::string& building,
                                                   const TransformRegistry& reg) {
    if (!sv.location) return std::nullopt;
    const Location& loc = *sv.location;
    if (loc.system == LocationSystem::building) return std::make_pair(loc.x, loc.y);
    if (loc.system == LocationSystem::gps) {
        if (!reg.find(building)) return std::nullopt;
        const Location b = transform_location(loc, building, reg);
        return std::make_pair(b.x, b.y);
    }
    return std::nullopt;
}

double idw(const std::vector<std::pair<double, double>>& pts, const std::vector<double>& vals,
           double cx, double cy) {
    double wsum = 0.0, vsum = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double d2 = (pts[i].first - cx) * (pts[i].first - cx) +
                          (pts[i].second - cy) * (pts[i].second - cy);
        if (d2 < 1e-12) return vals[i];  // cell centre sits on the sensor
        const double w = 1.0 / d2;
        wsum += w;
        vsum += w * vals[i];
    }
    return vsum / wsum;
}

}  // namespace

ApiRequest ApiRequest::parse(const std::string& request_line) {
    ApiRequest req;
    std::string rest = request_line;
    const auto sp = rest.find(' ');
    const auto slash = rest.find('/');
    if (sp != std::string::npos && sp > 0 && slash != std::string::npos && sp < slash) {
        req.method = rest.substr(0, sp);
        rest = rest.substr(sp + 1);
    }
    const auto qm = rest.find('?');
    if (qm != std::string::npos) {
        std::string qs = rest.substr(qm + 1);
        rest = rest.substr(0, qm);
        std::size_t pos = 0;
        while (pos <= qs.size()) {
            auto amp = qs.find('&', pos);
            if (amp == std::string::npos) amp = qs.size();
            const std::string pair = qs.substr(pos, amp - pos);
            if (!pair.empty()) {
                const auto eq = pair.find('=');
                if (eq == std::string::npos)
                    req.query[percent_decode(pair)] = "";
                else
                    req.query[percent_decode(pair.substr(0, eq))] =
                        percent_decode(pair.substr(eq + 1));
            }
            pos = amp + 1;
        }
    }
    req.path = rest;
    return req;
}

json ApiResponse::json_body() const { return json::parse(body); }

json HeatmapGrid::to_json() const {
    json out{{"floor", floor},
             {"cell_size_m", cell_size_m},
             {"feature", feature},
             {"as_of", as_of.str()},
             {"cells", json::array()}};
    for (const auto& c : cells) {
        json jc{{"x", c.x}, {"y", c.y}, {"crate_id", c.crate_id}};
        if (c.value)
            jc["value"] = *c.value;
        else
            jc["value"] = nullptr;
        out["cells"].push_back(std::move(jc));
    }
    return out;
}

QueryApi::QueryApi(const MetadataStore& store, ApiOptions opts)
    : store_(store), opts_(std::move(opts)) {}

void QueryApi::ingest(const json& envelope_body) {
    if (!envelope_body.is_object()) return;
    auto id = envelope_body.find("acp_id");
    auto ts = envelope_body.find("acp_ts");
    if (id == envelope_body.end() || !id->is_string()) return;
    if (ts == envelope_body.end() || !ts->is_string()) return;
    Timestamp when;
    try {
        when = Timestamp::parse(ts->get<std::string>());
    } catch (const Error&) {
        return;
    }
    std::lock_guard lk(mu_);
    auto [it, inserted] = latest_.try_emplace(id->get<std::string>(), envelope_body);
    if (!inserted) {
        // keep the newest by sensor time, not by arrival order
        const Timestamp have = Timestamp::parse(it->second.at("acp_ts").get<std::string>());
        if (have.unix_nanos() <= when.unix_nanos()) it->second = envelope_body;
    }
}

void QueryApi::attach(Rts& rts) {
    VerticleSpec spec;
    spec.name = "api-cache";
    spec.klass = VerticleClass::storage;
    spec.addresses = {kFeedAddress};
    spec.handler = [this](const BusEvent& ev, VerticleCtx&) { ingest(ev.body); };
    rts.deploy(std::move(spec));
}

json QueryApi::reading_of(const json& envelope_body) const {
    json features = envelope_body.value("payload_cooked", json::object());
    if (!features.is_object()) features = json::object();
    auto po = envelope_body.find("payload_original");
    if (po != envelope_body.end() && po->is_object()) {
        for (auto it = po->begin(); it != po->end(); ++it) {
            if (it.key().rfind("acp_", 0) == 0) continue;  // envelope fields stay out
            if (features.contains(it.key())) continue;
            if (it->is_number() || it->is_string() || it->is_boolean())
                features[it.key()] = *it;
        }
    }
    return json{{"acp_id", envelope_body.at("acp_id")},
                {"acp_ts", envelope_body.at("acp_ts")},
                {"features", std::move(features)}};
}

std::optional<json> QueryApi::latest_reading(const std::string& acp_id) const {
    std::lock_guard lk(mu_);
    auto it = latest_.find(acp_id);
    if (it == latest_.end()) return std::nullopt;
    return reading_of(it->second);
}

std::optional<double> QueryApi::latest_value(const std::string& acp_id,
                                             const std::string& feature) const {
    std::lock_guard lk(mu_);
    auto it = latest_.find(acp_id);
    if (it == latest_.end()) return std::nullopt;
    auto cooked = it->second.find("payload_cooked");
    if (cooked == it->second.end() || !cooked->is_object()) return std::nullopt;
    auto v = cooked->find(feature);
    if (v == cooked->end() || !v->is_number()) return std::nullopt;
    return v->get<double>();
}

std::size_t QueryApi::cache_size() const {
    std::lock_guard lk(mu_);
    return latest_.size();
}

json QueryApi::stats() const {
    const StoreSnapshot snap = store_.snapshot();
    json records = json::object();
    for (const char* kind : {"crate", "sensor", "person", "permission", "org"})
        records[kind] = snap.live_of_kind(kind).size();
    return json{{"epoch", snap.epoch()}, {"records", std::move(records)},
                {"readings_cached", cache_size()}};
}

ApiResponse QueryApi::handle(const std::string& request_line) const {
    return handle(ApiRequest::parse(request_line));
}

ApiResponse QueryApi::handle(const ApiRequest& req) const {
    try {
        return route(req);
    } catch (const Error& e) {
        switch (e.code()) {
            case Err::not_found:
            case Err::unknown_sensor:
                return error_response(404, e.what());
            case Err::unknown_person:
                return error_response(403, e.what());
            default:
                return error_response(400, e.what());
        }
    } catch (const std::exception& e) {
        return error_response(400, e.what());
    }
}

ApiResponse QueryApi::route(const ApiRequest& req) const {
    if (req.method != "GET") return error_response(400, "only GET is served");
    const auto segs = split_path(req.path);
    const StoreSnapshot snap = store_.snapshot();

    const auto subject = req.query.find("as");
    auto denied = [&](const std::string& acp_id) -> std::optional<ApiResponse> {
        if (subject == req.query.end()) return std::nullopt;
        Decision d;
        try {
            d = check(snap, subject->second, kVerbSensorDataRead, acp_id);
        } catch (const Error&) {
            d.allow = false;  // unknown subject or sensor reads as a refusal
            d.proof = {"default deny: no occupancy or permission path"};
        }
        if (d.allow) return std::nullopt;
        return json_response(403, json{{"error", "access denied"}, {"proof", d.proof}});
    };

    // /bim/get/<crate_id>[/<depth>]
    if (segs.size() >= 3 && segs[0] == "bim" && segs[1] == "get") {
        if (segs.size() > 4) return error_response(400, "too many path segments");
        std::optional<std::size_t> depth;
        if (segs.size() == 4) {
            std::size_t v = 0;
            const auto& d = segs[3];
            auto [p, ec] = std::from_chars(d.data(), d.data() + d.size(), v);
            if (ec != std::errc() || p != d.data() + d.size())
                return error_response(400, "depth must be a non-negative integer");
            depth = v;
        } else {
            depth = 0;  // the bare query answers for the crate itself
        }
        return json_response(200, snap.crate_tree(segs[2], depth));
    }

    // /sensors/get/<acp_id>
    if (segs.size() == 3 && segs[0] == "sensors" && segs[1] == "get") {
        const VersionedRecord rec = snap.get("sensor", segs[2]);
        if (auto deny = denied(segs[2])) return *deny;
        json body = rec.body;
        body["acp_ts"] = rec.acp_ts.str();
        return json_response(200, body);
    }

    // /sensors/bim/get/<crate_id>
    if (segs.size() == 4 && segs[0] == "sensors" && segs[1] == "bim" && segs[2] == "get") {
        (void)snap.get("crate", segs[3]);  // 404 for unknown crates
        auto records = snap.sensors_in_crate(segs[3], true);
        std::sort(records.begin(), records.end(),
                  [](const auto& a, const auto& b) { return a.id < b.id; });
        json out = json::array();
        for (const auto& rec : records) {
            if (subject != req.query.end() && denied(rec.id)) continue;
            json body = rec.body;
            body["acp_ts"] = rec.acp_ts.str();
            out.push_back(std::move(body));
        }
        return json_response(200, out);
    }

    // /readings/get/<acp_id>[?from&to]
    if (segs.size() == 3 && segs[0] == "readings" && segs[1] == "get") {
        (void)snap.get("sensor", segs[2]);  // a reading needs a known sensor
        if (auto deny = denied(segs[2])) return *deny;
        const auto from_it = req.query.find("from");
        const auto to_it = req.query.find("to");
        if (from_it != req.query.end() || to_it != req.query.end()) {
            if (from_it == req.query.end() || to_it == req.query.end())
                return error_response(400, "range queries need both from and to");
            return range_readings(segs[2], from_it->second, to_it->second);
        }
        auto reading = latest_reading(segs[2]);
        if (!reading) return error_response(404, "no reading for " + segs[2]);
        return json_response(200, *reading);
    }

    // /space/get_bim_floor_number/<floor>
    if (segs.size() == 3 && segs[0] == "space" && segs[1] == "get_bim_floor_number") {
        int floor = 0;
        const auto& f = segs[2];
        auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), floor);
        if (ec != std::errc() || p != f.data() + f.size())
            return error_response(400, "floor must be an integer");
        ApiResponse r;
        r.content_type = "image/svg+xml";
        r.body = render_floor_svg(floor);
        return r;
    }

    if (segs.size() == 1 && segs[0] == "stats") return json_response(200, stats());

    return error_response(404, "no such endpoint: " + req.path);
}

std::string QueryApi::render_floor_svg(int floor) const {
    const StoreSnapshot snap = store_.snapshot();
    struct Poly {
        std::string id, type, parent, points;
    };
    std::vector<Poly> polys;
    double max_x = 0.0, max_y = 0.0;
    auto crates = snap.live_of_kind("crate");
    std::sort(crates.begin(), crates.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    for (const auto& rec : crates) {
        const CrateView cv = CrateView::from_body(rec.body);
        if (!cv.boundary || !cv.location) continue;
        if (cv.location->system != LocationSystem::building || cv.location->f != floor) continue;
        Poly poly;
        poly.id = cv.crate_id;
        poly.type = cv.crate_type;
        poly.parent = cv.parent_crate_id.value_or("");
        std::string pts;
        for (const Point2& p : cv.boundary->points) {
            if (!pts.empty()) pts += ' ';
            const double px = p.x * opts_.svg_px_per_m;
            const double py = p.y * opts_.svg_px_per_m;
            pts += px_str(px);
            pts += ',';
            pts += px_str(py);
            max_x = std::max(max_x, px);
            max_y = std::max(max_y, py);
        }
        poly.points = std::move(pts);
        polys.push_back(std::move(poly));
    }
    std::string svg = "<svg xmlns='http://www.w3.org/2000/svg' viewBox='0 0 " +
                      px_str(max_x) + " " + px_str(max_y) + "'>\n";
    for (const auto& poly : polys) {
        svg += "<g>\n<polygon\n  id='" + xml_escape(poly.id) + "'\n  data-crate_type='" +
               xml_escape(poly.type) + "'\n  data-parent_crate='" + xml_escape(poly.parent) +
               "'\n  data-floor_number='" + std::to_string(floor) + "'\n  points='" +
               poly.points + "'>\n<title>\n  " + xml_escape(poly.id) +
               "\n</title>\n</polygon>\n</g>\n";
    }
    svg += "</svg>\n";
    return svg;
}

HeatmapGrid QueryApi::heatmap(int floor, const std::string& feature, double cell_size_m) const {
    if (!(cell_size_m > 0) || !std::isfinite(cell_size_m))
        throw Error(Err::invalid_argument, "cell size must be positive");
    if (!known_feature(feature)) throw Error(Err::invalid_argument, "unknown feature: " + feature);

    const StoreSnapshot snap = store_.snapshot();
    const TransformRegistry reg = snap.transforms();
    bool floor_seen = false;
    std::vector<FloorRoom> rooms;
    std::string building;
    for (const auto& rec : snap.live_of_kind("crate")) {
        const CrateView cv = CrateView::from_body(rec.body);
        if (!cv.location || cv.location->system != LocationSystem::building) continue;
        if (cv.location->f != floor) continue;
        floor_seen = true;
        if (building.empty()) building = cv.location->building;
        if (cv.crate_type != "room" || !cv.boundary) continue;
        rooms.push_back({cv.crate_id, *cv.boundary});
    }
    if (!floor_seen) throw Error(Err::not_found, "no crates on floor " + std::to_string(floor));
    std::sort(rooms.begin(), rooms.end(),
              [](const FloorRoom& a, const FloorRoom& b) { return a.crate_id < b.crate_id; });

    HeatmapGrid grid;
    grid.floor = floor;
    grid.cell_size_m = cell_size_m;
    grid.feature = feature;
    for (const auto& room : rooms) {
        std::vector<std::pair<double, double>> pts;
        std::vector<double> vals;
        Timestamp newest = grid.as_of;
        room_sources(snap, reg, room.crate_id, building, feature, pts, vals, newest);
        if (newest.unix_nanos() > grid.as_of.unix_nanos()) grid.as_of = newest;

        double min_x = room.boundary.points[0].x, max_x = min_x;
        double min_y = room.boundary.points[0].y, max_y = min_y;
        for (const Point2& p : room.boundary.points) {
            min_x = std::min(min_x, p.x);
            max_x = std::max(max_x, p.x);
            min_y = std::min(min_y, p.y);
            max_y = std::max(max_y, p.y);
        }
        const long i0 = std::lround(std::floor(min_x / cell_size_m));
        const long i1 = std::lround(std::ceil(max_x / cell_size_m));
        const long j0 = std::lround(std::floor(min_y / cell_size_m));
        const long j1 = std::lround(std::ceil(max_y / cell_size_m));
        for (long j = j0; j < j1; ++j)
            for (long i = i0; i < i1; ++i) {
                const double cx = (static_cast<double>(i) + 0.5) * cell_size_m;
                const double cy = (static_cast<double>(j) + 0.5) * cell_size_m;
                if (!point_in_boundary(room.boundary, {cx, cy})) continue;
                HeatmapCell cell;
                cell.x = cx;
                cell.y = cy;
                cell.crate_id = room.crate_id;
                if (!pts.empty()) cell.value = idw(pts, vals, cx, cy);
                grid.cells.push_back(std::move(cell));
            }
    }
    return grid;
}

std::size_t QueryApi::heatmap_update(HeatmapGrid& grid, const json& envelope_body) {
    ingest(envelope_body);
    if (!envelope_body.is_object() || !envelope_body.contains("acp_id")) return 0;
    const std::string acp_id = envelope_body.at("acp_id").get<std::string>();

    const StoreSnapshot snap = store_.snapshot();
    const auto* rec = snap.find("sensor", acp_id);
    if (!rec) return 0;
    const SensorView sv = SensorView::from_body(rec->body);
    const auto room = sv.parent_crate_id();
    if (!room) return 0;

    std::string building;
    const auto* crate = snap.find("crate", *room);
    if (crate) {
        const CrateView cv = CrateView::from_body(crate->body);
        if (cv.location && cv.location->system == LocationSystem::building)
            building = cv.location->building;
    }

    const TransformRegistry reg = snap.transforms();
    std::vector<std::pair<double, double>> pts;
    std::vector<double> vals;
    Timestamp newest = grid.as_of;
    room_sources(snap, reg, *room, building, grid.feature, pts, vals, newest);

    std::size_t touched = 0;
    for (auto& cell : grid.cells) {
        if (cell.crate_id != *room) continue;
        if (pts.empty())
            cell.value.reset();
        else
            cell.value = idw(pts, vals, cell.x, cell.y);
        ++touched;
    }
    if (touched && newest.unix_nanos() > grid.as_of.unix_nanos()) grid.as_of = newest;
    return touched;
}

void QueryApi::room_sources(const StoreSnapshot& snap, const TransformRegistry& reg,
                            const std::string& room, const std::string& building,
                            const std::string& feature,
                            std::vector<std::pair<double, double>>& pts,
                            std::vector<double>& vals, Timestamp& newest) const {
    for (const auto& srec : snap.sensors_in_crate(room, false)) {
        const SensorView sv = SensorView::from_body(srec.body);
        const auto xy = sensor_xy(sv, building, reg);
        if (!xy) continue;
        const auto v = latest_value(sv.acp_id, feature);
        if (!v) continue;
        pts.push_back(*xy);
        vals.push_back(*v);
        std::lock_guard lk(mu_);
        auto it = latest_.find(sv.acp_id);
        if (it != latest_.end()) {
            const Timestamp ts = Timestamp::parse(it->second.at("acp_ts").get<std::string>());
            if (ts.unix_nanos() > newest.unix_nanos()) newest = ts;
        }
    }
}

ApiResponse QueryApi::range_readings(const std::string& acp_id, const std::string& from_s,
                                     const std::string& to_s) const {
    Timestamp from, to;
    try {
        from = Timestamp::parse(from_s);
        to = Timestamp::parse(to_s);
    } catch (const Error& e) {
        return error_response(400, std::string("bad range bound: ") + e.what());
    }
    if (to.unix_nanos() < from.unix_nanos())
        return error_response(400, "range end precedes its start");
    if (opts_.data_dir.empty())
        return error_response(400, "no data directory configured for range queries");

    json rows = json::array();
    // shards are named by UTC day, so walk from's day through to's day
    constexpr std::int64_t kDayNanos = 86400LL * 1000000000LL;
    std::int64_t day_start =
        from.unix_nanos() - ((from.unix_nanos() % kDayNanos) + kDayNanos) % kDayNanos;
    for (; day_start <= to.unix_nanos(); day_start += kDayNanos) {
        const CivilTime civil = civil_from_timestamp(Timestamp::from_nanos(day_start));
        char name[32];
        std::snprintf(name, sizeof name, "%04d-%02d-%02d.ndjson", civil.year, civil.month,
                      civil.day);
        const std::filesystem::path shard = opts_.data_dir / "sensors" / acp_id / name;
        std::ifstream in(shard);
        if (!in) continue;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json body;
            try {
                body = json::parse(line);
            } catch (const json::exception&) {
                continue;  // a torn write must not poison the whole range
            }
            if (!body.is_object() || !body.contains("acp_ts")) continue;
            Timestamp ts;
            try {
                ts = Timestamp::parse(body.at("acp_ts").get<std::string>());
            } catch (const Error&) {
                continue;
            }
            if (ts.unix_nanos() < from.unix_nanos() || ts.unix_nanos() > to.unix_nanos()) continue;
            rows.push_back(reading_of(body));
        }
    }
    return json_response(200, json{{"acp_id", acp_id}, {"readings", std::move(rows)}});
}

}  // namespace trellis
