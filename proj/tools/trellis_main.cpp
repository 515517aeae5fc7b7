// Operator entry point: run the platform, drive simulations, produce reports.

#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>

#include "trellis/api.hpp"
#include "trellis/broker.hpp"
#include "trellis/cep.hpp"
#include "trellis/decoders.hpp"
#include "trellis/fixtures.hpp"
#include "trellis/metastore.hpp"
#include "trellis/privacy.hpp"
#include "trellis/rts.hpp"
#include "trellis/sim.hpp"

namespace fs = std::filesystem;
using trellis::json;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw trellis::Error(trellis::Err::not_found, "cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw trellis::Error(trellis::Err::parse_error, path + ": " + e.what());
    }
    return j;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw trellis::Error(trellis::Err::not_found, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw trellis::Error(trellis::Err::storage_full, "cannot write " + path);
    out << content;
}

int cmd_serve(const std::string& config_path, const std::string& host, int port) {
    const json cfg = load_json_file(config_path);
    const fs::path data_dir = cfg.value("data_dir", std::string("data"));
    fs::create_directories(data_dir);

    // metadata journal lives beside the shards; a fresh one gets the demo fleet
    const fs::path journal = data_dir / "metadata.ndjson";
    trellis::MetadataStore store =
        fs::exists(journal) ? trellis::MetadataStore::replay(journal.string())
                            : trellis::MetadataStore(journal.string());
    if (!fs::exists(journal) || store.snapshot().live_of_kind("crate").empty())
        trellis::seed_demo_metadata(store);

    const trellis::Timestamp now = trellis::wallclock_now();
    for (const auto& body : cfg.value("transforms", json::array()))
        store.upsert("transform", body.at("building").get<std::string>(), body, now);
    if (cfg.contains("permissions_file")) {
        std::ifstream perms(cfg.at("permissions_file").get<std::string>());
        if (!perms)
            throw trellis::Error(trellis::Err::not_found, "cannot open permissions_file");
        trellis::import_permissions(store, perms, now);
    }

    std::vector<std::string> broker_ids;
    for (const auto& b : cfg.value("brokers", json::array({"gw"})))
        broker_ids.push_back(b.get<std::string>());
    if (broker_ids.empty()) broker_ids.push_back("gw");
    std::deque<trellis::Broker> brokers;
    for (const auto& id : broker_ids) brokers.emplace_back(id);
    auto broker_by_id = [&](const std::string& id) -> trellis::Broker& {
        for (std::size_t i = 0; i < broker_ids.size(); ++i)
            if (broker_ids[i] == id) return brokers[i];
        throw trellis::Error(trellis::Err::not_found, "no broker named " + id);
    };
    for (const auto& b : cfg.value("bridges", json::array())) {
        trellis::Broker& local = broker_by_id(b.at("broker").get<std::string>());
        local.bridge(broker_by_id(b.at("remote").get<std::string>()),
                     trellis::BridgeConfig::from_json(b));
    }

    const std::string decoder_set = cfg.value("decoders", std::string("standard"));
    trellis::DecoderManager decoders(decoder_set == "none" ? trellis::DecoderSet::none
                                                           : trellis::DecoderSet::standard);

    trellis::Rts rts(brokers.front(), decoders);
    std::vector<std::string> filters;
    for (const auto& f : cfg.value("topic_filters", json::array({"csn/#"})))
        filters.push_back(f.get<std::string>());
    rts.start_feed_handler(filters);
    rts.start_message_filer(data_dir);

    trellis::CepEngine cep;
    if (cfg.contains("rules_file")) {
        cep.load_rules(trellis::parse_rules(read_file(cfg.at("rules_file").get<std::string>())));
        cep.on_complex = [&rts](const trellis::ComplexEvent& ev) {
            rts.bus_publish("cep.detections", ev.to_json());
        };
        trellis::VerticleSpec spec;
        spec.name = "cep";
        spec.klass = trellis::VerticleClass::analysis;
        spec.addresses = {trellis::kFeedAddress};
        spec.handler = [&cep](const trellis::BusEvent& ev, trellis::VerticleCtx&) {
            if (!ev.body.is_object()) return;
            const auto cooked = ev.body.find("payload_cooked");
            if (cooked == ev.body.end() || !cooked->is_object()) return;
            const std::string id = ev.body.value("acp_id", std::string());
            const std::string type = ev.body.value("acp_type", std::string());
            trellis::Timestamp ts;
            try {
                ts = trellis::Timestamp::parse(ev.body.at("acp_ts").get<std::string>());
            } catch (const std::exception&) {
                return;
            }
            for (auto it = cooked->begin(); it != cooked->end(); ++it)
                if (it->is_number()) cep.ingest(id, type, it.key(), it->get<double>(), ts);
        };
        rts.deploy(std::move(spec));
    }

    trellis::ApiOptions api_opts;
    api_opts.data_dir = data_dir;
    trellis::QueryApi api(store, api_opts);
    api.attach(rts);

    httplib::Server server;
    server.Get(".*", [&api](const httplib::Request& req, httplib::Response& res) {
        trellis::ApiRequest areq;
        areq.method = "GET";
        areq.path = req.path;
        for (const auto& [k, v] : req.params) areq.query[k] = v;
        const trellis::ApiResponse ares = api.handle(areq);
        res.status = ares.status;
        res.set_content(ares.body, ares.content_type);
    });
    std::cout << "serving on http://" << host << ":" << port << " (data in " << data_dir.string()
              << ")" << std::endl;
    if (!server.listen(host, port)) {
        std::cerr << "cannot bind " << host << ":" << port << std::endl;
        return 1;
    }
    rts.shutdown();
    return 0;
}

int cmd_sim_run(const std::string& scenario_path, std::int64_t seed_override,
                const std::string& out_path, const std::string& truth_path, bool as_json) {
    json jcfg = load_json_file(scenario_path);
    if (seed_override >= 0) jcfg["seed"] = static_cast<std::uint64_t>(seed_override);
    const trellis::ScenarioConfig cfg = trellis::ScenarioConfig::from_json(jcfg);
    const trellis::ScenarioTrace trace = trellis::run_scenario(cfg);

    std::ostringstream trace_out, truth_out;
    trellis::write_trace_ndjson(trace, trace_out);
    trellis::write_truth_ndjson(trace, truth_out);
    write_file(out_path, trace_out.str());
    write_file(truth_path, truth_out.str());

    std::size_t dropped = 0;
    for (const auto& r : trace.records) dropped += r.dropped ? 1 : 0;
    const json summary{{"records", trace.records.size()},
                       {"delivered", trace.records.size() - dropped},
                       {"dropped", dropped},
                       {"truth_events", trace.truth.size()},
                       {"trace", out_path},
                       {"truth", truth_path}};
    if (as_json)
        std::cout << summary.dump() << std::endl;
    else
        std::cout << trace.records.size() << " records (" << dropped << " dropped), "
                  << trace.truth.size() << " truth events -> " << out_path << std::endl;
    return 0;
}

int cmd_report_latency(const std::string& trace_path, const std::string& stage,
                       const std::string& ecdf_path, bool as_json) {
    std::ifstream in(trace_path);
    if (!in) throw trellis::Error(trellis::Err::not_found, "cannot open " + trace_path);
    const trellis::ScenarioTrace trace = trellis::read_trace_ndjson(in);
    const trellis::LatencyReport rep = trellis::latency_report(trace);
    if (!ecdf_path.empty()) write_file(ecdf_path, rep.ecdf_csv(stage));
    if (as_json) {
        std::cout << rep.to_json().dump() << std::endl;
    } else {
        std::printf("%-20s %10s %10s %10s %10s %8s\n", "stage", "mean_ms", "stddev_ms", "p50_ms",
                    "p99_ms", "n");
        for (const auto& [name, st] : rep.stages)
            std::printf("%-20s %10.3f %10.3f %10.3f %10.3f %8zu\n", name.c_str(), st.mean_ms,
                        st.stddev_ms, st.p50_ms, st.p99_ms, st.n);
    }
    return 0;
}

int cmd_heatmap(int floor, const std::string& feature, double cell, const std::string& readings,
                const std::string& out_path, bool as_json) {
    trellis::MetadataStore store;
    trellis::seed_demo_metadata(store);
    trellis::QueryApi api(store);
    std::size_t fed = 0;
    if (!readings.empty()) {
        std::ifstream in(readings);
        if (!in) throw trellis::Error(trellis::Err::not_found, "cannot open " + readings);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            api.ingest(json::parse(line));
            ++fed;
        }
    }
    const trellis::HeatmapGrid grid = api.heatmap(floor, feature, cell);
    const json jgrid = grid.to_json();
    write_file(out_path, jgrid.dump() + "\n");
    if (as_json)
        std::cout << json{{"cells", grid.cells.size()}, {"readings", fed}, {"out", out_path}}
                         .dump()
                  << std::endl;
    else
        std::cout << grid.cells.size() << " cells from " << fed << " readings -> " << out_path
                  << std::endl;
    return 0;
}

int cmd_rules_check(const std::string& rules_path, bool as_json) {
    const auto rules = trellis::parse_rules(read_file(rules_path));
    if (as_json)
        std::cout << json{{"rules", rules.size()}, {"ok", true}}.dump() << std::endl;
    else
        std::cout << "parsed " << rules.size() << " rules" << std::endl;
    return 0;
}

int cmd_replay(const std::string& data_dir, bool as_json) {
    const fs::path root(data_dir);
    json meta = json::object();
    const fs::path journal = root / "metadata.ndjson";
    if (fs::exists(journal)) {
        // detached replay: rebuild in memory without appending to the journal
        trellis::MetadataStore store = trellis::MetadataStore::replay(journal.string(), true);
        const trellis::StoreSnapshot snap = store.snapshot();
        for (const char* kind : {"crate", "sensor", "person", "permission", "org", "transform"})
            meta[kind] = snap.live_of_kind(kind).size();
    }

    std::size_t sensors = 0, sensor_lines = 0, day_files = 0, day_lines = 0;
    auto count_lines = [](const fs::path& p) {
        std::ifstream in(p);
        std::size_t n = 0;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) ++n;
        return n;
    };
    if (fs::exists(root / "sensors"))
        for (const auto& dir : fs::directory_iterator(root / "sensors")) {
            if (!dir.is_directory()) continue;
            ++sensors;
            for (const auto& f : fs::directory_iterator(dir.path()))
                if (f.path().extension() == ".ndjson") sensor_lines += count_lines(f.path());
        }
    if (fs::exists(root / "data"))
        for (const auto& f : fs::recursive_directory_iterator(root / "data"))
            if (f.is_regular_file() && f.path().extension() == ".ndjson") {
                ++day_files;
                day_lines += count_lines(f.path());
            }

    const json summary{{"metadata", meta},
                       {"sensors", sensors},
                       {"sensor_shard_lines", sensor_lines},
                       {"day_shards", day_files},
                       {"day_shard_lines", day_lines}};
    if (as_json)
        std::cout << summary.dump() << std::endl;
    else
        std::cout << "rebuilt " << meta.size() << " metadata kinds, " << sensors << " sensors, "
                  << day_files << " day shards (" << day_lines << " lines)" << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"building sensor platform"};
    app.require_subcommand(1);

    // serve
    auto* serve = app.add_subcommand("serve", "run the platform and HTTP API");
    std::string serve_config;
    std::string serve_host = "127.0.0.1";
    int serve_port = 8080;
    serve->add_option("--config", serve_config, "platform config JSON")->required();
    serve->add_option("--host", serve_host, "bind address");
    serve->add_option("--port", serve_port, "bind port");

    // sim run
    auto* sim = app.add_subcommand("sim", "simulator");
    auto* sim_run = sim->add_subcommand("run", "run a scenario");
    std::string sim_scenario, sim_out = "trace.ndjson", sim_truth = "truth.ndjson";
    std::int64_t sim_seed = -1;
    bool sim_json = false;
    sim_run->add_option("--scenario", sim_scenario, "scenario config JSON")->required();
    sim_run->add_option("--seed", sim_seed, "override the config seed");
    sim_run->add_option("--out", sim_out, "trace output path");
    sim_run->add_option("--truth", sim_truth, "truth output path");
    sim_run->add_flag("--json", sim_json, "machine readable summary");

    // report latency
    auto* report = app.add_subcommand("report", "reports over recorded traces");
    auto* rep_lat = report->add_subcommand("latency", "stage latency statistics");
    std::string lat_trace, lat_stage = "client", lat_ecdf;
    bool lat_json = false;
    rep_lat->add_option("--trace", lat_trace, "trace NDJSON path")->required();
    rep_lat->add_option("--stage", lat_stage, "stage for --ecdf");
    rep_lat->add_option("--ecdf", lat_ecdf, "write the stage ECDF CSV here");
    rep_lat->add_flag("--json", lat_json, "machine readable report");

    // heatmap
    auto* heat = app.add_subcommand("heatmap", "room-bound interpolation grid");
    int heat_floor = 0;
    std::string heat_feature = "co2", heat_readings, heat_out = "grid.json";
    double heat_cell = 1.0;
    bool heat_json = false;
    heat->add_option("--floor", heat_floor, "floor number")->required();
    heat->add_option("--feature", heat_feature, "feature name");
    heat->add_option("--cell", heat_cell, "cell size in metres");
    heat->add_option("--readings", heat_readings, "NDJSON of decoded readings to load");
    heat->add_option("--out", heat_out, "grid output path");
    heat->add_flag("--json", heat_json, "machine readable summary");

    // rules check
    auto* rules = app.add_subcommand("rules", "rule files");
    auto* rules_check = rules->add_subcommand("check", "parse a rule file");
    std::string rules_file;
    bool rules_json = false;
    rules_check->add_option("file", rules_file, "rule file")->required();
    rules_check->add_flag("--json", rules_json, "machine readable result");

    // replay
    auto* replay = app.add_subcommand("replay", "rebuild stores from a data directory");
    std::string replay_dir;
    bool replay_json = false;
    replay->add_option("--data-dir", replay_dir, "platform data directory")->required();
    replay->add_flag("--json", replay_json, "machine readable summary");

    CLI11_PARSE(app, argc, argv);

    try {
        if (serve->parsed()) return cmd_serve(serve_config, serve_host, serve_port);
        if (sim_run->parsed())
            return cmd_sim_run(sim_scenario, sim_seed, sim_out, sim_truth, sim_json);
        if (rep_lat->parsed()) return cmd_report_latency(lat_trace, lat_stage, lat_ecdf, lat_json);
        if (heat->parsed())
            return cmd_heatmap(heat_floor, heat_feature, heat_cell, heat_readings, heat_out,
                               heat_json);
        if (rules_check->parsed()) return cmd_rules_check(rules_file, rules_json);
        if (replay->parsed()) return cmd_replay(replay_dir, replay_json);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    std::cerr << "error: missing subcommand" << std::endl;
    return 1;
}
