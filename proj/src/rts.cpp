#include "trellis/rts.hpp"

#include <algorithm>
#include <cstdio>

namespace trellis {

namespace {
constexpr std::size_t kLatencyRingCap = 8192;
constexpr std::size_t kRoutesSeenCap = 65536;
constexpr int kPollMs = 20;
}  // namespace

std::int64_t wallclock_nanos() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

Timestamp wallclock_now() { return Timestamp::from_nanos(wallclock_nanos()); }

Mailbox::Mailbox(std::size_t depth) : depth_(depth == 0 ? 1 : depth) {}

void Mailbox::push(BusEvent ev) {
    {
        std::lock_guard lk(mu_);
        if (closed_) return;
        if (q_.size() >= depth_) {
            q_.pop_front();
            dropped_.fetch_add(1);
        }
        q_.push_back(std::move(ev));
    }
    cv_.notify_one();
}

std::optional<BusEvent> Mailbox::pop(std::chrono::milliseconds wait) {
    std::unique_lock lk(mu_);
    cv_.wait_for(lk, wait, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    BusEvent ev = std::move(q_.front());
    q_.pop_front();
    return ev;
}

std::optional<BusEvent> Mailbox::try_pop() {
    std::lock_guard lk(mu_);
    if (q_.empty()) return std::nullopt;
    BusEvent ev = std::move(q_.front());
    q_.pop_front();
    return ev;
}

void Mailbox::close() {
    {
        std::lock_guard lk(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

bool Mailbox::closed() const {
    std::lock_guard lk(mu_);
    return closed_;
}

std::size_t Mailbox::size() const {
    std::lock_guard lk(mu_);
    return q_.size();
}

EventBus::EventBus(std::size_t default_mailbox_depth) : default_depth_(default_mailbox_depth) {}

std::uint64_t EventBus::publish(const std::string& address, json body, bool imported) {
    std::lock_guard lk(mu_);
    std::uint64_t seq = ++seq_[address];
    BusEvent ev;
    ev.address = address;
    ev.body = std::move(body);
    ev.published_at = wallclock_now();
    ev.seq = seq;
    ev.imported = imported;
    auto it = subs_by_address_.find(address);
    if (it != subs_by_address_.end()) {
        for (const Sub& sub : it->second) {
            if (sub.predicate && !sub.predicate(ev)) continue;
            sub.mailbox->push(ev);
        }
    }
    published_.fetch_add(1);
    return seq;
}

std::uint64_t EventBus::subscribe(const std::string& address, std::shared_ptr<Mailbox> mailbox,
                                  std::function<bool(const BusEvent&)> predicate) {
    std::lock_guard lk(mu_);
    std::uint64_t id = next_sub_id_++;
    subs_by_address_[address].push_back(Sub{id, std::move(mailbox), std::move(predicate)});
    sub_address_[id] = address;
    return id;
}

void EventBus::unsubscribe(std::uint64_t sub_id) {
    std::lock_guard lk(mu_);
    auto addr_it = sub_address_.find(sub_id);
    if (addr_it == sub_address_.end()) return;
    auto& vec = subs_by_address_[addr_it->second];
    vec.erase(std::remove_if(vec.begin(), vec.end(),
                             [&](const Sub& s) { return s.id == sub_id; }),
              vec.end());
    if (vec.empty()) subs_by_address_.erase(addr_it->second);
    sub_address_.erase(addr_it);
}

json EventBus::stats() const {
    std::lock_guard lk(mu_);
    std::size_t subscriber_count = 0;
    for (const auto& [addr, vec] : subs_by_address_) subscriber_count += vec.size();
    return json{{"published", published_.load()},
                {"addresses", seq_.size()},
                {"subscribers", subscriber_count}};
}

const char* verticle_class_name(VerticleClass klass) {
    switch (klass) {
        case VerticleClass::ingestion: return "ingestion";
        case VerticleClass::storage: return "storage";
        case VerticleClass::analysis: return "analysis";
        case VerticleClass::outbound: return "outbound";
    }
    return "unknown";
}

struct VerticleImpl {
    VerticleSpec spec;
    std::shared_ptr<Mailbox> mailbox;
    std::vector<std::uint64_t> bus_subs;
    SubscriptionPtr broker_sub;
    std::thread thread;
    std::atomic<bool> running{true};
    std::atomic<std::uint64_t> received{0};
    std::atomic<std::uint64_t> published{0};
    std::atomic<std::uint64_t> handler_errors{0};

    mutable std::mutex lat_mu;
    std::vector<std::int64_t> lat_ring;
    std::size_t lat_next = 0;
    std::uint64_t lat_count = 0;
    double lat_sum_ns = 0.0;

    void record_latency(std::int64_t nanos) {
        std::lock_guard lk(lat_mu);
        if (lat_ring.size() < kLatencyRingCap) {
            lat_ring.push_back(nanos);
        } else {
            lat_ring[lat_next] = nanos;
            lat_next = (lat_next + 1) % kLatencyRingCap;
        }
        ++lat_count;
        lat_sum_ns += static_cast<double>(nanos);
    }

    json stats_json() const {
        double mean_us = 0.0;
        std::int64_t p99_ns = 0;
        {
            std::lock_guard lk(lat_mu);
            if (lat_count > 0) mean_us = lat_sum_ns / static_cast<double>(lat_count) / 1000.0;
            if (!lat_ring.empty()) {
                std::vector<std::int64_t> sorted(lat_ring);
                std::sort(sorted.begin(), sorted.end());
                std::size_t idx =
                    (sorted.size() * 99 + 99) / 100 == 0 ? 0 : (sorted.size() * 99 + 99) / 100 - 1;
                if (idx >= sorted.size()) idx = sorted.size() - 1;
                p99_ns = sorted[idx];
            }
        }
        return json{{"name", spec.name},
                    {"class", verticle_class_name(spec.klass)},
                    {"received", received.load()},
                    {"published", published.load()},
                    {"dropped", mailbox ? mailbox->dropped() : 0},
                    {"handler_errors", handler_errors.load()},
                    {"mean_handler_us", mean_us},
                    {"p99_handler_us", static_cast<double>(p99_ns) / 1000.0}};
    }
};

std::uint64_t VerticleCtx::publish(const std::string& address, json body) {
    self_.published.fetch_add(1);
    return rts_.bus_publish(address, std::move(body));
}

Rts::Rts(Broker& broker, const DecoderManager& decoders, RtsOptions opts)
    : broker_(broker), decoders_(decoders), opts_(std::move(opts)), bus_(opts_.mailbox_depth) {}

Rts::~Rts() { shutdown(); }

VerticleImpl& Rts::deploy_locked(VerticleSpec spec) {
    if (verticles_.count(spec.name))
        throw Error(Err::duplicate_name, "verticle already deployed: " + spec.name);
    auto v = std::make_unique<VerticleImpl>();
    v->spec = std::move(spec);
    VerticleImpl* vp = v.get();
    if (vp->spec.handler) {
        std::size_t depth = vp->spec.mailbox_depth ? vp->spec.mailbox_depth : bus_.default_depth();
        vp->mailbox = std::make_shared<Mailbox>(depth);
        for (const auto& addr : vp->spec.addresses)
            vp->bus_subs.push_back(bus_.subscribe(addr, vp->mailbox));
        vp->thread = std::thread([this, vp] {
            while (vp->running.load()) {
                auto ev = vp->mailbox->pop(std::chrono::milliseconds(kPollMs));
                if (!ev) {
                    if (vp->mailbox->closed()) break;
                    continue;
                }
                vp->received.fetch_add(1);
                auto t0 = std::chrono::steady_clock::now();
                VerticleCtx ctx(*this, *vp);
                try {
                    vp->spec.handler(*ev, ctx);
                } catch (const std::exception&) {
                    vp->handler_errors.fetch_add(1);
                }
                vp->record_latency(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                       std::chrono::steady_clock::now() - t0)
                                       .count());
            }
        });
    }
    VerticleImpl& ref = *vp;
    verticles_[ref.spec.name] = std::move(v);
    return ref;
}

void Rts::deploy(VerticleSpec spec) {
    if (!spec.handler) throw Error(Err::invalid_argument, "verticle needs a handler");
    std::lock_guard lk(mu_);
    deploy_locked(std::move(spec));
}

void Rts::undeploy(const std::string& name) {
    std::unique_ptr<VerticleImpl> v;
    {
        std::lock_guard lk(mu_);
        auto it = verticles_.find(name);
        if (it == verticles_.end())
            throw Error(Err::not_found, "no deployed verticle named " + name);
        v = std::move(it->second);
        verticles_.erase(it);
    }
    for (auto id : v->bus_subs) bus_.unsubscribe(id);
    v->running.store(false);
    if (v->mailbox) v->mailbox->close();
    if (v->broker_sub) v->broker_sub->cancel();
    if (v->thread.joinable()) v->thread.join();
}

bool Rts::deployed(const std::string& name) const {
    std::lock_guard lk(mu_);
    return verticles_.count(name) > 0;
}

std::uint64_t Rts::bus_publish(const std::string& address, json body) {
    return bus_.publish(address, std::move(body));
}

void Rts::run_feed_loop(SubscriptionPtr sub) {
    VerticleImpl* self = nullptr;
    {
        std::lock_guard lk(mu_);
        self = verticles_.at("feed_handler").get();
    }
    while (self->running.load()) {
        auto msg = sub->pop_wait(kPollMs);
        if (!msg) {
            if (sub->cancelled()) break;
            continue;
        }
        std::int64_t receipt_nanos = wallclock_nanos();
        Timestamp receipt = Timestamp::from_nanos(receipt_nanos);
        feed_taken_.fetch_add(1);
        self->received.fetch_add(1);
        auto t0 = std::chrono::steady_clock::now();

        auto outcome = decoders_.decode(msg->topic, msg->payload, receipt);
        if (std::holds_alternative<DeadLetter>(outcome)) {
            dead_letters_.fetch_add(1);
            broker_.publish(kDeadLetterTopic, std::get<DeadLetter>(outcome).to_json().dump());
            continue;
        }
        const Envelope& env = std::get<DecodeOutcome>(outcome).envelope;
        json body = env.to_json();
        if (stage_tap) stage_tap(body, "broker", receipt_nanos);
        // the bus stamp is taken at hand-off, before publish: a subscriber can
        // drain its mailbox before publish returns, and stamps must stay causal
        if (stage_tap) stage_tap(body, "bus", wallclock_nanos());
        bus_.publish(kFeedAddress, body);
        bus_.publish(kSensorAddressPrefix + env.acp_id, std::move(body));
        feed_events_.fetch_add(1);
        self->published.fetch_add(2);
        self->record_latency(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count());
    }
}

void Rts::start_feed_handler(const std::vector<std::string>& topic_filters) {
    auto sub = broker_.subscribe(topic_filters);
    std::lock_guard lk(mu_);
    VerticleSpec spec;
    spec.name = "feed_handler";
    spec.klass = VerticleClass::ingestion;
    auto v = std::make_unique<VerticleImpl>();
    v->spec = std::move(spec);
    v->broker_sub = sub;
    VerticleImpl* vp = v.get();
    if (verticles_.count(vp->spec.name))
        throw Error(Err::duplicate_name, "verticle already deployed: feed_handler");
    verticles_[vp->spec.name] = std::move(v);
    vp->thread = std::thread([this, sub] { run_feed_loop(sub); });
}

void Rts::start_message_filer(const std::filesystem::path& root) {
    struct FilerState {
        std::filesystem::path root;
        std::map<std::string, std::ofstream> handles;
    };
    auto state = std::make_shared<FilerState>();
    state->root = root;

    auto write_line = [this, state](const std::filesystem::path& path, const std::string& line) {
        try {
            auto it = state->handles.find(path.string());
            if (it == state->handles.end()) {
                if (state->handles.size() >= 128) state->handles.clear();
                std::filesystem::create_directories(path.parent_path());
                std::ofstream out(path, std::ios::app);
                it = state->handles.emplace(path.string(), std::move(out)).first;
            }
            it->second << line << '\n';
            it->second.flush();
            if (!it->second) {
                filer_errors_.fetch_add(1);
                state->handles.erase(it);
            }
        } catch (const std::exception&) {
            filer_errors_.fetch_add(1);
        }
    };

    VerticleSpec spec;
    spec.name = "message_filer";
    spec.klass = VerticleClass::storage;
    spec.addresses = {kFeedAddress};
    spec.handler = [this, state, write_line](const BusEvent& ev, VerticleCtx&) {
        const json& b = ev.body;
        std::string acp_id = b.value("acp_id", "");
        auto ts = Timestamp::try_parse(b.value("acp_ts", ""));
        if (acp_id.empty() || !ts) {
            filer_errors_.fetch_add(1);
            return;
        }
        CivilTime c = civil_from_timestamp(*ts);
        char day_rel[32];
        std::snprintf(day_rel, sizeof(day_rel), "%04d/%02d/%02d.ndjson", c.year, c.month, c.day);
        char sensor_name[32];
        std::snprintf(sensor_name, sizeof(sensor_name), "%04d-%02d-%02d.ndjson", c.year, c.month,
                      c.day);
        std::string line = b.dump();
        write_line(state->root / "data" / day_rel, line);
        write_line(state->root / "sensors" / acp_id / sensor_name, line);
        filer_lines_.fetch_add(1);
    };
    deploy(std::move(spec));
}

std::shared_ptr<RtSubscription> Rts::rtmonitor_subscribe(const RtFilter& filter) {
    std::lock_guard lk(mu_);
    if (clients_.size() >= opts_.max_client_subscriptions)
        throw Error(Err::too_many_subscriptions,
                    "client subscription cap reached (" +
                        std::to_string(opts_.max_client_subscriptions) + ")");
    auto mailbox = std::make_shared<Mailbox>(
        filter.mailbox_depth ? filter.mailbox_depth : opts_.mailbox_depth);
    std::function<bool(const BusEvent&)> pred;
    if (filter.acp_id || filter.require_cooked_key) {
        pred = [acp = filter.acp_id, key = filter.require_cooked_key](const BusEvent& ev) {
            if (!ev.body.is_object()) return false;
            if (acp) {
                auto it = ev.body.find("acp_id");
                if (it == ev.body.end() || !it->is_string() || it->get<std::string>() != *acp)
                    return false;
            }
            if (key) {
                auto it = ev.body.find("payload_cooked");
                if (it == ev.body.end() || !it->is_object() || !it->contains(*key)) return false;
            }
            return true;
        };
    }
    std::uint64_t id = bus_.subscribe(filter.address, mailbox, std::move(pred));
    auto token = std::make_shared<RtSubscription>();
    token->id_ = id;
    token->mailbox_ = mailbox;
    token->canceller_ = [this](std::uint64_t token_id) { rtmonitor_unsubscribe(token_id); };
    clients_[id] = token;
    return token;
}

void Rts::rtmonitor_unsubscribe(std::uint64_t token_id) {
    std::shared_ptr<RtSubscription> token;
    {
        std::lock_guard lk(mu_);
        auto it = clients_.find(token_id);
        if (it == clients_.end()) return;
        token = it->second;
        clients_.erase(it);
    }
    bus_.unsubscribe(token_id);
    token->cancelled_.store(true);
    token->mailbox_->close();
}

std::optional<BusEvent> RtSubscription::poll(std::chrono::milliseconds wait) {
    if (cancelled_.load() && mailbox_->size() == 0) return std::nullopt;
    return mailbox_->pop(wait);
}

void RtSubscription::cancel() {
    if (cancelled_.load()) return;
    if (canceller_) canceller_(id_);
    cancelled_.store(true);
}

bool RtSubscription::cancelled() const { return cancelled_.load(); }

std::uint64_t RtSubscription::dropped() const { return mailbox_ ? mailbox_->dropped() : 0; }

void Rts::forward_to_peers(const json& wrapper) {
    std::string line = wrapper.dump();
    const json& origins = wrapper.at("origins");
    std::lock_guard lk(router_mu_);
    for (Peer& peer : peers_) {
        bool had_it = false;
        for (const auto& o : origins)
            if (o.is_string() && o.get<std::string>() == peer.endpoint.system_id) had_it = true;
        if (had_it) continue;
        if (peer.up) {
            while (!peer.buffer.empty()) {
                peer.endpoint.broker->publish(kPeerTopic, peer.buffer.front());
                peer.buffer.pop_front();
                ++peer.sent;
            }
            peer.endpoint.broker->publish(kPeerTopic, line);
            ++peer.sent;
        } else if (peer.buffer.size() < opts_.peer_buffer_cap) {
            peer.buffer.push_back(line);
        } else {
            ++peer.dropped;
        }
    }
}

void Rts::run_import_loop(SubscriptionPtr sub) {
    VerticleImpl* self = nullptr;
    {
        std::lock_guard lk(mu_);
        self = verticles_.at("router_import").get();
    }
    while (self->running.load()) {
        auto msg = sub->pop_wait(kPollMs);
        if (!msg) {
            if (sub->cancelled()) break;
            continue;
        }
        self->received.fetch_add(1);
        json wrapper;
        try {
            wrapper = json::parse(msg->payload);
        } catch (const json::exception&) {
            self->handler_errors.fetch_add(1);
            continue;
        }
        if (!wrapper.is_object() || !wrapper.contains("route_id") ||
            !wrapper.contains("origins") || !wrapper.contains("address") ||
            !wrapper.contains("body")) {
            self->handler_errors.fetch_add(1);
            continue;
        }
        std::string route_id = wrapper["route_id"].get<std::string>();
        bool duplicate = false;
        {
            std::lock_guard lk(router_mu_);
            for (const auto& o : wrapper["origins"])
                if (o.is_string() && o.get<std::string>() == opts_.system_id) duplicate = true;
            if (!duplicate && routes_seen_.count(route_id)) duplicate = true;
            if (duplicate) {
                ++import_duplicates_;
            } else {
                routes_seen_.insert(route_id);
                routes_seen_order_.push_back(route_id);
                if (routes_seen_order_.size() > kRoutesSeenCap) {
                    routes_seen_.erase(routes_seen_order_.front());
                    routes_seen_order_.pop_front();
                }
                ++imported_;
            }
        }
        if (duplicate) continue;
        bus_.publish(wrapper["address"].get<std::string>(), wrapper["body"], /*imported=*/true);
        self->published.fetch_add(1);
        json onward = wrapper;
        onward["origins"].push_back(opts_.system_id);
        forward_to_peers(onward);
    }
}

void Rts::start_message_router(std::vector<PeerEndpoint> peers,
                               std::vector<std::string> addresses) {
    {
        std::lock_guard lk(router_mu_);
        for (auto& p : peers) {
            Peer peer;
            peer.endpoint = p;
            peers_.push_back(std::move(peer));
        }
    }

    VerticleSpec spec;
    spec.name = "message_router";
    spec.klass = VerticleClass::outbound;
    spec.addresses = std::move(addresses);
    spec.handler = [this](const BusEvent& ev, VerticleCtx&) {
        if (ev.imported) return;  // the import side already forwarded it
        json wrapper;
        {
            std::lock_guard lk(router_mu_);
            wrapper["route_id"] = opts_.system_id + "#" + std::to_string(++route_seq_);
        }
        wrapper["origins"] = json::array({opts_.system_id});
        wrapper["address"] = ev.address;
        wrapper["body"] = ev.body;
        forward_to_peers(wrapper);
    };
    deploy(std::move(spec));

    auto sub = broker_.subscribe(std::string(kPeerTopic));
    std::lock_guard lk(mu_);
    VerticleSpec import_spec;
    import_spec.name = "router_import";
    import_spec.klass = VerticleClass::ingestion;
    auto v = std::make_unique<VerticleImpl>();
    v->spec = std::move(import_spec);
    v->broker_sub = sub;
    VerticleImpl* vp = v.get();
    if (verticles_.count(vp->spec.name))
        throw Error(Err::duplicate_name, "verticle already deployed: router_import");
    verticles_[vp->spec.name] = std::move(v);
    vp->thread = std::thread([this, sub] { run_import_loop(sub); });
}

void Rts::set_peer_up(const std::string& system_id, bool up) {
    std::lock_guard lk(router_mu_);
    for (Peer& peer : peers_) {
        if (peer.endpoint.system_id != system_id) continue;
        peer.up = up;
        if (up) {
            while (!peer.buffer.empty()) {
                peer.endpoint.broker->publish(kPeerTopic, peer.buffer.front());
                peer.buffer.pop_front();
                ++peer.sent;
            }
        }
    }
}

json Rts::stats() const {
    json verticles = json::array();
    {
        std::lock_guard lk(mu_);
        for (const auto& [name, v] : verticles_) verticles.push_back(v->stats_json());
    }
    json peers = json::array();
    std::uint64_t imported = 0;
    std::uint64_t duplicates = 0;
    {
        std::lock_guard lk(router_mu_);
        for (const Peer& p : peers_) {
            peers.push_back({{"system_id", p.endpoint.system_id},
                             {"up", p.up},
                             {"buffered", p.buffer.size()},
                             {"dropped", p.dropped},
                             {"sent", p.sent}});
        }
        imported = imported_;
        duplicates = import_duplicates_;
    }
    std::size_t client_count = 0;
    {
        std::lock_guard lk(mu_);
        client_count = clients_.size();
    }
    return json{{"system_id", opts_.system_id},
                {"bus", bus_.stats()},
                {"verticles", verticles},
                {"feed",
                 {{"broker_messages", feed_taken_.load()},
                  {"feed_events", feed_events_.load()},
                  {"dead_letters", dead_letters_.load()}}},
                {"filer", {{"lines", filer_lines_.load()}, {"errors", filer_errors_.load()}}},
                {"router",
                 {{"peers", peers}, {"imported", imported}, {"duplicates", duplicates}}},
                {"clients", client_count}};
}

void Rts::shutdown() {
    if (shutting_down_.exchange(true)) return;
    std::vector<std::uint64_t> client_ids;
    {
        std::lock_guard lk(mu_);
        for (const auto& [id, token] : clients_) client_ids.push_back(id);
    }
    for (auto id : client_ids) rtmonitor_unsubscribe(id);

    std::map<std::string, std::unique_ptr<VerticleImpl>> taken;
    {
        std::lock_guard lk(mu_);
        taken.swap(verticles_);
    }
    for (auto& [name, v] : taken) {
        for (auto id : v->bus_subs) bus_.unsubscribe(id);
        v->running.store(false);
        if (v->mailbox) v->mailbox->close();
        if (v->broker_sub) v->broker_sub->cancel();
    }
    for (auto& [name, v] : taken) {
        if (v->thread.joinable()) v->thread.join();
    }
}

}  // namespace trellis
