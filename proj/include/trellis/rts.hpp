#pragma once
// Real-Time Server: an actor-style runtime where verticles exchange JSON
// events over an in-process event bus. Ships the standard pipeline verticles:
// feed handler (broker -> decode -> bus), message filer (bus -> day and
// sensor shards), rtmonitor (client subscriptions with filters) and message
// router (bus -> peer brokers with loop protection).

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "trellis/broker.hpp"
#include "trellis/decoders.hpp"
#include "trellis/envelope.hpp"

namespace trellis {

struct BusEvent {
    std::string address;
    json body;
    Timestamp published_at;
    std::uint64_t seq = 0;   // strictly increasing per address
    bool imported = false;   // arrived from a peer system; never re-forwarded
};

// Bounded FIFO; full queues drop their oldest entry so publishers never block
// on a slow consumer.
class Mailbox {
public:
    explicit Mailbox(std::size_t depth);

    void push(BusEvent ev);
    std::optional<BusEvent> pop(std::chrono::milliseconds wait);
    std::optional<BusEvent> try_pop();
    void close();
    bool closed() const;
    std::uint64_t dropped() const noexcept { return dropped_.load(); }
    std::size_t size() const;

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<BusEvent> q_;
    std::size_t depth_;
    bool closed_ = false;
    std::atomic<std::uint64_t> dropped_{0};
};

class EventBus {
public:
    explicit EventBus(std::size_t default_mailbox_depth = 4096);

    // Exactly-once fan-out to current subscribers of the address. Returns
    // the per-address sequence number assigned to this event.
    std::uint64_t publish(const std::string& address, json body, bool imported = false);

    std::uint64_t subscribe(const std::string& address, std::shared_ptr<Mailbox> mailbox,
                            std::function<bool(const BusEvent&)> predicate = {});
    void unsubscribe(std::uint64_t sub_id);

    std::size_t default_depth() const noexcept { return default_depth_; }
    std::uint64_t published() const noexcept { return published_.load(); }
    json stats() const;

private:
    struct Sub {
        std::uint64_t id;
        std::shared_ptr<Mailbox> mailbox;
        std::function<bool(const BusEvent&)> predicate;
    };

    mutable std::mutex mu_;
    std::unordered_map<std::string, std::vector<Sub>> subs_by_address_;
    std::unordered_map<std::string, std::uint64_t> seq_;
    std::unordered_map<std::uint64_t, std::string> sub_address_;
    std::uint64_t next_sub_id_ = 1;
    std::size_t default_depth_;
    std::atomic<std::uint64_t> published_{0};
};

enum class VerticleClass { ingestion, storage, analysis, outbound };
const char* verticle_class_name(VerticleClass klass);

class Rts;
struct VerticleImpl;

// Handed to handlers; publish() attributes the event to the verticle's
// stats.
class VerticleCtx {
public:
    std::uint64_t publish(const std::string& address, json body);
    Rts& rts() noexcept { return rts_; }

private:
    friend class Rts;
    VerticleCtx(Rts& rts, VerticleImpl& self) : rts_(rts), self_(self) {}
    Rts& rts_;
    VerticleImpl& self_;
};

struct VerticleSpec {
    std::string name;
    VerticleClass klass = VerticleClass::analysis;
    std::vector<std::string> addresses;
    std::function<void(const BusEvent&, VerticleCtx&)> handler;
    std::size_t mailbox_depth = 0;  // 0 = bus default
};

// Client-side stream handle. poll() yields events passing the filter until
// cancelled; cancellation stops delivery immediately.
class RtSubscription {
public:
    std::optional<BusEvent> poll(std::chrono::milliseconds wait);
    void cancel();
    bool cancelled() const;
    std::uint64_t id() const noexcept { return id_; }
    std::uint64_t dropped() const;

private:
    friend class Rts;
    std::uint64_t id_ = 0;
    std::shared_ptr<Mailbox> mailbox_;
    std::function<void(std::uint64_t)> canceller_;
    std::atomic<bool> cancelled_{false};
};

struct RtFilter {
    std::string address;
    // Optional content gates applied before enqueueing to the client.
    std::optional<std::string> acp_id;
    std::optional<std::string> require_cooked_key;
    std::size_t mailbox_depth = 0;  // 0 = system default
};

struct PeerEndpoint {
    std::string system_id;
    Broker* broker = nullptr;
};

struct RtsOptions {
    std::string system_id = "rts";
    std::size_t mailbox_depth = 4096;
    std::size_t max_client_subscriptions = 256;
    std::size_t peer_buffer_cap = 1024;
};

inline constexpr const char* kFeedAddress = "platform.feed";
inline constexpr const char* kSensorAddressPrefix = "sensor.";
inline constexpr const char* kPeerTopic = "peer/feed";

class Rts {
public:
    Rts(Broker& broker, const DecoderManager& decoders, RtsOptions opts = {});
    ~Rts();

    EventBus& bus() noexcept { return bus_; }
    Broker& broker() noexcept { return broker_; }
    const std::string& system_id() const noexcept { return opts_.system_id; }

    // Throws Err::duplicate_name. The verticle's thread starts immediately.
    void deploy(VerticleSpec spec);
    // Throws Err::not_found. Joins the verticle's thread; other verticles
    // keep running undisturbed.
    void undeploy(const std::string& name);
    bool deployed(const std::string& name) const;

    std::uint64_t bus_publish(const std::string& address, json body);

    // Broker -> decode -> platform.feed + sensor.<acp_id>; failures go to
    // the dead-letter topic and never onto the bus.
    void start_feed_handler(const std::vector<std::string>& topic_filters);

    // platform.feed -> data/YYYY/MM/DD.ndjson and
    // sensors/<acp_id>/YYYY-MM-DD.ndjson under root, sharded by the UTC day
    // of acp_ts. Write errors only surface in stats.
    void start_message_filer(const std::filesystem::path& root);

    // Throws Err::too_many_subscriptions past the configured cap.
    std::shared_ptr<RtSubscription> rtmonitor_subscribe(const RtFilter& filter);
    void rtmonitor_unsubscribe(std::uint64_t token_id);

    // Re-publishes the given bus addresses to every peer broker; peers
    // import on kPeerTopic. Loop topologies deliver once per system.
    void start_message_router(std::vector<PeerEndpoint> peers,
                              std::vector<std::string> addresses = {kFeedAddress});
    void set_peer_up(const std::string& system_id, bool up);

    json stats() const;
    void shutdown();

    // Pipeline stage probes for the latency harness. Called with the
    // envelope body right after broker receipt and at bus hand-off just
    // before the publish, with a wall-clock nanosecond stamp.
    std::function<void(const json& body, const char* stage, std::int64_t nanos)> stage_tap;

    std::uint64_t feed_events() const noexcept { return feed_events_.load(); }
    std::uint64_t dead_letters() const noexcept { return dead_letters_.load(); }
    std::uint64_t broker_messages_taken() const noexcept { return feed_taken_.load(); }

private:
    struct Peer {
        PeerEndpoint endpoint;
        bool up = true;
        std::deque<std::string> buffer;
        std::uint64_t dropped = 0;
        std::uint64_t sent = 0;
    };

    void forward_to_peers(const json& wrapper);
    void run_feed_loop(SubscriptionPtr sub);
    void run_import_loop(SubscriptionPtr sub);
    VerticleImpl& deploy_locked(VerticleSpec spec);

    Broker& broker_;
    const DecoderManager& decoders_;
    RtsOptions opts_;
    EventBus bus_;

    mutable std::mutex mu_;
    std::map<std::string, std::unique_ptr<VerticleImpl>> verticles_;
    std::unordered_map<std::uint64_t, std::shared_ptr<RtSubscription>> clients_;

    mutable std::mutex router_mu_;
    std::vector<Peer> peers_;
    std::uint64_t route_seq_ = 0;
    std::unordered_set<std::string> routes_seen_;
    std::deque<std::string> routes_seen_order_;
    std::uint64_t import_duplicates_ = 0;
    std::uint64_t imported_ = 0;

    std::atomic<std::uint64_t> feed_taken_{0};
    std::atomic<std::uint64_t> feed_events_{0};
    std::atomic<std::uint64_t> dead_letters_{0};
    std::atomic<std::uint64_t> filer_errors_{0};
    std::atomic<std::uint64_t> filer_lines_{0};

    std::atomic<bool> shutting_down_{false};
};

Timestamp wallclock_now();
std::int64_t wallclock_nanos();

}  // namespace trellis
