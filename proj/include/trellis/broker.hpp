#pragma once
// In-process topic broker with MQTT-style wildcard filters and
// broker-to-broker bridging. Stands in for the external MQTT daemons, so it
// keeps their semantics: QoS-0, per-topic FIFO, last-will on client drop.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "trellis/core.hpp"

namespace trellis {

using json = nlohmann::json;

struct Topic {
    std::vector<std::string> segments;

    // Splits on '/'. allow_wildcards admits '+' anywhere and '#' as the
    // final segment; publishing topics must stay wildcard-free.
    static Topic parse(std::string_view text, bool allow_wildcards = false);
    std::string str() const;
    bool has_wildcards() const noexcept;
};

// MQTT 3.1.1 rules: '+' spans one level, a trailing '#' spans the parent
// level and everything below it.
bool topic_matches(const Topic& filter, const Topic& topic);

struct BrokerMessage {
    Topic topic;
    std::string payload;
    std::string origin;  // broker id the message entered the mesh on
};

class Subscription {
public:
    Subscription(std::vector<Topic> filters, std::size_t depth);
    Subscription(Topic filter, std::size_t depth);

    const std::vector<Topic>& filters() const noexcept { return filters_; }
    const Topic& filter() const noexcept { return filters_.front(); }
    bool matches(const Topic& topic) const;

    std::optional<BrokerMessage> try_pop();
    // Blocks up to timeout_ms; returns nullopt on timeout or cancellation.
    std::optional<BrokerMessage> pop_wait(int timeout_ms);

    void cancel();
    bool cancelled() const noexcept { return cancelled_.load(); }
    std::uint64_t dropped() const noexcept { return dropped_.load(); }
    std::uint64_t delivered() const noexcept { return delivered_.load(); }
    std::size_t queued() const;

private:
    friend class Broker;
    void push(const BrokerMessage& msg);

    std::vector<Topic> filters_;
    std::size_t depth_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<BrokerMessage> queue_;
    std::atomic<bool> cancelled_{false};
    std::atomic<std::uint64_t> dropped_{0};
    std::atomic<std::uint64_t> delivered_{0};
};

using SubscriptionPtr = std::shared_ptr<Subscription>;

enum class BridgeDirection { in, out, both };

struct BridgeConfig {
    std::string remote;
    std::vector<Topic> filters;
    BridgeDirection direction = BridgeDirection::both;

    static BridgeConfig from_json(const json& j);
};

class Broker;

struct BrokerOptions {
    std::size_t queue_depth = 1024;
};

// One client's attachment to a broker. Dropping the session (or calling
// disconnect) cancels its subscriptions and fires the last-will, if any.
class ClientSession {
public:
    ClientSession(Broker& broker, std::string client_id,
                  std::optional<std::pair<Topic, std::string>> will);
    ~ClientSession();

    SubscriptionPtr subscribe(const std::string& filter);
    void disconnect();

private:
    Broker& broker_;
    std::string client_id_;
    std::optional<std::pair<Topic, std::string>> will_;
    std::vector<SubscriptionPtr> subs_;
    bool connected_ = true;
};

class Broker {
public:
    explicit Broker(std::string id, BrokerOptions opts = {});

    const std::string& id() const noexcept { return id_; }

    // Returns the local delivery count. Throws Err::bad_topic on wildcards.
    std::size_t publish(const Topic& topic, std::string payload);
    std::size_t publish(const std::string& topic, std::string payload);

    SubscriptionPtr subscribe(const Topic& filter);
    SubscriptionPtr subscribe(const std::string& filter);
    // One queue fed by several filters; a message matching more than one
    // filter is still enqueued once.
    SubscriptionPtr subscribe(const std::vector<std::string>& filters);
    void unsubscribe(const SubscriptionPtr& sub);

    std::unique_ptr<ClientSession> connect(
        std::string client_id,
        std::optional<std::pair<Topic, std::string>> will = std::nullopt);

    // Installs forwarding links between this broker and remote per config.
    // Both brokers must outlive the link. Throws Err::duplicate_bridge when
    // the same pair+filters is installed twice in the same direction.
    void bridge(Broker& remote, const BridgeConfig& config);

    json stats() const;

private:
    struct Link {
        Broker* remote;
        std::vector<Topic> filters;
    };

    struct TaggedMessage {
        BrokerMessage msg;
        std::string mesh_id;  // origin broker id + origin sequence
        std::string from;     // broker that handed it to us
    };

    void add_out_link(Broker& remote, std::vector<Topic> filters);
    std::size_t deliver(const TaggedMessage& tagged);
    static bool seen_before(Broker& broker, const std::string& mesh_id);

    std::string id_;
    BrokerOptions opts_;
    std::vector<SubscriptionPtr> subs_;
    std::vector<Link> out_links_;
    std::unordered_set<std::string> seen_;
    std::deque<std::string> seen_order_;
    std::atomic<std::uint64_t> seq_{0};
    std::uint64_t published_ = 0;
    std::uint64_t delivered_ = 0;
    std::uint64_t forwarded_ = 0;
};

}  // namespace trellis
