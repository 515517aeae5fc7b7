#include "trellis/broker.hpp"

#include <algorithm>

namespace trellis {

namespace {

// One process-wide delivery lock. Brokers form a mesh that can forward
// re-entrantly (rings, diamonds); a single recursive mutex gives a global
// serial order, which keeps per-topic FIFO intact across bridges and makes
// deadlock impossible. Subscription queues have their own locks, so slow
// consumers never hold this one.
std::recursive_mutex g_mesh_mu;

constexpr std::size_t kSeenCap = 65536;

}  // namespace

Topic Topic::parse(std::string_view text, bool allow_wildcards) {
    if (text.empty()) throw Error(Err::bad_topic, "empty topic");
    Topic t;
    std::size_t start = 0;
    while (true) {
        std::size_t slash = text.find('/', start);
        std::string_view seg = text.substr(start, slash == std::string_view::npos
                                                      ? std::string_view::npos
                                                      : slash - start);
        if (seg.empty()) throw Error(Err::bad_topic, "empty topic segment in '" + std::string(text) + "'");
        bool has_plus = seg.find('+') != std::string_view::npos;
        bool has_hash = seg.find('#') != std::string_view::npos;
        if (has_plus && seg != "+")
            throw Error(Err::bad_topic, "'+' must span a whole segment");
        if (has_hash && seg != "#")
            throw Error(Err::bad_topic, "'#' must span a whole segment");
        if (!allow_wildcards && (has_plus || has_hash))
            throw Error(Err::bad_topic, "wildcards not allowed here: '" + std::string(text) + "'");
        if (seg == "#" && slash != std::string_view::npos)
            throw Error(Err::bad_topic, "'#' must be the final segment");
        t.segments.emplace_back(seg);
        if (slash == std::string_view::npos) break;
        start = slash + 1;
        if (start == text.size()) throw Error(Err::bad_topic, "trailing '/'");
    }
    return t;
}

std::string Topic::str() const {
    std::string out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (i) out.push_back('/');
        out += segments[i];
    }
    return out;
}

bool Topic::has_wildcards() const noexcept {
    for (const auto& s : segments)
        if (s == "+" || s == "#") return true;
    return false;
}

bool topic_matches(const Topic& filter, const Topic& topic) {
    std::size_t i = 0;
    for (; i < filter.segments.size(); ++i) {
        const std::string& f = filter.segments[i];
        if (f == "#") return true;
        if (i >= topic.segments.size()) return false;
        if (f != "+" && f != topic.segments[i]) return false;
    }
    return i == topic.segments.size();
}

Subscription::Subscription(std::vector<Topic> filters, std::size_t depth)
    : filters_(std::move(filters)), depth_(depth) {}

Subscription::Subscription(Topic filter, std::size_t depth)
    : Subscription(std::vector<Topic>{std::move(filter)}, depth) {}

bool Subscription::matches(const Topic& topic) const {
    for (const auto& f : filters_)
        if (topic_matches(f, topic)) return true;
    return false;
}

void Subscription::push(const BrokerMessage& msg) {
    {
        std::lock_guard lk(mu_);
        if (queue_.size() >= depth_) {
            queue_.pop_front();
            dropped_.fetch_add(1);
        }
        queue_.push_back(msg);
        delivered_.fetch_add(1);
    }
    cv_.notify_one();
}

std::optional<BrokerMessage> Subscription::try_pop() {
    std::lock_guard lk(mu_);
    if (queue_.empty()) return std::nullopt;
    BrokerMessage msg = std::move(queue_.front());
    queue_.pop_front();
    return msg;
}

std::optional<BrokerMessage> Subscription::pop_wait(int timeout_ms) {
    std::unique_lock lk(mu_);
    cv_.wait_for(lk, std::chrono::milliseconds(timeout_ms),
                 [&] { return !queue_.empty() || cancelled_.load(); });
    if (queue_.empty()) return std::nullopt;
    BrokerMessage msg = std::move(queue_.front());
    queue_.pop_front();
    return msg;
}

void Subscription::cancel() {
    cancelled_.store(true);
    cv_.notify_all();
}

std::size_t Subscription::queued() const {
    std::lock_guard lk(mu_);
    return queue_.size();
}

BridgeConfig BridgeConfig::from_json(const json& j) {
    BridgeConfig cfg;
    cfg.remote = j.at("remote").get<std::string>();
    for (const auto& f : j.value("filters", json::array()))
        cfg.filters.push_back(Topic::parse(f.get<std::string>(), true));
    std::string dir = j.value("direction", "both");
    if (dir == "in")
        cfg.direction = BridgeDirection::in;
    else if (dir == "out")
        cfg.direction = BridgeDirection::out;
    else
        cfg.direction = BridgeDirection::both;
    return cfg;
}

ClientSession::ClientSession(Broker& broker, std::string client_id,
                             std::optional<std::pair<Topic, std::string>> will)
    : broker_(broker), client_id_(std::move(client_id)), will_(std::move(will)) {}

ClientSession::~ClientSession() { disconnect(); }

SubscriptionPtr ClientSession::subscribe(const std::string& filter) {
    auto sub = broker_.subscribe(filter);
    subs_.push_back(sub);
    return sub;
}

void ClientSession::disconnect() {
    if (!connected_) return;
    connected_ = false;
    for (auto& sub : subs_) broker_.unsubscribe(sub);
    subs_.clear();
    if (will_) broker_.publish(will_->first, will_->second);
}

Broker::Broker(std::string id, BrokerOptions opts) : id_(std::move(id)), opts_(opts) {}

std::size_t Broker::publish(const Topic& topic, std::string payload) {
    if (topic.has_wildcards())
        throw Error(Err::bad_topic, "cannot publish to a wildcard topic");
    std::lock_guard lk(g_mesh_mu);
    TaggedMessage tagged;
    tagged.msg.topic = topic;
    tagged.msg.payload = std::move(payload);
    tagged.msg.origin = id_;
    tagged.mesh_id = id_ + "#" + std::to_string(seq_.fetch_add(1));
    ++published_;
    return deliver(tagged);
}

std::size_t Broker::publish(const std::string& topic, std::string payload) {
    return publish(Topic::parse(topic), std::move(payload));
}

bool Broker::seen_before(Broker& broker, const std::string& mesh_id) {
    if (broker.seen_.count(mesh_id)) return true;
    broker.seen_.insert(mesh_id);
    broker.seen_order_.push_back(mesh_id);
    if (broker.seen_order_.size() > kSeenCap) {
        broker.seen_.erase(broker.seen_order_.front());
        broker.seen_order_.pop_front();
    }
    return false;
}

std::size_t Broker::deliver(const TaggedMessage& tagged) {
    if (seen_before(*this, tagged.mesh_id)) return 0;
    std::size_t count = 0;
    bool prune = false;
    for (auto& sub : subs_) {
        if (sub->cancelled()) {
            prune = true;
            continue;
        }
        if (sub->matches(tagged.msg.topic)) {
            sub->push(tagged.msg);
            ++count;
        }
    }
    if (prune) {
        subs_.erase(std::remove_if(subs_.begin(), subs_.end(),
                                   [](const SubscriptionPtr& s) { return s->cancelled(); }),
                    subs_.end());
    }
    delivered_ += count;
    for (auto& link : out_links_) {
        if (link.remote->id() == tagged.from) continue;  // loop guard
        bool matched = false;
        for (const auto& f : link.filters) {
            if (topic_matches(f, tagged.msg.topic)) {
                matched = true;
                break;
            }
        }
        if (!matched) continue;
        TaggedMessage fwd = tagged;
        fwd.from = id_;
        ++forwarded_;
        link.remote->deliver(fwd);
    }
    return count;
}

SubscriptionPtr Broker::subscribe(const Topic& filter) {
    auto sub = std::make_shared<Subscription>(filter, opts_.queue_depth);
    std::lock_guard lk(g_mesh_mu);
    subs_.push_back(sub);
    return sub;
}

SubscriptionPtr Broker::subscribe(const std::string& filter) {
    return subscribe(Topic::parse(filter, true));
}

SubscriptionPtr Broker::subscribe(const std::vector<std::string>& filters) {
    if (filters.empty()) throw Error(Err::bad_topic, "subscription needs at least one filter");
    std::vector<Topic> parsed;
    parsed.reserve(filters.size());
    for (const auto& f : filters) parsed.push_back(Topic::parse(f, true));
    auto sub = std::make_shared<Subscription>(std::move(parsed), opts_.queue_depth);
    std::lock_guard lk(g_mesh_mu);
    subs_.push_back(sub);
    return sub;
}

void Broker::unsubscribe(const SubscriptionPtr& sub) {
    if (!sub) return;
    sub->cancel();
    std::lock_guard lk(g_mesh_mu);
    subs_.erase(std::remove(subs_.begin(), subs_.end(), sub), subs_.end());
}

std::unique_ptr<ClientSession> Broker::connect(
    std::string client_id, std::optional<std::pair<Topic, std::string>> will) {
    return std::make_unique<ClientSession>(*this, std::move(client_id), std::move(will));
}

void Broker::add_out_link(Broker& remote, std::vector<Topic> filters) {
    auto same_filters = [&](const Link& link) {
        if (link.remote != &remote || link.filters.size() != filters.size()) return false;
        for (std::size_t i = 0; i < filters.size(); ++i)
            if (link.filters[i].str() != filters[i].str()) return false;
        return true;
    };
    for (const auto& link : out_links_) {
        if (same_filters(link))
            throw Error(Err::duplicate_bridge,
                        "bridge " + id_ + " -> " + remote.id() + " already installed");
    }
    out_links_.push_back(Link{&remote, std::move(filters)});
}

void Broker::bridge(Broker& remote, const BridgeConfig& config) {
    std::lock_guard lk(g_mesh_mu);
    if (config.direction == BridgeDirection::out || config.direction == BridgeDirection::both)
        add_out_link(remote, config.filters);
    if (config.direction == BridgeDirection::in || config.direction == BridgeDirection::both)
        remote.add_out_link(*this, config.filters);
}

json Broker::stats() const {
    std::lock_guard lk(g_mesh_mu);
    json subs = json::array();
    for (const auto& sub : subs_) {
        json filters = json::array();
        for (const auto& f : sub->filters()) filters.push_back(f.str());
        subs.push_back({{"filters", filters},
                        {"queued", sub->queued()},
                        {"delivered", sub->delivered()},
                        {"dropped", sub->dropped()}});
    }
    return json{{"id", id_},
                {"published", published_},
                {"delivered", delivered_},
                {"forwarded", forwarded_},
                {"subscriptions", subs}};
}

}  // namespace trellis
