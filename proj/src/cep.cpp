#include "trellis/cep.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <set>

namespace trellis {

namespace {

constexpr std::size_t kBaselineCap = 512;   // retained samples older than the window
constexpr std::size_t kFeedbackCap = 1024;  // complex facts re-processed per ingest

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

bool all_equal(const std::vector<double>& v) {
    return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
}

// Shortest decimal that strtod parses back to exactly d.
std::string format_double(double d) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, d);
        if (std::strtod(buf, nullptr) == d) return buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

}  // namespace

// ---- pure scoring -------------------------------------------------------

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw Error(Err::length_mismatch, "pearson: series lengths differ");
    if (x.size() < 2) throw Error(Err::too_few_samples, "pearson: needs at least 2 pairs");
    if (all_equal(x) || all_equal(y)) return {0.0, true};
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return {0.0, true};
    return {sxy / std::sqrt(sxx * syy), false};
}

double divergence_score(const std::vector<double>& window, const std::vector<double>& baseline) {
    if (baseline.size() < 10)
        throw Error(Err::too_few_samples, "divergence_score: baseline needs >= 10 samples");
    if (window.size() < 3)
        throw Error(Err::too_few_samples, "divergence_score: window needs >= 3 samples");
    const double mb = mean_of(baseline);
    double var = 0.0;
    for (double b : baseline) var += (b - mb) * (b - mb);
    var /= static_cast<double>(baseline.size());
    return std::fabs(mean_of(window) - mb) / (std::sqrt(var) + 1e-9);
}

std::tuple<int, int, int> temporal_params(const Timestamp& ts) {
    const CivilTime ct = civil_from_timestamp(ts);
    return {ct.month, ct.day, ct.hour};
}

// ---- atomic detection ----------------------------------------------------

std::vector<AtomicEvent> StatisticalDetector::detect(const FeatureVector& fv,
                                                     const Timestamp& now) const {
    if (fv.X.size() < 3 || fv.baseline.size() < 10) return {};
    const double score = divergence_score(fv.X, fv.baseline);
    if (!(score > theta_)) return {};
    if (!fv.C.empty()) {
        double sum = 0.0;
        for (double c : fv.C) sum += std::fabs(c);
        if (sum / static_cast<double>(fv.C.size()) < c_min_) return {};
    }
    AtomicEvent ev;
    ev.e = fv.feature + "_DIVERGE";
    ev.t = now;
    ev.v = fv.X.back();
    ev.s = fv.sensor;
    ev.confidence = std::min(1.0, score / (2.0 * theta_));
    return {ev};
}

std::vector<AtomicEvent> detect_atomic(const FeatureVector& fv, const Detector& detector,
                                       const Timestamp& now) {
    return detector.detect(fv, now);
}

// ---- rule text -------------------------------------------------------------

const char* cmp_op_text(CmpOp op) {
    switch (op) {
        case CmpOp::lt: return "<";
        case CmpOp::le: return "<=";
        case CmpOp::gt: return ">";
        case CmpOp::ge: return ">=";
    }
    return "<";
}

bool cmp_apply(CmpOp op, double lhs, double rhs) {
    switch (op) {
        case CmpOp::lt: return lhs < rhs;
        case CmpOp::le: return lhs <= rhs;
        case CmpOp::gt: return lhs > rhs;
        case CmpOp::ge: return lhs >= rhs;
    }
    return false;
}

std::string Rule::pretty() const {
    std::string out = "complex " + name + " <= ";
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (i) out += " & ";
        out += terms[i].event_id + "(" + terms[i].var + ")";
    }
    for (const auto& tc : temporal)
        out += " & t(" + tc.before_var + ") < t(" + tc.after_var + ")";
    for (const auto& vc : values)
        out += " & val(" + vc.var + ") " + cmp_op_text(vc.op) + " " + format_double(vc.threshold);
    if (spatial.kind == SpatialKind::distance)
        out += " & dist(" + spatial.a + "," + spatial.b + ") < " +
               format_double(spatial.max_distance_m);
    else if (spatial.kind == SpatialKind::same_crate)
        out += " & samecrate(" + spatial.a + "," + spatial.b + ")";
    return out;
}

namespace {

// Single-line recursive-descent scanner. Columns are 1-based.
class RuleScanner {
public:
    RuleScanner(const std::string& line, int line_no) : s_(line), line_no_(line_no) {}

    [[noreturn]] void fail(std::size_t col, const std::string& msg) const {
        throw Error(Err::parse_error, "line " + std::to_string(line_no_) + ", col " +
                                          std::to_string(col) + ": " + msg);
    }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }

    bool at_end() {
        skip_ws();
        return pos_ >= s_.size();
    }

    std::size_t col() const { return pos_ + 1; }

    bool try_char(char c) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect_char(char c, const char* what) {
        if (!try_char(c)) fail(col(), std::string("expected '") + c + "' " + what);
    }

    std::string ident(const char* what) {
        skip_ws();
        const std::size_t start = pos_;
        if (pos_ >= s_.size() || !(std::isalpha(static_cast<unsigned char>(s_[pos_])) ||
                                   s_[pos_] == '_'))
            fail(col(), std::string("expected ") + what);
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) ||
                                    s_[pos_] == '_'))
            ++pos_;
        return s_.substr(start, pos_ - start);
    }

    double number() {
        skip_ws();
        const char* begin = s_.c_str() + pos_;
        char* end = nullptr;
        const double v = std::strtod(begin, &end);
        if (end == begin) fail(col(), "expected a number");
        pos_ += static_cast<std::size_t>(end - begin);
        return v;
    }

    CmpOp cmp_op() {
        skip_ws();
        if (try_char('<')) return try_char('=') ? CmpOp::le : CmpOp::lt;
        if (try_char('>')) return try_char('=') ? CmpOp::ge : CmpOp::gt;
        fail(col(), "expected a comparison operator");
    }

private:
    const std::string& s_;
    int line_no_;
    std::size_t pos_ = 0;
};

bool is_reserved(const std::string& word) {
    return word == "t" || word == "val" || word == "dist" || word == "samecrate" ||
           word == "complex";
}

Rule parse_rule_line(const std::string& line, int line_no) {
    RuleScanner sc(line, line_no);
    Rule rule;

    const std::size_t kw_col = sc.col();
    if (sc.ident("keyword 'complex'") != "complex") sc.fail(kw_col, "rule must start with 'complex'");
    rule.name = sc.ident("rule name");
    sc.expect_char('<', "after the rule name");
    sc.expect_char('=', "after the rule name");
    rule.id = rule.name;

    std::set<std::string> declared;
    bool first_clause = true;
    while (first_clause || sc.try_char('&')) {
        first_clause = false;
        const std::size_t clause_col = sc.col();
        const std::string head = sc.ident("an event id or constraint");
        if (head == "t") {
            sc.expect_char('(', "after 't'");
            const std::size_t a_col = sc.col();
            TemporalConstraint tc;
            tc.before_var = sc.ident("a term variable");
            sc.expect_char(')', "after the variable");
            sc.expect_char('<', "between t() references");
            const std::size_t b_kw = sc.col();
            if (sc.ident("'t'") != "t") sc.fail(b_kw, "expected t(...) on the right side");
            sc.expect_char('(', "after 't'");
            const std::size_t b_col = sc.col();
            tc.after_var = sc.ident("a term variable");
            sc.expect_char(')', "after the variable");
            if (!declared.count(tc.before_var)) sc.fail(a_col, "unknown variable " + tc.before_var);
            if (!declared.count(tc.after_var)) sc.fail(b_col, "unknown variable " + tc.after_var);
            rule.temporal.push_back(std::move(tc));
        } else if (head == "val") {
            sc.expect_char('(', "after 'val'");
            const std::size_t v_col = sc.col();
            ValueConstraint vc;
            vc.var = sc.ident("a term variable");
            sc.expect_char(')', "after the variable");
            vc.op = sc.cmp_op();
            vc.threshold = sc.number();
            if (!declared.count(vc.var)) sc.fail(v_col, "unknown variable " + vc.var);
            rule.values.push_back(std::move(vc));
        } else if (head == "dist" || head == "samecrate") {
            if (rule.spatial.kind != SpatialKind::none)
                sc.fail(clause_col, "at most one spatial constraint per rule");
            sc.expect_char('(', "after the spatial keyword");
            const std::size_t a_col = sc.col();
            rule.spatial.a = sc.ident("a term variable");
            sc.expect_char(',', "between the variables");
            const std::size_t b_col = sc.col();
            rule.spatial.b = sc.ident("a term variable");
            sc.expect_char(')', "after the variables");
            if (!declared.count(rule.spatial.a)) sc.fail(a_col, "unknown variable " + rule.spatial.a);
            if (!declared.count(rule.spatial.b)) sc.fail(b_col, "unknown variable " + rule.spatial.b);
            if (head == "dist") {
                rule.spatial.kind = SpatialKind::distance;
                sc.expect_char('<', "after dist(...)");
                rule.spatial.max_distance_m = sc.number();
            } else {
                rule.spatial.kind = SpatialKind::same_crate;
            }
        } else {
            if (is_reserved(head)) sc.fail(clause_col, "'" + head + "' cannot name an event");
            RuleTerm term;
            term.event_id = head;
            sc.expect_char('(', "after the event id");
            const std::size_t v_col = sc.col();
            term.var = sc.ident("a variable name");
            sc.expect_char(')', "after the variable");
            if (is_reserved(term.var)) sc.fail(v_col, "'" + term.var + "' is reserved");
            if (!declared.insert(term.var).second)
                sc.fail(v_col, "variable " + term.var + " declared twice");
            rule.terms.push_back(std::move(term));
        }
    }
    if (!sc.at_end()) sc.fail(sc.col(), "unexpected trailing input");
    if (rule.terms.empty()) sc.fail(1, "rule has no event terms");
    return rule;
}

}  // namespace

Rule parse_rule(const std::string& line) { return parse_rule_line(line, 1); }

std::vector<Rule> parse_rules(const std::string& text) {
    std::vector<Rule> rules;
    std::size_t start = 0;
    int line_no = 0;
    while (start <= text.size()) {
        std::size_t eol = text.find('\n', start);
        if (eol == std::string::npos) eol = text.size();
        std::string line = text.substr(start, eol - start);
        ++line_no;
        start = eol + 1;
        std::size_t i = 0;
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        if (i >= line.size() || line[i] == '#') continue;
        rules.push_back(parse_rule_line(line, line_no));
        if (eol == text.size()) break;
    }
    return rules;
}

// ---- facts and complex events ---------------------------------------------

Fact Fact::from_atomic(const AtomicEvent& ev) {
    Fact f;
    f.e = ev.e;
    f.t = ev.t;
    f.v = ev.v;
    f.sensors = {ev.s};
    f.confidence = ev.confidence;
    f.complex = false;
    return f;
}

json ComplexEvent::to_json() const {
    return json{{"acp_event", e},
                {"acp_ts", t.str()},
                {"sensor_ids", sensor_ids},
                {"acp_confidence", confidence}};
}

FactWindow::FactWindow(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw Error(Err::invalid_argument, "fact window capacity must be positive");
}

std::optional<Fact> FactWindow::push(Fact fact) {
    std::optional<Fact> evicted;
    if (facts_.size() == capacity_) {
        evicted = std::move(facts_.front());
        facts_.pop_front();
    }
    facts_.push_back(std::move(fact));
    return evicted;
}

// ---- engine ----------------------------------------------------------------

CepEngine::CepEngine(Options opts, std::shared_ptr<const Detector> detector)
    : opts_(std::move(opts)), detector_(std::move(detector)), window_(opts_.window_capacity) {
    if (!(opts_.vicinity.omega_seconds > 0.0))
        throw Error(Err::invalid_argument, "vicinity window must be positive");
    if (opts_.vicinity.min_overlap < 2)
        throw Error(Err::invalid_argument, "min_overlap must be at least 2");
    if (opts_.binding_cap == 0)
        throw Error(Err::invalid_argument, "binding cap must be positive");
    if (!detector_) throw Error(Err::invalid_argument, "detector required");
}

void CepEngine::load_rules(std::vector<Rule> rules) {
    std::stable_sort(rules.begin(), rules.end(),
                     [](const Rule& a, const Rule& b) { return a.id < b.id; });
    rules_ = std::move(rules);
}

void CepEngine::set_geo(std::map<std::string, SensorGeo> geo) { geo_ = std::move(geo); }

std::vector<double> CepEngine::window_values(const SeriesState& st, const Timestamp& now) const {
    const std::int64_t cutoff =
        now.unix_nanos() - static_cast<std::int64_t>(opts_.vicinity.omega_seconds * 1e9);
    std::vector<double> out;
    for (const auto& [t, v] : st.samples)
        if (t.unix_nanos() >= cutoff && !(now < t)) out.push_back(v);
    return out;
}

std::vector<double> CepEngine::baseline_values(const SeriesState& st, const Timestamp& now) const {
    const std::int64_t cutoff =
        now.unix_nanos() - static_cast<std::int64_t>(opts_.vicinity.omega_seconds * 1e9);
    std::vector<double> out;
    for (const auto& [t, v] : st.samples) {
        if (t.unix_nanos() >= cutoff) break;  // samples are time ordered
        out.push_back(v);
    }
    return out;
}

std::vector<ComplexEvent> CepEngine::ingest(const std::string& sensor,
                                            const std::string& sensor_type,
                                            const std::string& feature, double value,
                                            const Timestamp& ts) {
    auto& st = series_[{sensor, feature}];
    st.sensor_type = sensor_type;
    // Keep the series time ordered; late samples slot in from the back.
    auto it = st.samples.end();
    while (it != st.samples.begin() && ts < std::prev(it)->first) --it;
    st.samples.insert(it, {ts, value});

    // Trim retained history: everything older than the window beyond the cap.
    const std::int64_t cutoff =
        ts.unix_nanos() - static_cast<std::int64_t>(opts_.vicinity.omega_seconds * 1e9);
    std::size_t older = 0;
    for (const auto& [t, v] : st.samples) {
        if (t.unix_nanos() >= cutoff) break;
        ++older;
    }
    while (older > kBaselineCap) {
        st.samples.pop_front();
        --older;
    }

    FeatureVector fv;
    fv.sensor = sensor;
    fv.sensor_type = sensor_type;
    fv.feature = feature;
    fv.X = window_values(st, ts);
    fv.baseline = baseline_values(st, ts);
    fv.C = correlation_vector(sensor, feature, ts);
    std::tie(fv.m, fv.d, fv.h) = temporal_params(ts);

    std::vector<ComplexEvent> out;
    std::deque<Fact> pending;
    for (const AtomicEvent& ev : detector_->detect(fv, ts)) {
        ++atomic_events_;
        pending.push_back(Fact::from_atomic(ev));
    }
    std::size_t processed = 0;
    while (!pending.empty()) {
        if (++processed > kFeedbackCap) {
            ++feedback_truncated_;
            break;
        }
        Fact f = std::move(pending.front());
        pending.pop_front();
        assert_fact(std::move(f));
        for (ComplexEvent& ev : evaluate(window_.facts().back())) {
            Fact fb;
            fb.e = ev.e;
            fb.t = ev.t;
            fb.sensors = ev.sensor_ids;
            fb.confidence = ev.confidence;
            fb.complex = true;
            pending.push_back(std::move(fb));
            out.push_back(std::move(ev));
        }
    }
    return out;
}

std::optional<Fact> CepEngine::assert_fact(Fact fact) {
    fact.uid = next_uid_++;
    ++facts_asserted_;
    return window_.push(std::move(fact));
}

std::vector<ComplexEvent> CepEngine::evaluate(const Fact& new_fact) {
    std::vector<ComplexEvent> out;
    std::uint64_t budget = opts_.binding_cap;
    for (const Rule& rule : rules_) {
        if (budget == 0) break;
        match_rule(rule, new_fact, &budget, out);
    }
    if (budget == 0) ++binding_overflows_;
    return out;
}

bool CepEngine::spatial_ok(const SpatialConstraint& sc,
                           const std::map<std::string, const Fact*>& binding) const {
    if (sc.kind == SpatialKind::none) return true;
    const Fact* fa = binding.at(sc.a);
    const Fact* fb = binding.at(sc.b);
    if (fa->sensors.size() != 1 || fb->sensors.size() != 1) return false;
    const auto ga = geo_.find(fa->sensors.front());
    const auto gb = geo_.find(fb->sensors.front());
    if (ga == geo_.end() || gb == geo_.end()) return false;
    if (sc.kind == SpatialKind::same_crate)
        return ga->second.parent_crate && gb->second.parent_crate &&
               *ga->second.parent_crate == *gb->second.parent_crate;
    if (ga->second.building != gb->second.building) return false;
    const double dx = ga->second.x - gb->second.x;
    const double dy = ga->second.y - gb->second.y;
    const double dz = ga->second.z - gb->second.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz) < sc.max_distance_m;
}

void CepEngine::match_rule(const Rule& rule, const Fact& new_fact, std::uint64_t* budget,
                           std::vector<ComplexEvent>& out) {
    const std::size_t n = rule.terms.size();
    std::vector<const Fact*> bound(n, nullptr);

    auto constraints_ok = [&](bool complete) {
        std::map<std::string, const Fact*> by_var;
        for (std::size_t i = 0; i < n; ++i)
            if (bound[i]) by_var[rule.terms[i].var] = bound[i];
        for (const auto& vc : rule.values) {
            auto it = by_var.find(vc.var);
            if (it == by_var.end()) continue;
            if (!it->second->v || !cmp_apply(vc.op, *it->second->v, vc.threshold)) return false;
        }
        for (const auto& tc : rule.temporal) {
            auto a = by_var.find(tc.before_var);
            auto b = by_var.find(tc.after_var);
            if (a == by_var.end() || b == by_var.end()) continue;
            if (!(a->second->t < b->second->t)) return false;
        }
        if (complete) {
            if (rule.spatial.kind != SpatialKind::none && !spatial_ok(rule.spatial, by_var))
                return false;
            if (rule.max_span_seconds) {
                std::int64_t lo = std::numeric_limits<std::int64_t>::max();
                std::int64_t hi = std::numeric_limits<std::int64_t>::min();
                for (std::size_t i = 0; i < n; ++i) {
                    const std::int64_t t = bound[i]->t.unix_nanos();
                    lo = std::min(lo, t);
                    hi = std::max(hi, t);
                }
                if (static_cast<double>(hi - lo) > *rule.max_span_seconds * 1e9) return false;
            }
        }
        return true;
    };

    auto emit = [&] {
        ComplexEvent ev;
        ev.e = rule.name;
        ev.rule_id = rule.id;
        ev.t = new_fact.t;
        std::set<std::string> sensors;
        double conf = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            ev.matched.push_back(bound[i]->uid);
            sensors.insert(bound[i]->sensors.begin(), bound[i]->sensors.end());
            conf = std::min(conf, bound[i]->confidence);
        }
        ev.sensor_ids.assign(sensors.begin(), sensors.end());
        ev.confidence = conf;
        ++complex_events_;
        out.push_back(ev);
        if (on_complex) on_complex(out.back());
    };

    // Anchor new_fact at each term it can satisfy; every other position draws
    // from the rest of the window, so each binding is enumerated exactly once.
    for (std::size_t anchor = 0; anchor < n; ++anchor) {
        if (*budget == 0) return;
        if (rule.terms[anchor].event_id != new_fact.e) continue;
        bound.assign(n, nullptr);
        bound[anchor] = &new_fact;
        if (!constraints_ok(n == 1)) continue;
        if (n == 1) {
            emit();
            continue;
        }

        std::vector<std::uint64_t> used{new_fact.uid};
        std::function<bool(std::size_t)> descend = [&](std::size_t pos) -> bool {
            if (pos == n) {
                emit();
                return true;
            }
            if (pos == anchor) return descend(pos + 1);
            for (const Fact& cand : window_.facts()) {
                if (cand.e != rule.terms[pos].event_id) continue;
                if (std::find(used.begin(), used.end(), cand.uid) != used.end()) continue;
                if (*budget == 0) return false;
                --*budget;
                ++bindings_explored_;
                bound[pos] = &cand;
                if (constraints_ok(pos + 1 == n ||
                                   (pos + 1 == anchor && anchor + 1 == n))) {
                    used.push_back(cand.uid);
                    const bool keep_going = descend(pos + 1 == anchor ? pos + 2 : pos + 1);
                    used.pop_back();
                    if (!keep_going) {
                        bound[pos] = nullptr;
                        return false;
                    }
                }
                bound[pos] = nullptr;
            }
            return true;
        };
        descend(anchor == 0 ? 1 : 0);
    }
}

std::vector<double> CepEngine::correlation_vector(const std::string& sensor,
                                                  const std::string& feature,
                                                  const Timestamp& now) const {
    const auto self_it = series_.find({sensor, feature});
    if (self_it == series_.end()) return {};
    const std::int64_t now_ns = now.unix_nanos();
    const std::int64_t cutoff =
        now_ns - static_cast<std::int64_t>(opts_.vicinity.omega_seconds * 1e9);

    std::vector<std::pair<std::int64_t, double>> self_win;
    for (const auto& [t, v] : self_it->second.samples) {
        const std::int64_t tn = t.unix_nanos();
        if (tn >= cutoff && tn <= now_ns) self_win.push_back({tn, v});
    }
    if (self_win.empty()) return {};

    std::vector<std::string> vicinity;
    const auto& cfg = opts_.vicinity;
    if (cfg.mode == VicinityConfig::Mode::explicit_list) {
        for (const auto& id : cfg.sensors)
            if (id != sensor) vicinity.push_back(id);
    } else {
        const auto self_geo = geo_.find(sensor);
        if (self_geo == geo_.end()) return {};
        for (const auto& [id, g] : geo_) {
            if (id == sensor) continue;
            if (cfg.mode == VicinityConfig::Mode::same_crate) {
                if (self_geo->second.parent_crate && g.parent_crate &&
                    *self_geo->second.parent_crate == *g.parent_crate)
                    vicinity.push_back(id);
            } else {
                if (g.building != self_geo->second.building) continue;
                const double dx = g.x - self_geo->second.x;
                const double dy = g.y - self_geo->second.y;
                const double dz = g.z - self_geo->second.z;
                if (std::sqrt(dx * dx + dy * dy + dz * dz) <= cfg.radius_m) vicinity.push_back(id);
            }
        }
    }
    if (vicinity.empty()) return {};

    const std::int64_t slack =
        static_cast<std::int64_t>(cfg.omega_seconds * 1e9 / static_cast<double>(self_win.size()));
    std::vector<double> out;
    for (const auto& id : vicinity) {
        const auto other_it = series_.find({id, feature});
        if (other_it == series_.end()) continue;
        std::vector<std::pair<std::int64_t, double>> other_win;
        for (const auto& [t, v] : other_it->second.samples) {
            const std::int64_t tn = t.unix_nanos();
            if (tn >= cutoff && tn <= now_ns) other_win.push_back({tn, v});
        }
        if (other_win.empty()) continue;
        std::vector<double> xs, ys;
        for (const auto& [tn, v] : self_win) {
            // Nearest neighbour by timestamp; other_win is ascending.
            auto lo = std::lower_bound(other_win.begin(), other_win.end(),
                                       std::make_pair(tn, -std::numeric_limits<double>::max()));
            std::int64_t best = std::numeric_limits<std::int64_t>::max();
            double val = 0.0;
            if (lo != other_win.end() && std::llabs(lo->first - tn) < best) {
                best = std::llabs(lo->first - tn);
                val = lo->second;
            }
            if (lo != other_win.begin()) {
                auto prev = std::prev(lo);
                if (std::llabs(prev->first - tn) < best) {
                    best = std::llabs(prev->first - tn);
                    val = prev->second;
                }
            }
            if (best <= slack) {
                xs.push_back(v);
                ys.push_back(val);
            }
        }
        if (xs.size() < cfg.min_overlap) continue;
        const PearsonResult pr = pearson(xs, ys);
        out.push_back(pr.flat ? 0.0 : pr.r);
    }
    return out;
}

json CepEngine::stats() const {
    return json{{"rules", rules_.size()},
                {"window_size", window_.facts().size()},
                {"window_capacity", window_.capacity()},
                {"facts_asserted", facts_asserted_},
                {"atomic_events", atomic_events_},
                {"complex_events", complex_events_},
                {"bindings_explored", bindings_explored_},
                {"binding_overflows", binding_overflows_},
                {"feedback_truncated", feedback_truncated_}};
}

}  // namespace trellis
