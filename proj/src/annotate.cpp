#include "pdl/annotate.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "pdl/io.hpp"

namespace pdl::annotate {

namespace {

nlohmann::json event_to_json(const corpus::SensorEvent& e) {
    nlohmann::json j;
    j["timestamp"] = corpus::format_timestamp(e.timestamp);
    j["sensor"] = e.sensor_id;
    j["value"] = e.value;
    if (e.truth_label) {
        j["truth_label"] = *e.truth_label;
    }
    return j;
}

corpus::SensorEvent event_from_json(const nlohmann::json& j) {
    corpus::SensorEvent e;
    const auto ts = j.at("timestamp").get<std::string>();
    const auto space = ts.find(' ');
    if (space == std::string::npos) {
        throw ValidationError(fmt::format("bad timestamp '{}'", ts));
    }
    e.timestamp = corpus::parse_timestamp(std::string_view(ts).substr(0, space), std::string_view(ts).substr(space + 1));
    e.sensor_id = j.at("sensor").get<std::string>();
    e.value = j.at("value").get<std::string>();
    if (j.contains("truth_label")) {
        e.truth_label = j.at("truth_label").get<std::string>();
    }
    return e;
}

}  // namespace

std::vector<CentroidSample> select_centroids(const std::vector<scan::ClusterAssignment>& assignments, std::size_t m,
                                             Diagnostics* diag) {
    if (m == 0) {
        throw ValidationError("m must be positive");
    }
    std::size_t k = 0;
    std::map<ClusterId, std::vector<const scan::ClusterAssignment*>> by_cluster;
    for (const auto& a : assignments) {
        k = std::max(k, a.probs.size());
        by_cluster[a.cluster].push_back(&a);
    }
    std::vector<CentroidSample> out;
    for (std::size_t c = 0; c < k; ++c) {
        const auto cid = static_cast<ClusterId>(c);
        auto it = by_cluster.find(cid);
        if (it == by_cluster.end()) {
            warn(diag, fmt::format("cluster {} is empty; no samples selected", c));
            continue;
        }
        auto& members = it->second;
        const std::size_t take = std::min(m, members.size());
        std::partial_sort(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end(),
                          [](const auto* x, const auto* y) {
                              if (x->confidence != y->confidence) {
                                  return x->confidence > y->confidence;
                              }
                              return x->window_id < y->window_id;
                          });
        if (take < m) {
            warn(diag, fmt::format("cluster {} has {} members; selected {} of {} samples", c, members.size(), take, m));
        }
        for (std::size_t i = 0; i < take; ++i) {
            CentroidSample s;
            s.window_id = members[i]->window_id;
            s.cluster = cid;
            s.confidence = members[i]->confidence;
            s.sample_id = fmt::format("c{}-w{}", cid, s.window_id);
            out.push_back(std::move(s));
        }
    }
    return out;
}

void attach_events(std::vector<CentroidSample>& samples, const std::vector<corpus::Window>& windows,
                   const std::vector<corpus::SensorEvent>& events) {
    std::unordered_map<WindowId, const corpus::Window*> index;
    for (const auto& w : windows) {
        index.emplace(w.window_id, &w);
    }
    for (auto& s : samples) {
        auto it = index.find(s.window_id);
        if (it == index.end()) {
            throw NotFoundError(fmt::format("window {} not found for sample {}", s.window_id, s.sample_id));
        }
        const auto& w = *it->second;
        if (w.end_event_index >= events.size()) {
            throw ValidationError(fmt::format("window {} references events beyond the log", w.window_id));
        }
        s.events.assign(events.begin() + static_cast<std::ptrdiff_t>(w.start_event_index),
                        events.begin() + static_cast<std::ptrdiff_t>(w.end_event_index + 1));
    }
}

// ---------------------------------------------------------------- session

const CentroidSample& AnnotationSession::sample(std::string_view sample_id) const {
    for (const auto& s : samples) {
        if (s.sample_id == sample_id) {
            return s;
        }
    }
    throw NotFoundError(fmt::format("sample '{}' not in session '{}'", sample_id, session_id));
}

bool AnnotationSession::has_sample(std::string_view sample_id) const {
    return std::any_of(samples.begin(), samples.end(), [&](const auto& s) { return s.sample_id == sample_id; });
}

std::vector<RatingRecord> AnnotationSession::ratings_for(std::string_view sample_id) const {
    std::vector<RatingRecord> out;
    for (const auto& r : submissions) {
        if (r.sample_id == sample_id) {
            out.push_back(r);
        }
    }
    return out;
}

std::optional<std::string> AnnotationSession::label_by(std::string_view sample_id, std::string_view rater_id) const {
    for (const auto& r : submissions) {
        if (r.sample_id == sample_id && r.rater_id == rater_id) {
            return r.label;
        }
    }
    return std::nullopt;
}

Progress AnnotationSession::progress() const {
    Progress p;
    p.samples = samples.size();
    p.scheduled = samples.size() * raters_per_sample;
    std::map<std::string, std::size_t> per;
    for (const auto& r : submissions) {
        ++per[r.sample_id];
    }
    for (const auto& [id, n] : per) {
        p.submitted += std::min(n, raters_per_sample);
        if (n >= raters_per_sample) {
            ++p.complete_samples;
        }
    }
    return p;
}

const CentroidSample* AnnotationSession::next_for(std::string_view rater_id) const {
    std::map<std::string, std::size_t, std::less<>> count;
    std::set<std::string, std::less<>> mine;
    for (const auto& r : submissions) {
        ++count[r.sample_id];
        if (r.rater_id == rater_id) {
            mine.insert(r.sample_id);
        }
    }
    for (const auto& s : samples) {
        if (mine.count(s.sample_id) != 0) {
            continue;
        }
        auto it = count.find(s.sample_id);
        if (it == count.end() || it->second < raters_per_sample) {
            return &s;
        }
    }
    return nullptr;
}

std::string AnnotationSession::to_json() const {
    nlohmann::json j;
    j["v"] = 1;
    j["session_id"] = session_id;
    j["dataset_id"] = dataset_id;
    j["raters_per_sample"] = raters_per_sample;
    j["seed"] = seed;
    j["samples"] = nlohmann::json::array();
    for (const auto& s : samples) {
        nlohmann::json e;
        e["sample_id"] = s.sample_id;
        e["window_id"] = s.window_id;
        e["cluster"] = s.cluster;
        e["confidence"] = s.confidence;
        e["events"] = nlohmann::json::array();
        for (const auto& ev : s.events) {
            e["events"].push_back(event_to_json(ev));
        }
        j["samples"].push_back(std::move(e));
    }
    j["submissions"] = nlohmann::json::array();
    for (const auto& r : submissions) {
        j["submissions"].push_back({{"sample_id", r.sample_id}, {"rater", r.rater_id}, {"label", r.label}});
    }
    return j.dump(1) + "\n";
}

AnnotationSession AnnotationSession::from_json(std::string_view text) {
    auto j = nlohmann::json::parse(text);
    if (j.value("v", 0) != 1) {
        throw ValidationError("unsupported session document version");
    }
    AnnotationSession s;
    s.session_id = j.at("session_id").get<std::string>();
    s.dataset_id = j.at("dataset_id").get<std::string>();
    s.raters_per_sample = j.at("raters_per_sample").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("samples")) {
        CentroidSample c;
        c.sample_id = e.at("sample_id").get<std::string>();
        c.window_id = e.at("window_id").get<WindowId>();
        c.cluster = e.at("cluster").get<ClusterId>();
        c.confidence = e.at("confidence").get<double>();
        for (const auto& ev : e.at("events")) {
            c.events.push_back(event_from_json(ev));
        }
        s.samples.push_back(std::move(c));
    }
    for (const auto& r : j.at("submissions")) {
        s.submissions.push_back(
            {r.at("sample_id").get<std::string>(), r.at("rater").get<std::string>(), r.at("label").get<std::string>()});
    }
    return s;
}

void AnnotationSession::save(const std::filesystem::path& path) const { io::write_file_atomic(path, to_json()); }

AnnotationSession AnnotationSession::load(const std::filesystem::path& path) { return from_json(io::read_file(path)); }

AnnotationSession create_session(std::vector<CentroidSample> samples, std::size_t raters_per_sample,
                                 std::uint64_t seed, std::string session_id, std::string dataset_id) {
    if (samples.empty()) {
        throw ValidationError("a session needs at least one sample");
    }
    if (raters_per_sample == 0) {
        throw ValidationError("raters_per_sample must be >= 1");
    }
    std::set<std::string> ids;
    for (const auto& s : samples) {
        if (!ids.insert(s.sample_id).second) {
            throw ValidationError(fmt::format("duplicate sample id '{}'", s.sample_id));
        }
    }
    AnnotationSession s;
    s.session_id = std::move(session_id);
    s.dataset_id = std::move(dataset_id);
    s.raters_per_sample = raters_per_sample;
    s.seed = seed;
    std::mt19937_64 rng(encoder::mix_seed(seed, 0x5e55));
    std::shuffle(samples.begin(), samples.end(), rng);
    s.samples = std::move(samples);
    return s;
}

std::optional<std::string> record_label(AnnotationSession& session, std::string_view sample_id,
                                        std::string_view rater_id, std::string_view label,
                                        const evalmap::LabelHierarchy& hierarchy) {
    if (!session.has_sample(sample_id)) {
        throw NotFoundError(fmt::format("sample '{}' not in session '{}'", sample_id, session.session_id));
    }
    if (rater_id.empty()) {
        throw ValidationError("rater id must be non-empty");
    }
    if (!hierarchy.contains(label)) {
        throw ValidationError(fmt::format("label '{}' is not in the label hierarchy", label));
    }
    for (auto& r : session.submissions) {
        if (r.sample_id == sample_id && r.rater_id == rater_id) {
            std::string prior = r.label;
            r.label = std::string(label);
            return prior;
        }
    }
    session.submissions.push_back({std::string(sample_id), std::string(rater_id), std::string(label)});
    return std::nullopt;
}

evalmap::ClusterLabelMap cluster_majority_labels(const AnnotationSession& session,
                                                 const evalmap::LabelHierarchy& hierarchy,
                                                 const std::vector<ClusterId>& clusters, Diagnostics* diag) {
    const auto p = session.progress();
    if (p.submitted < p.scheduled) {
        warn(diag, fmt::format("session has {} of {} scheduled ratings", p.submitted, p.scheduled));
    }
    std::map<std::string, ClusterId> sample_cluster;
    std::set<ClusterId> all(clusters.begin(), clusters.end());
    for (const auto& s : session.samples) {
        sample_cluster[s.sample_id] = s.cluster;
        all.insert(s.cluster);
    }
    std::map<ClusterId, std::vector<std::string>> votes;
    for (const auto& r : session.submissions) {
        votes[sample_cluster.at(r.sample_id)].push_back(r.label);
    }

    evalmap::ClusterLabelMap out;
    for (auto c : all) {
        auto it = votes.find(c);
        if (it == votes.end() || it->second.empty()) {
            out.clusters[c] = {kOtherLabel, 0, 0};
            continue;
        }
        const auto& labels = it->second;
        std::map<std::string, std::size_t> tally;
        for (const auto& l : labels) {
            ++tally[l];
        }
        std::size_t best = 0;
        for (const auto& [l, n] : tally) {
            best = std::max(best, n);
        }
        std::vector<std::string> tied;
        for (const auto& [l, n] : tally) {
            if (n == best) {
                tied.push_back(l);
            }
        }
        evalmap::ClusterLabel result{tied.front(), best, labels.size()};
        if (tied.size() > 1) {
            // Level up each tied candidate that does not already sit above another one, then recount.
            std::map<std::string, std::string> lifted;
            for (const auto& cand : tied) {
                const bool above_other = std::any_of(tied.begin(), tied.end(), [&](const std::string& other) {
                    return other != cand && hierarchy.contains(cand) && hierarchy.contains(other) &&
                           hierarchy.is_ancestor(cand, other);
                });
                lifted[cand] = (above_other || !hierarchy.contains(cand)) ? cand : hierarchy.level_up(cand);
            }
            std::map<std::string, std::size_t> retally;
            for (const auto& l : labels) {
                auto f = lifted.find(l);
                ++retally[f == lifted.end() ? l : f->second];
            }
            std::size_t best2 = 0;
            for (const auto& [l, n] : retally) {
                best2 = std::max(best2, n);
            }
            std::vector<std::string> tied2;
            for (const auto& [l, n] : retally) {
                if (n == best2) {
                    tied2.push_back(l);
                }
            }
            if (tied2.size() == 1) {
                result = {tied2.front(), best2, labels.size()};
            }
        }
        out.clusters[c] = result;
    }
    return out;
}

Agreement session_agreement(const AnnotationSession& session, const evalmap::LabelHierarchy& hierarchy,
                            bool level_up, Diagnostics* diag) {
    auto lift = [&](const std::string& l) { return level_up ? hierarchy.level_up(l) : l; };
    Agreement a;
    std::vector<std::pair<std::string, std::string>> pairs;
    std::map<ClusterId, std::vector<std::string>> pooled;
    for (const auto& s : session.samples) {
        auto rs = session.ratings_for(s.sample_id);
        if (rs.size() >= 2) {
            pairs.emplace_back(lift(rs[0].label), lift(rs[1].label));
        }
        for (const auto& r : rs) {
            pooled[s.cluster].push_back(lift(r.label));
        }
    }
    a.pairs = pairs.size();
    if (!pairs.empty()) {
        a.cohen = evalmap::cohens_kappa(pairs);
    } else {
        warn(diag, "no sample has two ratings; Cohen's kappa not computed");
    }
    std::map<std::size_t, std::size_t> sizes;
    for (const auto& [c, ls] : pooled) {
        if (ls.size() >= 2) {
            ++sizes[ls.size()];
        }
    }
    if (sizes.empty()) {
        warn(diag, "no cluster has two ratings; Fleiss' kappa not computed");
        return a;
    }
    // Fleiss needs a common rating count; use the most frequent one (largest on ties).
    std::size_t modal = 0, modal_n = 0;
    for (const auto& [size, n] : sizes) {
        if (n >= modal_n) {
            modal = size;
            modal_n = n;
        }
    }
    std::vector<std::vector<std::string>> items;
    for (const auto& [c, ls] : pooled) {
        if (ls.size() == modal) {
            items.push_back(ls);
        } else {
            warn(diag, fmt::format("cluster {} has {} ratings (expected {}); left out of Fleiss' kappa", c, ls.size(),
                                   modal));
        }
    }
    a.clusters = items.size();
    a.fleiss = evalmap::fleiss_kappa(evalmap::rating_counts(items), diag);
    return a;
}

// ---------------------------------------------------------------- propagation

std::vector<WindowLabel> propagate(const evalmap::ClusterLabelMap& map,
                                   const std::vector<scan::ClusterAssignment>& assignments) {
    std::vector<WindowLabel> out;
    out.reserve(assignments.size());
    for (const auto& a : assignments) {
        out.push_back({a.window_id, a.cluster, a.confidence, map.label_of(a.cluster)});
    }
    return out;
}

std::vector<std::string> reannotate_events(const std::vector<WindowLabel>& labels,
                                           const std::vector<corpus::Window>& windows, std::size_t n_events) {
    std::unordered_map<WindowId, const corpus::Window*> index;
    for (const auto& w : windows) {
        index.emplace(w.window_id, &w);
    }
    // Covering windows per event: (label id, confidence, start).
    std::vector<std::string> names;
    std::unordered_map<std::string, std::size_t> name_id;
    struct Cover {
        std::size_t label;
        double confidence;
        std::size_t start;
    };
    std::vector<std::vector<Cover>> cover(n_events);
    for (const auto& l : labels) {
        auto it = index.find(l.window_id);
        if (it == index.end()) {
            throw NotFoundError(fmt::format("labeled window {} not among the windows", l.window_id));
        }
        const auto& w = *it->second;
        if (w.end_event_index >= n_events || w.start_event_index > w.end_event_index) {
            throw ValidationError(fmt::format("window {} has an invalid event range", w.window_id));
        }
        auto [nit, inserted] = name_id.emplace(l.label, names.size());
        if (inserted) {
            names.push_back(l.label);
        }
        for (std::size_t e = w.start_event_index; e <= w.end_event_index; ++e) {
            cover[e].push_back({nit->second, l.confidence, w.start_event_index});
        }
    }
    std::vector<std::string> out(n_events, kNoLabel);
    std::vector<std::size_t> counts(names.size(), 0);
    for (std::size_t e = 0; e < n_events; ++e) {
        const auto& cs = cover[e];
        if (cs.empty()) {
            continue;
        }
        std::size_t best = 0;
        for (const auto& c : cs) {
            best = std::max(best, ++counts[c.label]);
        }
        const Cover* pick = nullptr;
        for (const auto& c : cs) {
            if (counts[c.label] != best) {
                continue;
            }
            if (pick == nullptr || c.confidence > pick->confidence ||
                (c.confidence == pick->confidence && c.start > pick->start)) {
                pick = &c;
            }
        }
        out[e] = names[pick->label];
        for (const auto& c : cs) {
            counts[c.label] = 0;
        }
    }
    return out;
}

std::string export_labeled_events(const std::vector<corpus::SensorEvent>& events,
                                  const std::vector<std::string>& discovered) {
    if (events.size() != discovered.size()) {
        throw ValidationError("events and discovered labels differ in length");
    }
    std::string out = "timestamp,sensor,value,truth_label,discovered_label\n";
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        out += fmt::format("{},{},{},{},{}\n", corpus::format_timestamp(e.timestamp), io::csv_escape(e.sensor_id),
                           io::csv_escape(e.value), io::csv_escape(e.label_or_no_label()),
                           io::csv_escape(discovered[i]));
    }
    return out;
}

std::string window_labels_to_csv(const std::vector<WindowLabel>& labels) {
    std::string out = "window_id,cluster,confidence,label\n";
    for (const auto& l : labels) {
        out += fmt::format("{},{},{},{}\n", l.window_id, l.cluster, io::format_double(l.confidence),
                           io::csv_escape(l.label));
    }
    return out;
}

}  // namespace pdl::annotate
