#include "riskprof/cluster.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace riskprof {

const char* to_string(Linkage l) { return l == Linkage::Complete ? "complete" : "average"; }

Linkage linkage_from_string(const std::string& s) {
    if (s == "complete") return Linkage::Complete;
    if (s == "average") return Linkage::Average;
    throw std::invalid_argument("unknown linkage: " + s);
}

double profile_distance(const std::vector<double>& a, const std::vector<double>& b,
                        ProfileMetric metric) {
    (void)metric;  // Euclidean is the only core metric
    if (a.empty() || b.empty())
        throw std::invalid_argument("profile_distance: empty profile");
    if (a.size() != b.size())
        throw std::invalid_argument("profile_distance: length mismatch (" +
                                    std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

double profile_distance(const RiskProfile& a, const RiskProfile& b, ProfileMetric metric) {
    return profile_distance(a.values, b.values, metric);
}

std::vector<double> resample_linear(const std::vector<double>& values,
                                    std::size_t target_len) {
    if (values.empty()) throw std::invalid_argument("resample_linear: empty input");
    if (target_len == 0) throw std::invalid_argument("resample_linear: zero target length");
    if (values.size() == target_len) return values;
    std::vector<double> out(target_len);
    if (target_len == 1) {
        out[0] = values.front();
        return out;
    }
    const double scale =
        static_cast<double>(values.size() - 1) / static_cast<double>(target_len - 1);
    for (std::size_t j = 0; j < target_len; ++j) {
        const double pos = scale * static_cast<double>(j);
        const auto lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, values.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        out[j] = values[lo] * (1.0 - frac) + values[hi] * frac;
    }
    return out;
}

void standardize(std::vector<double>& values) {
    if (values.empty()) return;
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    for (double& v : values) v = sd > 1e-12 ? (v - mean) / sd : v - mean;
}

Dendrogram agglomerate(const std::vector<RiskProfile>& profiles, Linkage linkage,
                       bool standardize_profiles, ProfileMetric metric) {
    if (profiles.size() < 2)
        throw std::invalid_argument("agglomerate: need at least 2 profiles");

    // Canonical leaf order removes any dependence on input order.
    std::vector<std::size_t> order(profiles.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return profiles[a].patient_id < profiles[b].patient_id;
    });
    for (std::size_t i = 0; i + 1 < order.size(); ++i)
        if (profiles[order[i]].patient_id == profiles[order[i + 1]].patient_id)
            throw std::invalid_argument("agglomerate: duplicate patient_id '" +
                                        profiles[order[i]].patient_id + "'");

    const std::size_t n = profiles.size();
    std::size_t min_len = std::numeric_limits<std::size_t>::max();
    for (const auto& p : profiles) {
        if (p.values.empty())
            throw std::invalid_argument("agglomerate: empty profile for '" +
                                        p.patient_id + "'");
        min_len = std::min(min_len, p.values.size());
    }
    std::vector<std::vector<double>> vecs(n);
    Dendrogram dendrogram;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = profiles[order[i]];
        dendrogram.leaves.push_back(p.patient_id);
        vecs[i] = resample_linear(p.values, min_len);
        if (standardize_profiles) standardize(vecs[i]);
    }

    struct Cluster {
        std::size_t node;         // dendrogram node id
        std::string min_id;       // smallest patient id inside, for tie-breaks
        std::size_t size;
    };
    std::vector<Cluster> active;
    for (std::size_t i = 0; i < n; ++i)
        active.push_back({i, dendrogram.leaves[i], 1});

    // Dense distance matrix over active clusters, updated by Lance-Williams.
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            dist[i][j] = dist[j][i] = profile_distance(vecs[i], vecs[j], metric);

    std::size_t next_node = n;
    while (active.size() > 1) {
        std::size_t best_i = 0, best_j = 1;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < active.size(); ++i)
            for (std::size_t j = i + 1; j < active.size(); ++j) {
                const double d = dist[i][j];
                const auto& pa = active[i].min_id < active[j].min_id ? active[i] : active[j];
                const auto& pb = active[i].min_id < active[j].min_id ? active[j] : active[i];
                const auto& ba = active[best_i].min_id < active[best_j].min_id
                                     ? active[best_i] : active[best_j];
                const auto& bb = active[best_i].min_id < active[best_j].min_id
                                     ? active[best_j] : active[best_i];
                const bool better =
                    d < best ||
                    (d == best && (pa.min_id < ba.min_id ||
                                   (pa.min_id == ba.min_id && pb.min_id < bb.min_id)));
                if (better) {
                    best = d;
                    best_i = i;
                    best_j = j;
                }
            }

        const Cluster a = active[best_i];
        const Cluster b = active[best_j];
        const bool a_first = a.min_id < b.min_id;
        dendrogram.merges.push_back({a_first ? a.node : b.node,
                                     a_first ? b.node : a.node, best});

        Cluster merged;
        merged.node = next_node++;
        merged.min_id = std::min(a.min_id, b.min_id);
        merged.size = a.size + b.size;

        // Update distances to the merged cluster.
        std::vector<double> updated(active.size(), 0.0);
        for (std::size_t k = 0; k < active.size(); ++k) {
            if (k == best_i || k == best_j) continue;
            const double da = dist[best_i][k];
            const double db = dist[best_j][k];
            updated[k] = linkage == Linkage::Complete
                             ? std::max(da, db)
                             : (da * static_cast<double>(a.size) +
                                db * static_cast<double>(b.size)) /
                                   static_cast<double>(merged.size);
        }

        // Replace best_i with the merged cluster, drop best_j.
        active[best_i] = merged;
        for (std::size_t k = 0; k < active.size(); ++k) {
            dist[best_i][k] = updated[k];
            dist[k][best_i] = updated[k];
        }
        dist[best_i][best_i] = 0.0;
        const std::size_t last = active.size() - 1;
        if (best_j != last) {
            active[best_j] = active[last];
            for (std::size_t k = 0; k < active.size(); ++k) {
                dist[best_j][k] = dist[last][k];
                dist[k][best_j] = dist[k][last];
            }
            dist[best_j][best_j] = 0.0;
        }
        active.pop_back();
        for (auto& row : dist) row.resize(active.size());
        dist.resize(active.size());
    }
    return dendrogram;
}

std::vector<std::vector<std::string>> cut_by_max_gap(const Dendrogram& dendrogram) {
    const std::size_t n = dendrogram.leaves.size();
    if (n < 2) throw std::invalid_argument("cut_by_max_gap: need at least 2 leaves");
    const auto& merges = dendrogram.merges;
    if (merges.size() != n - 1)
        throw std::invalid_argument("cut_by_max_gap: malformed dendrogram");

    // Merge index (1-based) below which the tree is cut: the merge whose
    // height gap to its predecessor is largest, latest such merge on ties.
    std::size_t cut = merges.size();
    double best_gap = -1.0;
    for (std::size_t i = 1; i < merges.size(); ++i) {
        const double gap = merges[i].height - merges[i - 1].height;
        if (gap >= best_gap) {
            best_gap = gap;
            cut = i + 1;
        }
    }

    // Apply merges strictly below the cut.
    std::vector<std::size_t> parent(2 * n - 1);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i + 1 < cut; ++i) {
        const std::size_t node = n + i;
        parent[find(merges[i].left)] = node;
        parent[find(merges[i].right)] = node;
    }

    std::map<std::size_t, std::vector<std::string>> groups;
    for (std::size_t leaf = 0; leaf < n; ++leaf)
        groups[find(leaf)].push_back(dendrogram.leaves[leaf]);
    std::vector<std::vector<std::string>> partition;
    for (auto& [root, members] : groups) {
        std::sort(members.begin(), members.end());
        partition.push_back(std::move(members));
    }
    std::sort(partition.begin(), partition.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return partition;
}

VulnerabilityClusters label_clusters(const std::vector<std::vector<std::string>>& partition,
                                     const std::map<std::string, double>& success_rates) {
    if (partition.size() != 2)
        throw std::invalid_argument("label_clusters: expected exactly 2 clusters, got " +
                                    std::to_string(partition.size()));
    double means[2];
    for (int c = 0; c < 2; ++c) {
        if (partition[c].empty())
            throw std::invalid_argument("label_clusters: empty cluster");
        double sum = 0.0;
        for (const auto& id : partition[c]) {
            const auto it = success_rates.find(id);
            if (it == success_rates.end())
                throw std::runtime_error("label_clusters: missing success rate for '" +
                                         id + "'");
            sum += it->second;
        }
        means[c] = sum / static_cast<double>(partition[c].size());
    }

    VulnerabilityClusters out;
    int less = 0;
    if (means[0] == means[1]) {
        out.tie_warning = true;
        if (partition[0].size() != partition[1].size())
            less = partition[0].size() < partition[1].size() ? 0 : 1;
        else
            less = partition[0].front() < partition[1].front() ? 0 : 1;
    } else {
        less = means[0] < means[1] ? 0 : 1;
    }
    out.less_vulnerable = partition[less];
    out.more_vulnerable = partition[1 - less];
    return out;
}

std::string dendrogram_to_json(const Dendrogram& dendrogram) {
    nlohmann::ordered_json j;
    j["leaves"] = dendrogram.leaves;
    j["merges"] = nlohmann::ordered_json::array();
    for (const auto& m : dendrogram.merges)
        j["merges"].push_back({{"left", m.left}, {"right", m.right}, {"height", m.height}});
    return j.dump(2) + "\n";
}

Dendrogram dendrogram_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    Dendrogram d;
    d.leaves = j.at("leaves").get<std::vector<std::string>>();
    for (const auto& m : j.at("merges"))
        d.merges.push_back({m.at("left").get<std::size_t>(), m.at("right").get<std::size_t>(),
                            m.at("height").get<double>()});
    return d;
}

namespace {

std::string format_height(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

std::string newick_node(const Dendrogram& d, std::size_t node, double parent_height) {
    const std::size_t n = d.leaves.size();
    if (node < n)
        return d.leaves[node] + ":" + format_height(parent_height);
    const auto& m = d.merges[node - n];
    return "(" + newick_node(d, m.left, m.height) + "," +
           newick_node(d, m.right, m.height) + "):" +
           format_height(parent_height - m.height);
}

}  // namespace

std::string dendrogram_to_newick(const Dendrogram& dendrogram) {
    const std::size_t n = dendrogram.leaves.size();
    if (dendrogram.merges.empty()) {
        if (n == 1) return dendrogram.leaves[0] + ";";
        throw std::invalid_argument("dendrogram_to_newick: malformed dendrogram");
    }
    const auto& top = dendrogram.merges.back();
    return "(" + newick_node(dendrogram, top.left, top.height) + "," +
           newick_node(dendrogram, top.right, top.height) + ");";
}

std::string clusters_to_json(const VulnerabilityClusters& clusters,
                             const std::vector<std::vector<std::string>>& partition) {
    nlohmann::ordered_json j;
    j["less_vulnerable"] = clusters.less_vulnerable;
    j["more_vulnerable"] = clusters.more_vulnerable;
    j["tie_warning"] = clusters.tie_warning;
    j["partition"] = partition;
    return j.dump(2) + "\n";
}

VulnerabilityClusters clusters_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    VulnerabilityClusters c;
    c.less_vulnerable = j.at("less_vulnerable").get<std::vector<std::string>>();
    c.more_vulnerable = j.at("more_vulnerable").get<std::vector<std::string>>();
    c.tie_warning = j.at("tie_warning").get<bool>();
    return c;
}

}  // namespace riskprof
