#pragma once
// Agglomerative clustering of victim risk profiles, largest-gap dendrogram
// cutting, and vulnerability labeling from attack success rates.

#include <map>
#include <string>
#include <vector>

#include "riskprof/risk.hpp"

namespace riskprof {

enum class ProfileMetric { Euclidean };
enum class Linkage { Complete, Average };

const char* to_string(Linkage l);
Linkage linkage_from_string(const std::string& s);

/// Plain metric on two equal-length value vectors. Throws on empty input or
/// length mismatch; alignment is the caller's job (see agglomerate).
double profile_distance(const std::vector<double>& a, const std::vector<double>& b,
                        ProfileMetric metric = ProfileMetric::Euclidean);
double profile_distance(const RiskProfile& a, const RiskProfile& b,
                        ProfileMetric metric = ProfileMetric::Euclidean);

/// Linear index-space resampling to `target_len` points.
std::vector<double> resample_linear(const std::vector<double>& values,
                                    std::size_t target_len);

/// In-place zero-mean unit-variance scaling; constant vectors are centered only.
void standardize(std::vector<double>& values);

struct Dendrogram {
    struct Merge {
        std::size_t left = 0;   // node id: leaves 0..n-1, internals n..2n-2
        std::size_t right = 0;
        double height = 0.0;
    };
    std::vector<std::string> leaves;  // patient ids, lexicographically sorted
    std::vector<Merge> merges;        // exactly leaves-1, non-decreasing heights
};

/// Profiles are resampled to the shortest profile length and optionally
/// standardized before distancing. Merge ties break on the lexicographically
/// smallest patient-id pair, so the tree is independent of input order.
Dendrogram agglomerate(const std::vector<RiskProfile>& profiles,
                       Linkage linkage = Linkage::Complete, bool standardize_profiles = true,
                       ProfileMetric metric = ProfileMetric::Euclidean);

/// Cuts immediately below the merge with the largest height gap to its
/// predecessor (latest such merge on ties, so an all-equal-height tree falls
/// back to two clusters). Returns the resulting leaf partition, each cluster
/// sorted, clusters ordered by first member.
std::vector<std::vector<std::string>> cut_by_max_gap(const Dendrogram& dendrogram);

struct VulnerabilityClusters {
    std::vector<std::string> less_vulnerable;
    std::vector<std::string> more_vulnerable;
    bool tie_warning = false;  // set when cluster means were equal
};

/// Requires a binary partition and a success rate for every patient; the
/// cluster with the lower mean attack success rate becomes less_vulnerable.
/// Equal means resolve toward the smaller cluster.
VulnerabilityClusters label_clusters(const std::vector<std::vector<std::string>>& partition,
                                     const std::map<std::string, double>& success_rates);

std::string dendrogram_to_json(const Dendrogram& dendrogram);
Dendrogram dendrogram_from_json(const std::string& text);
std::string dendrogram_to_newick(const Dendrogram& dendrogram);

std::string clusters_to_json(const VulnerabilityClusters& clusters,
                             const std::vector<std::vector<std::string>>& partition);
VulnerabilityClusters clusters_from_json(const std::string& text);

}  // namespace riskprof
