#ifndef GRADCLUST_IO_HPP
#define GRADCLUST_IO_HPP

#include <string>
#include <utility>
#include <vector>

#include "gradclust/clustering.hpp"
#include "gradclust/data.hpp"
#include "gradclust/metrics.hpp"
#include "gradclust/model.hpp"

namespace gradclust {

// All writers go through write_file_atomic: the bytes land in a sibling temp
// file which is renamed over the target, so readers never observe a partial
// file. Loaders throw IoError with the offending path (and row, for CSV).

std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& contents);

// Exact-decimal number forms shared by the text formats: %.17g rendering
// reparses to identical bits; the strict parsers take the whole field,
// accept "inf", keep denormals, and refuse finite literals that overflow.
std::string format_double(double x);
double parse_double(const std::string& text, const std::string& where);
long parse_long(const std::string& text, const std::string& where);

// Dataset container: a one-line magic string, a one-line JSON header
// (dimensions, labels, provenance, seed), then the feature matrix as raw
// row-major little-endian doubles. Round-trips are bit-exact.
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

// Model checkpoint: a single JSON document with layer specs, weights, and
// biases. Doubles are printed in shortest round-trip form, so parameters
// reload bit-exact. Snapshots are finite by construction; the loader gets
// that check for free from the ModelSnapshot constructor.
void save_model(const ModelSnapshot& m, const std::string& path);
ModelSnapshot load_model(const std::string& path);

// Clustering result: assignments, sizes, objective trace, and the rank-1
// center factors, with vectors encoded as in the model checkpoint.
void save_cluster_state(const ClusterState& state, const RankOneCenters& centers,
                        const std::string& path);
std::pair<ClusterState, RankOneCenters> load_cluster_state(const std::string& path);

// Variance report table: header "step,estimator,avg_var,e_g2,norm_var,draws",
// one row per report, doubles at 17 significant digits (enough to reparse the
// exact value). The parser accepts exactly this shape.
std::string variance_csv(const std::vector<VarianceReport>& rows);
std::vector<VarianceReport> parse_variance_csv(const std::string& text);

}  // namespace gradclust

#endif
