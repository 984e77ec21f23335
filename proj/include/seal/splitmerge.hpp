#pragma once

// K auxiliary concept embeddings optimized independently and merged by an
// exact mean.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "seal/core.hpp"

namespace seal::splitmerge {

struct Auxiliary {
    int index = 0;  // trajectory index, fixes the summation order of merge
    std::uint64_t seed = 0;
    ConceptEmbedding embedding;

    bool operator==(const Auxiliary&) const = default;
};

/// Members share one length; indices and seeds are pairwise distinct. `merged`
/// is set only by run_parallel, after every trajectory has finished.
class AuxiliarySet {
public:
    explicit AuxiliarySet(std::vector<Auxiliary> members, std::optional<ConceptEmbedding> merged = std::nullopt);

    const std::vector<Auxiliary>& members() const noexcept { return members_; }
    int K() const noexcept { return static_cast<int>(members_.size()); }
    std::size_t dim() const noexcept { return members_.front().embedding.dim(); }
    const std::optional<ConceptEmbedding>& merged() const noexcept { return merged_; }

    bool operator==(const AuxiliarySet&) const = default;

private:
    std::vector<Auxiliary> members_;
    std::optional<ConceptEmbedding> merged_;
};

/// v_i = init + jitter * g_i with g_i ~ N(0, I) drawn from seed derive_seed(base_seed, i).
AuxiliarySet init_auxiliaries(const ConceptEmbedding& init, int K, std::uint64_t base_seed, double jitter);

/// Elementwise mean: the exact sum of the members divided by K and rounded,
/// so K identical members merge to themselves bit for bit.
ConceptEmbedding merge(const AuxiliarySet& set);

struct TrajectoryOutput {
    ConceptEmbedding embedding;
    TrajectoryLog log;
};

/// Must be a deterministic function of its arguments.
using Trajectory = std::function<TrajectoryOutput(const ConceptEmbedding& init, std::uint64_t seed)>;

struct ParallelResult {
    AuxiliarySet set;               // optimized members, merged filled
    std::vector<TrajectoryLog> logs;  // by member position
};

/// Runs every member's trajectory, up to `threads` at a time (0 = worker_count()).
/// A failing trajectory aborts the set; its error is rethrown with the index.
ParallelResult run_parallel(const Trajectory& trajectory, const AuxiliarySet& set, int threads = 0);

/// SEAL_THREADS if set to a positive integer, otherwise the logical core count (min 1).
int worker_count();

}  // namespace seal::splitmerge
