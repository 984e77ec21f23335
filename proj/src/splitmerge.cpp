#include "seal/splitmerge.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <set>
#include <thread>

#include "seal/rng.hpp"

namespace seal::splitmerge {

AuxiliarySet::AuxiliarySet(std::vector<Auxiliary> members, std::optional<ConceptEmbedding> merged)
    : members_(std::move(members)), merged_(std::move(merged)) {
    if (members_.empty()) fail(ErrorKind::validation, "K must be >= 1");
    std::set<int> indices;
    std::set<std::uint64_t> seeds;
    for (const auto& m : members_) {
        if (m.embedding.dim() != members_.front().embedding.dim()) {
            fail(ErrorKind::validation, "auxiliary embeddings differ in length");
        }
        if (!indices.insert(m.index).second) fail(ErrorKind::validation, "duplicate trajectory index");
        if (!seeds.insert(m.seed).second) fail(ErrorKind::validation, "trajectory seeds must be distinct");
    }
    if (merged_ && merged_->dim() != members_.front().embedding.dim()) {
        fail(ErrorKind::validation, "merged embedding length differs");
    }
}

AuxiliarySet init_auxiliaries(const ConceptEmbedding& init, int K, std::uint64_t base_seed, double jitter) {
    if (K < 1) fail(ErrorKind::validation, "K must be >= 1");
    if (!(jitter >= 0.0) || !std::isfinite(jitter)) fail(ErrorKind::validation, "jitter must be >= 0");
    std::vector<Auxiliary> members;
    for (int i = 0; i < K; ++i) {
        const std::uint64_t seed = derive_seed(base_seed, static_cast<std::uint64_t>(i));
        Rng rng(seed);
        std::vector<double> v = init.values();
        for (double& x : v) x += jitter * rng.normal();
        members.push_back({i, seed, ConceptEmbedding(std::move(v), init.token_symbol())});
    }
    return AuxiliarySet(std::move(members));
}

namespace {

// Adds x to a nonoverlapping expansion whose components sum exactly to the
// running total (two-sum with zero elimination).
void grow(std::vector<double>& partials, double x) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < partials.size(); ++i) {
        double y = partials[i];
        if (std::abs(x) < std::abs(y)) std::swap(x, y);
        const double hi = x + y;
        const double lo = y - (hi - x);
        if (lo != 0.0) partials[k++] = lo;
        x = hi;
    }
    partials.resize(k);
    partials.push_back(x);
}

// Correctly rounded value of an expansion built by grow().
double round_expansion(const std::vector<double>& p) {
    if (p.empty()) return 0.0;
    std::size_t n = p.size() - 1;
    double hi = p[n];
    double lo = 0.0;
    while (n > 0) {
        const double x = hi;
        const double y = p[--n];
        hi = x + y;
        lo = y - (hi - x);
        if (lo != 0.0) break;
    }
    // Round half-way cases by the sign of the remaining tail.
    if (n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0))) {
        const double y = lo * 2.0;
        const double x = hi + y;
        if (y == x - hi) hi = x;
    }
    return hi;
}

// Mean of an exact sum: quotient plus a rounded correction from the exact remainder.
double exact_mean(std::vector<double> sum, double k) {
    const double q = round_expansion(sum) / k;
    const double p = q * k;
    grow(sum, -p);
    grow(sum, -std::fma(q, k, -p));
    return q + round_expansion(sum) / k;
}

}  // namespace

ConceptEmbedding merge(const AuxiliarySet& set) {
    std::vector<const Auxiliary*> order;
    for (const auto& m : set.members()) order.push_back(&m);
    std::sort(order.begin(), order.end(), [](const Auxiliary* a, const Auxiliary* b) { return a->index < b->index; });
    std::vector<double> out(set.dim());
    std::vector<double> partials;
    for (std::size_t j = 0; j < out.size(); ++j) {
        partials.clear();
        for (const auto* m : order) grow(partials, m->embedding.values()[j]);
        out[j] = exact_mean(partials, static_cast<double>(order.size()));
        if (!std::isfinite(out[j])) fail(ErrorKind::numerical, "merged embedding has non-finite entries");
    }
    return ConceptEmbedding(std::move(out), set.members().front().embedding.token_symbol());
}

int worker_count() {
    if (const char* env = std::getenv("SEAL_THREADS")) {
        char* end = nullptr;
        const long n = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && n > 0) return static_cast<int>(std::min<long>(n, 1024));
        warn(std::string("ignoring invalid SEAL_THREADS=") + env);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

ParallelResult run_parallel(const Trajectory& trajectory, const AuxiliarySet& set, int threads) {
    const int k = set.K();
    const int workers = std::clamp(threads > 0 ? threads : worker_count(), 1, k);
    std::vector<std::optional<TrajectoryOutput>> results(k);
    std::vector<std::exception_ptr> errors(k);
    std::atomic<int> next{0};
    auto work = [&] {
        for (int i = next++; i < k; i = next++) {
            try {
                const auto& m = set.members()[i];
                results[i] = trajectory(m.embedding, m.seed);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (int i = 0; i < k; ++i) {
        if (!errors[i]) continue;
        const std::string prefix = "trajectory " + std::to_string(set.members()[i].index) + ": ";
        try {
            std::rethrow_exception(errors[i]);
        } catch (const Error& e) {
            throw Error(e.kind(), prefix + e.what());
        } catch (const std::exception& e) {
            throw Error(ErrorKind::numerical, prefix + e.what());
        }
    }
    std::vector<Auxiliary> members;
    std::vector<TrajectoryLog> logs;
    for (int i = 0; i < k; ++i) {
        const auto& m = set.members()[i];
        if (results[i]->embedding.dim() != m.embedding.dim()) {
            fail(ErrorKind::validation, "trajectory changed the embedding length");
        }
        members.push_back({m.index, m.seed, results[i]->embedding});
        logs.push_back(std::move(results[i]->log));
    }
    AuxiliarySet optimized(std::move(members));
    auto merged = merge(optimized);
    return {AuxiliarySet(optimized.members(), std::move(merged)), std::move(logs)};
}

}  // namespace seal::splitmerge
