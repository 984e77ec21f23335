#pragma once

// Shared fixtures for the unit tests: random maps and masks, a scratch
// directory, warning capture and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "seal/core.hpp"
#include "seal/rng.hpp"

namespace seal::test {

inline AttentionMap random_map(Rng& rng, int h, int w, int layer = 0) {
    std::vector<double> g(static_cast<std::size_t>(h) * w);
    for (auto& v : g) v = rng.uniform();
    return AttentionMap(layer, h, w, std::move(g));
}

/// Mask with exactly `active` cells set, chosen uniformly.
inline ObjectMask random_mask(Rng& rng, int h, int w, int active) {
    std::vector<std::uint8_t> g(static_cast<std::size_t>(h) * w, 0);
    std::vector<int> order(g.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
        std::swap(order[i], order[rng.uniform_int(static_cast<int>(i) + 1)]);
    }
    for (int i = 0; i < active; ++i) g[order[i]] = 1;
    return ObjectMask(h, w, std::move(g));
}

inline ObjectMask random_mask(Rng& rng, int h, int w) {
    return random_mask(rng, h, w, 1 + rng.uniform_int(h * w - 1));
}

/// max |a - b| / max(max|a|, max|b|), 0 when both vanish.
inline double normwise_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return scale == 0.0 ? 0.0 : diff / scale;
}

inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double fp = f(x);
        x[i] = x0 - h;
        const double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("seal_test_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

/// Collects warnings for its lifetime; restores the default sink afterwards.
class WarningCapture {
public:
    WarningCapture() {
        set_warning_handler([this](const std::string& m) { messages.push_back(m); });
    }
    ~WarningCapture() { set_warning_handler(nullptr); }
    bool contains(const std::string& needle) const {
        return std::any_of(messages.begin(), messages.end(),
                           [&](const std::string& m) { return m.find(needle) != std::string::npos; });
    }
    std::vector<std::string> messages;
};

inline std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace seal::test
