#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "domadapt/tensor.hpp"

namespace testutil {

// Central finite differences of a scalar-valued closure w.r.t. one tensor's
// storage. The closure must be a pure function of the perturbed buffer.
inline std::vector<double> finite_diff(domadapt::Tensor& x, const std::function<double()>& f,
                                       double h = 1e-5) {
    auto buf = x.data_mut();
    std::vector<double> out(buf.size());
    for (size_t i = 0; i < buf.size(); ++i) {
        const double keep = buf[i];
        buf[i] = keep + h;
        const double fp = f();
        buf[i] = keep - h;
        const double fm = f();
        buf[i] = keep;
        out[i] = (fp - fm) / (2.0 * h);
    }
    return out;
}

inline bool close_rel(double a, double b, double rtol, double atol = 1e-9) {
    return std::abs(a - b) <= atol + rtol * std::max(std::abs(a), std::abs(b));
}

// max over i of |a_i - b_i| / max(|a_i|, |b_i|, 1) -- a scale-aware error
inline double max_rel_err(std::span<const double> a, const std::vector<double>& b) {
    double worst = 0.0;
    for (size_t i = 0; i < b.size(); ++i) {
        const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1.0});
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto p = base / (tag + "_" + std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directory(p, ec)) {
                path_ = p;
                return;
            }
        }
        throw std::runtime_error("TempDir: could not create directory");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

  private:
    std::filesystem::path path_;
};

}  // namespace testutil
