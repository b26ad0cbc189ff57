// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltadeno/attnbias.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <thread>

#include "deltadeno/io.hpp"

namespace deltadeno {

void AttentionBias::validate() const {
    if (!(beta >= 0.0)) {
        throw std::invalid_argument("attention bias beta must be >= 0");
    }
    for (double v : mask.values()) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument("attention prior values must lie in [0, 1]");
        }
    }
}

bool AttentionBias::applies_to(const std::string& site) const {
    return layer_filter.empty() || layer_filter.count(site) > 0;
}

Matrix bias_logits(const Matrix& logits, std::span<const double> mask_flat,
                   std::span<const std::size_t> anomaly_indices, double beta) {
    if (mask_flat.size() != logits.rows()) {
        throw std::invalid_argument("bias mask length " + std::to_string(mask_flat.size()) +
                                    " does not match " + std::to_string(logits.rows()) + " query rows");
    }
    for (std::size_t j : anomaly_indices) {
        if (j >= logits.cols()) {
            throw std::out_of_range("anomaly token index " + std::to_string(j) + " out of range");
        }
    }
    Matrix out = logits;
    for (std::size_t u = 0; u < logits.rows(); ++u) {
        for (std::size_t j : anomaly_indices) {
            out(u, j) = logits(u, j) + beta * mask_flat[u];
        }
    }
    return out;
}

void softmax_rows(Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const double peak = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double& v : row) {
            v = std::exp(v - peak);
            total += v;
        }
        for (double& v : row) v /= total;
    }
}

Matrix attention_weights(const Matrix& scores, double head_dim, const AttentionBias* bias,
                         std::span<const double> mask_flat) {
    Matrix logits = bias ? bias_logits(scores, mask_flat, bias->anomaly_indices, bias->beta) : scores;
    const double scale = 1.0 / std::sqrt(head_dim);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        for (double& v : logits.row(r)) v *= scale;
    }
    softmax_rows(logits);
    return logits;
}

namespace {

// Per-axis resampling weights: weights[o] lists (source index, weight).
std::vector<std::vector<std::pair<int, double>>> axis_weights(int src, int dst) {
    std::vector<std::vector<std::pair<int, double>>> w(static_cast<std::size_t>(dst));
    if (dst > src) {
        for (int o = 0; o < dst; ++o) {
            const int s = std::min(src - 1, static_cast<int>((o + 0.5) * src / dst));
            w[static_cast<std::size_t>(o)].push_back({s, 1.0});
        }
        return w;
    }
    const double ratio = static_cast<double>(src) / dst;
    for (int o = 0; o < dst; ++o) {
        const double lo = o * ratio;
        const double hi = (o + 1) * ratio;
        for (int s = static_cast<int>(std::floor(lo)); s < src && s < hi; ++s) {
            const double overlap = std::min<double>(s + 1, hi) - std::max<double>(s, lo);
            if (overlap > 0.0) w[static_cast<std::size_t>(o)].push_back({s, overlap / ratio});
        }
    }
    return w;
}

}  // namespace

Grid2D resize_prior(const Grid2D& mask, int rows, int cols) {
    if (rows < 1 || cols < 1) {
        throw std::invalid_argument("prior resolution must be at least 1");
    }
    const auto wy = axis_weights(mask.height(), rows);
    const auto wx = axis_weights(mask.width(), cols);
    Grid2D out(rows, cols);
    for (int y = 0; y < rows; ++y) {
        for (int x = 0; x < cols; ++x) {
            double v = 0.0;
            for (auto [sy, ay] : wy[static_cast<std::size_t>(y)]) {
                for (auto [sx, ax] : wx[static_cast<std::size_t>(x)]) v += ay * ax * mask.at(sy, sx);
            }
            out.at(y, x) = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

CommandForegroundProvider::CommandForegroundProvider(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
    if (command_.empty()) {
        throw std::invalid_argument("foreground provider command is empty");
    }
}

Grid2D CommandForegroundProvider::segment(const ImageGrid& image) {
    static std::atomic<unsigned> counter{0};
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() /
                         ("deltadeno-fg-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::create_directories(dir);
    struct Cleanup {
        fs::path dir;
        ~Cleanup() {
            std::error_code ec;
            fs::remove_all(dir, ec);
        }
    } cleanup{dir};

    const fs::path image_path = dir / "image.png";
    const fs::path mask_path = dir / "mask.png";
    write_png_rgb(image_path, image);

    const std::string script = command_ + " \"$1\" \"$2\"";
    const pid_t pid = ::fork();
    if (pid < 0) {
        throw std::runtime_error("fork failed for foreground provider");
    }
    if (pid == 0) {
        ::setpgid(0, 0);
        ::execl("/bin/sh", "sh", "-c", script.c_str(), "sh", image_path.c_str(), mask_path.c_str(),
                static_cast<char*>(nullptr));
        ::_exit(127);
    }
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    int status = 0;
    while (true) {
        const pid_t done = ::waitpid(pid, &status, WNOHANG);
        if (done == pid) break;
        if (done < 0) throw std::runtime_error("waitpid failed for foreground provider");
        if (std::chrono::steady_clock::now() >= deadline) {
            ::kill(-pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            throw std::runtime_error("foreground provider timed out");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        throw std::runtime_error("foreground provider exited with status " +
                                 std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
    }
    return read_png_gray(mask_path);
}

ForegroundPrior foreground_prior(const ImageGrid& image, ForegroundProvider* provider, int latent_height,
                                 int latent_width) {
    ForegroundPrior prior{Grid2D(latent_height, latent_width, 1.0), true, "fallback", ""};
    if (provider == nullptr) {
        return prior;
    }
    try {
        Grid2D raw = provider->segment(image);
        for (double& v : raw.values()) v = std::clamp(v, 0.0, 1.0);
        prior.mask = resize_prior(raw, latent_height, latent_width);
        prior.fallback = false;
        prior.source = provider->name();
    } catch (const std::exception& e) {
        prior.warning = std::string("foreground provider failed, using whole-surface prior: ") + e.what();
        std::cerr << "warning: " << prior.warning << "\n";
    }
    return prior;
}

}  // namespace deltadeno
