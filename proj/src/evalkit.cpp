// Copyright 2026 The DeltaDeno Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltadeno/evalkit.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

#include "deltadeno/io.hpp"
#include "deltadeno/maskops.hpp"
#include "deltadeno/pipeline.hpp"
#include "deltadeno/random.hpp"

namespace deltadeno {

namespace {

void require_mask_shape(const BinaryMask& a, int height, int width, const char* what) {
    if (a.height() != height || a.width() != width) {
        throw ShapeError(std::string(what) + ": mask is " + std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + ", expected " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

LinearCodec codec_for_latent(const Shape3& latent) {
    if (latent.channels == 4) {
        return LinearCodec(LinearCodec::Kind::Pool2x, Shape3{2 * latent.height, 2 * latent.width, 3});
    }
    if (latent.channels == 3) {
        return LinearCodec(LinearCodec::Kind::Identity, latent);
    }
    throw ShapeError("scenario latents need 3 or 4 channels, got " + std::to_string(latent.channels));
}

std::string json_cell(const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::string fixed(double v, int digits = 6) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(digits);
    out << v;
    return out.str();
}

ToyScenario base_scenario(std::uint64_t seed, const ScenarioOptions& options) {
    if (options.min_side < 1 || options.max_side < options.min_side || options.max_side > options.latent.height ||
        options.max_side > options.latent.width) {
        throw std::invalid_argument("scenario rectangle sides do not fit the latent grid");
    }
    NormalSampler rng(seed);
    auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.uniform() * static_cast<double>(hi - lo + 1)); };
    const Shape3 shape = options.latent;

    ToyScenario s;
    s.seed = seed;
    s.sigma0 = options.sigma0;
    s.mu_normal = rng.latent(shape);
    s.z0_normal = s.mu_normal;
    const LatentGrid noise = rng.latent(shape);
    for (std::size_t i = 0; i < noise.size(); ++i) s.z0_normal[i] += options.sigma0 * noise[i];

    const int h = pick(options.min_side, options.max_side);
    const int w = pick(options.min_side, options.max_side);
    const int y0 = pick(0, shape.height - h);
    const int x0 = pick(0, shape.width - w);

    // Every channel component is kept away from zero so the support is exactly the rectangle.
    std::vector<double> dir(static_cast<std::size_t>(shape.channels));
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& d : dir) {
            d = rng.next();
            norm += d * d;
        }
        norm = std::sqrt(norm);
    } while (std::any_of(dir.begin(), dir.end(), [&](double d) { return std::abs(d) < 0.05 * norm; }));
    s.offset.resize(dir.size());
    for (std::size_t c = 0; c < dir.size(); ++c) s.offset[c] = options.offset_norm * dir[c] / norm;

    s.gt = BinaryMask(shape.height, shape.width);
    s.mu_anomaly = s.mu_normal;
    for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) {
            s.gt.set(y, x, true);
            for (int c = 0; c < shape.channels; ++c) s.mu_anomaly.at(y, x, c) += s.offset[static_cast<std::size_t>(c)];
        }
    }
    return s;
}

}  // namespace

double mask_iou(const BinaryMask& pred, const BinaryMask& gt) {
    require_mask_shape(pred, gt.height(), gt.width(), "mask_iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        inter += (pred[i] && gt[i]) ? 1 : 0;
        uni += (pred[i] || gt[i]) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double region_energy_ratio(const Grid2D& s, const BinaryMask& gt, int dilate_px) {
    require_mask_shape(gt, s.height(), s.width(), "region_energy_ratio");
    if (dilate_px < 0) throw std::invalid_argument("dilate must be nonnegative");
    const BinaryMask region = dilate_px > 0 ? dilate(gt, 2 * dilate_px + 1) : gt;
    double inside = 0.0, total = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!(s[i] >= 0.0)) throw std::invalid_argument("region_energy_ratio needs a nonnegative map");
        total += s[i];
        if (region[i]) inside += s[i];
    }
    return total > 0.0 ? inside / total : 0.0;
}

double outside_change(const LatentGrid& before, const LatentGrid& after, const BinaryMask& gt) {
    require_same_shape(before, after, "outside_change");
    require_mask_shape(gt, before.height(), before.width(), "outside_change");
    double sum = 0.0;
    std::size_t count = 0;
    for (int y = 0; y < before.height(); ++y) {
        for (int x = 0; x < before.width(); ++x) {
            if (gt.at(y, x)) continue;
            for (int c = 0; c < before.channels(); ++c) {
                sum += std::abs(after.at(y, x, c) - before.at(y, x, c));
                ++count;
            }
        }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

ToyScenario make_rect_scenario(std::uint64_t seed, const ScenarioOptions& options) {
    ToyScenario s = base_scenario(seed, options);
    s.foreground = Grid2D(options.latent.height, options.latent.width, 1.0);
    return s;
}

ToyScenario make_prior_scenario(std::uint64_t seed, const ScenarioOptions& options) {
    ToyScenario s = base_scenario(seed, options);
    s.foreground = s.gt.to_grid();
    return s;
}

std::unique_ptr<DenoiserBackend> make_scenario_backend(const DeltaDenoConfig& cfg, const ToyScenario& scenario) {
    const LinearCodec codec = codec_for_latent(scenario.mu_normal.shape());
    if (cfg.backend.kind == "analytic") {
        auto backend =
            std::make_unique<AnalyticGaussianBackend>(codec, scenario.sigma0, cfg.seed, cfg.backend.embedding_dim);
        backend->register_mean(cfg.prompts.normal_prompt(), scenario.mu_normal);
        backend->register_mean(cfg.prompts.anomaly_prompt(), scenario.mu_anomaly);
        backend->register_unconditional_mean(scenario.mu_normal);
        return backend;
    }
    if (cfg.backend.kind == "synthetic_attention") {
        SyntheticAttentionBackend::Options options;
        options.data_std = scenario.sigma0;
        options.embedding_dim = cfg.backend.embedding_dim;
        auto backend = std::make_unique<SyntheticAttentionBackend>(codec, cfg.seed, options);
        backend->set_base_latent(scenario.mu_normal);
        const auto normal_tokens = tokenize(cfg.prompts.normal_prompt());
        const std::set<std::string> normal_set(normal_tokens.begin(), normal_tokens.end());
        for (const std::string& token : tokenize(cfg.prompts.anomaly_prompt())) {
            if (!normal_set.count(token)) backend->set_token_target(token, scenario.offset);
        }
        return backend;
    }
    throw ConfigError("scenarios support the analytic and synthetic_attention backends, not '" + cfg.backend.kind +
                      "'");
}

ScenarioOutcome run_scenario(const DeltaDenoConfig& cfg, const ToyScenario& scenario) {
    const auto backend = make_scenario_backend(cfg, scenario);
    const LatentRun run = run_latent(cfg, *backend, scenario.z0_normal, scenario.foreground);
    ScenarioOutcome out;
    out.final_mask = run.final_mask_latent;
    out.s_final = run.branches.s_final;
    out.iou = mask_iou(out.final_mask, scenario.gt);
    out.energy_ratio = region_energy_ratio(out.s_final, scenario.gt, 1);
    out.mask_pixels = out.final_mask.pixel_count();
    out.mid_mask_pixels = run.branches.mask_mid.pixel_count();
    out.outside_change = outside_change(scenario.z0_normal, run.branches.z_final_anomaly, scenario.gt);
    out.loss_trace_present = !run.prompts.loss_trace.empty();
    return out;
}

ToyScenario scenario_for_trial(const DeltaDenoConfig& cfg, std::size_t trial, const ScenarioOptions& options) {
    const std::uint64_t seed = cfg.seed + trial;
    return cfg.backend.kind == "synthetic_attention" ? make_prior_scenario(seed, options)
                                                     : make_rect_scenario(seed, options);
}

SweepGrid sweep_grid_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("sweep grid must be a JSON object");
    SweepGrid grid;
    for (const auto& item : doc.items()) {
        if (item.key() == "trials") {
            if (!item.value().is_number_integer() || item.value().get<int>() < 1) {
                throw ConfigError("sweep grid 'trials' must be a positive integer");
            }
            grid.trials = item.value().get<int>();
        } else if (item.key() == "parameters") {
            if (!item.value().is_object()) throw ConfigError("sweep grid 'parameters' must be an object");
            for (const auto& p : item.value().items()) {
                if (!p.value().is_array() || p.value().empty()) {
                    throw ConfigError("sweep parameter '" + p.key() + "' needs a non-empty array of values");
                }
                grid.parameters.emplace_back(p.key(), std::vector<nlohmann::json>(p.value().begin(), p.value().end()));
            }
        } else {
            throw ConfigError("unknown sweep grid key '" + item.key() + "'");
        }
    }
    return grid;
}

SweepReport sweep(const DeltaDenoConfig& cfg, const SweepGrid& grid, const SweepOptions& options) {
    cfg.validate();
    if (grid.trials < 1) throw ConfigError("sweep needs at least one trial per cell");
    std::size_t cell_count = 1;
    for (const auto& [key, values] : grid.parameters) {
        if (values.empty()) throw ConfigError("sweep parameter '" + key + "' has no values");
        cell_count *= values.size();
    }

    SweepReport report;
    report.cells.resize(cell_count);
    for (std::size_t idx = 0; idx < cell_count; ++idx) {
        SweepCell& cell = report.cells[idx];
        cell.index = idx;
        std::size_t rest = idx;
        for (auto it = grid.parameters.rbegin(); it != grid.parameters.rend(); ++it) {
            cell.values.emplace_back(it->first, it->second[rest % it->second.size()]);
            rest /= it->second.size();
        }
        std::reverse(cell.values.begin(), cell.values.end());
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t idx = next++; idx < cell_count; idx = next++) {
            SweepCell& cell = report.cells[idx];
            const auto started = std::chrono::steady_clock::now();
            try {
                DeltaDenoConfig cell_cfg = cfg;
                for (const auto& [key, value] : cell.values) cell_cfg = with_override(cell_cfg, key, value);
                std::vector<double> iou, energy, pixels, outside;
                bool trace = false;
                for (int t = 0; t < grid.trials; ++t) {
                    DeltaDenoConfig trial_cfg = cell_cfg;
                    trial_cfg.seed = cfg.seed + static_cast<std::uint64_t>(t);
                    const ToyScenario scenario = scenario_for_trial(cfg, static_cast<std::size_t>(t), options.scenario);
                    const ScenarioOutcome o = run_scenario(trial_cfg, scenario);
                    iou.push_back(o.iou);
                    energy.push_back(o.energy_ratio);
                    pixels.push_back(static_cast<double>(o.mask_pixels));
                    outside.push_back(o.outside_change);
                    trace = trace || o.loss_trace_present;
                }
                cell.iou = median(iou);
                cell.energy_ratio = median(energy);
                cell.mask_pixels = mean(pixels);
                cell.outside_change = mean(outside);
                cell.loss_trace_present = trace;
                cell.ok = true;
            } catch (const std::exception& e) {
                cell.ok = false;
                cell.error = e.what();
            }
            if (options.record_timings) {
                cell.runtime_ms =
                    std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
            }
        }
    };
    const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), cell_count);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    std::ostringstream csv;
    csv << "cell";
    for (const auto& [key, values] : grid.parameters) csv << ',' << key;
    csv << ",status,iou,energy_ratio,mask_pixels,outside_change,loss_trace_present,runtime_ms,error\n";
    for (const SweepCell& cell : report.cells) {
        csv << cell.index;
        for (const auto& [key, value] : cell.values) {
            std::string text = json_cell(value);
            if (text.find_first_of(",\"") != std::string::npos) {
                std::string quoted = "\"";
                for (char ch : text) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
                text = quoted + "\"";
            }
            csv << ',' << text;
        }
        std::string error = cell.error;
        std::replace(error.begin(), error.end(), ',', ';');
        std::replace(error.begin(), error.end(), '\n', ' ');
        csv << ',' << (cell.ok ? "ok" : "failed") << ',' << fixed(cell.iou) << ',' << fixed(cell.energy_ratio) << ','
            << fixed(cell.mask_pixels, 2) << ',' << fixed(cell.outside_change) << ','
            << (cell.loss_trace_present ? 1 : 0) << ',' << fixed(cell.runtime_ms, 1) << ',' << error << '\n';
    }
    report.csv = csv.str();

    std::ostringstream summary;
    summary << "sweep: " << cell_count << " cells x " << grid.trials << " trials, backend " << cfg.backend.kind << "\n\n";
    for (const SweepCell& cell : report.cells) {
        std::string label;
        for (const auto& [key, value] : cell.values) {
            if (!label.empty()) label += " ";
            label += key + "=" + json_cell(value);
        }
        if (label.empty()) label = "base";
        summary << "  [" << cell.index << "] " << label;
        if (cell.ok) {
            summary << "  iou " << fixed(cell.iou, 3) << "  energy " << fixed(cell.energy_ratio, 3) << "  pixels "
                    << fixed(cell.mask_pixels, 1) << "  outside " << fixed(cell.outside_change, 4) << '\n';
        } else {
            summary << "  FAILED: " << cell.error << '\n';
        }
    }
    report.summary = summary.str();
    return report;
}

void write_sweep_report(const SweepReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / "sweep.csv", report.csv);
    write_text_file(dir / "summary.txt", report.summary);

    // Bar chart of median IoU per cell; failed cells are drawn as a red stub.
    constexpr int kBarWidth = 24, kGap = 8, kHeight = 160, kMargin = 10;
    const int n = std::max<int>(1, static_cast<int>(report.cells.size()));
    const int width = 2 * kMargin + n * kBarWidth + (n - 1) * kGap;
    ImageGrid plot(Shape3{kHeight + 2 * kMargin, width, 3}, 1.0);
    for (int x = kMargin - 2; x < width - kMargin + 2; ++x) {
        for (int c = 0; c < 3; ++c) plot.at(kHeight + kMargin, x, c) = 0.0;
    }
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
        const SweepCell& cell = report.cells[i];
        const int x0 = kMargin + static_cast<int>(i) * (kBarWidth + kGap);
        const int bar = cell.ok ? static_cast<int>(std::lround(std::clamp(cell.iou, 0.0, 1.0) * kHeight)) : 4;
        const double rgb[3] = {cell.ok ? 0.2 : 0.85, cell.ok ? 0.4 : 0.1, cell.ok ? 0.8 : 0.1};
        for (int y = kHeight + kMargin - bar; y < kHeight + kMargin; ++y) {
            for (int x = x0; x < x0 + kBarWidth; ++x) {
                for (int c = 0; c < 3; ++c) plot.at(y, x, c) = rgb[c];
            }
        }
    }
    write_png_rgb(dir / "iou.png", plot);
}

}  // namespace deltadeno
