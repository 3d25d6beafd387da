#include "gazeatt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "gazeatt/gaze_processing.hpp"
#include "gazeatt/hash.hpp"
#include "gazeatt/objectives.hpp"

namespace gazeatt {

namespace fs = std::filesystem;
using nlohmann::json;

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

void PhantomConfig::validate() const {
    for (int s : shape)
        if (s < 1) throw std::invalid_argument("PhantomConfig: bad shape");
    if (channels < 1 || num_regions < 1)
        throw std::invalid_argument("PhantomConfig: bad counts");
    if (blob_count_min < 1 || blob_count_max < blob_count_min)
        throw std::invalid_argument("PhantomConfig: bad blob count range");
    if (blob_radius_min <= 0 || blob_radius_max < blob_radius_min)
        throw std::invalid_argument("PhantomConfig: bad radius range");
    const int min_dim = std::min(shape[1], shape[2]);
    if (blob_radius_max * 2.0 >= min_dim)
        throw std::invalid_argument("PhantomConfig: blob radius does not fit in shape");
}

void GazeSimConfig::validate() const {
    if (fixations_min < 0 || fixations_max < fixations_min)
        throw std::invalid_argument("GazeSimConfig: bad fixation range");
    if (boundary_bias < 0 || boundary_bias > 1)
        throw std::invalid_argument("GazeSimConfig: boundary_bias must be in [0,1]");
    if (duration_ms <= 0) throw std::invalid_argument("GazeSimConfig: bad duration");
}

namespace {

struct Blob {
    double z, y, x, r;
};

// Smooth head ellipsoid in [0,1]; 1 at the center, 0 outside.
double head_field(const Shape3& sh, int z, int y, int x) {
    auto t = [](int i, int n) {
        return n > 1 ? (2.0 * i - n + 1.0) / (n - 1.0) : 0.0;
    };
    const double rz = sh[0] > 1 ? t(z, sh[0]) / 0.9 : 0.0;
    const double ry = t(y, sh[1]) / 0.9;
    const double rx = t(x, sh[2]) / 0.9;
    const double q = rz * rz + ry * ry + rx * rx;
    return q >= 1.0 ? 0.0 : 1.0 - q;
}

double tumor_field(const std::vector<Blob>& blobs, const Shape3& sh, int z, int y, int x) {
    double f = 0.0;
    for (const auto& b : blobs) {
        const double dz = sh[0] > 1 ? z - b.z : 0.0;
        const double dy = y - b.y;
        const double dx = x - b.x;
        const double d2 = dz * dz + dy * dy + dx * dx;
        f = std::max(f, std::exp(-d2 / (2.0 * b.r * b.r)));
    }
    return f;
}

std::vector<float> union_mask(const SegmentationMask& mask) {
    std::vector<float> u(mask.voxels(), 0.0f);
    for (int r = 0; r < mask.regions; ++r)
        for (std::size_t i = 0; i < u.size(); ++i)
            u[i] = std::max(u[i], mask.data[r * u.size() + i]);
    return u;
}

}  // namespace

DatasetRecord generate_phantom(const PhantomConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const Shape3 sh = cfg.shape;
    const bool flat = sh[0] == 1;

    std::uniform_int_distribution<int> count_dist(cfg.blob_count_min, cfg.blob_count_max);
    std::uniform_real_distribution<double> radius_dist(cfg.blob_radius_min, cfg.blob_radius_max);
    const int nblobs = count_dist(rng);
    std::vector<Blob> blobs;
    for (int i = 0; i < nblobs; ++i) {
        Blob b;
        b.r = radius_dist(rng);
        const double margin = 1.5 * b.r + 1.0;
        auto place = [&](int n) {
            if (n == 1) return 0.0;
            std::uniform_real_distribution<double> d(margin, n - 1 - margin);
            return d(rng);
        };
        b.z = flat ? 0.0 : place(sh[0]);
        b.y = place(sh[1]);
        b.x = place(sh[2]);
        blobs.push_back(b);
    }

    std::uniform_int_distribution<int> conf_count_dist(cfg.confuser_count_min,
                                                       cfg.confuser_count_max);
    const int nconf = cfg.confuser_count_max > 0 ? conf_count_dist(rng) : 0;
    std::vector<Blob> confusers;
    for (int i = 0; i < nconf; ++i) {
        Blob c;
        c.r = radius_dist(rng);
        const double margin = 1.5 * c.r + 1.0;
        auto place = [&](int n) {
            if (n == 1) return 0.0;
            std::uniform_real_distribution<double> d(margin, n - 1 - margin);
            return d(rng);
        };
        // keep distractors clear of the real lesions so the masks stay clean
        for (int attempt = 0; attempt < 64; ++attempt) {
            c.z = flat ? 0.0 : place(sh[0]);
            c.y = place(sh[1]);
            c.x = place(sh[2]);
            bool clear = true;
            for (const auto& b : blobs) {
                const double dz = c.z - b.z, dy = c.y - b.y, dx = c.x - b.x;
                if (std::sqrt(dz * dz + dy * dy + dx * dx) < 2.0 * (c.r + b.r)) {
                    clear = false;
                    break;
                }
            }
            if (clear) {
                confusers.push_back(c);
                break;
            }
        }
    }

    DatasetRecord rec;
    rec.volume.channels = cfg.channels;
    rec.volume.shape = sh;
    rec.volume.data.resize(static_cast<std::size_t>(cfg.channels) * shape_voxels(sh));

    SegmentationMask mask;
    mask.regions = cfg.num_regions;
    mask.shape = sh;
    mask.data.assign(static_cast<std::size_t>(cfg.num_regions) * shape_voxels(sh), 0.0f);

    // nested thresholds on the (noise-free) tumor field
    std::vector<double> thr(cfg.num_regions);
    for (int r = 0; r < cfg.num_regions; ++r)
        thr[r] = cfg.num_regions == 1 ? 0.4 : 0.4 + 0.4 * r / (cfg.num_regions - 1);

    // per-channel contrast renderings
    std::uniform_real_distribution<double> bg_dist(0.2, 0.5), tum_dist(0.4, 0.9);
    std::vector<double> bg_w(cfg.channels), tum_w(cfg.channels);
    for (int c = 0; c < cfg.channels; ++c) {
        bg_w[c] = bg_dist(rng);
        tum_w[c] = tum_dist(rng);
    }

    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    const std::size_t plane = shape_voxels(sh);
    std::size_t p = 0;
    for (int z = 0; z < sh[0]; ++z)
        for (int y = 0; y < sh[1]; ++y)
            for (int x = 0; x < sh[2]; ++x, ++p) {
                const double head = head_field(sh, z, y, x);
                const double tumor = tumor_field(blobs, sh, z, y, x);
                const double conf =
                    confusers.empty() ? 0.0 : tumor_field(confusers, sh, z, y, x);
                for (int r = 0; r < cfg.num_regions; ++r)
                    if (tumor > thr[r]) mask.data[r * plane + p] = 1.0f;
                for (int c = 0; c < cfg.channels; ++c) {
                    const double cw = c == 0 ? cfg.confuser_suppression * tum_w[0] : tum_w[c];
                    rec.volume.data[c * plane + p] = static_cast<float>(
                        bg_w[c] * head + tum_w[c] * tumor + cw * conf + noise(rng));
                }
            }
    rec.mask = std::move(mask);
    rec.id = "phantom_" + hex64(cfg.seed);

    // 2D single-channel mode gets 5 synthetic binary labels from blob attributes
    if (flat && cfg.channels == 1) {
        double mean_r = 0.0, cy = 0.0, cx = 0.0;
        for (const auto& b : blobs) { mean_r += b.r; cy += b.y; cx += b.x; }
        mean_r /= nblobs;
        cy /= nblobs;
        cx /= nblobs;
        std::size_t wt = 0;
        for (std::size_t i = 0; i < plane; ++i) wt += rec.mask->data[i] > 0.5f;
        rec.labels = std::vector<float>{
            nblobs >= 2 ? 1.0f : 0.0f,
            mean_r > (cfg.blob_radius_min + cfg.blob_radius_max) / 2.0 ? 1.0f : 0.0f,
            cy < sh[1] / 2.0 ? 1.0f : 0.0f,
            cx < sh[2] / 2.0 ? 1.0f : 0.0f,
            static_cast<double>(wt) / plane > 0.03 ? 1.0f : 0.0f};
    }
    rec.validate();
    return rec;
}

FixationSequence simulate_gaze(const DatasetRecord& record, const GazeSimConfig& cfg) {
    cfg.validate();
    if (!record.mask) throw std::invalid_argument("simulate_gaze: record has no mask");
    const Shape3 sh = record.volume.shape;
    const std::size_t plane = shape_voxels(sh);
    std::mt19937_64 rng(cfg.seed);

    const auto wt = union_mask(*record.mask);
    const bool expert = cfg.expertise == GazeSimConfig::Expertise::expert;

    auto coords_of = [&](std::size_t i) {
        const int z = static_cast<int>(i / (static_cast<std::size_t>(sh[1]) * sh[2]));
        const int y = static_cast<int>((i / sh[2]) % sh[1]);
        const int x = static_cast<int>(i % sh[2]);
        return std::array<int, 3>{z, y, x};
    };

    std::vector<std::size_t> interior, shell, head;
    for (std::size_t i = 0; i < plane; ++i) {
        const auto c = coords_of(i);
        if (wt[i] > 0.5f) {
            bool boundary = false;
            const int dz[] = {-1, 1, 0, 0, 0, 0}, dy[] = {0, 0, -1, 1, 0, 0},
                      dx[] = {0, 0, 0, 0, -1, 1};
            for (int k = 0; k < 6; ++k) {
                const int z = c[0] + dz[k], y = c[1] + dy[k], x = c[2] + dx[k];
                if (z < 0 || z >= sh[0] || y < 0 || y >= sh[1] || x < 0 || x >= sh[2] ||
                    wt[(static_cast<std::size_t>(z) * sh[1] + y) * sh[2] + x] <= 0.5f) {
                    boundary = true;
                    break;
                }
            }
            (boundary ? shell : interior).push_back(i);
        }
        if (head_field(sh, c[0], c[1], c[2]) > 0.05) head.push_back(i);
    }
    if (expert && shell.empty() && interior.empty())
        throw std::invalid_argument("simulate_gaze: expert mode needs a non-empty mask");
    if (interior.empty()) interior = shell;  // thin tumors may have no strict interior

    std::uniform_int_distribution<int> nfix_dist(cfg.fixations_min, cfg.fixations_max);
    const int nfix = nfix_dist(rng);
    FixationSequence out;
    if (nfix == 0) return out;

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, 0.8), micro(0.0, 0.1);
    auto pick = [&](const std::vector<std::size_t>& pool) {
        std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
        return coords_of(pool[d(rng)]);
    };

    const double slot = cfg.duration_ms / nfix;
    double t = 0.0;
    for (int f = 0; f < nfix; ++f) {
        std::array<int, 3> c{};
        if (expert) {
            c = (u01(rng) < cfg.boundary_bias && !shell.empty()) ? pick(shell) : pick(interior);
        } else {
            // mild tumor bias only
            c = (u01(rng) < 0.10 && !interior.empty()) ? pick(interior)
                                                       : pick(head.empty() ? interior : head);
        }
        double fz = c[0] + (sh[0] > 1 ? jitter(rng) : 0.0);
        double fy = c[1] + jitter(rng);
        double fx = c[2] + jitter(rng);
        fz = std::clamp(fz, 0.0, sh[0] - 1.0);
        fy = std::clamp(fy, 0.0, sh[1] - 1.0);
        fx = std::clamp(fx, 0.0, sh[2] - 1.0);

        // dwell run of raw samples; the I-VT filter recovers one fixation
        const double dwell = slot * 0.75;
        const int nraw = 5;
        for (int s = 0; s < nraw; ++s) {
            GazeSample g;
            g.t = t + s * (dwell / (nraw - 1));
            g.z = std::clamp(fz + (sh[0] > 1 ? micro(rng) : 0.0), 0.0, sh[0] - 1.0);
            g.y = std::clamp(fy + micro(rng), 0.0, sh[1] - 1.0);
            g.x = std::clamp(fx + micro(rng), 0.0, sh[2] - 1.0);
            g.duration = dwell / (nraw - 1);
            g.kind = GazeSample::Kind::raw;
            out.samples.push_back(g);
        }
        t += slot;
    }
    return out;
}

double gaze_hit_rate(const DatasetRecord& record, const FixationSequence& gaze, int dilate) {
    if (!record.mask || gaze.samples.empty()) return 0.0;
    const Shape3 sh = record.volume.shape;
    const auto wt = union_mask(*record.mask);
    const auto d2 = distance_sq_to_mask(wt, sh);
    std::size_t hits = 0;
    for (const auto& s : gaze.samples) {
        const int z = std::clamp(static_cast<int>(std::lround(s.z)), 0, sh[0] - 1);
        const int y = std::clamp(static_cast<int>(std::lround(s.y)), 0, sh[1] - 1);
        const int x = std::clamp(static_cast<int>(std::lround(s.x)), 0, sh[2] - 1);
        const double dist2 = d2[(static_cast<std::size_t>(z) * sh[1] + y) * sh[2] + x];
        if (dist2 <= static_cast<double>(dilate) * dilate) ++hits;
    }
    return static_cast<double>(hits) / gaze.samples.size();
}

std::string build_dataset(const DatasetBuildConfig& cfg, const std::string& out_dir) {
    cfg.phantom.validate();
    cfg.gaze.validate();
    if (cfg.n < 1) throw std::invalid_argument("build_dataset: n must be >= 1");
    if (cfg.gaze_ratio < 0 || cfg.gaze_ratio > 1)
        throw std::invalid_argument("build_dataset: gaze_ratio must be in [0,1]");
    fs::create_directories(out_dir);

    // deterministic split assignment
    std::vector<int> order(cfg.n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 split_rng(splitmix64(cfg.phantom.seed ^ 0x5b7e151628aed2a6ULL));
    std::shuffle(order.begin(), order.end(), split_rng);
    const int n_train = std::max(1, static_cast<int>(std::lround(cfg.n * cfg.train_frac)));
    const int n_val = std::max(cfg.n > 1 ? 1 : 0,
                               static_cast<int>(std::lround(cfg.n * cfg.val_frac)));
    std::vector<std::string> split(cfg.n, "test");
    std::vector<int> train_ids;
    for (int k = 0; k < cfg.n; ++k) {
        if (k < n_train) {
            split[order[k]] = "train";
            train_ids.push_back(order[k]);
        } else if (k < n_train + n_val && k < cfg.n) {
            split[order[k]] = "val";
        }
    }
    // gaze flags: the first round(ratio * n_train) of the shuffled train order
    const int n_gaze = static_cast<int>(std::lround(cfg.gaze_ratio * train_ids.size()));
    std::vector<bool> has_gaze(cfg.n, false);
    for (int k = 0; k < n_gaze; ++k) has_gaze[train_ids[k]] = true;

    json records = json::array();
    for (int i = 0; i < cfg.n; ++i) {
        PhantomConfig pcfg = cfg.phantom;
        pcfg.seed = derive_seed(cfg.phantom.seed, static_cast<std::uint64_t>(i));
        DatasetRecord rec = generate_phantom(pcfg);

        GazeSimConfig gcfg = cfg.gaze;
        gcfg.seed = derive_seed(cfg.gaze.seed ^ 0xa5a5a5a5ULL, static_cast<std::uint64_t>(i));
        FixationSequence gaze = simulate_gaze(rec, gcfg);

        char base[32];
        std::snprintf(base, sizeof base, "rec_%04d", i);
        const std::string stem = std::string(base);
        write_volume(rec.volume, (fs::path(out_dir) / (stem + "_vol")).string());
        write_mask(*rec.mask, (fs::path(out_dir) / (stem + "_mask")).string());
        write_fixations(gaze, (fs::path(out_dir) / (stem + "_fix.csv")).string());

        json r;
        r["id"] = stem;
        r["seed"] = pcfg.seed;
        r["volume"] = stem + "_vol";
        r["mask"] = stem + "_mask";
        r["fixations"] = stem + "_fix.csv";
        r["split"] = split[i];
        r["has_gaze"] = static_cast<bool>(has_gaze[i]);
        if (rec.labels) r["labels"] = *rec.labels;
        if (rec.mask && rec.mask->regions > 0) {
            // 3-class survival proxy from whole-tumor burden
            const std::size_t plane = rec.mask->voxels();
            double wt = 0.0;
            for (std::size_t p = 0; p < plane; ++p) wt += rec.mask->data[p];
            const double frac = wt / static_cast<double>(plane);
            r["survival"] = frac < 0.013 ? 2 : (frac < 0.03 ? 1 : 0);
        }
        if (has_gaze[i]) {
            FixationSequence fix = filter_fixations(gaze, FixationFilterConfig{});
            GazeMap imp = rasterize_fixations(fix, rec.volume.shape);
            GazeMap blur = gaussian_gaze_map(imp, cfg.gaze_kernel_size);
            GazeMap ds = downsample_gaze_map(blur, cfg.gaze_downsample);
            write_gaze_map(ds, (fs::path(out_dir) / (stem + "_gaze")).string());
            r["gaze_map"] = stem + "_gaze";
        }
        records.push_back(r);
    }

    json manifest;
    manifest["records"] = records;
    manifest["shape"] = {cfg.phantom.shape[0], cfg.phantom.shape[1], cfg.phantom.shape[2]};
    manifest["channels"] = cfg.phantom.channels;
    manifest["num_regions"] = cfg.phantom.num_regions;
    manifest["gaze_ratio"] = cfg.gaze_ratio;
    manifest["expertise"] =
        cfg.gaze.expertise == GazeSimConfig::Expertise::expert ? "expert" : "non_expert";
    manifest["seed"] = cfg.phantom.seed;
    manifest["content_hash"] = hex64(fnv1a64(records.dump()));

    const std::string path = (fs::path(out_dir) / "manifest.json").string();
    std::ofstream out(path);
    if (!out.good()) throw std::runtime_error("build_dataset: cannot write " + path);
    out << manifest.dump(2) << "\n";
    return path;
}

}  // namespace gazeatt
