#include "wsss/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wsss/errors.hpp"
#include "wsss/image_io.hpp"

namespace wsss::data {

namespace fs = std::filesystem;

bool DatasetManifest::has_masks() const {
    if (entries.empty()) return false;
    for (const auto& e : entries)
        if (e.mask_path.empty()) return false;
    return true;
}

std::string DatasetManifest::resolve(const std::string& rel) const {
    return base_dir.empty() ? rel : base_dir + "/" + rel;
}

void DatasetManifest::validate(bool check_paths) const {
    if (split != "train" && split != "val") throw ValueError("manifest split must be train or val, got " + split);
    if (num_classes < 2) throw ValueError("manifest needs K >= 2");
    for (const auto& e : entries) {
        if (static_cast<int>(e.label.size()) != num_classes)
            throw ValueError("entry " + e.image_path + " has " + std::to_string(e.label.size()) + " label entries, K=" +
                             std::to_string(num_classes));
        if (mode == core::LabelMode::Indicator && e.label.back() != 1.0)
            throw ValueError("entry " + e.image_path + " is missing the background bit");
        if (check_paths) {
            if (!fs::exists(resolve(e.image_path))) throw ResourceError("missing image " + resolve(e.image_path));
            if (!e.mask_path.empty() && !fs::exists(resolve(e.mask_path)))
                throw ResourceError("missing mask " + resolve(e.mask_path));
        }
    }
}

void DatasetManifest::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest " + path);
    f << "wsss-manifest v1\n";
    f << "split " << split << "\n";
    f << "classes " << num_classes << "\n";
    f << "size " << height << " " << width << "\n";
    f << "seed " << seed << "\n";
    f << "mode " << (mode == core::LabelMode::Indicator ? "indicator" : "soft-area") << "\n";
    f << "count " << entries.size() << "\n";
    char buf[64];
    for (const auto& e : entries) {
        f << "entry " << e.image_path;
        for (double v : e.label) {
            if (mode == core::LabelMode::Indicator) {
                f << " " << static_cast<int>(v);
            } else {
                std::snprintf(buf, sizeof(buf), "%.17g", v);
                f << " " << buf;
            }
        }
        f << " " << (e.mask_path.empty() ? "-" : e.mask_path) << "\n";
    }
    if (!f) throw IoError("short write to manifest " + path);
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read manifest " + path);
    DatasetManifest m;
    m.base_dir = fs::path(path).parent_path().string();
    std::string line;
    if (!std::getline(f, line) || line != "wsss-manifest v1") throw IoError(path + ": not a manifest file");
    size_t expected = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key == "split") {
            is >> m.split;
        } else if (key == "classes") {
            is >> m.num_classes;
        } else if (key == "size") {
            is >> m.height >> m.width;
        } else if (key == "seed") {
            is >> m.seed;
        } else if (key == "mode") {
            std::string v;
            is >> v;
            m.mode = v == "indicator" ? core::LabelMode::Indicator : core::LabelMode::SoftArea;
        } else if (key == "count") {
            is >> expected;
        } else if (key == "entry") {
            ManifestEntry e;
            is >> e.image_path;
            e.label.resize(m.num_classes);
            for (int i = 0; i < m.num_classes; ++i) is >> e.label[i];
            is >> e.mask_path;
            if (!is) throw IoError(path + ": malformed entry line");
            if (e.mask_path == "-") e.mask_path.clear();
            m.entries.push_back(std::move(e));
        } else {
            throw IoError(path + ": unknown manifest key '" + key + "'");
        }
    }
    if (expected != m.entries.size())
        throw IoError(path + ": entry count mismatch (" + std::to_string(m.entries.size()) + " vs declared " +
                      std::to_string(expected) + ")");
    return m;
}

void SyntheticSceneParams::validate() const {
    if (height % 16 != 0 || width % 16 != 0) throw ValueError("canvas size must be divisible by 16");
    if (num_foreground_classes < 1) throw ValueError("need at least one foreground class");
    if (num_foreground_classes > 6) throw ValueError("palette supports at most 6 foreground classes");
    if (min_shapes_per_class < 1 || max_shapes_per_class < min_shapes_per_class)
        throw ValueError("invalid shapes-per-class range");
    if (kinds.empty()) throw ValueError("no shape kinds enabled");
    if (!(min_size_frac > 0.0 && max_size_frac >= min_size_frac && max_size_frac <= 1.0))
        throw ValueError("invalid size range");
    if (!(foreground_presence_probability >= 0.0 && foreground_presence_probability <= 1.0))
        throw ValueError("presence probability must lie in [0,1]");
}

namespace {

struct Rgb {
    double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c; g = x;
    } else if (hp < 2) {
        r = x; g = c;
    } else if (hp < 3) {
        g = c; b = x;
    } else if (hp < 4) {
        g = x; b = c;
    } else if (hp < 5) {
        r = x; b = c;
    } else {
        r = c; b = x;
    }
    return {r + (v - c), g + (v - c), b + (v - c)};
}

// paints every pixel the predicate admits; returns how many were painted
template <typename Inside>
int paint_shape(Tensor& img, Tensor& label, int cls, const Rgb& color, double noise, Rng& rng, Inside inside) {
    const int h = label.dim(0), w = label.dim(1);
    const int64_t hw = static_cast<int64_t>(h) * w;
    int painted = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!inside(x + 0.5, y + 0.5)) continue;
            const int64_t p = static_cast<int64_t>(y) * w + x;
            label[p] = cls;
            img[p] = std::clamp(color.r + noise * rng.normal(), 0.0, 1.0);
            img[hw + p] = std::clamp(color.g + noise * rng.normal(), 0.0, 1.0);
            img[2 * hw + p] = std::clamp(color.b + noise * rng.normal(), 0.0, 1.0);
            ++painted;
        }
    }
    return painted;
}

int paint_random_shape(Tensor& img, Tensor& label, int cls, const Rgb& color, const SyntheticSceneParams& pr,
                       Rng& rng) {
    const int h = pr.height, w = pr.width;
    const double base = std::min(h, w);
    for (int attempt = 0; attempt < 100; ++attempt) {
        const double ext = rng.uniform(pr.min_size_frac, pr.max_size_frac) * base;
        const double ax = std::max(2.0, 0.5 * ext * rng.uniform(0.7, 1.3));
        const double ay = std::max(2.0, 0.5 * ext * rng.uniform(0.7, 1.3));
        const double cx = rng.uniform(ax, w - ax);
        const double cy = rng.uniform(ay, h - ay);
        const ShapeKind kind = pr.kinds[rng.uniform_int(0, static_cast<int>(pr.kinds.size()) - 1)];
        int painted = 0;
        if (kind == ShapeKind::Ellipse) {
            painted = paint_shape(img, label, cls, color, pr.noise_level, rng, [&](double x, double y) {
                const double dx = (x - cx) / ax, dy = (y - cy) / ay;
                return dx * dx + dy * dy <= 1.0;
            });
        } else if (kind == ShapeKind::Rectangle) {
            painted = paint_shape(img, label, cls, color, pr.noise_level, rng, [&](double x, double y) {
                return std::abs(x - cx) <= ax && std::abs(y - cy) <= ay;
            });
        } else {
            const double x0 = cx + rng.uniform(-ax, ax), y0 = cy - ay;
            const double x1 = cx - ax, y1 = cy + ay;
            const double x2 = cx + ax, y2 = cy + rng.uniform(0.0, ay);
            const double area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
            if (std::abs(area2) < 0.15 * (2 * ax) * (2 * ay)) continue;  // too sliver-like
            auto side = [](double xa, double ya, double xb, double yb, double x, double y) {
                return (xb - xa) * (y - ya) - (yb - ya) * (x - xa);
            };
            painted = paint_shape(img, label, cls, color, pr.noise_level, rng, [&](double x, double y) {
                const double d0 = side(x0, y0, x1, y1, x, y);
                const double d1 = side(x1, y1, x2, y2, x, y);
                const double d2 = side(x2, y2, x0, y0, x, y);
                const bool neg = d0 < 0 || d1 < 0 || d2 < 0;
                const bool pos = d0 > 0 || d1 > 0 || d2 > 0;
                return !(neg && pos);
            });
        }
        if (painted > 0) return painted;
    }
    throw ValueError("shape generation kept producing zero-area shapes; size range degenerate");
}

}  // namespace

DatasetManifest generate_synthetic(const SyntheticSceneParams& params, int n, uint64_t seed,
                                   const std::string& out_dir) {
    params.validate();
    if (n < 1) throw ValueError("need n >= 1 synthetic scenes");
    fs::create_directories(out_dir + "/images");
    fs::create_directories(out_dir + "/masks");

    const int kk = params.num_foreground_classes + 1;
    const int h = params.height, w = params.width;
    const int64_t hw = static_cast<int64_t>(h) * w;
    // fixed, well-separated hues per foreground class
    const double hues[6] = {0.0, 0.33, 0.62, 0.12, 0.80, 0.48};

    DatasetManifest man;
    man.split = "train";
    man.num_classes = kk;
    man.height = h;
    man.width = w;
    man.seed = seed;
    man.mode = params.soft_labels ? core::LabelMode::SoftArea : core::LabelMode::Indicator;
    man.base_dir = out_dir;

    char name[64];
    for (int i = 0; i < n; ++i) {
        Rng rng(Rng::derive_seed(seed, static_cast<uint64_t>(i)));
        Tensor img({3, h, w});
        Tensor label({h, w}, static_cast<double>(kk - 1));

        // dark textured background
        const Rgb bg{rng.uniform(0.05, 0.35), rng.uniform(0.05, 0.35), rng.uniform(0.05, 0.35)};
        const Rgb bg2{rng.uniform(0.05, 0.35), rng.uniform(0.05, 0.35), rng.uniform(0.05, 0.35)};
        const bool gradient = rng.uniform() < 0.5;
        for (int y = 0; y < h; ++y) {
            const double t = gradient ? static_cast<double>(y) / (h - 1) : 0.0;
            for (int x = 0; x < w; ++x) {
                const int64_t p = static_cast<int64_t>(y) * w + x;
                img[p] = std::clamp(bg.r * (1 - t) + bg2.r * t + params.noise_level * rng.normal(), 0.0, 1.0);
                img[hw + p] = std::clamp(bg.g * (1 - t) + bg2.g * t + params.noise_level * rng.normal(), 0.0, 1.0);
                img[2 * hw + p] = std::clamp(bg.b * (1 - t) + bg2.b * t + params.noise_level * rng.normal(), 0.0, 1.0);
            }
        }

        bool any_fg = false;
        for (int cls = 0; cls < params.num_foreground_classes; ++cls) {
            if (rng.uniform() >= params.foreground_presence_probability) continue;
            any_fg = true;
            const int count = rng.uniform_int(params.min_shapes_per_class, params.max_shapes_per_class);
            for (int s = 0; s < count; ++s) {
                const double hue = std::fmod(hues[cls] + rng.uniform(-0.03, 0.03) + 1.0, 1.0);
                const Rgb fill = hsv_to_rgb(hue, rng.uniform(0.7, 1.0), rng.uniform(0.75, 1.0));
                paint_random_shape(img, label, cls, fill, params, rng);
            }
        }
        if (params.correlated_nuisance && any_fg) {
            // mid-gray distractor labeled as background, present only alongside
            // foreground: reproduces the correlated-concept failure mode
            const Rgb gray{rng.uniform(0.45, 0.6), rng.uniform(0.45, 0.6), rng.uniform(0.45, 0.6)};
            paint_random_shape(img, label, kk - 1, gray, params, rng);
        }

        // tags from the painted result, so occluded shapes do not count
        std::vector<int64_t> area(kk, 0);
        for (int64_t p = 0; p < hw; ++p) ++area[static_cast<int>(label[p])];

        ManifestEntry e;
        std::snprintf(name, sizeof(name), "images/img_%06d.ppm", i);
        e.image_path = name;
        std::snprintf(name, sizeof(name), "masks/msk_%06d.pgm", i);
        e.mask_path = name;
        e.label.resize(kk);
        for (int c = 0; c < kk; ++c) {
            if (params.soft_labels)
                e.label[c] = static_cast<double>(area[c]) / static_cast<double>(hw);
            else
                e.label[c] = (c == kk - 1 || area[c] > 0) ? 1.0 : 0.0;
        }
        imageio::write_ppm(man.resolve(e.image_path), img);
        imageio::write_pgm_labels(man.resolve(e.mask_path), label);
        man.entries.push_back(std::move(e));
    }
    return man;
}

std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& all, double train_ratio,
                                                           uint64_t seed) {
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ValueError("train ratio must lie in (0,1)");
    std::vector<int> idx(all.entries.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    Rng rng(Rng::derive_seed(seed, 0x511e7));
    shuffle_indices(idx, rng);
    const auto n_train = static_cast<size_t>(std::llround(train_ratio * static_cast<double>(idx.size())));

    DatasetManifest train = all, val = all;
    train.entries.clear();
    val.entries.clear();
    train.split = "train";
    val.split = "val";
    train.seed = val.seed = seed;
    for (size_t i = 0; i < idx.size(); ++i)
        (i < n_train ? train : val).entries.push_back(all.entries[idx[i]]);
    return {std::move(train), std::move(val)};
}

namespace {

std::vector<std::string> list_images(const std::string& dir) {
    if (!fs::is_directory(dir)) throw ResourceError(dir + " is not a directory");
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

std::pair<DatasetManifest, DatasetManifest> derive_tagged_dataset(const std::string& positive_dir,
                                                                  const std::string& negative_dir, int n_pos,
                                                                  int n_neg, int height, int width,
                                                                  double split_ratio, uint64_t seed,
                                                                  const std::string& out_dir) {
    if (n_pos < 1 || n_neg < 1) throw ValueError("need at least one image per population");
    auto pos = list_images(positive_dir);
    auto neg = list_images(negative_dir);
    if (static_cast<int>(pos.size()) < n_pos)
        throw ResourceError(positive_dir + " holds " + std::to_string(pos.size()) + " images, need " +
                            std::to_string(n_pos));
    if (static_cast<int>(neg.size()) < n_neg)
        throw ResourceError(negative_dir + " holds " + std::to_string(neg.size()) + " images, need " +
                            std::to_string(n_neg));

    fs::create_directories(out_dir + "/images");

    DatasetManifest all;
    all.split = "train";
    all.num_classes = 2;
    all.height = height;
    all.width = width;
    all.seed = seed;
    all.base_dir = out_dir;

    char name[64];
    auto import = [&](std::vector<std::string>& files, int n, const char* prefix, std::vector<double> label,
                      uint64_t stream) {
        std::vector<int> idx(files.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        Rng rng(Rng::derive_seed(seed, stream));
        shuffle_indices(idx, rng);
        for (int i = 0; i < n; ++i) {
            Tensor img = imageio::read_image(files[idx[i]]);
            img = imageio::resize_bilinear(img, height, width);
            std::snprintf(name, sizeof(name), "images/%s_%06d.ppm", prefix, i);
            imageio::write_ppm(all.resolve(name), img);
            all.entries.push_back({name, label, ""});
        }
    };
    import(pos, n_pos, "pos", {1.0, 1.0}, 0xbeef);
    import(neg, n_neg, "neg", {0.0, 1.0}, 0xcafe);

    return split_manifest(all, split_ratio, seed);
}

core::TagLabelBatch Batch::tag_batch(core::LabelMode mode) const {
    return core::TagLabelBatch::checked(labels, mode);
}

BatchLoader::BatchLoader(const DatasetManifest& manifest, int batch_size, bool shuffle, uint64_t seed)
    : manifest_(manifest), batch_size_(batch_size), shuffle_(shuffle), seed_(seed) {
    if (batch_size_ < 1) throw ValueError("batch size must be >= 1");
    manifest_.validate(false);
    has_masks_ = manifest_.has_masks();
    image_cache_.resize(manifest_.entries.size());
    mask_cache_.resize(manifest_.entries.size());
    start_epoch(0);
}

void BatchLoader::start_epoch(int epoch) {
    order_.resize(manifest_.entries.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    if (shuffle_) {
        Rng rng(Rng::derive_seed(seed_, 0x9 + static_cast<uint64_t>(epoch)));
        shuffle_indices(order_, rng);
    }
    cursor_ = 0;
}

int64_t BatchLoader::batches_per_epoch() const {
    return (static_cast<int64_t>(manifest_.entries.size()) + batch_size_ - 1) / batch_size_;
}

const Tensor& BatchLoader::image(int idx) {
    Tensor& slot = image_cache_[idx];
    if (!slot.defined()) {
        const auto& e = manifest_.entries[idx];
        slot = imageio::read_image(manifest_.resolve(e.image_path));
        if (slot.dim(1) != manifest_.height || slot.dim(2) != manifest_.width)
            throw IoError(manifest_.resolve(e.image_path) + ": size " + slot.shape_str() + " does not match manifest " +
                          std::to_string(manifest_.height) + "x" + std::to_string(manifest_.width));
    }
    return slot;
}

const Tensor& BatchLoader::mask(int idx) {
    Tensor& slot = mask_cache_[idx];
    if (!slot.defined()) {
        const auto& e = manifest_.entries[idx];
        slot = imageio::read_label_map(manifest_.resolve(e.mask_path));
        for (int64_t p = 0; p < slot.size(); ++p)
            if (slot[p] >= manifest_.num_classes)
                throw IoError(manifest_.resolve(e.mask_path) + ": label exceeds K-1");
    }
    return slot;
}

std::optional<Batch> BatchLoader::next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const int b = static_cast<int>(std::min<size_t>(batch_size_, order_.size() - cursor_));
    const int h = manifest_.height, w = manifest_.width, kk = manifest_.num_classes;
    const int64_t chw = 3LL * h * w;

    Batch out;
    out.images = Tensor({b, 3, h, w});
    out.labels = Tensor({b, kk});
    if (has_masks_) out.masks = Tensor({b, h, w});
    for (int i = 0; i < b; ++i) {
        const int idx = order_[cursor_ + i];
        out.indices.push_back(idx);
        const Tensor& img = image(idx);
        std::copy(img.data(), img.data() + chw, out.images.data() + i * chw);
        for (int c = 0; c < kk; ++c) out.labels.at({i, c}) = manifest_.entries[idx].label[c];
        if (has_masks_) {
            const Tensor& mk = mask(idx);
            std::copy(mk.data(), mk.data() + static_cast<int64_t>(h) * w,
                      out.masks.data() + static_cast<int64_t>(i) * h * w);
        }
    }
    cursor_ += b;
    return out;
}

}  // namespace wsss::data
