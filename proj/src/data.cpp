// SPDX-License-Identifier: Apache-2.0
#include "glformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "glformer/errors.hpp"

namespace glformer::data {

namespace fs = std::filesystem;

namespace {

bool is_image_ext(const fs::path& p) {
    const std::string e = p.extension().string();
    return e == ".png" || e == ".jpg" || e == ".jpeg";
}

Tensor image_to_tensor(const cv::Mat& bgr) {
    Tensor t({3, bgr.rows, bgr.cols});
    const std::int64_t plane = static_cast<std::int64_t>(bgr.rows) * bgr.cols;
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x) {
            const cv::Vec3b px = bgr.at<cv::Vec3b>(y, x);
            const std::int64_t i = static_cast<std::int64_t>(y) * bgr.cols + x;
            t[0 * plane + i] = px[2] / 255.0;  // R
            t[1 * plane + i] = px[1] / 255.0;  // G
            t[2 * plane + i] = px[0] / 255.0;  // B
        }
    return t;
}

cv::Mat tensor_to_image(const Tensor& t) {
    const int h = t.dim(1), w = t.dim(2);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    cv::Mat bgr(h, w, CV_8UC3);
    auto to_u8 = [](double v) {
        const double c = std::min(1.0, std::max(0.0, v));
        return static_cast<unsigned char>(std::lround(c * 255.0));
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::int64_t i = static_cast<std::int64_t>(y) * w + x;
            bgr.at<cv::Vec3b>(y, x) = cv::Vec3b(to_u8(t[2 * plane + i]), to_u8(t[1 * plane + i]),
                                                to_u8(t[0 * plane + i]));
        }
    return bgr;
}

}  // namespace

Tensor load_image(const std::string& path, int target_h, int target_w, int* orig_h, int* orig_w) {
    cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
    if (img.empty()) throw RuntimeFailure("unreadable image: " + path);
    if (orig_h) *orig_h = img.rows;
    if (orig_w) *orig_w = img.cols;
    if (img.rows != target_h || img.cols != target_w)
        cv::resize(img, img, cv::Size(target_w, target_h), 0, 0, cv::INTER_LINEAR);
    return image_to_tensor(img);
}

std::vector<Sample> load_dataset(const DatasetSpec& spec, int target_h, int target_w) {
    if (spec.split != "train" && spec.split != "test")
        throw ValidationError("dataset split must be 'train' or 'test', got '" + spec.split + "'");
    const fs::path images_dir = fs::path(spec.root) / spec.split / "images";
    const fs::path masks_dir = fs::path(spec.root) / spec.split / "masks";
    if (!fs::is_directory(images_dir))
        throw ValidationError("images directory not found: " + images_dir.string());
    if (!fs::is_directory(masks_dir))
        throw ValidationError("masks directory not found: " + masks_dir.string());

    std::vector<fs::path> image_files;
    for (const auto& e : fs::directory_iterator(images_dir))
        if (e.is_regular_file() && is_image_ext(e.path())) image_files.push_back(e.path());
    std::sort(image_files.begin(), image_files.end());

    std::set<std::string> image_stems;
    for (const auto& p : image_files) image_stems.insert(p.stem().string());
    for (const auto& e : fs::directory_iterator(masks_dir)) {
        if (e.is_regular_file() && is_image_ext(e.path()) && !image_stems.count(e.path().stem().string()))
            throw ValidationError("mask without a matching image: " + e.path().string());
    }

    std::vector<Sample> out;
    for (const auto& img_path : image_files) {
        const fs::path mask_path = masks_dir / (img_path.stem().string() + ".png");
        if (!fs::exists(mask_path))
            throw ValidationError("image without a matching mask: " + img_path.string() +
                                  " (expected " + mask_path.string() + ")");
        cv::Mat mask = cv::imread(mask_path.string(), cv::IMREAD_GRAYSCALE);
        if (mask.empty()) throw RuntimeFailure("unreadable mask: " + mask_path.string());
        if (mask.rows != target_h || mask.cols != target_w)
            cv::resize(mask, mask, cv::Size(target_w, target_h), 0, 0, cv::INTER_NEAREST);

        Sample s;
        s.name = img_path.stem().string();
        s.image = load_image(img_path.string(), target_h, target_w);
        s.mask = Tensor({1, target_h, target_w});
        for (int y = 0; y < target_h; ++y)
            for (int x = 0; x < target_w; ++x)
                s.mask[static_cast<std::int64_t>(y) * target_w + x] =
                    mask.at<unsigned char>(y, x) >= 128 ? 1.0 : 0.0;
        out.push_back(std::move(s));
    }
    return out;
}

void flip_horizontal(Tensor& t) {
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y) {
            double* row = t.data() + (static_cast<std::int64_t>(ch) * h + y) * w;
            for (int x = 0; x < w / 2; ++x) std::swap(row[x], row[w - 1 - x]);
        }
}

void rotate90(Tensor& t, int quarter_turns) {
    const int k = ((quarter_turns % 4) + 4) % 4;
    if (k == 0) return;
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    const int ho = (k % 2 == 0) ? h : w;
    const int wo = (k % 2 == 0) ? w : h;
    Tensor out({c, ho, wo});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int yo, xo;
                switch (k) {
                case 1: yo = w - 1 - x; xo = y; break;          // 90 ccw
                case 2: yo = h - 1 - y; xo = w - 1 - x; break;  // 180
                default: yo = x; xo = h - 1 - y; break;         // 270 ccw
                }
                out[(static_cast<std::int64_t>(ch) * ho + yo) * wo + xo] =
                    t[(static_cast<std::int64_t>(ch) * h + y) * w + x];
            }
    t = std::move(out);
}

void augment_sample(Sample& s, RandomSource& rng) {
    const bool flip = rng.uniform01() < 0.5;
    const bool square = s.image.dim(1) == s.image.dim(2);
    const int turns = square ? rng.uniform_int(0, 3) : 2 * rng.uniform_int(0, 1);
    if (flip) {
        flip_horizontal(s.image);
        flip_horizontal(s.mask);
    }
    rotate90(s.image, turns);
    rotate90(s.mask, turns);
}

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, RandomSource& rng) {
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)],
                                              order[static_cast<size_t>(rng.uniform_int(0, i))]);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

Batch make_batch(const std::vector<Sample>& samples, const std::vector<int>& indices, bool augment,
                 RandomSource& rng) {
    if (indices.empty()) throw ValidationError("empty batch");
    const int h = samples[static_cast<size_t>(indices[0])].image.dim(1);
    const int w = samples[static_cast<size_t>(indices[0])].image.dim(2);
    const int nb = static_cast<int>(indices.size());
    Batch batch;
    batch.images = Tensor({nb, 3, h, w});
    batch.masks = Tensor({nb, 1, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int bi = 0; bi < nb; ++bi) {
        Sample s = samples[static_cast<size_t>(indices[static_cast<size_t>(bi)])];
        if (augment) augment_sample(s, rng);
        if (s.image.dim(1) != h || s.image.dim(2) != w)
            throw ValidationError("batch samples must share one size");
        std::copy(s.image.data(), s.image.data() + 3 * plane,
                  batch.images.data() + static_cast<std::int64_t>(bi) * 3 * plane);
        std::copy(s.mask.data(), s.mask.data() + plane,
                  batch.masks.data() + static_cast<std::int64_t>(bi) * plane);
        batch.names.push_back(s.name);
    }
    return batch;
}

bool shape_contains(const ShapeSpec& s, int y, int x) {
    const double dx = x - s.cx, dy = y - s.cy;
    const double c = std::cos(s.angle), sn = std::sin(s.angle);
    const double u = dx * c + dy * sn;
    const double v = -dx * sn + dy * c;
    if (s.kind == "ellipse") {
        const double eu = u / s.a, ev = v / s.b;
        return eu * eu + ev * ev <= 1.0;
    }
    return std::fabs(u) <= s.a && std::fabs(v) <= s.b;
}

Tensor rasterize_shapes(const std::vector<ShapeSpec>& shapes, int h, int w) {
    Tensor mask({1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            for (const auto& s : shapes) {
                if (shape_contains(s, y, x)) {
                    mask[static_cast<std::int64_t>(y) * w + x] = 1.0;
                    break;
                }
            }
        }
    return mask;
}

namespace {

Tensor textured_background(int size, RandomSource& rng) {
    const int grid = std::max(2, size / 12);
    std::vector<double> coarse(static_cast<size_t>(3 * (grid + 1) * (grid + 1)));
    for (double& v : coarse) v = rng.uniform(0.15, 0.85);
    Tensor img({3, size, size});
    const double cell = static_cast<double>(size) / grid;
    for (int c = 0; c < 3; ++c) {
        const double* g = coarse.data() + static_cast<size_t>(c * (grid + 1) * (grid + 1));
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double fy = y / cell, fx = x / cell;
                const int gy = std::min(grid - 1, static_cast<int>(fy));
                const int gx = std::min(grid - 1, static_cast<int>(fx));
                const double ty = fy - gy, tx = fx - gx;
                const double v00 = g[gy * (grid + 1) + gx], v01 = g[gy * (grid + 1) + gx + 1];
                const double v10 = g[(gy + 1) * (grid + 1) + gx], v11 = g[(gy + 1) * (grid + 1) + gx + 1];
                img[(static_cast<std::int64_t>(c) * size + y) * size + x] =
                    (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
            }
    }
    for (std::int64_t i = 0; i < img.numel(); ++i)
        img[i] = std::min(1.0, std::max(0.0, img[i] + rng.uniform(-0.06, 0.06)));
    return img;
}

}  // namespace

void synth_dataset(int n, int size, std::uint64_t seed, const std::string& out_dir) {
    if (n <= 0 || size <= 0) throw ValidationError("synth_dataset requires positive n and size");
    const fs::path root(out_dir);
    for (const char* split : {"train", "test"}) {
        fs::create_directories(root / split / "images");
        fs::create_directories(root / split / "masks");
    }

    RandomSource rng(seed);
    nlohmann::json manifest;
    manifest["n"] = n;
    manifest["size"] = size;
    manifest["seed"] = seed;
    manifest["samples"] = nlohmann::json::array();

    const double min_fg = 0.01 * size * size;
    for (int i = 0; i < n; ++i) {
        Tensor img = textured_background(size, rng);
        std::vector<ShapeSpec> shapes;
        std::vector<std::array<double, 3>> colors;
        Tensor mask;
        for (;;) {
            shapes.clear();
            colors.clear();
            const int count = rng.uniform_int(1, 3);
            for (int k = 0; k < count; ++k) {
                ShapeSpec s;
                s.kind = rng.uniform01() < 0.5 ? "ellipse" : "rectangle";
                s.cx = rng.uniform(0.25, 0.75) * (size - 1);
                s.cy = rng.uniform(0.25, 0.75) * (size - 1);
                s.a = rng.uniform(0.08, 0.28) * size;
                s.b = rng.uniform(0.08, 0.28) * size;
                s.angle = rng.uniform(0.0, 3.141592653589793);
                shapes.push_back(s);
                colors.push_back({rng.uniform01(), rng.uniform01(), rng.uniform01()});
            }
            mask = rasterize_shapes(shapes, size, size);
            if (mask.sum() >= min_fg) break;
        }
        for (size_t k = 0; k < shapes.size(); ++k) {
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    if (!shape_contains(shapes[k], y, x)) continue;
                    for (int c = 0; c < 3; ++c) {
                        double& px = img[(static_cast<std::int64_t>(c) * size + y) * size + x];
                        px = 0.35 * px + 0.65 * colors[k][static_cast<size_t>(c)];
                    }
                }
        }

        char name[32];
        std::snprintf(name, sizeof(name), "synth_%04d", i);
        const cv::Mat bgr = tensor_to_image(img);
        cv::Mat mask_img(size, size, CV_8UC1);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                mask_img.at<unsigned char>(y, x) =
                    mask[static_cast<std::int64_t>(y) * size + x] > 0.5 ? 255 : 0;
        for (const char* split : {"train", "test"}) {
            cv::imwrite((root / split / "images" / (std::string(name) + ".png")).string(), bgr);
            cv::imwrite((root / split / "masks" / (std::string(name) + ".png")).string(), mask_img);
        }

        nlohmann::json js;
        js["name"] = name;
        js["shapes"] = nlohmann::json::array();
        for (const auto& s : shapes) {
            nlohmann::json sj;
            sj["kind"] = s.kind;
            sj["cx"] = s.cx;
            sj["cy"] = s.cy;
            sj["a"] = s.a;
            sj["b"] = s.b;
            sj["angle"] = s.angle;
            js["shapes"].push_back(sj);
        }
        manifest["samples"].push_back(js);
    }

    std::ofstream mf(root / "manifest.json");
    if (!mf) throw RuntimeFailure("cannot write manifest under " + out_dir);
    mf << manifest.dump(2) << "\n";
}

}  // namespace glformer::data
