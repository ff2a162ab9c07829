// SPDX-License-Identifier: Apache-2.0
#include "glformer/metrics.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <vector>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "glformer/errors.hpp"

namespace glformer::metrics {

namespace {

constexpr double kEps = DBL_EPSILON;

void check_pair(const Tensor& pred, const Tensor& gt) {
    if (pred.ndim() != 2 || gt.ndim() != 2 || !pred.same_shape(gt))
        throw ValidationError("metric inputs must be equal-shaped (H,W) tensors");
}

double gt_sum(const Tensor& gt) {
    double s = 0.0;
    for (std::int64_t i = 0; i < gt.numel(); ++i) s += gt[i] > 0.5 ? 1.0 : 0.0;
    return s;
}

}  // namespace

double mae(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    double s = 0.0;
    for (std::int64_t i = 0; i < pred.numel(); ++i) s += std::fabs(pred[i] - (gt[i] > 0.5 ? 1.0 : 0.0));
    return s / static_cast<double>(pred.numel());
}

double max_f(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    const std::int64_t n = pred.numel();
    double n_fg = 0.0;
    for (std::int64_t i = 0; i < n; ++i) n_fg += gt[i] > 0.5 ? 1.0 : 0.0;
    if (n_fg == 0.0) return 0.0;

    const double beta2 = 0.3;
    double best = 0.0;
    for (int t = 0; t <= 255; ++t) {
        const double thr = t / 255.0;
        double tp = 0.0, fp = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            if (pred[i] >= thr) {
                if (gt[i] > 0.5) tp += 1.0;
                else fp += 1.0;
            }
        }
        if (tp + fp == 0.0) continue;  // empty prediction scores 0
        const double precision = tp / (tp + fp);
        const double recall = tp / n_fg;
        const double denom = beta2 * precision + recall;
        const double f = denom > 0.0 ? (1.0 + beta2) * precision * recall / denom : 0.0;
        best = std::max(best, f);
    }
    return best;
}

double weighted_f(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    const int h = gt.dim(0), w = gt.dim(1);
    const std::int64_t n = pred.numel();
    auto at = [w](const Tensor& t, int y, int x) { return t[static_cast<std::int64_t>(y) * w + x]; };

    std::vector<std::vector<int>> fg_cols(static_cast<size_t>(h));
    std::int64_t n_fg = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (at(gt, y, x) > 0.5) {
                fg_cols[static_cast<size_t>(y)].push_back(x);
                ++n_fg;
            }
    if (n_fg == 0) return 0.0;

    // Absolute error; for background pixels, substitute the error at the
    // nearest foreground pixel (ties: smallest row, then column) and keep
    // the euclidean distance for the importance decay.
    std::vector<double> err(static_cast<size_t>(n)), err_t(static_cast<size_t>(n));
    std::vector<double> dist(static_cast<size_t>(n), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double g = at(gt, y, x) > 0.5 ? 1.0 : 0.0;
            err[static_cast<size_t>(y) * w + x] = std::fabs(at(pred, y, x) - g);
        }
    err_t = err;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (at(gt, y, x) > 0.5) continue;
            long best = -1;
            int by = -1, bx = -1;
            for (int dy = 0; dy < h; ++dy) {
                if (best >= 0 && static_cast<long>(dy) * dy > best) break;
                const int rows[2] = {y - dy, y + dy};
                const int nrows = dy == 0 ? 1 : 2;
                for (int ri = 0; ri < nrows; ++ri) {
                    const int ry = rows[ri];
                    if (ry < 0 || ry >= h) continue;
                    for (const int cx : fg_cols[static_cast<size_t>(ry)]) {
                        const long d2 = static_cast<long>(dy) * dy +
                                        static_cast<long>(cx - x) * (cx - x);
                        if (best < 0 || d2 < best ||
                            (d2 == best && (ry < by || (ry == by && cx < bx)))) {
                            best = d2;
                            by = ry;
                            bx = cx;
                        }
                    }
                }
            }
            const std::int64_t i = static_cast<std::int64_t>(y) * w + x;
            err_t[static_cast<size_t>(i)] = err[static_cast<size_t>(by) * w + bx];
            dist[static_cast<size_t>(i)] = std::sqrt(static_cast<double>(best));
        }

    // 7x7 Gaussian (sigma 5), zero-padded correlation.
    double kernel[7][7];
    double ksum = 0.0;
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
            kernel[i][j] = std::exp(-((i - 3.0) * (i - 3.0) + (j - 3.0) * (j - 3.0)) / 50.0);
            ksum += kernel[i][j];
        }
    for (auto& row : kernel)
        for (double& v : row) v /= ksum;

    double sum_ew_fg = 0.0, sum_ew_bg = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double blurred = 0.0;
            for (int i = 0; i < 7; ++i)
                for (int j = 0; j < 7; ++j) {
                    const int yy = y + i - 3, xx = x + j - 3;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    blurred += kernel[i][j] * err_t[static_cast<size_t>(yy) * w + xx];
                }
            const std::int64_t i = static_cast<std::int64_t>(y) * w + x;
            const bool fg = at(gt, y, x) > 0.5;
            double ew = err[static_cast<size_t>(i)];
            if (fg && blurred < ew) ew = blurred;  // reward generalized hits
            if (!fg) {
                const double importance =
                    2.0 - std::exp(std::log(0.5) / 5.0 * dist[static_cast<size_t>(i)]);
                ew = ew * importance;
                sum_ew_bg += ew;
            } else {
                sum_ew_fg += ew;
            }
        }

    const double tpw = static_cast<double>(n_fg) - sum_ew_fg;
    const double recall = 1.0 - sum_ew_fg / static_cast<double>(n_fg);
    const double precision = tpw / (kEps + tpw + sum_ew_bg);
    return 2.0 * recall * precision / (kEps + recall + precision);
}

namespace {

struct RegionStats {
    double mean = 0.0;
    double stdev = 0.0;  // sample standard deviation
    std::int64_t count = 0;
};

RegionStats region_stats(const Tensor& pred, const Tensor& gt, bool over_fg) {
    RegionStats st;
    double sum = 0.0;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        if ((gt[i] > 0.5) == over_fg) {
            sum += pred[i];
            ++st.count;
        }
    }
    if (st.count == 0) return st;
    st.mean = sum / static_cast<double>(st.count);
    if (st.count > 1) {
        double ss = 0.0;
        for (std::int64_t i = 0; i < pred.numel(); ++i) {
            if ((gt[i] > 0.5) == over_fg) {
                const double d = pred[i] - st.mean;
                ss += d * d;
            }
        }
        st.stdev = std::sqrt(ss / static_cast<double>(st.count - 1));
    }
    return st;
}

double object_score(const RegionStats& st) {
    if (st.count == 0) return 0.0;
    return 2.0 * st.mean / (st.mean * st.mean + 1.0 + st.stdev + kEps);
}

double s_object(const Tensor& pred, const Tensor& gt) {
    // Foreground compared directly; background compared via complements.
    Tensor comp(pred.shape());
    for (std::int64_t i = 0; i < pred.numel(); ++i) comp[i] = 1.0 - pred[i];
    const RegionStats fg = region_stats(pred, gt, true);
    const RegionStats bg = region_stats(comp, gt, false);
    const double u = gt_sum(gt) / static_cast<double>(gt.numel());
    return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

// MATLAB-style round-half-away-from-zero on a positive value.
int round_pos(double v) { return static_cast<int>(std::floor(v + 0.5)); }

double region_ssim(const Tensor& pred, const Tensor& gt, int y0, int y1, int x0, int x1) {
    const int w = gt.dim(1);
    const std::int64_t n = static_cast<std::int64_t>(y1 - y0) * (x1 - x0);
    if (n <= 0) return 0.0;  // empty quadrant carries zero weight
    double mx = 0.0, my = 0.0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            mx += pred[static_cast<std::int64_t>(y) * w + x];
            my += gt[static_cast<std::int64_t>(y) * w + x] > 0.5 ? 1.0 : 0.0;
        }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sx = 0.0, sy = 0.0, sxy = 0.0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const double dx = pred[static_cast<std::int64_t>(y) * w + x] - mx;
            const double dy = (gt[static_cast<std::int64_t>(y) * w + x] > 0.5 ? 1.0 : 0.0) - my;
            sx += dx * dx;
            sy += dy * dy;
            sxy += dx * dy;
        }
    const double denom = static_cast<double>(n) - 1.0 + kEps;
    sx /= denom;
    sy /= denom;
    sxy /= denom;
    const double alpha = 4.0 * mx * my * sxy;
    const double beta = (mx * mx + my * my) * (sx + sy);
    if (alpha != 0.0) return alpha / (beta + kEps);
    if (beta == 0.0) return 1.0;
    return 0.0;
}

double s_region(const Tensor& pred, const Tensor& gt) {
    const int h = gt.dim(0), w = gt.dim(1);
    const double total = gt_sum(gt);
    int cx, cy;  // 1-based centroid column/row
    if (total == 0.0) {
        cx = round_pos(w / 2.0);
        cy = round_pos(h / 2.0);
    } else {
        double sx = 0.0, sy = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (gt[static_cast<std::int64_t>(y) * w + x] > 0.5) {
                    sx += x + 1;
                    sy += y + 1;
                }
        cx = round_pos(sx / total);
        cy = round_pos(sy / total);
    }
    const double area = static_cast<double>(h) * w;
    const double w1 = static_cast<double>(cy) * cx / area;
    const double w2 = static_cast<double>(cy) * (w - cx) / area;
    const double w3 = static_cast<double>(h - cy) * cx / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    return w1 * region_ssim(pred, gt, 0, cy, 0, cx) + w2 * region_ssim(pred, gt, 0, cy, cx, w) +
           w3 * region_ssim(pred, gt, cy, h, 0, cx) + w4 * region_ssim(pred, gt, cy, h, cx, w);
}

}  // namespace

double s_measure(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    const double y = gt_sum(gt) / static_cast<double>(gt.numel());
    double mean_pred = 0.0;
    for (std::int64_t i = 0; i < pred.numel(); ++i) mean_pred += pred[i];
    mean_pred /= static_cast<double>(pred.numel());
    if (y == 0.0) return 1.0 - mean_pred;
    if (y == 1.0) return mean_pred;
    const double q = 0.5 * s_object(pred, gt) + 0.5 * s_region(pred, gt);
    return q < 0.0 ? 0.0 : q;
}

namespace {

double e_measure_at(const Tensor& pred, const Tensor& gt, double thr) {
    const std::int64_t n = pred.numel();
    const double n_fg = gt_sum(gt);
    double score_sum = 0.0;
    if (n_fg == 0.0) {
        for (std::int64_t i = 0; i < n; ++i) score_sum += 1.0 - (pred[i] >= thr ? 1.0 : 0.0);
    } else if (n_fg == static_cast<double>(n)) {
        for (std::int64_t i = 0; i < n; ++i) score_sum += pred[i] >= thr ? 1.0 : 0.0;
    } else {
        double mu_fm = 0.0;
        for (std::int64_t i = 0; i < n; ++i) mu_fm += pred[i] >= thr ? 1.0 : 0.0;
        mu_fm /= static_cast<double>(n);
        const double mu_gt = n_fg / static_cast<double>(n);
        for (std::int64_t i = 0; i < n; ++i) {
            const double fm = (pred[i] >= thr ? 1.0 : 0.0) - mu_fm;
            const double g = (gt[i] > 0.5 ? 1.0 : 0.0) - mu_gt;
            const double align = 2.0 * g * fm / (g * g + fm * fm + kEps);
            score_sum += (align + 1.0) * (align + 1.0) / 4.0;
        }
    }
    return score_sum / (static_cast<double>(n) - 1.0 + kEps);
}

}  // namespace

double e_measure_max(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    double best = 0.0;
    for (int t = 0; t <= 255; ++t) best = std::max(best, e_measure_at(pred, gt, t / 255.0));
    return best;
}

double e_measure_mean(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    double s = 0.0;
    for (int t = 0; t <= 255; ++t) s += e_measure_at(pred, gt, t / 255.0);
    return s / 256.0;
}

namespace {

Tensor tensor_from_gray(const cv::Mat& m) {
    Tensor t({m.rows, m.cols});
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
            t[static_cast<std::int64_t>(y) * m.cols + x] = m.at<unsigned char>(y, x) / 255.0;
    return t;
}

}  // namespace

MetricsReport evaluate_directory(const std::string& pred_dir, const std::string& gt_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(gt_dir)) throw ValidationError("ground-truth directory not found: " + gt_dir);
    if (!fs::is_directory(pred_dir)) throw ValidationError("prediction directory not found: " + pred_dir);

    std::map<std::string, fs::path> preds;
    for (const auto& e : fs::directory_iterator(pred_dir)) {
        if (!e.is_regular_file()) continue;
        const std::string ext = e.path().extension().string();
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") preds[e.path().stem().string()] = e.path();
    }

    std::vector<fs::path> gts;
    for (const auto& e : fs::directory_iterator(gt_dir)) {
        if (!e.is_regular_file()) continue;
        const std::string ext = e.path().extension().string();
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") gts.push_back(e.path());
    }
    std::sort(gts.begin(), gts.end());

    MetricsReport r;
    for (const auto& gt_path : gts) {
        const auto it = preds.find(gt_path.stem().string());
        if (it == preds.end()) continue;
        cv::Mat gt_img = cv::imread(gt_path.string(), cv::IMREAD_GRAYSCALE);
        cv::Mat pred_img = cv::imread(it->second.string(), cv::IMREAD_GRAYSCALE);
        if (gt_img.empty()) throw RuntimeFailure("unreadable mask: " + gt_path.string());
        if (pred_img.empty()) throw RuntimeFailure("unreadable prediction: " + it->second.string());
        if (pred_img.size() != gt_img.size())
            cv::resize(pred_img, pred_img, gt_img.size(), 0, 0, cv::INTER_LINEAR);
        const Tensor pred = tensor_from_gray(pred_img);
        Tensor gt = tensor_from_gray(gt_img);
        for (std::int64_t i = 0; i < gt.numel(); ++i) gt[i] = gt[i] >= 0.5 ? 1.0 : 0.0;

        r.mae += mae(pred, gt);
        r.fm_max += max_f(pred, gt);
        r.fwb += weighted_f(pred, gt);
        r.s_measure += s_measure(pred, gt);
        r.e_measure += e_measure_max(pred, gt);
        r.e_mean += e_measure_mean(pred, gt);
        r.n_images += 1;
    }
    if (r.n_images == 0) throw ValidationError("no evaluation pairs");
    const double inv = 1.0 / r.n_images;
    r.mae *= inv;
    r.fm_max *= inv;
    r.fwb *= inv;
    r.s_measure *= inv;
    r.e_measure *= inv;
    r.e_mean *= inv;
    return r;
}

std::string report_json(const MetricsReport& r) {
    nlohmann::json j;
    j["fwb"] = r.fwb;
    j["fm_max"] = r.fm_max;
    j["s_measure"] = r.s_measure;
    j["e_measure"] = r.e_measure;
    j["mae"] = r.mae;
    j["n_images"] = r.n_images;
    return j.dump(2) + "\n";
}

std::string report_csv(const MetricsReport& r) {
    std::ostringstream os;
    os.precision(12);
    os << "fwb,fm_max,s_measure,e_measure,e_mean,mae,n_images\n";
    os << r.fwb << "," << r.fm_max << "," << r.s_measure << "," << r.e_measure << "," << r.e_mean
       << "," << r.mae << "," << r.n_images << "\n";
    return os.str();
}

}  // namespace glformer::metrics
