// SPDX-License-Identifier: Apache-2.0
#include "glformer/runtime.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "glformer/data.hpp"
#include "glformer/errors.hpp"
#include "glformer/loss.hpp"

namespace glformer::runtime {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'G', 'L', 'F', 'C', 'K', 'P', '0', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

using Section = std::vector<std::pair<std::string, Tensor>>;

nlohmann::json section_index(const Section& sec, std::int64_t& offset) {
    nlohmann::json idx = nlohmann::json::array();
    for (const auto& [name, t] : sec) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["offset"] = offset;
        idx.push_back(e);
        offset += t.numel();
    }
    return idx;
}

Section read_section(const nlohmann::json& idx, const std::vector<double>& blob) {
    Section sec;
    for (const auto& e : idx) {
        Tensor t(e.at("shape").get<std::vector<int>>());
        const std::int64_t off = e.at("offset").get<std::int64_t>();
        if (off < 0 || off + t.numel() > static_cast<std::int64_t>(blob.size()))
            throw RuntimeFailure("checkpoint tensor '" + e.at("name").get<std::string>() +
                                 "' points outside the data blob");
        std::copy(blob.begin() + off, blob.begin() + off + t.numel(), t.data());
        sec.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    return sec;
}

void write_blob(std::ostream& os, const Section& sec) {
    for (const auto& [name, t] : sec)
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel()) * 8);
}

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::int64_t offset = 0;
    nlohmann::json manifest;
    manifest["format_version"] = ck.format_version;
    manifest["epoch"] = ck.epoch;
    manifest["config"] = ck.config_text;
    manifest["rng"] = ck.rng_state;
    manifest["adam_step"] = ck.adam_step;
    manifest["sections"]["params"] = section_index(ck.params, offset);
    manifest["sections"]["adam_m"] = section_index(ck.adam_m, offset);
    manifest["sections"]["adam_v"] = section_index(ck.adam_v, offset);
    manifest["sections"]["buffers"] = section_index(ck.buffers, offset);
    const std::string text = manifest.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw RuntimeFailure("cannot write checkpoint: " + path);
    os.write(kMagic, 8);
    put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_blob(os, ck.params);
    write_blob(os, ck.adam_m);
    write_blob(os, ck.adam_v);
    write_blob(os, ck.buffers);
    if (!os) throw RuntimeFailure("short write while saving checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeFailure("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw RuntimeFailure("not a checkpoint file: " + path);
    const std::uint64_t len = get_u64(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw RuntimeFailure("truncated checkpoint manifest: " + path);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw RuntimeFailure("corrupt checkpoint manifest in " + path + ": " + e.what());
    }
    Checkpoint ck;
    ck.format_version = manifest.at("format_version").get<int>();
    if (ck.format_version != 1)
        throw RuntimeFailure("unsupported checkpoint format version " +
                             std::to_string(ck.format_version) + " in " + path);
    ck.epoch = manifest.at("epoch").get<int>();
    ck.config_text = manifest.at("config").get<std::string>();
    ck.rng_state = manifest.at("rng").get<std::string>();
    ck.adam_step = manifest.at("adam_step").get<std::int64_t>();

    std::vector<double> blob;
    {
        std::vector<char> raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        if (raw.size() % 8 != 0) throw RuntimeFailure("truncated checkpoint data in " + path);
        blob.resize(raw.size() / 8);
        std::memcpy(blob.data(), raw.data(), raw.size());
    }
    const auto& sections = manifest.at("sections");
    ck.params = read_section(sections.at("params"), blob);
    ck.adam_m = read_section(sections.at("adam_m"), blob);
    ck.adam_v = read_section(sections.at("adam_v"), blob);
    ck.buffers = read_section(sections.at("buffers"), blob);
    return ck;
}

Adam::Adam(nn::Registry& reg, double beta1, double beta2, double eps)
    : reg_(&reg), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : reg.params()) {
        m_.emplace_back(p.var->value.shape());
        v_.emplace_back(p.var->value.shape());
    }
}

void Adam::step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    const auto& params = reg_->params();
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& w = params[i].var->value;
        const Tensor& g = params[i].var->grad;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        const bool has_grad = !g.empty();
        for (std::int64_t j = 0; j < w.numel(); ++j) {
            const double gj = has_grad ? g[j] : 0.0;
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
            const double mh = m[j] / bc1;
            const double vh = v[j] / bc2;
            w[j] -= lr * mh / (std::sqrt(vh) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (const auto& p : reg_->params()) p.var->grad = Tensor();
}

Section Adam::moments_m() const {
    Section out;
    const auto& params = reg_->params();
    for (size_t i = 0; i < params.size(); ++i) out.emplace_back(params[i].name, m_[i]);
    return out;
}

Section Adam::moments_v() const {
    Section out;
    const auto& params = reg_->params();
    for (size_t i = 0; i < params.size(); ++i) out.emplace_back(params[i].name, v_[i]);
    return out;
}

void Adam::restore(const Section& m, const Section& v, std::int64_t step) {
    const auto& params = reg_->params();
    std::map<std::string, const Tensor*> mm, vm;
    for (const auto& [name, t] : m) mm[name] = &t;
    for (const auto& [name, t] : v) vm[name] = &t;
    for (size_t i = 0; i < params.size(); ++i) {
        const auto mi = mm.find(params[i].name);
        const auto vi = vm.find(params[i].name);
        if (mi == mm.end() || vi == vm.end())
            throw ValidationError("checkpoint optimizer state is missing '" + params[i].name + "'");
        if (mi->second->shape() != m_[i].shape() || vi->second->shape() != v_[i].shape())
            throw ValidationError("checkpoint optimizer state shape mismatch at '" +
                                  params[i].name + "'");
        m_[i] = *mi->second;
        v_[i] = *vi->second;
    }
    step_ = step;
}

double scheduled_lr(const TrainConfig& cfg, int epoch) {
    const int drops = (epoch - 1) / cfg.lr_decay_every;
    return cfg.learning_rate * std::pow(cfg.lr_decay_factor, static_cast<double>(drops));
}

Checkpoint snapshot(const Model& model, const Adam& opt, const Config& cfg, int epoch,
                    const RandomSource& rng) {
    Checkpoint ck;
    ck.epoch = epoch;
    ck.config_text = serialize_config(cfg);
    ck.rng_state = rng.serialize();
    ck.adam_step = opt.step_count();
    for (const auto& p : model.registry().params()) ck.params.emplace_back(p.name, p.var->value);
    ck.adam_m = opt.moments_m();
    ck.adam_v = opt.moments_v();
    for (const auto& b : model.registry().buffers()) ck.buffers.emplace_back(b.name, *b.tensor);
    return ck;
}

void restore_model(Model& model, const Checkpoint& ck) {
    std::map<std::string, const Tensor*> params, buffers;
    for (const auto& [name, t] : ck.params) params[name] = &t;
    for (const auto& [name, t] : ck.buffers) buffers[name] = &t;
    const auto& reg = model.registry();
    if (params.size() != reg.params().size())
        throw ValidationError("checkpoint does not match its config snapshot: " +
                              std::to_string(params.size()) + " stored parameters, model has " +
                              std::to_string(reg.params().size()));
    for (const auto& p : reg.params()) {
        const auto it = params.find(p.name);
        if (it == params.end())
            throw ValidationError("checkpoint does not match its config snapshot: missing "
                                  "parameter '" + p.name + "'");
        if (it->second->shape() != p.var->value.shape())
            throw ValidationError("checkpoint does not match its config snapshot: parameter '" +
                                  p.name + "' has shape " + it->second->shape_str() +
                                  ", model expects " + p.var->value.shape_str());
        p.var->value = *it->second;
    }
    for (const auto& b : reg.buffers()) {
        const auto it = buffers.find(b.name);
        if (it == buffers.end())
            throw ValidationError("checkpoint does not match its config snapshot: missing "
                                  "buffer '" + b.name + "'");
        if (it->second->shape() != b.tensor->shape())
            throw ValidationError("checkpoint does not match its config snapshot: buffer '" +
                                  b.name + "' has shape " + it->second->shape_str() +
                                  ", model expects " + b.tensor->shape_str());
        *b.tensor = *it->second;
    }
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ck, Config* cfg_out) {
    const Config cfg = parse_config(ck.config_text);
    auto model = std::make_unique<Model>(cfg.model);
    restore_model(*model, ck);
    if (cfg_out) *cfg_out = cfg;
    return model;
}

namespace {

std::string first_non_finite(const Tensor& input, const Model& model,
                             const std::array<ag::VarPtr, 5>& logits) {
    if (!input.all_finite()) return "input batch";
    for (const auto& p : model.registry().params())
        if (!p.var->value.all_finite()) return p.name;
    for (int i = 0; i < 5; ++i)
        if (!logits[static_cast<size_t>(i)]->value.all_finite())
            return "logits.p" + std::to_string(i + 1);
    return "loss";
}

std::string checkpoint_name(int epoch) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "checkpoint_epoch_%04d.ckpt", epoch);
    return buf;
}

}  // namespace

void train(const Config& cfg, const TrainOptions& opts) {
    cfg.model.validate();
    cfg.train.validate();
    fs::create_directories(opts.out_dir);

    const auto samples =
        data::load_dataset({opts.data_dir, "train"}, cfg.model.input_h, cfg.model.input_w);
    if (samples.empty())
        throw ValidationError("no training pairs under " +
                              (fs::path(opts.data_dir) / "train").string());

    auto model = std::make_unique<Model>(cfg.model);
    Adam opt(model->registry());
    RandomSource data_rng(opts.seed ^ fnv1a("data.stream"));
    int first_epoch = 1;

    if (!opts.resume.empty()) {
        const Checkpoint ck = load_checkpoint(opts.resume);
        const Config ck_cfg = parse_config(ck.config_text);
        if (!(ck_cfg.model == cfg.model))
            throw ValidationError("resume checkpoint was trained with a different model "
                                  "configuration: " + opts.resume);
        restore_model(*model, ck);
        opt.restore(ck.adam_m, ck.adam_v, ck.adam_step);
        data_rng.deserialize(ck.rng_state);
        first_epoch = ck.epoch + 1;
    } else {
        nn::initialize(model->registry(), opts.seed);
    }

    const fs::path log_path = fs::path(opts.out_dir) / "train_log.csv";
    std::ofstream log(log_path, opts.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw RuntimeFailure("cannot write training log: " + log_path.string());
    if (opts.resume.empty())
        log << "epoch,iter,lr,total,bce1,iou1,bce2,iou2,bce3,iou3,bce4,iou4,bce5,iou5\n";

    model->set_training(true);
    const int n = static_cast<int>(samples.size());
    for (int epoch = first_epoch; epoch <= cfg.train.epochs; ++epoch) {
        const double lr = scheduled_lr(cfg.train, epoch);
        const auto batches = data::epoch_batches(n, cfg.train.batch_size, data_rng);
        int iter = 0;
        for (const auto& idx : batches) {
            ++iter;
            const data::Batch batch = data::make_batch(samples, idx, cfg.train.augment, data_rng);
            const auto images = ag::constant(batch.images);
            const auto logits = model->forward(images);
            const loss::TotalLoss tl = loss::total_loss(logits, batch.masks);
            const double total = tl.value->value[0];
            if (!std::isfinite(total))
                throw RuntimeFailure("non-finite loss at epoch " + std::to_string(epoch) +
                                     " iteration " + std::to_string(iter) +
                                     "; first non-finite tensor: " +
                                     first_non_finite(batch.images, *model, logits));
            ag::backward(tl.value);
            opt.step(lr);
            opt.zero_grad();

            log << epoch << ',' << iter << ',' << format_g17(lr) << ',' << format_g17(total);
            for (const auto& lv : tl.levels)
                log << ',' << format_g17(lv.bce) << ',' << format_g17(lv.iou);
            log << '\n';
            log.flush();
        }
        const Checkpoint ck = snapshot(*model, opt, cfg, epoch, data_rng);
        save_checkpoint(ck, (fs::path(opts.out_dir) / checkpoint_name(epoch)).string());
    }
}

Tensor infer_image(Model& model, const std::string& image_path) {
    const int ih = model.config().input_h, iw = model.config().input_w;
    int oh = 0, ow = 0;
    const Tensor img = data::load_image(image_path, ih, iw, &oh, &ow);

    ag::NoGrad ng;
    model.set_training(false);
    const auto x = ag::reshape(ag::constant(img), {1, 3, ih, iw});
    const auto logits = model.forward(x);
    const Tensor prob = ag::sigmoid(logits[0])->value;  // (1,1,ih,iw)

    cv::Mat pm(ih, iw, CV_64FC1);
    std::memcpy(pm.data, prob.data(), static_cast<size_t>(prob.numel()) * 8);
    if (oh != ih || ow != iw) cv::resize(pm, pm, cv::Size(ow, oh), 0, 0, cv::INTER_LINEAR);

    Tensor out({oh, ow});
    std::memcpy(out.data(), pm.data, static_cast<size_t>(out.numel()) * 8);
    return out;
}

namespace {

void write_probability_png(const Tensor& prob, const std::string& path) {
    const int h = prob.dim(0), w = prob.dim(1);
    cv::Mat m8(h, w, CV_8UC1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double p = std::min(1.0, std::max(0.0, prob[static_cast<std::int64_t>(y) * w + x]));
            m8.at<unsigned char>(y, x) = static_cast<unsigned char>(std::lround(p * 255.0));
        }
    if (!cv::imwrite(path, m8)) throw RuntimeFailure("cannot write prediction: " + path);
}

}  // namespace

void infer(const std::string& checkpoint_path, const std::vector<std::string>& inputs,
           const std::string& out_dir) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    auto model = model_from_checkpoint(ck);
    fs::create_directories(out_dir);
    for (const auto& input : inputs) {
        const Tensor prob = infer_image(*model, input);
        const std::string name = fs::path(input).stem().string() + ".png";
        write_probability_png(prob, (fs::path(out_dir) / name).string());
    }
}

metrics::MetricsReport evaluate(const std::string& checkpoint_path, const std::string& data_dir,
                                const std::string& report_out) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    auto model = model_from_checkpoint(ck);

    const fs::path images_dir = fs::path(data_dir) / "test" / "images";
    const fs::path masks_dir = fs::path(data_dir) / "test" / "masks";
    if (!fs::is_directory(images_dir))
        throw ValidationError("images directory not found: " + images_dir.string());
    const fs::path pred_dir = fs::path(report_out) / "predictions";
    fs::create_directories(pred_dir);

    std::vector<fs::path> image_files;
    for (const auto& e : fs::directory_iterator(images_dir)) {
        const std::string ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg"))
            image_files.push_back(e.path());
    }
    std::sort(image_files.begin(), image_files.end());
    for (const auto& p : image_files) {
        const Tensor prob = infer_image(*model, p.string());
        write_probability_png(prob, (pred_dir / (p.stem().string() + ".png")).string());
    }

    const metrics::MetricsReport report =
        metrics::evaluate_directory(pred_dir.string(), masks_dir.string());
    {
        std::ofstream js(fs::path(report_out) / "report.json");
        js << metrics::report_json(report) << "\n";
        std::ofstream cs(fs::path(report_out) / "report.csv");
        cs << metrics::report_csv(report);
        if (!js || !cs) throw RuntimeFailure("cannot write report under " + report_out);
    }
    return report;
}

BudgetReport budget_audit(const ModelConfig& cfg) {
    cfg.validate();
    Model model(cfg);

    BudgetReport r;
    r.input_h = cfg.input_h;
    r.input_w = cfg.input_w;
    r.encoder_params = model.registry().count_with_prefix("encoder.");
    r.decoder_params = model.registry().count_with_prefix("decoder.");
    r.head_params = model.registry().count_with_prefix("heads.");
    r.total_params = model.registry().total_count();

    ag::FlopCounter counter;
    ag::set_flop_counter(&counter);
    {
        ag::NoGrad ng;
        model.set_training(false);
        const auto x = ag::constant(Tensor({1, 3, cfg.input_h, cfg.input_w}));
        model.forward(x);
    }
    ag::set_flop_counter(nullptr);
    r.conv_flops = counter.conv;
    r.linear_flops = counter.linear;
    r.attention_flops = counter.attention;
    r.fft_flops = counter.fft;
    r.total_flops = counter.total();
    return r;
}

std::string BudgetReport::table() const {
    std::ostringstream os;
    os << "Model budget at " << input_h << "x" << input_w << " input (batch 1)\n";
    os << "Operation counting conventions:\n";
    os << "  conv:      2 * k^2 * Cin * Cout * Hout * Wout / groups\n";
    os << "  linear:    2 * Cin * Cout * tokens\n";
    os << "  attention: 2 * T * T_kv * d per score/value product per head\n";
    os << "  fft:       5 * N * log2(N) per transform per axis\n";
    os << "\n";
    char line[128];
    std::snprintf(line, sizeof(line), "  %-10s %15s %10s\n", "section", "params", "Mparams");
    os << line;
    const auto prow = [&](const char* name, std::int64_t v) {
        std::snprintf(line, sizeof(line), "  %-10s %15" PRId64 " %10.2f\n", name, v, v / 1e6);
        os << line;
    };
    prow("encoder", encoder_params);
    prow("decoder", decoder_params);
    prow("heads", head_params);
    prow("total", total_params);
    os << "\n";
    std::snprintf(line, sizeof(line), "  %-10s %15s %10s\n", "op class", "FLOPs", "GFLOPs");
    os << line;
    const auto frow = [&](const char* name, double v) {
        std::snprintf(line, sizeof(line), "  %-10s %15.0f %10.2f\n", name, v, v / 1e9);
        os << line;
    };
    frow("conv", conv_flops);
    frow("linear", linear_flops);
    frow("attention", attention_flops);
    frow("fft", fft_flops);
    frow("total", total_flops);
    return os.str();
}

std::string BudgetReport::json() const {
    nlohmann::json j;
    j["input"] = {input_h, input_w};
    j["params"]["encoder"] = encoder_params;
    j["params"]["decoder"] = decoder_params;
    j["params"]["heads"] = head_params;
    j["params"]["total"] = total_params;
    j["flops"]["conv"] = conv_flops;
    j["flops"]["linear"] = linear_flops;
    j["flops"]["attention"] = attention_flops;
    j["flops"]["fft"] = fft_flops;
    j["flops"]["total"] = total_flops;
    return j.dump(2);
}

}  // namespace glformer::runtime
