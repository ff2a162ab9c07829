// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "glformer/config.hpp"
#include "glformer/metrics.hpp"
#include "glformer/model.hpp"
#include "glformer/rng.hpp"

namespace glformer::runtime {

// Self-describing training snapshot. On disk: an 8-byte magic ("GLFCKP01"),
// a little-endian uint64 byte length, a JSON manifest (format version,
// epoch, the full config text, the data-stream RNG state, the optimizer
// step, and per-section name/shape/offset indexes), then one raw blob of
// little-endian doubles. Saving the result of load_checkpoint reproduces
// the file byte for byte.
struct Checkpoint {
    int format_version = 1;
    int epoch = 0;
    std::string config_text;
    std::string rng_state;
    std::int64_t adam_step = 0;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> adam_m;
    std::vector<std::pair<std::string, Tensor>> adam_v;
    std::vector<std::pair<std::string, Tensor>> buffers;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);  // RuntimeFailure on bad file

// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8). A step
// with all-zero gradients leaves every parameter bit-identical: m and v
// stay zero, so the update is exactly zero.
class Adam {
public:
    explicit Adam(nn::Registry& reg, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(double lr);
    void zero_grad();

    std::int64_t step_count() const { return step_; }

    // Checkpoint plumbing: first moments, second moments, step counter.
    std::vector<std::pair<std::string, Tensor>> moments_m() const;
    std::vector<std::pair<std::string, Tensor>> moments_v() const;
    void restore(const std::vector<std::pair<std::string, Tensor>>& m,
                 const std::vector<std::pair<std::string, Tensor>>& v, std::int64_t step);

private:
    nn::Registry* reg_;
    double beta1_, beta2_, eps_;
    std::int64_t step_ = 0;
    std::vector<Tensor> m_, v_;
};

// Step decay: lr * factor^((epoch - 1) / every), epochs 1-based.
double scheduled_lr(const TrainConfig& cfg, int epoch);

// Snapshot the live training state / write it back. restore_model verifies
// that every model parameter and buffer appears in the checkpoint with a
// matching shape and raises ValidationError otherwise, so a checkpoint
// whose tensors disagree with its own config snapshot is rejected.
Checkpoint snapshot(const Model& model, const Adam& opt, const Config& cfg, int epoch,
                    const RandomSource& rng);
void restore_model(Model& model, const Checkpoint& ck);

// Builds the model the checkpoint describes (from its embedded config) and
// loads its parameters and buffers into it.
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ck, Config* cfg_out = nullptr);

struct TrainOptions {
    std::string data_dir;
    std::string out_dir;
    std::uint64_t seed = 1;
    std::string resume;  // checkpoint path, empty for a fresh run
};

// Full training loop over <data_dir>/train. Appends one CSV row per
// iteration to <out_dir>/train_log.csv (epoch, iter, lr, total loss, then
// bce/iou per supervision level) and writes
// <out_dir>/checkpoint_epoch_NNNN.ckpt at each epoch end. A non-finite
// loss aborts with the name of the first non-finite tensor. Resuming from
// a checkpoint continues at the next epoch with optimizer and data-stream
// state intact.
void train(const Config& cfg, const TrainOptions& opts);

// Runs one image through a restored model; returns the foreground
// probability map resized to the original image size, in [0,1].
Tensor infer_image(Model& model, const std::string& image_path);

// Writes one 8-bit grayscale PNG per input under out_dir, named by the
// input's basename. Unreadable inputs raise RuntimeFailure.
void infer(const std::string& checkpoint_path, const std::vector<std::string>& inputs,
           const std::string& out_dir);

// Predicts every image of <data_dir>/test into <report_out>/predictions,
// scores them against <data_dir>/test/masks and writes report.json and
// report.csv under report_out.
metrics::MetricsReport evaluate(const std::string& checkpoint_path, const std::string& data_dir,
                                const std::string& report_out);

// Parameter and compute budget at the configured input size. Parameters
// are exact registry counts; operation counts come from an instrumented
// forward pass. total_params is identically encoder + decoder + heads.
struct BudgetReport {
    std::int64_t total_params = 0;
    std::int64_t encoder_params = 0;
    std::int64_t decoder_params = 0;
    std::int64_t head_params = 0;
    double conv_flops = 0.0;
    double linear_flops = 0.0;
    double attention_flops = 0.0;
    double fft_flops = 0.0;
    double total_flops = 0.0;
    int input_h = 0;
    int input_w = 0;

    std::string table() const;  // human-readable, headed by the counting conventions
    std::string json() const;
};

BudgetReport budget_audit(const ModelConfig& cfg);

}  // namespace glformer::runtime
