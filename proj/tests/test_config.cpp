// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <functional>
#include <string>

#include "doctest.h"
#include "glformer/config.hpp"
#include "glformer/errors.hpp"

using namespace glformer;

namespace {

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("empty text yields the defaults") {
    const Config cfg = parse_config("");
    CHECK(cfg.model == ModelConfig{});
    CHECK(cfg.train == TrainConfig{});
    CHECK(cfg.model.stage_channels == std::array<int, 4>{64, 128, 320, 512});
    CHECK(cfg.model.input_h == 352);
    CHECK(cfg.train.learning_rate == doctest::Approx(1e-4));
    CHECK(cfg.train.epochs == 80);
}

TEST_CASE("comments, blank lines, and whitespace are tolerated") {
    const Config cfg = parse_config(
        "# leading comment\n"
        "\n"
        "  decoder_channels =  96   # trailing comment\n"
        "epochs=3\n");
    CHECK(cfg.model.decoder_channels == 96);
    CHECK(cfg.train.epochs == 3);
}

TEST_CASE("serialization round-trips every field") {
    Config cfg;
    cfg.model = desk_config();
    cfg.model.gate_dilations = {1, 2, 3, 4};
    cfg.train.learning_rate = 3.25e-4;
    cfg.train.augment = false;
    cfg.train.seed = 1234567;
    const Config back = parse_config(serialize_config(cfg));
    CHECK(back == cfg);
}

TEST_CASE("input_size accepts one value or an explicit pair") {
    CHECK(parse_config("input_size = 160\n").model.input_h == 160);
    CHECK(parse_config("input_size = 160\n").model.input_w == 160);
    const Config rect = parse_config("input_size = 96, 160\n");
    CHECK(rect.model.input_h == 96);
    CHECK(rect.model.input_w == 160);
}

TEST_CASE("parse errors carry the line number") {
    const std::string m1 = message_of([] { parse_config("epochs = 3\nbogus_key = 1\n"); });
    CHECK(m1.find("line 2") != std::string::npos);
    CHECK(m1.find("bogus_key") != std::string::npos);

    const std::string m2 = message_of([] { parse_config("\n\nepochs = banana\n"); });
    CHECK(m2.find("line 3") != std::string::npos);

    const std::string m3 = message_of([] { parse_config("stage_channels = 1,2\n"); });
    CHECK(m3.find("line 1") != std::string::npos);
}

TEST_CASE("invariant violations name the offending key") {
    auto check_key = [](const std::string& text, const std::string& key) {
        const std::string m = message_of([&] { parse_config(text).model.validate(); });
        CAPTURE(text);
        CAPTURE(m);
        CHECK(m.find("config invariant violated") != std::string::npos);
        CHECK(m.find(key) != std::string::npos);
    };
    check_key("stage_channels = 0,128,320,512\n", "stage_channels");
    check_key("stage_heads = 3,2,5,8\n", "stage_heads");     // 3 does not divide 64
    check_key("sr_ratios = 7,4,2,1\n", "sr_ratios");         // 7 does not divide the stage grid
    check_key("input_size = 100\n", "input_size");           // not divisible by 32
    check_key("ffn_expansion = 0\n", "ffn_expansion");
    check_key("decoder_channels = -4\n", "decoder_channels");
    check_key("local_kernels = 3,5,9\n", "local_kernels");
    check_key("gate_dilations = 1,0,5,7\n", "gate_dilations");
}

TEST_CASE("train invariants name the offending key") {
    auto check_key = [](const std::string& text, const std::string& key) {
        const std::string m = message_of([&] { parse_config(text).train.validate(); });
        CHECK(m.find(key) != std::string::npos);
    };
    check_key("learning_rate = 0\n", "learning_rate");
    check_key("lr_decay_factor = 1.5\n", "lr_decay_factor");
    check_key("lr_decay_every = 0\n", "lr_decay_every");
    check_key("batch_size = 0\n", "batch_size");
    check_key("epochs = -1\n", "epochs");
}

TEST_CASE("reference and desk architectures validate") {
    CHECK_NOTHROW(default_paper_config().validate());
    CHECK_NOTHROW(desk_config().validate());
    CHECK(desk_config().input_h == 96);
}
