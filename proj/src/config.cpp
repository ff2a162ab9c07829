// SPDX-License-Identifier: Apache-2.0
#include "glformer/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <vector>

#include "glformer/errors.hpp"

namespace glformer {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

[[noreturn]] void parse_fail(int line, const std::string& what) {
    throw ValidationError("config parse error at line " + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_commas(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(v);
    while (std::getline(is, cur, ',')) out.push_back(trim(cur));
    return out;
}

long long parse_int(const std::string& v, int line, const std::string& key) {
    try {
        size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        parse_fail(line, "key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double parse_real(const std::string& v, int line, const std::string& key) {
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        parse_fail(line, "key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& v, int line, const std::string& key) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    parse_fail(line, "key '" + key + "' expects a boolean, got '" + v + "'");
}

template <size_t N>
std::array<int, N> parse_int_list(const std::string& v, int line, const std::string& key) {
    const auto parts = split_commas(v);
    if (parts.size() != N)
        parse_fail(line, "key '" + key + "' expects " + std::to_string(N) + " comma-separated integers");
    std::array<int, N> out{};
    for (size_t i = 0; i < N; ++i) out[i] = static_cast<int>(parse_int(parts[i], line, key));
    return out;
}

[[noreturn]] void invariant_fail(const std::string& key, const std::string& what) {
    throw ValidationError("config invariant violated: " + key + " " + what);
}

}  // namespace

void ModelConfig::validate() const {
    for (int i = 0; i < 4; ++i) {
        if (stage_channels[static_cast<size_t>(i)] <= 0) invariant_fail("stage_channels", "entries must be positive");
        if (stage_depths[static_cast<size_t>(i)] <= 0) invariant_fail("stage_depths", "entries must be positive");
        if (stage_heads[static_cast<size_t>(i)] <= 0) invariant_fail("stage_heads", "entries must be positive");
        if (sr_ratios[static_cast<size_t>(i)] <= 0) invariant_fail("sr_ratios", "entries must be positive");
        if (gate_dilations[static_cast<size_t>(i)] <= 0) invariant_fail("gate_dilations", "entries must be positive");
    }
    for (int i = 1; i < 4; ++i) {
        if (stage_channels[static_cast<size_t>(i)] <= stage_channels[static_cast<size_t>(i - 1)])
            invariant_fail("stage_channels", "must be strictly increasing");
    }
    for (int i = 0; i < 4; ++i) {
        if (stage_channels[static_cast<size_t>(i)] % stage_heads[static_cast<size_t>(i)] != 0)
            invariant_fail("stage_channels",
                           "entry " + std::to_string(i + 1) + " must be divisible by stage_heads");
    }
    if (input_h <= 0 || input_w <= 0 || input_h % 32 != 0 || input_w % 32 != 0)
        invariant_fail("input_size", "must be positive and divisible by 32 (got " + std::to_string(input_h) +
                                         "," + std::to_string(input_w) + ")");
    if (ffn_expansion <= 0) invariant_fail("ffn_expansion", "must be positive");
    for (int i = 0; i < 4; ++i) {
        if ((ffn_expansion * stage_channels[static_cast<size_t>(i)]) % 4 != 0)
            invariant_fail("ffn_expansion",
                           "x stage_channels[" + std::to_string(i) + "] must be divisible by 4");
    }
    if (decoder_channels <= 0) invariant_fail("decoder_channels", "must be positive");
    for (int k = 0; k < 3; ++k) {
        if (local_kernels[static_cast<size_t>(k)] != 2 * (k + 1) + 1)
            invariant_fail("local_kernels", "must be exactly 3,5,7");
    }
    // Stage i runs at stride 4*2^i, so a 32-divisible input guarantees the
    // stage grid is divisible by 32/(4*2^i). The K/V reduction must tile
    // that grid for every legal input, hence must divide this factor.
    for (int i = 0; i < 4; ++i) {
        const int grid_div = 32 / (4 << i);
        if (grid_div % sr_ratios[static_cast<size_t>(i)] != 0)
            invariant_fail("sr_ratios", "entry " + std::to_string(i + 1) + " must divide " +
                                            std::to_string(grid_div) +
                                            " so reduced grids tile every 32-divisible input");
    }
}

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) invariant_fail("learning_rate", "must be positive");
    if (lr_decay_factor <= 0.0 || lr_decay_factor >= 1.0) invariant_fail("lr_decay_factor", "must lie in (0,1)");
    if (lr_decay_every <= 0) invariant_fail("lr_decay_every", "must be positive");
    if (batch_size <= 0) invariant_fail("batch_size", "must be positive");
    if (epochs <= 0) invariant_fail("epochs", "must be positive");
}

Config parse_config(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string raw;
    int line = 0;
    while (std::getline(is, raw)) {
        ++line;
        const size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string s = trim(raw);
        if (s.empty()) continue;
        const size_t eq = s.find('=');
        if (eq == std::string::npos) parse_fail(line, "expected 'key = value'");
        const std::string key = trim(s.substr(0, eq));
        const std::string val = trim(s.substr(eq + 1));
        if (key.empty()) parse_fail(line, "empty key");
        if (val.empty()) parse_fail(line, "empty value for key '" + key + "'");

        if (key == "stage_channels") cfg.model.stage_channels = parse_int_list<4>(val, line, key);
        else if (key == "stage_depths") cfg.model.stage_depths = parse_int_list<4>(val, line, key);
        else if (key == "stage_heads") cfg.model.stage_heads = parse_int_list<4>(val, line, key);
        else if (key == "sr_ratios") cfg.model.sr_ratios = parse_int_list<4>(val, line, key);
        else if (key == "ffn_expansion") cfg.model.ffn_expansion = static_cast<int>(parse_int(val, line, key));
        else if (key == "decoder_channels") cfg.model.decoder_channels = static_cast<int>(parse_int(val, line, key));
        else if (key == "input_size") {
            const auto parts = split_commas(val);
            if (parts.size() == 1) {
                cfg.model.input_h = cfg.model.input_w = static_cast<int>(parse_int(parts[0], line, key));
            } else if (parts.size() == 2) {
                cfg.model.input_h = static_cast<int>(parse_int(parts[0], line, key));
                cfg.model.input_w = static_cast<int>(parse_int(parts[1], line, key));
            } else {
                parse_fail(line, "key 'input_size' expects H,W or a single size");
            }
        } else if (key == "local_kernels") cfg.model.local_kernels = parse_int_list<3>(val, line, key);
        else if (key == "gate_dilations") cfg.model.gate_dilations = parse_int_list<4>(val, line, key);
        else if (key == "learning_rate") cfg.train.learning_rate = parse_real(val, line, key);
        else if (key == "lr_decay_factor") cfg.train.lr_decay_factor = parse_real(val, line, key);
        else if (key == "lr_decay_every") cfg.train.lr_decay_every = static_cast<int>(parse_int(val, line, key));
        else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(parse_int(val, line, key));
        else if (key == "epochs") cfg.train.epochs = static_cast<int>(parse_int(val, line, key));
        else if (key == "augment") cfg.train.augment = parse_bool(val, line, key);
        else if (key == "seed") cfg.train.seed = parse_int(val, line, key);
        else parse_fail(line, "unknown key '" + key + "'");
    }
    cfg.model.validate();
    cfg.train.validate();
    return cfg;
}

Config load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("config file not found: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config(buf.str());
}

namespace {

template <size_t N>
std::string join(const std::array<int, N>& a) {
    std::string s;
    for (size_t i = 0; i < N; ++i) {
        if (i) s += ",";
        s += std::to_string(a[i]);
    }
    return s;
}

std::string real_str(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::string serialize_config(const Config& cfg) {
    std::ostringstream os;
    os << "# model\n";
    os << "stage_channels = " << join(cfg.model.stage_channels) << "\n";
    os << "stage_depths = " << join(cfg.model.stage_depths) << "\n";
    os << "stage_heads = " << join(cfg.model.stage_heads) << "\n";
    os << "sr_ratios = " << join(cfg.model.sr_ratios) << "\n";
    os << "ffn_expansion = " << cfg.model.ffn_expansion << "\n";
    os << "decoder_channels = " << cfg.model.decoder_channels << "\n";
    os << "input_size = " << cfg.model.input_h << "," << cfg.model.input_w << "\n";
    os << "local_kernels = " << join(cfg.model.local_kernels) << "\n";
    os << "gate_dilations = " << join(cfg.model.gate_dilations) << "\n";
    os << "# training\n";
    os << "learning_rate = " << real_str(cfg.train.learning_rate) << "\n";
    os << "lr_decay_factor = " << real_str(cfg.train.lr_decay_factor) << "\n";
    os << "lr_decay_every = " << cfg.train.lr_decay_every << "\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "epochs = " << cfg.train.epochs << "\n";
    os << "augment = " << (cfg.train.augment ? "true" : "false") << "\n";
    os << "seed = " << cfg.train.seed << "\n";
    return os.str();
}

ModelConfig default_paper_config() { return ModelConfig{}; }

ModelConfig desk_config() {
    ModelConfig m;
    m.stage_channels = {16, 32, 48, 64};
    m.stage_depths = {1, 1, 1, 1};
    m.stage_heads = {1, 2, 4, 8};
    m.sr_ratios = {8, 4, 2, 1};
    m.ffn_expansion = 2;
    m.decoder_channels = 32;
    m.input_h = 96;
    m.input_w = 96;
    return m;
}

}  // namespace glformer
