#include "scanet/runconfig.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace scanet {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const int r = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": '" + v + "' is not an integer");
    }
}

float to_float(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const float r = std::stof(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": '" + v + "' is not a number");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const unsigned long long r = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": '" + v + "' is not a boolean (true/false)");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    parts.push_back(cur);
    return parts;
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& part : split(v, ',')) out.push_back(to_int(key, trim(part)));
    return out;
}

// "32:3:2,32:3:2" = out_channels:kernel:stride per stage
std::vector<ConvSpec> to_conv_list(const std::string& key, const std::string& v) {
    std::vector<ConvSpec> out;
    for (const auto& part : split(v, ',')) {
        const auto fields = split(trim(part), ':');
        if (fields.size() != 3)
            throw ConfigError(key + ": '" + part +
                              "' is not out_channels:kernel:stride");
        out.push_back({to_int(key, trim(fields[0])), to_int(key, trim(fields[1])),
                       to_int(key, trim(fields[2]))});
    }
    return out;
}

std::string fmt_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string fmt_conv_list(const std::vector<ConvSpec>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i].out_channels) + ":" +
               std::to_string(v[i].kernel) + ":" + std::to_string(v[i].stride);
    }
    return out;
}

RunConfig parse_config_text(const std::string& text, const std::string& source_name,
                            const std::string& preset_override) {
    struct Entry {
        std::string key, value;
        int line;
    };
    std::vector<Entry> entries;
    std::string preset_name;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source_name + ":" + std::to_string(line_no) +
                              ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(source_name + ":" + std::to_string(line_no) +
                              ": expected 'key = value'");
        if (key == "preset") {
            if (!preset_name.empty())
                throw ConfigError(source_name + ":" + std::to_string(line_no) +
                                  ": duplicate preset line");
            preset_name = value;
            continue;
        }
        entries.push_back({key, value, line_no});
    }
    if (!preset_override.empty()) preset_name = preset_override;
    if (preset_name.empty()) preset_name = "toy";

    RunConfig cfg = RunConfig::from_preset(preset_name);
    for (const auto& e : entries) {
        try {
            cfg.apply(e.key, e.value);
        } catch (const ConfigError& err) {
            throw ConfigError(source_name + ":" + std::to_string(e.line) + ": " +
                              err.what());
        }
    }
    return cfg;
}

}  // namespace

RunConfig RunConfig::from_preset(const std::string& name) {
    RunConfig cfg;
    cfg.preset = name;
    if (name == "toy") {
        cfg.model = ModelConfig::toy();
        cfg.gen = GeneratorParams::toy();
    } else if (name == "paper-scale") {
        cfg.model = ModelConfig::paper_scale();
        cfg.gen = GeneratorParams::paper_scale();
    } else {
        throw ConfigError("unknown preset '" + name +
                          "' (expected toy or paper-scale)");
    }
    cfg.train = TrainConfig{};
    return cfg;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
    auto& m = model;
    auto& t = train;
    auto& g = gen;
    if (key == "preset")
        throw ConfigError(
            "preset cannot be overridden per-key; put it on its own line or "
            "use --preset");
    else if (key == "seed")
        t.seed = to_u64(key, value);
    else if (key == "model.num_slices")
        m.num_slices = to_int(key, value);
    else if (key == "model.in_channels")
        m.in_channels = to_int(key, value);
    else if (key == "model.slice_h")
        m.slice_h = to_int(key, value);
    else if (key == "model.slice_w")
        m.slice_w = to_int(key, value);
    else if (key == "model.global_conv")
        m.global_conv = to_conv_list(key, value);
    else if (key == "model.embed_dim")
        m.embed_dim = to_int(key, value);
    else if (key == "model.num_heads")
        m.num_heads = to_int(key, value);
    else if (key == "model.sat_layers")
        m.sat_layers = to_int(key, value);
    else if (key == "model.token_h")
        m.token_h = to_int(key, value);
    else if (key == "model.token_w")
        m.token_w = to_int(key, value);
    else if (key == "model.neighborhood")
        m.neighborhood = to_int(key, value);
    else if (key == "model.branch_blocks")
        m.branch_blocks = to_int_list(key, value);
    else if (key == "model.branch_channels")
        m.branch_channels = to_int_list(key, value);
    else if (key == "model.mlp_ratio")
        m.mlp_ratio = to_int(key, value);
    else if (key == "model.num_classes")
        m.num_classes = to_int(key, value);
    else if (key == "model.dropout")
        m.dropout = to_float(key, value);
    else if (key == "model.norm_groups")
        m.norm_groups = to_int(key, value);
    else if (key == "model.attention_enabled")
        m.attention_enabled = to_bool(key, value);
    else if (key == "train.max_epochs")
        t.max_epochs = to_int(key, value);
    else if (key == "train.batch_size")
        t.batch_size = to_int(key, value);
    else if (key == "train.learning_rate")
        t.learning_rate = to_float(key, value);
    else if (key == "train.weight_decay")
        t.weight_decay = to_float(key, value);
    else if (key == "train.patience")
        t.patience = to_int(key, value);
    else if (key == "train.min_delta")
        t.min_delta = to_float(key, value);
    else if (key == "train.val_fraction")
        t.val_fraction = to_float(key, value);
    else if (key == "train.seed")
        t.seed = to_u64(key, value);
    else if (key == "gen.slices")
        g.slices = to_int(key, value);
    else if (key == "gen.height")
        g.height = to_int(key, value);
    else if (key == "gen.width")
        g.width = to_int(key, value);
    else if (key == "gen.noise_sigma")
        g.noise_sigma = to_float(key, value);
    else if (key == "gen.base_level")
        g.base_level = to_float(key, value);
    else if (key == "gen.base_jitter")
        g.base_jitter = to_float(key, value);
    else if (key == "gen.field_modes")
        g.field_modes = to_int(key, value);
    else if (key == "gen.field_amp_lo")
        g.field_amp_lo = to_float(key, value);
    else if (key == "gen.field_amp_hi")
        g.field_amp_hi = to_float(key, value);
    else if (key == "gen.region_cx")
        g.region_cx = to_float(key, value);
    else if (key == "gen.region_cy")
        g.region_cy = to_float(key, value);
    else if (key == "gen.region_cz")
        g.region_cz = to_float(key, value);
    else if (key == "gen.region_rx")
        g.region_rx = to_float(key, value);
    else if (key == "gen.region_ry")
        g.region_ry = to_float(key, value);
    else if (key == "gen.region_rz")
        g.region_rz = to_float(key, value);
    else if (key == "gen.center_jitter")
        g.center_jitter = to_float(key, value);
    else if (key == "gen.ct_amp_unfavorable")
        g.ct_amp_unfavorable = to_float(key, value);
    else if (key == "gen.cta_amp_unfavorable")
        g.cta_amp_unfavorable = to_float(key, value);
    else if (key == "gen.cta_amp_favorable")
        g.cta_amp_favorable = to_float(key, value);
    else if (key == "gen.window_low")
        g.window_low = to_float(key, value);
    else if (key == "gen.window_high")
        g.window_high = to_float(key, value);
    else
        throw ConfigError("unknown config key '" + key + "'");
}

RunConfig RunConfig::from_text(const std::string& text,
                               const std::string& source_name) {
    return parse_config_text(text, source_name, "");
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str(), path.filename().string());
}

std::string RunConfig::to_text() const {
    std::ostringstream out;
    out << "preset = " << preset << "\n";
    out << "model.num_slices = " << model.num_slices << "\n";
    out << "model.in_channels = " << model.in_channels << "\n";
    out << "model.slice_h = " << model.slice_h << "\n";
    out << "model.slice_w = " << model.slice_w << "\n";
    out << "model.global_conv = " << fmt_conv_list(model.global_conv) << "\n";
    out << "model.embed_dim = " << model.embed_dim << "\n";
    out << "model.num_heads = " << model.num_heads << "\n";
    out << "model.sat_layers = " << model.sat_layers << "\n";
    out << "model.token_h = " << model.token_h << "\n";
    out << "model.token_w = " << model.token_w << "\n";
    out << "model.neighborhood = " << model.neighborhood << "\n";
    out << "model.branch_blocks = " << fmt_int_list(model.branch_blocks) << "\n";
    out << "model.branch_channels = " << fmt_int_list(model.branch_channels)
        << "\n";
    out << "model.mlp_ratio = " << model.mlp_ratio << "\n";
    out << "model.num_classes = " << model.num_classes << "\n";
    out << "model.dropout = " << fmt_float(model.dropout) << "\n";
    out << "model.norm_groups = " << model.norm_groups << "\n";
    out << "model.attention_enabled = "
        << (model.attention_enabled ? "true" : "false") << "\n";
    out << "train.max_epochs = " << train.max_epochs << "\n";
    out << "train.batch_size = " << train.batch_size << "\n";
    out << "train.learning_rate = " << fmt_float(train.learning_rate) << "\n";
    out << "train.weight_decay = " << fmt_float(train.weight_decay) << "\n";
    out << "train.patience = " << train.patience << "\n";
    out << "train.min_delta = " << fmt_float(train.min_delta) << "\n";
    out << "train.val_fraction = " << fmt_float(train.val_fraction) << "\n";
    out << "train.seed = " << train.seed << "\n";
    out << "gen.slices = " << gen.slices << "\n";
    out << "gen.height = " << gen.height << "\n";
    out << "gen.width = " << gen.width << "\n";
    out << "gen.noise_sigma = " << fmt_float(gen.noise_sigma) << "\n";
    out << "gen.base_level = " << fmt_float(gen.base_level) << "\n";
    out << "gen.base_jitter = " << fmt_float(gen.base_jitter) << "\n";
    out << "gen.field_modes = " << gen.field_modes << "\n";
    out << "gen.field_amp_lo = " << fmt_float(gen.field_amp_lo) << "\n";
    out << "gen.field_amp_hi = " << fmt_float(gen.field_amp_hi) << "\n";
    out << "gen.region_cx = " << fmt_float(gen.region_cx) << "\n";
    out << "gen.region_cy = " << fmt_float(gen.region_cy) << "\n";
    out << "gen.region_cz = " << fmt_float(gen.region_cz) << "\n";
    out << "gen.region_rx = " << fmt_float(gen.region_rx) << "\n";
    out << "gen.region_ry = " << fmt_float(gen.region_ry) << "\n";
    out << "gen.region_rz = " << fmt_float(gen.region_rz) << "\n";
    out << "gen.center_jitter = " << fmt_float(gen.center_jitter) << "\n";
    out << "gen.ct_amp_unfavorable = " << fmt_float(gen.ct_amp_unfavorable)
        << "\n";
    out << "gen.cta_amp_unfavorable = " << fmt_float(gen.cta_amp_unfavorable)
        << "\n";
    out << "gen.cta_amp_favorable = " << fmt_float(gen.cta_amp_favorable) << "\n";
    out << "gen.window_low = " << fmt_float(gen.window_low) << "\n";
    out << "gen.window_high = " << fmt_float(gen.window_high) << "\n";
    return out.str();
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
}

RunConfig resolve_run_config(const std::string& config_file,
                             const std::string& preset_flag,
                             const std::vector<std::string>& set_overrides) {
    RunConfig cfg;
    if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) throw IoError("cannot open config: " + config_file);
        std::ostringstream buf;
        buf << in.rdbuf();
        cfg = parse_config_text(
            buf.str(), std::filesystem::path(config_file).filename().string(),
            preset_flag);
    } else {
        cfg = RunConfig::from_preset(preset_flag.empty() ? "toy" : preset_flag);
    }
    for (const auto& kv : set_overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.apply(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    return cfg;
}

}  // namespace scanet
