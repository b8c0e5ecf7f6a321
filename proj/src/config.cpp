#include "pcclip/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pcclip/error.hpp"
#include "pcclip/hash.hpp"

extern char** environ;

namespace fs = std::filesystem;

namespace pcclip {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void check_value(const ConfigKey& key, const std::string& value) {
    if (value.empty()) return;
    auto bad = [&](const char* what) {
        throw ValidationError("config key '" + key.name + "' expects " + what + ", got '" + value + "'");
    };
    switch (key.kind) {
        case KeyKind::integer: {
            long long v = 0;
            auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
            if (ec != std::errc() || p != value.data() + value.size()) bad("an integer");
            break;
        }
        case KeyKind::real: {
            char* end = nullptr;
            std::strtod(value.c_str(), &end);
            if (end != value.c_str() + value.size()) bad("a number");
            break;
        }
        case KeyKind::boolean:
            if (value != "true" && value != "false" && value != "1" && value != "0") bad("true or false");
            break;
        default: break;
    }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys{
        // run
        {"out", KeyKind::path, "out", "output directory; every artifact is written under it"},
        {"seed", KeyKind::integer, "0", "base seed for every random choice"},
        {"jobs", KeyKind::integer, "1", "worker threads for rendering and feature extraction"},
        // data
        {"dataset", KeyKind::path, "", "point-cloud dataset (class directories of .off/.ply); empty: synthetic shapes"},
        {"dataset_format", KeyKind::text, "directory", "directory, off or ply"},
        {"dataset_split", KeyKind::text, "", "sub-directory read inside each class directory (e.g. train)"},
        {"test_dataset", KeyKind::path, "", "standard test split; empty: evaluate on the episode residual"},
        {"test_split", KeyKind::text, "", "sub-directory read inside each test class directory (e.g. test)"},
        {"synthetic_classes", KeyKind::list, "sphere,cube,plane", "primitives of the synthetic dataset"},
        {"synthetic_per_class", KeyKind::integer, "40", "clouds per synthetic class"},
        {"points", KeyKind::integer, "1024", "points sampled per cloud"},
        {"n_way", KeyKind::integer, "0", "classes per episode; 0: all"},
        {"shots", KeyKind::integer, "16", "training examples per class"},
        {"shot_list", KeyKind::list, "1,2,4,8,10,12,16", "shot counts for the shot curve"},
        // projection
        {"views", KeyKind::list, "front,back,left,right,top,bottom", "projection views, in order"},
        {"projection_resolution", KeyKind::integer, "64", "depth map side length in pixels"},
        {"splat_radius", KeyKind::integer, "1", "Chebyshev splat radius in pixels"},
        // encoders
        {"backend", KeyKind::text, "toy", "toy or clip"},
        {"clip_weights_path", KeyKind::path, "", "CLIP safetensors checkpoint directory (backend=clip)"},
        {"feature_dim", KeyKind::integer, "64", "toy backend feature dimension C"},
        {"encoder_resolution", KeyKind::integer, "32", "toy backend input resolution"},
        {"temperature", KeyKind::real, "1", "logit scale applied to cosine similarities (CLIP uses 100)"},
        {"prompt", KeyKind::text, "point cloud of a big [CLASS].", "prompt template with one [CLASS]"},
        {"prompts", KeyKind::list, "", "templates for the prompt ablation, separated by '|'; empty: standard set"},
        // translator
        {"translator", KeyKind::path, "", "translator checkpoint used by few-shot, zero-shot and eval"},
        {"translate", KeyKind::boolean, "true", "pass depth images through the translator"},
        {"depth_levels", KeyKind::integer, "4", "UNet down/up-sampling stages"},
        {"base_channels", KeyKind::integer, "16", "UNet channels at the first stage"},
        {"normalization", KeyKind::text, "group", "group or none"},
        {"skip_connections", KeyKind::boolean, "true", "UNet skip connections"},
        // pre-training
        {"renders", KeyKind::path, "", "directory of RGBA PNG renders for pre-training"},
        {"synthetic", KeyKind::boolean, "false", "pre-train on generated renders instead of `renders`"},
        {"synthetic_count", KeyKind::integer, "8", "number of generated renders"},
        {"resolution", KeyKind::integer, "64", "pre-training image resolution (224 under --full)"},
        {"noise_mode", KeyKind::text, "exact", "exact or bernoulli"},
        {"pretrain_optimizer", KeyKind::text, "adam", "adam or adamw"},
        {"pretrain_learning_rate", KeyKind::real, "0.001", "pre-training learning rate"},
        {"pretrain_weight_decay", KeyKind::real, "0", "pre-training weight decay (0.0001 under --full)"},
        {"lr_schedule", KeyKind::text, "constant", "pre-training learning-rate schedule: constant or cosine"},
        {"pretrain_epochs", KeyKind::integer, "100", "pre-training epochs"},
        {"pretrain_batch_size", KeyKind::integer, "16", "pre-training batch size"},
        {"steps", KeyKind::integer, "0", "stop pre-training after this many steps; 0: run all epochs"},
        {"checkpoint_every", KeyKind::integer, "0", "write a translator checkpoint every N epochs; 0: only at the end"},
        // few-shot
        {"head", KeyKind::text, "viewpoint", "viewpoint or interview"},
        {"adapter_mode", KeyKind::text, "both", "both, view_only or global_only"},
        {"hidden", KeyKind::integer, "0", "adapter bottleneck width C_h; 0: C"},
        {"global_dim", KeyKind::integer, "0", "inter-view global width C_g; 0: C"},
        {"optimizer", KeyKind::text, "adamw", "adam or adamw"},
        {"learning_rate", KeyKind::real, "0.001", "few-shot learning rate"},
        {"weight_decay", KeyKind::real, "0.0001", "few-shot weight decay"},
        {"epochs", KeyKind::integer, "100", "few-shot epochs"},
        {"batch_size", KeyKind::integer, "32", "few-shot batch size"},
        // evaluation
        {"bundle", KeyKind::path, "", "adapter checkpoint for eval"},
        {"input", KeyKind::path, "", "single .off/.ply file for project"},
        {"ablation", KeyKind::text, "table5", "table1 (zero vs few-shot), table3 (prompts), table4 (translation), table5 (adapter modes) or shots"},
        {"report", KeyKind::path, "", "existing report.json for plot"},
        {"report_format", KeyKind::text, "json", "json or csv"},
    };
    return keys;
}

const ConfigKey* find_config_key(const std::string& name) {
    for (const auto& k : config_keys())
        if (k.name == name) return &k;
    return nullptr;
}

std::string env_var_for(const std::string& key) {
    std::string out = "PCCLIP_";
    for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

RunConfig::RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const ConfigKey* k = find_config_key(key);
    if (!k) throw ValidationError("unknown config key '" + key + "'");
    check_value(*k, value);
    values_[key] = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ValidationError("expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        try {
            set_assignment(line);
        } catch (const ValidationError& e) {
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void RunConfig::load_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot read config file " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    load_text(ss.str(), file.string());
}

void RunConfig::load_environment() {
    std::map<std::string, std::string> found;
    for (char** e = environ; e && *e; ++e) {
        const std::string entry = *e;
        if (entry.rfind("PCCLIP_", 0) != 0) continue;
        const auto eq = entry.find('=');
        found[entry.substr(0, eq)] = eq == std::string::npos ? "" : entry.substr(eq + 1);
    }
    for (const auto& [name, value] : found) {
        const ConfigKey* key = nullptr;
        for (const auto& k : config_keys())
            if (env_var_for(k.name) == name) key = &k;
        if (!key) throw ValidationError("unknown environment override " + name);
        set(key->name, value);
    }
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
    return it->second;
}

fs::path RunConfig::path(const std::string& key) const { return fs::path(get(key)); }

long long RunConfig::integer(const std::string& key) const {
    const std::string& v = get(key);
    if (v.empty()) throw ValidationError("config key '" + key + "' is empty");
    return std::stoll(v);
}

double RunConfig::real(const std::string& key) const {
    const std::string& v = get(key);
    if (v.empty()) throw ValidationError("config key '" + key + "' is empty");
    return std::stod(v);
}

bool RunConfig::boolean(const std::string& key) const {
    const std::string& v = get(key);
    return v == "true" || v == "1";
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
    const std::string& v = get(key);
    const char sep = v.find('|') != std::string::npos || key == "prompts" ? '|' : ',';
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, sep))
        if (auto t = trim(item); !t.empty()) out.push_back(t);
    return out;
}

std::vector<int> RunConfig::int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& s : list(key)) {
        int v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size())
            throw ValidationError("config key '" + key + "' expects integers, got '" + s + "'");
        out.push_back(v);
    }
    return out;
}

std::string RunConfig::dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

std::string RunConfig::hash() const { return Fingerprint().text(dump()).hex(); }

const std::vector<std::pair<std::string, std::string>>& full_pretrain_preset() {
    static const std::vector<std::pair<std::string, std::string>> preset{
        {"resolution", "224"},          {"pretrain_optimizer", "adam"},    {"pretrain_learning_rate", "0.001"},
        {"pretrain_weight_decay", "0.0001"}, {"pretrain_epochs", "100"}, {"pretrain_batch_size", "16"},
        {"lr_schedule", "constant"},    {"steps", "0"},
    };
    return preset;
}

void RunConfig::apply(const std::vector<std::pair<std::string, std::string>>& values) {
    for (const auto& [k, v] : values) set(k, v);
}

void absolutize_paths(RunConfig& config, const fs::path& base) {
    for (const auto& k : config_keys()) {
        if (k.kind != KeyKind::path) continue;
        const std::string& v = config.get(k.name);
        if (v.empty()) continue;
        const fs::path p(v);
        if (p.is_relative()) config.set(k.name, (base / p).lexically_normal().string());
    }
}

}  // namespace pcclip
