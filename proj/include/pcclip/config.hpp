#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pcclip {

enum class KeyKind { text, path, integer, real, boolean, list };

struct ConfigKey {
    std::string name;
    KeyKind kind;
    std::string default_value;
    std::string help;
};

// Every key a run can be configured with, in documentation order.
const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_config_key(const std::string& name);

// Environment variable that overrides `key`: PCCLIP_ + upper-cased key.
std::string env_var_for(const std::string& key);

// Layered key-value configuration. Later layers win:
// defaults < config file < PCCLIP_* environment < command-line flags.
class RunConfig {
public:
    RunConfig();

    // `key = value` lines, '#' starts a comment. Unknown keys throw ValidationError.
    void load_file(const std::filesystem::path& file);
    void load_text(const std::string& text, const std::string& origin);
    // Reads PCCLIP_* variables from `environ`; unknown PCCLIP_ names throw.
    void load_environment();
    void set(const std::string& key, const std::string& value);
    void apply(const std::vector<std::pair<std::string, std::string>>& values);
    // "key=value".
    void set_assignment(const std::string& assignment);

    const std::string& get(const std::string& key) const;
    std::string text(const std::string& key) const { return get(key); }
    std::filesystem::path path(const std::string& key) const;
    long long integer(const std::string& key) const;
    double real(const std::string& key) const;
    bool boolean(const std::string& key) const;
    std::vector<std::string> list(const std::string& key) const;
    std::vector<int> int_list(const std::string& key) const;
    bool is_set(const std::string& key) const { return !get(key).empty(); }

    const std::map<std::string, std::string>& values() const { return values_; }
    // Sorted `key = value` lines; parses back with load_text.
    std::string dump() const;
    std::string hash() const;

private:
    std::map<std::string, std::string> values_;
};

// Pre-training at 224x224 with Adam (lr 1e-3, weight decay 1e-4), 100 epochs, batch 16.
// Applied right above the defaults, so files, environment and flags still override it.
const std::vector<std::pair<std::string, std::string>>& full_pretrain_preset();

// Relative path keys resolved against `base`, so a manifest can be replayed from anywhere.
void absolutize_paths(RunConfig& config, const std::filesystem::path& base);

}  // namespace pcclip
