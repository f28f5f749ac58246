#pragma once

// Flat `key=value` text files ('#' starts a comment line).

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace sauge {

class KeyValues {
public:
    static KeyValues parse(const std::string& text, const std::string& origin = "<text>");
    static KeyValues load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { entries_[key] = value; }
    /// Applies a `key=value` override string.
    void apply_override(const std::string& assignment);

    bool has(const std::string& key) const { return entries_.count(key) != 0; }
    std::optional<std::string> get(const std::string& key) const;
    std::string require(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }
    std::string serialize() const;

private:
    std::string origin_ = "<text>";
    std::map<std::string, std::string> entries_;
};

}  // namespace sauge
