#pragma once

#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace fusionrl {

/// Flat view of an INI-style `key = value` file. Section `[train]` with key
/// `gamma` is addressed as `train.gamma`; keys outside any section keep their
/// bare name. Every lookup is recorded so callers can reject unknown keys.
class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig load(const std::filesystem::path& path) {
        boost::property_tree::ptree tree;
        try {
            boost::property_tree::read_ini(path.string(), tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError("cannot parse config '" + path.string() + "': " + e.message());
        }
        return from_tree(tree);
    }

    static KeyValueConfig parse(const std::string& text) {
        std::istringstream in(text);
        boost::property_tree::ptree tree;
        try {
            boost::property_tree::read_ini(in, tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError("cannot parse config: " + e.message());
        }
        return from_tree(tree);
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    // Parses "key=value".
    void set_assignment(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + assignment + "'");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
    }

    bool contains(const std::string& key) const { return values_.count(key) != 0; }

    template <typename T>
    T get(const std::string& key, const T& fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        used_.insert(key);
        return convert<T>(key, it->second);
    }

    template <typename T>
    T require(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
        used_.insert(key);
        return convert<T>(key, it->second);
    }

    std::vector<std::string> unused_keys() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) out.push_back(k);
        return out;
    }

    void reject_unused() const {
        const auto unused = unused_keys();
        if (unused.empty()) return;
        std::string msg = "unknown config key(s):";
        for (const auto& k : unused) msg += " " + k;
        throw ConfigError(msg);
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static KeyValueConfig from_tree(const boost::property_tree::ptree& tree) {
        KeyValueConfig cfg;
        for (const auto& [name, node] : tree) {
            if (node.empty()) {
                cfg.values_[name] = node.data();
            } else {
                for (const auto& [key, leaf] : node) cfg.values_[name + "." + key] = leaf.data();
            }
        }
        return cfg;
    }

    template <typename T>
    static T convert(const std::string& key, const std::string& raw) {
        if constexpr (std::is_same_v<T, std::string>) {
            return raw;
        } else if constexpr (std::is_same_v<T, bool>) {
            std::string v = raw;
            std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
            if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
            if (v == "0" || v == "false" || v == "no" || v == "off") return false;
            throw ConfigError("config key '" + key + "' expects a boolean, got '" + raw + "'");
        } else {
            try {
                return boost::lexical_cast<T>(raw);
            } catch (const boost::bad_lexical_cast&) {
                throw ConfigError("config key '" + key + "' has invalid value '" + raw + "'");
            }
        }
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

} // namespace fusionrl
