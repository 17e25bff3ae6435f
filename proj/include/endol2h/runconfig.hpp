#pragma once

#include <fstream>
#include <map>
#include <string>

#include "json.hpp"

#include "endol2h/errors.hpp"

namespace endol2h {

// Merged command configuration: flat dotted key paths with typed JSON
// values. Precedence is flag > file > default, and the provenance of every
// value is tracked so the resolved copy written next to outputs is
// self-describing. A resolved copy is itself loadable via --config.
class RunConfig {
public:
    void set_default(const std::string& key, nlohmann::json value) {
        if (!values_.count(key)) {
            values_[key] = std::move(value);
            provenance_[key] = "default";
        }
    }

    void load_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot read config file: " + path);
        nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw ConfigError("config file is not a JSON object: " + path);
        if (j.contains("values")) j = j.at("values");  // resolved-config copies
        for (auto& [k, v] : j.items()) {
            if (provenance_.count(k) && provenance_[k] == "flag") continue;  // flag wins
            values_[k] = v;
            provenance_[k] = "file";
        }
    }

    void set_flag(const std::string& key, nlohmann::json value) {
        values_[key] = std::move(value);
        provenance_[key] = "flag";
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    template <typename T>
    T get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key: " + key);
        try {
            return it->second.get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config key '" + key + "' has the wrong type: " +
                              it->second.dump());
        }
    }

    template <typename T>
    T get_or(const std::string& key, T fallback) const {
        return has(key) ? get<T>(key) : fallback;
    }

    const std::string& provenance(const std::string& key) const {
        auto it = provenance_.find(key);
        if (it == provenance_.end()) throw ConfigError("missing config key: " + key);
        return it->second;
    }

    nlohmann::json resolved() const {
        nlohmann::json values = nlohmann::json::object();
        nlohmann::json prov = nlohmann::json::object();
        for (const auto& [k, v] : values_) {
            values[k] = v;
            prov[k] = provenance_.at(k);
        }
        return nlohmann::json{{"values", values}, {"provenance", prov}};
    }

    void write_resolved(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw IoError("cannot write resolved config: " + path);
        f << resolved().dump(2) << "\n";
    }

private:
    std::map<std::string, nlohmann::json> values_;
    std::map<std::string, std::string> provenance_;
};

}  // namespace endol2h
