#pragma once

#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace voplab {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Reads optional fields out of one JSON object and rejects keys nobody asked
// for, so a misspelt option fails loudly instead of being ignored.
class JsonFields {
public:
    JsonFields(const nlohmann::json& object, std::string where) : object_(object), where_(std::move(where)) {
        if (!object_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    bool has(const std::string& key) const { return object_.contains(key); }

    template <typename T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        auto it = object_.find(key);
        if (it == object_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(where_ + "." + key + ": wrong type (" + it->dump() + ")");
        }
    }

    const nlohmann::json* child(const std::string& key) {
        seen_.insert(key);
        auto it = object_.find(key);
        return it == object_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (auto it = object_.begin(); it != object_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
        }
    }

private:
    const nlohmann::json& object_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace voplab
