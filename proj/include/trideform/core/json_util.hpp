#pragma once

#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "trideform/core/error.hpp"

namespace trideform {

nlohmann::json load_json_file(const std::string& path);
void save_json_file(const std::string& path, const nlohmann::json& j);

// Configs are strict: any key outside `allowed` is rejected so typos fail
// loudly instead of silently taking defaults.
void check_keys(const nlohmann::json& obj, const std::string& ctx,
                std::initializer_list<const char*> allowed);

template <typename T>
T get_req(const nlohmann::json& obj, const std::string& ctx, const char* key) {
    if (!obj.contains(key))
        throw ValidationError(ctx + ": missing required key '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(ctx + ": key '" + key + "' has the wrong type");
    }
}

template <typename T>
T get_or(const nlohmann::json& obj, const std::string& ctx, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(ctx + ": key '" + key + "' has the wrong type");
    }
}

}  // namespace trideform
