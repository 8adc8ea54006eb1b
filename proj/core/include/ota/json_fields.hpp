// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "ota/error.hpp"

namespace ota {

/// Strict reader for one JSON object: every key must be consumed through
/// read()/child() before finish(), otherwise the leftovers are reported.
class JsonFields {
 public:
  JsonFields(const nlohmann::json& object, std::string context)
      : object_(object), context_(std::move(context)) {
    if (!object_.is_object()) throw ValidationError(context_ + ": expected a JSON object");
  }

  template <typename T>
  JsonFields& read(const std::string& key, T& out) {
    seen_.insert(key);
    if (auto it = object_.find(key); it != object_.end()) {
      try {
        out = it->template get<T>();
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(context_ + "." + key + ": " + e.what());
      }
    }
    return *this;
  }

  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return context_ + "." + key; }

  void finish() const {
    std::string unknown;
    for (const auto& [key, value] : object_.items()) {
      if (!seen_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    }
    if (!unknown.empty()) throw ValidationError(context_ + ": unknown key(s): " + unknown);
  }

 private:
  const nlohmann::json& object_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace ota
