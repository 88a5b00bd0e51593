// Copyright 2026 The dragtext Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include "dragtext/backend.hpp"
#include "dragtext/toy_backend.hpp"

namespace dragtext {

using AdapterFactory = std::function<std::shared_ptr<const Backend>(std::uint64_t seed)>;

/// Process-wide table of real-model adapters, keyed by name.
class AdapterRegistry {
 public:
  static AdapterRegistry& instance() {
    static AdapterRegistry registry;
    return registry;
  }

  void add(const std::string& name, AdapterFactory factory) {
    std::lock_guard lock(mu_);
    factories_[name] = std::move(factory);
  }

  AdapterFactory find(const std::string& name) const {
    std::lock_guard lock(mu_);
    auto it = factories_.find(name);
    return it == factories_.end() ? AdapterFactory{} : it->second;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, AdapterFactory> factories_;
};

/// "toy" or "adapter:<name>".
inline std::shared_ptr<const Backend> make_backend(std::string_view spec, std::uint64_t seed = 0) {
  if (spec == "toy") return std::make_shared<ToyBackend>(seed);
  constexpr std::string_view prefix = "adapter:";
  if (spec.substr(0, prefix.size()) == prefix) {
    const std::string name(spec.substr(prefix.size()));
    if (auto factory = AdapterRegistry::instance().find(name)) return factory(seed);
    detail::fail(ErrorCode::BackendError, "no adapter registered under '", name, "'");
  }
  detail::fail(ErrorCode::BackendError, "unknown backend '", spec, "' (expected toy or adapter:<name>)");
}

/// Shares one backend instance per (spec, seed).
class BackendCache {
 public:
  std::shared_ptr<const Backend> get(const std::string& spec, std::uint64_t seed) {
    std::lock_guard lock(mu_);
    auto key = std::make_pair(spec, seed);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    auto backend = make_backend(spec, seed);
    cache_.emplace(key, backend);
    return backend;
  }

 private:
  std::mutex mu_;
  std::map<std::pair<std::string, std::uint64_t>, std::shared_ptr<const Backend>> cache_;
};

}  // namespace dragtext
