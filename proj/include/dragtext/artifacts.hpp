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

#include <openssl/evp.h>

#include <atomic>
#include <filesystem>
#include <optional>
#include <regex>
#include <string>
#include <system_error>
#include <thread>

#include "dragtext/image_io.hpp"

namespace dragtext {

inline std::string sha256_hex(const Bytes& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr)) {
    detail::fail(ErrorCode::BackendError, "sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

inline std::string sha256_hex(const std::string& s) { return sha256_hex(Bytes(s.begin(), s.end())); }

/// Content-addressed blobs on local disk. A ref is the SHA-256 of the bytes
/// plus a file extension, e.g. "3fa9...e1.png".
class ArtifactStore {
 public:
  explicit ArtifactStore(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "artifacts");
  }

  const std::filesystem::path& root() const noexcept { return root_; }

  std::string put(const Bytes& bytes, const std::string& extension) {
    const std::string ref = sha256_hex(bytes) + "." + extension;
    const auto path = root_ / "artifacts" / ref;
    if (!std::filesystem::exists(path)) {
      static std::atomic<unsigned long> counter{0};
      const auto tmp = root_ / "artifacts" /
                       (ref + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) +
                        "." + std::to_string(counter++));
      write_file(tmp, bytes);
      std::error_code ec;
      std::filesystem::rename(tmp, path, ec);
      if (ec) std::filesystem::remove(tmp, ec);
    }
    return ref;
  }

  std::string put(const std::string& text, const std::string& extension) {
    return put(Bytes(text.begin(), text.end()), extension);
  }

  static bool valid_ref(const std::string& ref) {
    static const std::regex pattern("^[0-9a-f]{64}\\.[a-z]{1,8}$");
    return std::regex_match(ref, pattern);
  }

  std::optional<Bytes> get(const std::string& ref) const {
    if (!valid_ref(ref)) return std::nullopt;
    const auto path = root_ / "artifacts" / ref;
    if (!std::filesystem::exists(path)) return std::nullopt;
    return read_file(path);
  }

 private:
  std::filesystem::path root_;
};

}  // namespace dragtext
