// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/checkpoint.hpp"

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iterator>

#include <torch/torch.h>

#include "ota/digest.hpp"
#include "ota/error.hpp"

namespace ota {
namespace {

constexpr std::string_view kMagic = "OTACKPT1";
constexpr std::size_t kDigestSize = 32;

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    default: throw ValidationError("checkpoint arrays must be float32, float64 or int64");
  }
}

torch::ScalarType dtype_from_name(const std::string& name) {
  if (name == "float32") return torch::kFloat32;
  if (name == "float64") return torch::kFloat64;
  if (name == "int64") return torch::kInt64;
  throw IntegrityError("unknown array dtype '" + name + "'");
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

nlohmann::json meta_to_json(const CheckpointMeta& m) {
  return {{"stage_name", m.stage_name},
          {"seed", m.seed},
          {"config_digest", m.config_digest},
          {"created_at", m.created_at},
          {"extra", m.extra}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.stage_name = j.at("stage_name").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config_digest = j.at("config_digest").get<std::string>();
  m.created_at = j.at("created_at").get<std::string>();
  m.extra = j.value("extra", nlohmann::json::object());
  return m;
}

std::span<const std::byte> tensor_bytes(const torch::Tensor& t) {
  return {static_cast<const std::byte*>(t.data_ptr()), static_cast<std::size_t>(t.numel() * t.element_size())};
}

}  // namespace

const torch::Tensor& Checkpoint::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw ValidationError("checkpoint has no array named '" + name + "'");
  return it->second;
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  nlohmann::json arrays = nlohmann::json::array();
  std::vector<torch::Tensor> contiguous;
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : checkpoint.params) {
    auto t = tensor.detach().cpu().contiguous();
    const auto nbytes = static_cast<std::uint64_t>(t.numel() * t.element_size());
    arrays.push_back({{"name", name},
                      {"dtype", dtype_name(t.scalar_type())},
                      {"shape", t.sizes().vec()},
                      {"offset", offset},
                      {"nbytes", nbytes}});
    offset += nbytes;
    contiguous.push_back(std::move(t));
  }
  const nlohmann::json header{{"format", 1}, {"meta", meta_to_json(checkpoint.meta)}, {"arrays", arrays}};
  const std::string header_text = header.dump();

  std::string out;
  out.reserve(kMagic.size() + 8 + header_text.size() + offset + kDigestSize);
  out.append(kMagic);
  put_u64(out, header_text.size());
  out.append(header_text);
  for (const auto& t : contiguous) {
    auto bytes = tensor_bytes(t);
    out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }
  const auto digest = sha256(std::as_bytes(std::span(out.data(), out.size())));
  out.append(reinterpret_cast<const char*>(digest.data()), digest.size());
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 8 + kDigestSize) throw IntegrityError("checkpoint archive is truncated");
  const auto body = bytes.substr(0, bytes.size() - kDigestSize);
  const auto stored = bytes.substr(bytes.size() - kDigestSize);
  const auto actual = sha256(std::as_bytes(std::span(body.data(), body.size())));
  if (std::memcmp(actual.data(), stored.data(), kDigestSize) != 0)
    throw IntegrityError("checkpoint digest mismatch (archive is corrupted)");
  if (body.substr(0, kMagic.size()) != kMagic) throw IntegrityError("not a checkpoint archive (bad magic)");

  const auto header_len = get_u64(body, kMagic.size());
  const std::size_t header_at = kMagic.size() + 8;
  if (header_len > body.size() - header_at) throw IntegrityError("checkpoint header length out of range");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(body.substr(header_at, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint header unreadable: ") + e.what());
  }
  const std::size_t data_at = header_at + header_len;
  const auto data = body.substr(data_at);

  Checkpoint c;
  c.meta = meta_from_json(header.at("meta"));
  for (const auto& a : header.at("arrays")) {
    const auto name = a.at("name").get<std::string>();
    const auto dtype = dtype_from_name(a.at("dtype").get<std::string>());
    const auto shape = a.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = a.at("offset").get<std::uint64_t>();
    const auto nbytes = a.at("nbytes").get<std::uint64_t>();
    if (offset > data.size() || nbytes > data.size() - offset)
      throw IntegrityError("array '" + name + "' extends past the end of the archive");
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != nbytes)
      throw IntegrityError("array '" + name + "' byte count does not match its shape");
    std::memcpy(t.data_ptr(), data.data() + offset, nbytes);
    c.params.emplace(name, std::move(t));
  }
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

bool bit_equal(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.meta == b.meta) || a.params.size() != b.params.size()) return false;
  for (const auto& [name, ta] : a.params) {
    auto it = b.params.find(name);
    if (it == b.params.end()) return false;
    const auto& tb = it->second;
    if (ta.scalar_type() != tb.scalar_type() || ta.sizes() != tb.sizes()) return false;
    auto ca = ta.contiguous();
    auto cb = tb.contiguous();
    auto ba = tensor_bytes(ca);
    auto bb = tensor_bytes(cb);
    if (ba.size() != bb.size() || std::memcmp(ba.data(), bb.data(), ba.size()) != 0) return false;
  }
  return true;
}

std::string config_digest(const nlohmann::json& config) { return sha256_hex(config.dump()); }

std::string params_checksum(const std::map<std::string, torch::Tensor>& params, const std::string& prefix) {
  Sha256 h;
  for (const auto& [name, tensor] : params) {
    if (name.rfind(prefix, 0) != 0) continue;
    auto t = tensor.detach().cpu().contiguous();
    h.update(name);
    h.update(dtype_name(t.scalar_type()));
    for (auto s : t.sizes()) h.update(std::to_string(s) + ",");
    h.update(tensor_bytes(t));
  }
  auto d = h.finish();
  return to_hex(d);
}

std::string timestamp_now() {
  std::time_t t = 0;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
    t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace ota
