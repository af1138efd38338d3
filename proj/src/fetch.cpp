#include "cdq/fetch.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "cdq/hash.hpp"
#include "cdq/io.hpp"

namespace cdq {

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::ordered_json read_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return nlohmann::ordered_json::object();
  return nlohmann::ordered_json::parse(io::read_file(path));
}

}  // namespace

SnapshotCache::SnapshotCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_ / "objects");
}

std::string SnapshotCache::store(const RawSnapshot& snapshot, const std::string& as_of) {
  const auto hash = sha256_hex(snapshot.payload);
  std::lock_guard lock(mutex_);
  const auto object = dir_ / "objects" / hash;
  if (!std::filesystem::exists(object)) io::write_file_atomic(object, snapshot.payload);
  auto manifest = read_manifest(dir_ / "manifest.json");
  manifest[std::string(to_string(snapshot.source))][as_of] = {{"hash", hash}, {"origin", snapshot.origin}};
  io::write_file_atomic(dir_ / "manifest.json", manifest.dump(2) + "\n");
  return hash;
}

std::optional<RawSnapshot> SnapshotCache::load(SourceId source, const std::string& as_of) const {
  std::lock_guard lock(mutex_);
  const auto manifest = read_manifest(dir_ / "manifest.json");
  const std::string name(to_string(source));
  if (!manifest.contains(name) || !manifest[name].contains(as_of)) return std::nullopt;
  const auto& entry = manifest[name][as_of];
  RawSnapshot s;
  s.source = source;
  s.content_hash = entry["hash"].get<std::string>();
  s.origin = entry["origin"].get<std::string>();
  s.payload = io::read_file(dir_ / "objects" / s.content_hash);
  return s;
}

std::string SnapshotCache::manifest_text() const {
  std::lock_guard lock(mutex_);
  return read_manifest(dir_ / "manifest.json").dump();
}

bool is_url(const std::string& endpoint) {
  return endpoint.rfind("http://", 0) == 0 || endpoint.rfind("https://", 0) == 0;
}

RawSnapshot fetch_source(SourceId source, const std::string& endpoint, bool offline) {
  if (endpoint.empty()) throw FetchError("no endpoint configured for " + std::string(to_string(source)), false);
  RawSnapshot snap;
  snap.source = source;
  snap.origin = endpoint;
  snap.retrieved_at = utc_now();
  if (!is_url(endpoint)) {
    if (!std::filesystem::exists(endpoint)) throw FetchError("fixture not found: " + endpoint, false);
    snap.payload = io::read_file(endpoint);
  } else {
    if (offline) throw FetchError("offline: refusing to fetch " + endpoint, false);
    const auto scheme_end = endpoint.find("://") + 3;
    const auto path_start = endpoint.find('/', scheme_end);
    const std::string host = endpoint.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
    httplib::Client client(host);
    client.set_follow_location(true);
    client.set_connection_timeout(20);
    client.set_read_timeout(120);
    auto res = client.Get(path);
    if (!res) throw FetchError("network error fetching " + endpoint + ": " + httplib::to_string(res.error()), true);
    if (res->status < 200 || res->status >= 300) {
      throw FetchError("HTTP " + std::to_string(res->status) + " fetching " + endpoint, false, res->status);
    }
    snap.payload = std::move(res->body);
  }
  if (snap.payload.empty()) throw FetchError("empty payload from " + endpoint, false);
  snap.content_hash = sha256_hex(snap.payload);
  return snap;
}

}  // namespace cdq
