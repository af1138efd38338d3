#include "cdq/decisions.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <mutex>

namespace cdq {

std::string_view to_string(Verdict verdict) { return verdict == Verdict::Confirm ? "Confirm" : "Dismiss"; }

Verdict parse_verdict(std::string_view text) {
  if (text == "Confirm") return Verdict::Confirm;
  if (text == "Dismiss") return Verdict::Dismiss;
  throw std::invalid_argument("unknown verdict '" + std::string(text) + "'");
}

RepairOverride CurationDecision::as_override() const { return {period_override, method_override, manual_value}; }

Json to_json(const CurationDecision& d) {
  Json j;
  j["anomaly_id"] = d.anomaly_id;
  j["verdict"] = to_string(d.verdict);
  j["period_override"] = d.period_override ? Json::array({d.period_override->first, d.period_override->second})
                                           : Json(nullptr);
  j["method_override"] = d.method_override ? Json(to_string(*d.method_override)) : Json(nullptr);
  if (d.manual_value) j["manual_value"] = *d.manual_value;
  j["note"] = d.note;
  j["decided_at"] = d.decided_at;
  j["actor"] = d.actor;
  return j;
}

bool is_anomaly_id(std::string_view id) {
  return id.size() == 16 &&
         std::all_of(id.begin(), id.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)) || (c >= 'a' && c <= 'f'); });
}

CurationDecision decision_from_json(const Json& j) {
  try {
    CurationDecision d;
    d.anomaly_id = j.at("anomaly_id").get<std::string>();
    if (!is_anomaly_id(d.anomaly_id)) throw std::invalid_argument("malformed anomaly id '" + d.anomaly_id + "'");
    d.verdict = parse_verdict(j.at("verdict").get<std::string>());
    if (j.contains("period_override") && !j["period_override"].is_null()) {
      const auto& p = j["period_override"];
      if (!p.is_array() || p.size() != 2) throw std::invalid_argument("period_override must be [from, to]");
      d.period_override = std::make_pair(p[0].get<Index>(), p[1].get<Index>());
      if (d.period_override->first < 0 || d.period_override->first > d.period_override->second) {
        throw std::invalid_argument("period_override must satisfy 0 <= from <= to");
      }
    }
    if (j.contains("method_override") && !j["method_override"].is_null()) {
      d.method_override = parse_repair_method(j["method_override"].get<std::string>());
    }
    if (j.contains("manual_value") && !j["manual_value"].is_null()) d.manual_value = j["manual_value"].get<double>();
    d.note = j.value("note", std::string());
    d.decided_at = j.value("decided_at", std::string());
    if (!d.decided_at.empty()) parse_timestamp(d.decided_at);
    d.actor = j.value("actor", std::string());
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("decision: ") + e.what());
  }
}

namespace {

int digits(std::string_view s, std::size_t pos, std::size_t n) {
  if (pos + n > s.size()) throw std::invalid_argument("timestamp too short");
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) throw std::invalid_argument("bad timestamp digit");
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

std::mutex& append_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::chrono::sys_time<std::chrono::nanoseconds> parse_timestamp(std::string_view s) {
  using namespace std::chrono;
  try {
    const year_month_day ymd{year{digits(s, 0, 4)}, month{static_cast<unsigned>(digits(s, 5, 2))},
                             day{static_cast<unsigned>(digits(s, 8, 2))}};
    if (s.size() < 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' || s[16] != ':' ||
        !ymd.ok()) {
      throw std::invalid_argument("bad layout");
    }
    const int hh = digits(s, 11, 2), mm = digits(s, 14, 2), ss = digits(s, 17, 2);
    if (hh > 23 || mm > 59 || ss > 60) throw std::invalid_argument("bad time");
    std::size_t pos = 19;
    long long frac_ns = 0;
    if (pos < s.size() && s[pos] == '.') {
      ++pos;
      int count = 0;
      while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
        if (count < 9) frac_ns = frac_ns * 10 + (s[pos] - '0');
        ++count;
        ++pos;
      }
      if (count == 0) throw std::invalid_argument("empty fraction");
      for (int i = std::min(count, 9); i < 9; ++i) frac_ns *= 10;
    }
    minutes offset{0};
    if (pos < s.size()) {
      if (s[pos] == 'Z' && pos + 1 == s.size()) {
        pos += 1;
      } else if ((s[pos] == '+' || s[pos] == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
        const int sign = s[pos] == '+' ? 1 : -1;
        offset = minutes{sign * (digits(s, pos + 1, 2) * 60 + digits(s, pos + 4, 2))};
        pos += 6;
      } else {
        throw std::invalid_argument("bad zone");
      }
    }
    return sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss} + nanoseconds{frac_ns} - offset;
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("malformed timestamp '" + std::string(s) + "'");
  }
}

std::string now_timestamp() {
  using namespace std::chrono;
  const auto now = time_point_cast<milliseconds>(system_clock::now());
  const auto day = floor<days>(now);
  const hh_mm_ss tod{now - day};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%sT%02d:%02d:%02d.%03dZ", format_iso_date(day).c_str(), static_cast<int>(tod.hours().count()),
                static_cast<int>(tod.minutes().count()), static_cast<int>(tod.seconds().count()),
                static_cast<int>(tod.subseconds().count()));
  return buf;
}

void append_decision(const std::filesystem::path& log, const CurationDecision& decision) {
  if (!is_anomaly_id(decision.anomaly_id)) {
    throw std::invalid_argument("malformed anomaly id '" + decision.anomaly_id + "'");
  }
  CurationDecision d = decision;
  if (d.decided_at.empty()) d.decided_at = now_timestamp();
  parse_timestamp(d.decided_at);
  const std::string line = to_json(d).dump() + "\n";
  std::lock_guard lock(append_mutex());
  if (log.has_parent_path()) std::filesystem::create_directories(log.parent_path());
  std::ofstream out(log, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot open decision log " + log.string());
  out << line;
  out.flush();
  if (!out) throw std::runtime_error("cannot append to decision log " + log.string());
}

DecisionLog read_decisions(const std::filesystem::path& log) {
  DecisionLog out;
  std::ifstream in(log, std::ios::binary);
  if (!in) return out;
  std::map<std::string, std::chrono::sys_time<std::chrono::nanoseconds>> stamp;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++out.lines_read;
    try {
      auto d = decision_from_json(Json::parse(line));
      const auto t = d.decided_at.empty() ? std::chrono::sys_time<std::chrono::nanoseconds>{} : parse_timestamp(d.decided_at);
      auto it = stamp.find(d.anomaly_id);
      if (it == stamp.end() || t >= it->second) {
        stamp[d.anomaly_id] = t;
        out.effective[d.anomaly_id] = std::move(d);
      }
    } catch (const std::exception&) {
      out.corrupt_lines.push_back(n);
    }
  }
  return out;
}

AnomalyStatus status_after(const CurationDecision& decision) {
  return decision.verdict == Verdict::Confirm ? AnomalyStatus::Confirmed : AnomalyStatus::Dismissed;
}

}  // namespace cdq
