#include "byols/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "byols/binary_io.hpp"
#include "byols/error.hpp"

namespace byols::data {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad_row(const fs::path& p, std::size_t line, const std::string& what) {
  fail(ErrorCode::kFormat, p.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_csv(const std::string& line, const fs::path& p, std::size_t lineno) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) bad_row(p, lineno, "unterminated quote");
  out.push_back(std::move(cur));
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::string trim_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

std::vector<std::string> CorpusManifest::scene_classes() const {
  std::set<std::string> s;
  for (const auto& r : records) {
    if (r.label) s.insert(*r.label);
  }
  return {s.begin(), s.end()};
}

std::vector<std::string> CorpusManifest::event_classes() const {
  std::set<std::string> s;
  for (const auto& r : records) {
    for (const auto& e : r.events) s.insert(e.label);
  }
  return {s.begin(), s.end()};
}

CorpusManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open manifest " + path.string());
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(trim_cr(l));
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) fail(ErrorCode::kFormat, "empty manifest");

  CorpusManifest m;
  m.source = fs::absolute(path);
  const fs::path base = m.source.parent_path();
  std::size_t at = 0;
  if (lines[0].rfind("#byols-manifest", 0) == 0) {
    std::istringstream ss(lines[0].substr(15));
    std::string v;
    ss >> v;
    if (v.size() < 2 || v[0] != 'v') bad_row(path, 1, "malformed version line");
    try {
      m.format_version = std::stoi(v.substr(1));
    } catch (const std::exception&) {
      bad_row(path, 1, "malformed version line");
    }
    if (m.format_version != 1) bad_row(path, 1, "unsupported manifest version " + std::to_string(m.format_version));
    ++at;
  }
  if (at >= lines.size()) fail(ErrorCode::kFormat, "empty manifest");
  const auto header = split_csv(lines[at], path, at + 1);
  if (header.size() < 2 || header[0] != "path" || header[1] != "id") {
    bad_row(path, at + 1, "header must start with path,id");
  }
  int col_label = -1, col_events = -1;
  for (std::size_t i = 2; i < header.size(); ++i) {
    if (header[i] == "label") col_label = static_cast<int>(i);
    else if (header[i] == "events") col_events = static_cast<int>(i);
    else bad_row(path, at + 1, "unknown column '" + header[i] + "'");
  }
  ++at;

  std::unordered_set<std::string> ids;
  for (; at < lines.size(); ++at) {
    const std::size_t lineno = at + 1;
    if (lines[at].empty()) continue;
    const auto f = split_csv(lines[at], path, lineno);
    if (f.size() != header.size()) {
      bad_row(path, lineno, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    }
    ManifestRecord r;
    if (f[0].empty()) bad_row(path, lineno, "empty path");
    if (f[1].empty()) bad_row(path, lineno, "empty id");
    r.audio_path = fs::path(f[0]).is_absolute() ? fs::path(f[0]) : base / f[0];
    r.id = f[1];
    if (!ids.insert(r.id).second) bad_row(path, lineno, "duplicate id '" + r.id + "'");
    if (!fs::exists(r.audio_path)) bad_row(path, lineno, "missing file " + r.audio_path.string());
    if (col_label >= 0 && !f[static_cast<std::size_t>(col_label)].empty()) r.label = f[static_cast<std::size_t>(col_label)];
    if (col_events >= 0 && !f[static_cast<std::size_t>(col_events)].empty()) {
      const fs::path ep(f[static_cast<std::size_t>(col_events)]);
      r.events_path = ep.is_absolute() ? ep : base / ep;
      if (!fs::exists(*r.events_path)) bad_row(path, lineno, "missing event file " + r.events_path->string());
      try {
        r.events = load_events(*r.events_path);
      } catch (const Error& e) {
        bad_row(path, lineno, e.what());
      }
    }
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) fail(ErrorCode::kFormat, "empty manifest");
  return m;
}

void save_manifest(const CorpusManifest& m, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path();
  std::string out = "#byols-manifest v1\npath,id,label,events\n";
  for (const auto& r : m.records) {
    auto rel = [&](const fs::path& p) { return p.is_absolute() ? fs::relative(p, base).generic_string() : p.generic_string(); };
    out += csv_field(rel(r.audio_path)) + "," + csv_field(r.id) + "," + csv_field(r.label.value_or("")) + "," +
           (r.events_path ? csv_field(rel(*r.events_path)) : std::string()) + "\n";
  }
  io::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(out.data()), out.size()));
}

std::vector<EventAnnotation> load_events(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open event file " + path.string());
  std::vector<EventAnnotation> out;
  std::size_t lineno = 0;
  for (std::string l; std::getline(in, l);) {
    ++lineno;
    l = trim_cr(l);
    if (l.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(l);
      EventAnnotation e{j.at("onset").get<double>(), j.at("offset").get<double>(), j.at("label").get<std::string>()};
      if (!std::isfinite(e.onset_s) || !std::isfinite(e.offset_s) || e.onset_s > e.offset_s) {
        fail(ErrorCode::kFormat, "invalid event interval");
      }
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::kFormat, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    } catch (const Error& ex) {
      fail(ErrorCode::kFormat, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.onset_s < b.onset_s; });
  return out;
}

std::string events_jsonl(const std::vector<EventAnnotation>& events) {
  std::string out;
  for (const auto& e : events) {
    nlohmann::json j;
    j["onset"] = e.onset_s;
    j["offset"] = e.offset_s;
    j["label"] = e.label;
    out += j.dump() + "\n";
  }
  return out;
}

eval::EventList to_event_list(const std::vector<EventAnnotation>& events, const std::vector<std::string>& classes) {
  eval::EventList out;
  for (const auto& e : events) {
    const auto it = std::find(classes.begin(), classes.end(), e.label);
    require(it != classes.end(), "unknown event label '" + e.label + "'");
    out.push_back(eval::Event{e.onset_s, e.offset_s, static_cast<int>(it - classes.begin())});
  }
  return eval::sorted(std::move(out));
}

audio::AudioClip load_clip(const ManifestRecord& r) {
  audio::AudioClip c = audio::read_wav(r.audio_path);
  c.id = r.id;
  if (c.sample_rate != audio::kModelRate) c = audio::resample(c, audio::kModelRate);
  c.id = r.id;
  return c;
}

}  // namespace byols::data
