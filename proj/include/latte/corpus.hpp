#pragma once

// Dataset construction: pull tabular environments out of .tex trees, render
// them, and write a JSONL manifest of the sources that render.

#include "latte/render.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace latte {

struct StrippedText {
  std::string text;
  std::vector<std::size_t> origin;  // origin[i] = byte offset of text[i] in the input; one extra entry for the end
};

namespace detail {

/// True when the character at `pos` is preceded by an odd number of
/// backslashes (i.e. it is escaped).
inline bool escaped(std::string_view s, std::size_t pos) {
  std::size_t n = 0;
  while (pos > n && s[pos - n - 1] == '\\') ++n;
  return n % 2 == 1;
}

}  // namespace detail

/// Removes every unescaped '%' up to (not including) the end of its line.
inline StrippedText strip_comments(std::string_view tex) {
  StrippedText out;
  out.text.reserve(tex.size());
  out.origin.reserve(tex.size() + 1);
  std::size_t i = 0;
  while (i < tex.size()) {
    if (tex[i] == '%' && !detail::escaped(tex, i)) {
      while (i < tex.size() && tex[i] != '\n') ++i;
      continue;
    }
    out.text.push_back(tex[i]);
    out.origin.push_back(i);
    ++i;
  }
  out.origin.push_back(tex.size());
  return out;
}

struct TabularSpan {
  std::string body;   // comment-free, from \begin{tabular} through \end{tabular}
  std::size_t begin;  // byte span in the original text
  std::size_t end;
};

struct Extraction {
  std::vector<TabularSpan> tables;
  std::vector<std::string> issues;  // unbalanced environments, by original offset
};

/// Outermost balanced \begin{tabular}...\end{tabular} spans, after comment
/// stripping. Nested tabulars stay inside their parent; unbalanced markers
/// are reported and skipped.
inline Extraction extract_tabulars(std::string_view tex) {
  static constexpr std::string_view kBegin = "\\begin{tabular}";
  static constexpr std::string_view kEnd = "\\end{tabular}";
  const StrippedText s = strip_comments(tex);
  const std::string_view text = s.text;

  struct Marker {
    std::size_t pos;
    bool open;
  };
  std::vector<Marker> markers;
  for (std::size_t pos = text.find('\\'); pos != std::string_view::npos; pos = text.find('\\', pos + 1)) {
    if (detail::escaped(text, pos)) continue;
    if (text.substr(pos, kBegin.size()) == kBegin) {
      markers.push_back({pos, true});
    } else if (text.substr(pos, kEnd.size()) == kEnd) {
      markers.push_back({pos, false});
    }
  }

  Extraction out;
  std::vector<std::size_t> open;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // [begin, end) in stripped text
  for (const Marker& m : markers) {
    if (m.open) {
      open.push_back(m.pos);
    } else if (open.empty()) {
      out.issues.push_back("unmatched \\end{tabular} at byte " + std::to_string(s.origin[m.pos]));
    } else {
      pairs.emplace_back(open.back(), m.pos + kEnd.size());
      open.pop_back();
    }
  }
  for (std::size_t pos : open) {
    out.issues.push_back("unclosed \\begin{tabular} at byte " + std::to_string(s.origin[pos]));
  }

  std::sort(pairs.begin(), pairs.end());
  std::size_t covered_until = 0;
  bool any = false;
  for (const auto& [b, e] : pairs) {
    if (any && e <= covered_until) continue;  // nested in an earlier span
    out.tables.push_back({std::string(text.substr(b, e - b)), s.origin[b], s.origin[e - 1] + 1});
    covered_until = e;
    any = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct CorpusRecord {
  std::string id;
  Kind kind = Kind::Table;
  std::string latex;
  std::string image_path;  // relative to the manifest's directory
  std::string source_file;
  std::size_t span_begin = 0;
  std::size_t span_end = 0;
};

inline nlohmann::json record_to_json(const CorpusRecord& r) {
  return {{"id", r.id},
          {"kind", std::string(to_string(r.kind))},
          {"latex", r.latex},
          {"image_path", r.image_path},
          {"provenance", {{"file", r.source_file}, {"begin", r.span_begin}, {"end", r.span_end}}}};
}

inline CorpusRecord record_from_json(const nlohmann::json& j) {
  CorpusRecord r;
  r.id = j.at("id").get<std::string>();
  r.kind = RenderKind::parse(j.at("kind").get<std::string>()).kind;
  r.latex = j.at("latex").get<std::string>();
  r.image_path = j.at("image_path").get<std::string>();
  const auto& p = j.at("provenance");
  r.source_file = p.at("file").get<std::string>();
  r.span_begin = p.at("begin").get<std::size_t>();
  r.span_end = p.at("end").get<std::size_t>();
  return r;
}

/// Stable 64-bit FNV-1a id over kind and source text.
inline std::string source_id(Kind kind, std::string_view latex) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](char c) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  };
  for (char c : to_string(kind)) mix(c);
  mix('\0');
  for (char c : latex) mix(c);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (int i = 15; i >= 0; --i) out.push_back(kHex[(h >> (4 * i)) & 0xF]);
  return out;
}

struct ManifestResult {
  std::vector<CorpusRecord> records;  // sorted by id
  std::vector<std::string> excluded;  // one line per dropped candidate
};

struct ManifestOptions {
  unsigned workers = 0;  // 0 = hardware concurrency
  std::function<void(const std::string&)> log;
};

namespace detail {

struct Candidate {
  std::string latex;
  std::string file;
  std::size_t begin;
  std::size_t end;
};

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Tables: every outermost tabular of every *.tex file. Formulae: every
/// non-empty line of every *.txt / *.lst file.
inline std::vector<Candidate> collect_candidates(const std::vector<std::filesystem::path>& inputs, Kind kind,
                                                 const std::function<void(const std::string&)>& log) {
  std::vector<std::filesystem::path> files;
  for (const auto& root : inputs) {
    if (!std::filesystem::is_directory(root)) throw Error("input directory not found: " + root.string());
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension().string();
      const bool wanted = kind == Kind::Table ? ext == ".tex" : (ext == ".txt" || ext == ".lst");
      if (wanted) files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  std::vector<Candidate> out;
  for (const auto& file : files) {
    std::string text;
    try {
      text = read_text(file);
    } catch (const Error& e) {
      if (log) log(e.what());
      continue;
    }
    if (kind == Kind::Table) {
      Extraction ex = extract_tabulars(text);
      for (const auto& issue : ex.issues) {
        if (log) log(file.string() + ": " + issue);
      }
      for (auto& t : ex.tables) out.push_back({std::move(t.body), file.generic_string(), t.begin, t.end});
    } else {
      std::size_t pos = 0;
      while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string_view line(text.data() + pos, eol - pos);
        const auto first = line.find_first_not_of(" \t\r");
        if (first != std::string_view::npos) {
          const auto last = line.find_last_not_of(" \t\r");
          out.push_back({std::string(line.substr(first, last - first + 1)), file.generic_string(), pos + first,
                         pos + last + 1});
        }
        pos = eol + 1;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Extracts, renders and records every candidate under `inputs`. Images go
/// to <manifest dir>/images/<id>.png. Records that fail to render are
/// excluded and logged. Duplicate sources keep their first occurrence.
inline ManifestResult build_manifest(const std::vector<std::filesystem::path>& inputs, const RenderKind& kind,
                                     const std::filesystem::path& manifest_path, const Renderer& renderer,
                                     const ManifestOptions& opts = {}) {
  auto candidates = detail::collect_candidates(inputs, kind.kind, opts.log);

  std::vector<detail::Candidate> unique;
  std::set<std::string> seen;
  for (auto& c : candidates) {
    if (seen.insert(source_id(kind.kind, c.latex)).second) unique.push_back(std::move(c));
  }

  std::vector<std::string> sources;
  sources.reserve(unique.size());
  for (const auto& c : unique) sources.push_back(c.latex);
  const auto outcomes = render_batch(renderer, sources, kind, opts.workers);

  const auto dir = manifest_path.has_parent_path() ? manifest_path.parent_path() : std::filesystem::path(".");
  std::filesystem::create_directories(dir / "images");

  ManifestResult result;
  for (std::size_t i = 0; i < unique.size(); ++i) {
    const auto& c = unique[i];
    const std::string where = c.file + ":" + std::to_string(c.begin) + "-" + std::to_string(c.end);
    if (!outcomes[i].ok()) {
      result.excluded.push_back(where + " " + std::string(to_string(outcomes[i].status)));
      if (opts.log) opts.log("excluded " + result.excluded.back());
      continue;
    }
    CorpusRecord rec;
    rec.id = source_id(kind.kind, c.latex);
    rec.kind = kind.kind;
    rec.latex = c.latex;
    rec.image_path = "images/" + rec.id + ".png";
    rec.source_file = c.file;
    rec.span_begin = c.begin;
    rec.span_end = c.end;
    try {
      save_image(*outcomes[i].image, dir / rec.image_path);
    } catch (const ImageError& e) {
      result.excluded.push_back(where + " " + e.what());
      if (opts.log) opts.log("excluded " + result.excluded.back());
      continue;
    }
    result.records.push_back(std::move(rec));
  }
  std::sort(result.records.begin(), result.records.end(),
            [](const CorpusRecord& a, const CorpusRecord& b) { return a.id < b.id; });

  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write manifest " + manifest_path.string());
  for (const auto& r : result.records) out << record_to_json(r).dump() << '\n';
  if (!out) throw Error("write failed for " + manifest_path.string());
  return result;
}

inline std::vector<CorpusRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  std::vector<CorpusRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace latte
