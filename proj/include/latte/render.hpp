#pragma once

// LaTeX source -> normalized PixelGrid.
//
// wrap -> pdflatex (nonstop, scratch dir) -> pdftoppm-compatible rasterizer
// at the kind's dpi -> normalize. Each job runs in its own scratch directory
// and under one wall-clock budget.

#include "latte/latex_script.hpp"
#include "latte/raster.hpp"

#include <nlohmann/json.hpp>

#include <fcntl.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace latte {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class Kind { Formula, Table };

inline constexpr std::string_view to_string(Kind k) { return k == Kind::Formula ? "formula" : "table"; }

struct RenderKind {
  Kind kind = Kind::Formula;
  NormalizationSpec spec = kFormulaSpec;

  static constexpr RenderKind formula() { return {Kind::Formula, kFormulaSpec}; }
  static constexpr RenderKind table() { return {Kind::Table, kTableSpec}; }

  static RenderKind parse(std::string_view name) {
    if (name == "formula") return formula();
    if (name == "table") return table();
    throw ConfigError("unknown kind '" + std::string(name) + "' (expected formula or table)");
  }
};

enum class RenderStatus { Ok, CompileError, Timeout };

inline constexpr std::string_view to_string(RenderStatus s) {
  switch (s) {
    case RenderStatus::Ok: return "ok";
    case RenderStatus::CompileError: return "compile_error";
    case RenderStatus::Timeout: return "timeout";
  }
  return "?";
}

struct RenderOutcome {
  RenderStatus status = RenderStatus::CompileError;
  std::optional<PixelGrid> image;  // present iff status == Ok
  std::string log_excerpt;

  bool ok() const { return status == RenderStatus::Ok; }

  static RenderOutcome success(PixelGrid img) { return {RenderStatus::Ok, std::move(img), {}}; }
  static RenderOutcome failure(RenderStatus s, std::string log) { return {s, std::nullopt, std::move(log)}; }
};

/// Complete standalone document around `body`. Formulae go into display
/// math; table bodies are inserted verbatim.
inline std::string wrap_source(const RenderKind& kind, std::string_view body) {
  if (body.empty()) throw Error("cannot wrap an empty LaTeX body");
  std::string doc;
  if (kind.kind == Kind::Formula) {
    doc =
        "\\documentclass[border=2pt]{standalone}\n"
        "\\usepackage{amsmath}\n"
        "\\usepackage{amssymb}\n"
        "\\usepackage{amsfonts}\n"
        "\\pagestyle{empty}\n"
        "\\begin{document}\n"
        "$\\displaystyle ";
    doc += body;
    doc += "$\n\\end{document}\n";
  } else {
    doc =
        "\\documentclass[border=2pt]{standalone}\n"
        "\\usepackage{amsmath}\n"
        "\\usepackage{amssymb}\n"
        "\\usepackage{array}\n"
        "\\usepackage{booktabs}\n"
        "\\usepackage{multirow}\n"
        "\\usepackage{graphicx}\n"
        "\\usepackage{xcolor}\n"
        "\\pagestyle{empty}\n"
        "\\begin{document}\n";
    doc += body;
    doc += "\n\\end{document}\n";
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Processes

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
};

/// Runs argv[0] (PATH lookup) in `cwd` with stdout+stderr appended to
/// `log_path`. The whole process group is killed once `timeout` elapses.
inline ProcessResult run_process(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                                 const std::filesystem::path& log_path, std::chrono::milliseconds timeout) {
  if (argv.empty()) throw Error("run_process: empty argv");
  std::vector<char*> cargs;
  cargs.reserve(argv.size() + 1);
  for (const auto& a : argv) cargs.push_back(const_cast<char*>(a.c_str()));
  cargs.push_back(nullptr);
  const std::string cwd_s = cwd.string();
  const std::string log_s = log_path.string();

  const pid_t pid = ::fork();
  if (pid < 0) throw Error("fork failed");
  if (pid == 0) {
    ::setpgid(0, 0);
    if (::chdir(cwd_s.c_str()) != 0) ::_exit(126);
    const int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    const int log = ::open(log_s.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (log >= 0) {
      ::dup2(log, STDOUT_FILENO);
      ::dup2(log, STDERR_FILENO);
    }
    ::execvp(cargs[0], cargs.data());
    ::_exit(127);
  }
  ::setpgid(pid, pid);

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  ProcessResult result;
  int status = 0;
  for (;;) {
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) throw Error("waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      result.timed_out = true;
      return result;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  return result;
}

/// Last `n` lines of a text file (empty when unreadable).
inline std::string tail_lines(const std::filesystem::path& path, std::size_t n) {
  std::ifstream in(path);
  std::deque<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    lines.push_back(line);
    if (lines.size() > n) lines.pop_front();
  }
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

/// Temporary directory removed on destruction.
class ScratchDir {
 public:
  ScratchDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "latte-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw Error("mkdtemp failed");
    path_ = tmpl;
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Toolchain

inline std::optional<std::filesystem::path> find_executable(std::string_view name) {
  if (name.empty()) return std::nullopt;
  auto executable = [](const std::filesystem::path& p) {
    return std::filesystem::is_regular_file(p) && ::access(p.c_str(), X_OK) == 0;
  };
  if (name.find('/') != std::string_view::npos) {
    std::filesystem::path p(name);
    if (executable(p)) return std::filesystem::absolute(p);
    return std::nullopt;
  }
  const char* env = std::getenv("PATH");
  std::string_view path = env != nullptr ? env : "/usr/local/bin:/usr/bin:/bin";
  while (!path.empty()) {
    const auto sep = path.find(':');
    const std::string_view dir = path.substr(0, sep);
    if (!dir.empty()) {
      std::filesystem::path cand = std::filesystem::path(dir) / std::string(name);
      if (executable(cand)) return cand;
    }
    if (sep == std::string_view::npos) break;
    path.remove_prefix(sep + 1);
  }
  return std::nullopt;
}

struct Toolchain {
  std::filesystem::path tex_bin;
  std::filesystem::path raster_bin;
  std::chrono::milliseconds timeout{20000};

  /// Resolves the compiler and rasterizer from explicit overrides, then
  /// LATTE_TEX_BIN / LATTE_RASTER_BIN, then pdflatex / pdftoppm on PATH.
  static Toolchain discover(std::string tex_override = {}, std::string raster_override = {}) {
    auto pick = [](std::string explicit_name, const char* env_name, const char* fallback) {
      if (!explicit_name.empty()) return explicit_name;
      if (const char* env = std::getenv(env_name); env != nullptr && *env != '\0') return std::string(env);
      return std::string(fallback);
    };
    const std::string tex = pick(std::move(tex_override), "LATTE_TEX_BIN", "pdflatex");
    const std::string raster = pick(std::move(raster_override), "LATTE_RASTER_BIN", "pdftoppm");
    Toolchain tc;
    auto tex_path = find_executable(tex);
    if (!tex_path) {
      throw ConfigError("LaTeX compiler '" + tex +
                        "' not found; install pdflatex or point LATTE_TEX_BIN / --tex-bin at it");
    }
    auto raster_path = find_executable(raster);
    if (!raster_path) {
      throw ConfigError("PDF rasterizer '" + raster +
                        "' not found; install pdftoppm (poppler-utils) or point LATTE_RASTER_BIN / --raster-bin at "
                        "a pdftoppm-compatible tool");
    }
    tc.tex_bin = *tex_path;
    tc.raster_bin = *raster_path;
    return tc;
  }

  /// Like discover() but returns nullopt instead of throwing.
  static std::optional<Toolchain> probe() {
    try {
      return discover();
    } catch (const ConfigError&) {
      return std::nullopt;
    }
  }
};

// ---------------------------------------------------------------------------
// Renderers

class Renderer {
 public:
  virtual ~Renderer() = default;
  virtual RenderOutcome render(std::string_view source, const RenderKind& kind) const = 0;
};

class TexRenderer final : public Renderer {
 public:
  explicit TexRenderer(Toolchain tc) : tc_(std::move(tc)) {}

  const Toolchain& toolchain() const { return tc_; }

  RenderOutcome render(std::string_view source, const RenderKind& kind) const override {
    if (source.empty()) return RenderOutcome::failure(RenderStatus::CompileError, "empty source");
    ScratchDir scratch;
    const auto& dir = scratch.path();
    {
      std::ofstream out(dir / "job.tex", std::ios::binary);
      out << wrap_source(kind, source);
      if (!out) return RenderOutcome::failure(RenderStatus::CompileError, "cannot write job.tex");
    }
    const auto start = std::chrono::steady_clock::now();
    const auto remaining = [&] {
      const auto spent = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
      return std::max(std::chrono::milliseconds(1), tc_.timeout - spent);
    };

    const auto compile_log = dir / "compile.log";
    const ProcessResult compiled = run_process(
        {tc_.tex_bin.string(), "-interaction=nonstopmode", "-halt-on-error", "-no-shell-escape", "job.tex"}, dir,
        compile_log, remaining());
    if (compiled.timed_out) return RenderOutcome::failure(RenderStatus::Timeout, tail_lines(compile_log, 20));
    if (compiled.exit_code != 0 || !std::filesystem::exists(dir / "job.pdf")) {
      return RenderOutcome::failure(RenderStatus::CompileError, tail_lines(compile_log, 20));
    }

    const auto raster_log = dir / "raster.log";
    const ProcessResult rastered =
        run_process({tc_.raster_bin.string(), "-r", std::to_string(kind.spec.dpi), "-f", "1", "-l", "1", "-png",
                     "-singlefile", "job.pdf", "job"},
                    dir, raster_log, remaining());
    if (rastered.timed_out) return RenderOutcome::failure(RenderStatus::Timeout, tail_lines(raster_log, 20));
    if (rastered.exit_code != 0 || !std::filesystem::exists(dir / "job.png")) {
      return RenderOutcome::failure(RenderStatus::CompileError, "rasterizer failed\n" + tail_lines(raster_log, 20));
    }
    try {
      return RenderOutcome::success(normalize(load_image(dir / "job.png"), kind.spec));
    } catch (const ImageError& e) {
      return RenderOutcome::failure(RenderStatus::CompileError, std::string("rasterizer output unreadable: ") + e.what());
    }
  }

 private:
  Toolchain tc_;
};

/// Serves pre-rendered images keyed by source. Sources are compared by
/// token sequence, so whitespace differences do not matter. Unknown sources
/// behave like compile errors.
class FixtureRenderer final : public Renderer {
 public:
  void add(std::string_view source, PixelGrid image) {
    images_.insert_or_assign(canonical(source), std::move(image));
  }

  /// JSON object {"<latex source>": "<png path>"}; paths are relative to the
  /// file's directory.
  static FixtureRenderer from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open raster fixture " + path.string());
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("raster fixture " + path.string() + ": " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("raster fixture must be a JSON object of source -> png path");
    FixtureRenderer r;
    for (const auto& [source, png] : doc.items()) {
      if (!png.is_string()) throw ConfigError("raster fixture entry for '" + source + "' is not a path");
      r.add(source, load_image(path.parent_path() / png.get<std::string>()));
    }
    return r;
  }

  bool contains(std::string_view source) const { return images_.count(canonical(source)) != 0; }

  RenderOutcome render(std::string_view source, const RenderKind& kind) const override {
    const auto it = images_.find(canonical(source));
    if (it == images_.end()) {
      return RenderOutcome::failure(RenderStatus::CompileError, "no pre-rendered image for source: " + std::string(source));
    }
    return RenderOutcome::success(normalize(it->second, kind.spec));
  }

 private:
  static std::string canonical(std::string_view source) { return detokenize(tokenize(source)); }

  std::map<std::string, PixelGrid> images_;
};

/// Renders every source with up to `workers` concurrent jobs; results keep
/// input order. Exceptions from a job become compile_error outcomes.
inline std::vector<RenderOutcome> render_batch(const Renderer& renderer, const std::vector<std::string>& sources,
                                               const RenderKind& kind, unsigned workers = 0) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(1, sources.size())));
  std::vector<RenderOutcome> results(sources.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < sources.size(); i = next++) {
      try {
        results[i] = renderer.render(sources[i], kind);
      } catch (const std::exception& e) {
        results[i] = RenderOutcome::failure(RenderStatus::CompileError, e.what());
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  pool.clear();
  return results;
}

}  // namespace latte
