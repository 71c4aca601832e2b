// latte: command-line front end (diff, recognize, eval, render, corpus,
// serve-mock).
//
// Exit codes: 0 success, 1 domain failure, 2 usage or configuration error.

#include "latte/latte.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

struct GlobalOptions {
  bool json_output = false;
  std::uint64_t seed = 0;
  unsigned workers = 0;
  std::string tex_bin;
  std::string raster_bin;
  double timeout_s = 20.0;
};

void emit(const GlobalOptions& g, const json& payload, const std::string& human) {
  if (g.json_output) {
    std::cout << payload.dump() << '\n';
  } else {
    std::cout << human;
  }
}

std::unique_ptr<latte::Renderer> make_renderer(const GlobalOptions& g, const std::string& raster_fixture) {
  if (!raster_fixture.empty()) {
    return std::make_unique<latte::FixtureRenderer>(latte::FixtureRenderer::from_json_file(raster_fixture));
  }
  auto tc = latte::Toolchain::discover(g.tex_bin, g.raster_bin);
  tc.timeout = std::chrono::milliseconds(static_cast<long long>(g.timeout_s * 1000));
  return std::make_unique<latte::TexRenderer>(std::move(tc));
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw latte::ConfigError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --------------------------------------------------------------------------- diff

struct DiffArgs {
  std::string gt;
  std::string rendered;
  std::string out;
  std::string kind;
  std::string orientation = "auto";
};

int run_diff(const GlobalOptions& g, const DiffArgs& a) {
  latte::PixelGrid gt = latte::load_image(a.gt);
  latte::PixelGrid rendered = latte::load_image(a.rendered);
  if (!a.kind.empty()) {
    const auto kind = latte::RenderKind::parse(a.kind);
    gt = latte::normalize(gt, kind.spec);
    rendered = latte::normalize(rendered, kind.spec);
  } else if (gt.height() != rendered.height() || gt.width() != rendered.width()) {
    const std::size_t h = std::max(gt.height(), rendered.height());
    const std::size_t w = std::max(gt.width(), rendered.width());
    gt = latte::pad_to(gt, h, w);
    rendered = latte::pad_to(rendered, h, w);
  }

  latte::DeltaView dv = a.orientation == "column" ? latte::image_edit(gt, rendered)
                        : a.orientation == "row"  ? latte::image_edit_rows(gt, rendered)
                                                  : latte::delta_view(gt, rendered);
  if (!a.out.empty()) latte::save_image(latte::compose_model_view(dv), a.out);

  json summary = latte::delta_to_json(latte::DeltaStats::of(dv));
  summary["match"] = latte::exact_match(gt, rendered);
  summary["edit_score"] = latte::edit_score(gt, rendered);
  summary["gt_digest"] = latte::image_digest(gt);
  summary["rendered_digest"] = latte::image_digest(rendered);
  std::ostringstream human;
  human << "orientation " << latte::to_string(dv.orientation) << ", distance " << dv.distance << ", edit percentage "
        << dv.edit_percentage << "\n";
  emit(g, summary, human.str());
  return kExitOk;
}

// --------------------------------------------------------------------------- recognize

struct RecognizeArgs {
  std::string image;
  std::string kind = "formula";
  std::string backend_url;
  std::string mock;
  std::size_t budget = 4;
  std::string trace_out;
  std::string emit_delta;
  std::string raster_fixture;
  bool require_match = false;
};

int run_recognize(const GlobalOptions& g, RecognizeArgs a) {
  const auto kind = latte::RenderKind::parse(a.kind);
  if (a.budget < 1) throw latte::ConfigError("--budget must be at least 1");
  if (a.backend_url.empty() && a.mock.empty()) {
    if (const char* env = std::getenv("LATTE_BACKEND_URL"); env != nullptr) a.backend_url = env;
  }
  if (a.backend_url.empty() == a.mock.empty()) {
    throw latte::ConfigError("exactly one of --backend URL, --mock FIXTURE or LATTE_BACKEND_URL is required");
  }
  std::unique_ptr<latte::Backend> backend;
  if (!a.mock.empty()) {
    backend = std::make_unique<latte::MockBackend>(latte::MockBackend::from_file(a.mock));
  } else {
    backend = std::make_unique<latte::HttpBackend>(a.backend_url);
  }
  const auto renderer = make_renderer(g, a.raster_fixture);
  const latte::PixelGrid gt = latte::normalize(latte::load_image(a.image), kind.spec);

  latte::RecognizeOptions opts;
  opts.budget = a.budget;
  if (!a.emit_delta.empty()) {
    fs::create_directories(a.emit_delta);
    opts.on_delta = [dir = fs::path(a.emit_delta)](std::size_t round, const latte::DeltaView&,
                                                   const latte::PixelGrid& view) {
      latte::save_image(view, dir / ("round" + std::to_string(round) + "_delta.png"));
    };
  }
  const latte::IterationTrace trace = latte::recognize(gt, kind, *backend, *renderer, opts);
  const json tj = latte::trace_to_json(trace);
  if (!a.trace_out.empty()) {
    std::ofstream out(a.trace_out);
    if (!out) throw latte::ConfigError("cannot write " + a.trace_out);
    out << tj.dump(2) << '\n';
  }
  json summary{{"status", tj["status"]}, {"rounds", trace.rounds.size()}};
  if (tj.contains("final_latex")) summary["final_latex"] = tj["final_latex"];
  if (!trace.error.empty()) summary["error"] = trace.error;
  std::ostringstream human;
  human << latte::to_string(trace.status) << " after " << trace.rounds.size() << " round(s)";
  if (const auto* last = trace.final_candidate()) human << ": " << last->raw();
  human << "\n";
  if (!trace.error.empty()) human << trace.error << "\n";
  emit(g, summary, human.str());

  if (trace.status == latte::TraceStatus::BackendError) return kExitDomain;
  if (a.require_match && trace.status != latte::TraceStatus::Matched) return kExitDomain;
  return kExitOk;
}

// --------------------------------------------------------------------------- eval

struct EvalArgs {
  std::string manifest;
  std::string kind = "formula";
  std::string raster_fixture;
  std::string rows_out;
};

int run_eval(const GlobalOptions& g, const EvalArgs& a) {
  const auto kind = latte::RenderKind::parse(a.kind);
  const auto renderer = make_renderer(g, a.raster_fixture);
  const fs::path base = fs::path(a.manifest).parent_path();

  struct Row {
    fs::path gt_image;
    std::string candidate;
    std::optional<std::string> gt_source;
  };
  std::vector<Row> rows;
  {
    std::ifstream in(a.manifest);
    if (!in) throw latte::ConfigError("cannot open " + a.manifest);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("gt_image") || !j.contains("candidate_source")) {
        throw latte::ConfigError(a.manifest + ":" + std::to_string(lineno) +
                                 ": expected {gt_image, candidate_source[, gt_source]}");
      }
      Row r{base / j["gt_image"].get<std::string>(), j["candidate_source"].get<std::string>(), std::nullopt};
      if (j.contains("gt_source")) r.gt_source = j["gt_source"].get<std::string>();
      rows.push_back(std::move(r));
    }
  }

  std::vector<std::string> sources;
  for (const auto& r : rows) sources.push_back(r.candidate);
  const auto outcomes = latte::render_batch(*renderer, sources, kind, g.workers);
  const latte::PixelGrid blank(kind.spec.target_height, kind.spec.target_width);

  std::size_t matches = 0;
  std::size_t failures = 0;
  std::size_t bleu_n = 0;
  double edit_sum = 0.0;
  double bleu_sum = 0.0;
  std::ofstream rows_out;
  if (!a.rows_out.empty()) rows_out.open(a.rows_out);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const latte::PixelGrid gt = latte::normalize(latte::load_image(rows[i].gt_image), kind.spec);
    if (!outcomes[i].ok()) ++failures;
    latte::EvalReport rep = latte::evaluate(gt, outcomes[i].ok() ? *outcomes[i].image : blank);
    if (rows[i].gt_source) {
      rep.bleu4 = latte::bleu4(latte::tokenize(rows[i].candidate), latte::tokenize(*rows[i].gt_source));
      bleu_sum += *rep.bleu4;
      ++bleu_n;
    }
    matches += rep.match ? 1 : 0;
    edit_sum += rep.edit_score;
    if (rows_out.is_open()) {
      json rj{{"gt_image", rows[i].gt_image.string()},
              {"render_status", std::string(latte::to_string(outcomes[i].status))},
              {"match", rep.match},
              {"edit_score", rep.edit_score},
              {"distance", rep.distance}};
      rj["bleu4"] = rep.bleu4 ? json(*rep.bleu4) : json(nullptr);
      rows_out << rj.dump() << '\n';
    }
  }
  const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
  json summary{{"count", rows.size()},
               {"match", static_cast<double>(matches) / n},
               {"edit_score", edit_sum / n},
               {"render_failures", failures}};
  summary["bleu4"] = bleu_n > 0 ? json(bleu_sum / static_cast<double>(bleu_n)) : json(nullptr);
  std::ostringstream human;
  human << "samples " << rows.size() << ", match " << summary["match"].get<double>() << ", edit "
        << summary["edit_score"].get<double>();
  if (bleu_n > 0) human << ", bleu4 " << bleu_sum / static_cast<double>(bleu_n);
  human << ", render failures " << failures << "\n";
  emit(g, summary, human.str());
  return kExitOk;
}

// --------------------------------------------------------------------------- render

struct RenderArgs {
  std::string source;
  std::string source_file;
  std::string kind = "formula";
  std::string out;
  std::string raster_fixture;
};

int run_render(const GlobalOptions& g, const RenderArgs& a) {
  const auto kind = latte::RenderKind::parse(a.kind);
  if (a.source.empty() == a.source_file.empty()) throw latte::ConfigError("give exactly one of --source or --source-file");
  const std::string source = a.source.empty() ? read_text(a.source_file) : a.source;
  const auto renderer = make_renderer(g, a.raster_fixture);
  const latte::RenderOutcome outcome = renderer->render(source, kind);
  json summary{{"status", std::string(latte::to_string(outcome.status))}, {"log_excerpt", outcome.log_excerpt}};
  if (outcome.image) {
    summary["image_digest"] = latte::image_digest(*outcome.image);
    summary["width"] = outcome.image->width();
    summary["height"] = outcome.image->height();
    if (!a.out.empty()) latte::save_image(*outcome.image, a.out);
  }
  std::string human = std::string(latte::to_string(outcome.status)) + "\n";
  if (!outcome.ok()) human += outcome.log_excerpt;
  emit(g, summary, human);
  return outcome.ok() ? kExitOk : kExitDomain;
}

// --------------------------------------------------------------------------- corpus

struct CorpusExtractArgs {
  std::vector<std::string> inputs;
  std::string out;
};

int run_corpus_extract(const GlobalOptions& g, const CorpusExtractArgs& a) {
  std::vector<fs::path> files;
  for (const auto& in : a.inputs) {
    if (fs::is_directory(in)) {
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".tex") files.push_back(e.path());
      }
    } else if (fs::is_regular_file(in)) {
      files.emplace_back(in);
    } else {
      throw latte::ConfigError("no such file or directory: " + in);
    }
  }
  std::sort(files.begin(), files.end());
  json tables = json::array();
  json issues = json::array();
  for (const auto& f : files) {
    const latte::Extraction ex = latte::extract_tabulars(read_text(f));
    for (const auto& t : ex.tables) {
      tables.push_back({{"file", f.generic_string()}, {"begin", t.begin}, {"end", t.end}, {"latex", t.body}});
    }
    for (const auto& i : ex.issues) issues.push_back(f.generic_string() + ": " + i);
  }
  for (const auto& i : issues) std::cerr << "warning: " << i.get<std::string>() << '\n';
  if (!a.out.empty()) {
    std::ofstream out(a.out, std::ios::binary | std::ios::trunc);
    if (!out) throw latte::ConfigError("cannot write " + a.out);
    for (const auto& t : tables) out << t.dump() << '\n';
  }
  json summary{{"tables", a.out.empty() ? tables : json(tables.size())}, {"issues", issues}};
  emit(g, summary, std::to_string(tables.size()) + " table(s), " + std::to_string(issues.size()) + " issue(s)\n");
  return kExitOk;
}

struct CorpusBuildArgs {
  std::vector<std::string> inputs;
  std::string kind = "table";
  std::string out;
  std::string raster_fixture;
};

int run_corpus_build(const GlobalOptions& g, const CorpusBuildArgs& a) {
  const auto kind = latte::RenderKind::parse(a.kind);
  const auto renderer = make_renderer(g, a.raster_fixture);
  std::vector<fs::path> inputs(a.inputs.begin(), a.inputs.end());
  latte::ManifestOptions opts;
  opts.workers = g.workers;
  opts.log = [](const std::string& msg) { std::cerr << msg << '\n'; };
  const latte::ManifestResult res = latte::build_manifest(inputs, kind, a.out, *renderer, opts);
  json summary{{"records", res.records.size()}, {"excluded", res.excluded.size()}, {"manifest", a.out}};
  emit(g, summary,
       std::to_string(res.records.size()) + " record(s), " + std::to_string(res.excluded.size()) + " excluded\n");
  return kExitOk;
}

// --------------------------------------------------------------------------- serve-mock

struct ServeArgs {
  std::string fixture;
  std::string host = "127.0.0.1";
  int port = 8080;
};

httplib::Server* g_server = nullptr;

int run_serve_mock(const GlobalOptions& g, const ServeArgs& a) {
  latte::MockBackend mock = latte::MockBackend::from_file(a.fixture);
  httplib::Server server;
  latte::mount_protocol(server, mock);
  int port = a.port;
  if (port == 0) {
    port = server.bind_to_any_port(a.host);
  } else if (!server.bind_to_port(a.host, port)) {
    port = -1;
  }
  if (port < 0) throw latte::ConfigError("cannot bind " + a.host + ":" + std::to_string(a.port));
  emit(g, json{{"host", a.host}, {"port", port}}, "serving mock backend on http://" + a.host + ":" + std::to_string(port) + "\n");
  std::cout.flush();
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server != nullptr) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server != nullptr) g_server->stop(); });
  server.listen_after_bind();
  g_server = nullptr;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latte: image diff, render/compare/refine loop, metrics and corpus tools for LaTeX recognition"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  GlobalOptions g;
  app.add_flag("--json", g.json_output, "Machine-readable JSON on stdout");
  app.add_option("--seed", g.seed, "Seed for randomized extensions (primary paths are deterministic)");
  app.add_option("--workers", g.workers, "Parallel render jobs (0 = CPU count)");
  app.add_option("--tex-bin", g.tex_bin, "LaTeX compiler (default: $LATTE_TEX_BIN or pdflatex)");
  app.add_option("--raster-bin", g.raster_bin, "pdftoppm-compatible rasterizer (default: $LATTE_RASTER_BIN or pdftoppm)");
  app.add_option("--timeout", g.timeout_s, "Per-render wall-clock cap in seconds")->check(CLI::PositiveNumber);

  DiffArgs diff;
  auto* diff_cmd = app.add_subcommand("diff", "Delta view between a ground-truth and a rendered image");
  diff_cmd->add_option("gt", diff.gt, "Ground-truth PNG")->required()->check(CLI::ExistingFile);
  diff_cmd->add_option("rendered", diff.rendered, "Rendered PNG")->required()->check(CLI::ExistingFile);
  diff_cmd->add_option("--out", diff.out, "Write the composed delta view PNG here");
  diff_cmd->add_option("--kind", diff.kind, "Normalize both images to this kind first")
      ->check(CLI::IsMember({"formula", "table"}));
  diff_cmd->add_option("--orientation", diff.orientation, "auto, column or row")
      ->check(CLI::IsMember({"auto", "column", "row"}));

  RecognizeArgs rec;
  auto* rec_cmd = app.add_subcommand("recognize", "Generate and iteratively refine LaTeX for an image");
  rec_cmd->add_option("--image", rec.image, "Ground-truth PNG")->required()->check(CLI::ExistingFile);
  rec_cmd->add_option("--kind", rec.kind)->check(CLI::IsMember({"formula", "table"}));
  auto* backend_opt = rec_cmd->add_option("--backend", rec.backend_url, "Model server base URL");
  rec_cmd->add_option("--mock", rec.mock, "Mock backend fixture (JSONL)")->excludes(backend_opt);
  rec_cmd->add_option("--budget", rec.budget, "Total rounds including the initial generation");
  rec_cmd->add_option("--trace-out", rec.trace_out, "Write the JSON iteration trace here");
  rec_cmd->add_option("--emit-delta", rec.emit_delta, "Write each round's composed delta view into this directory");
  rec_cmd->add_option("--raster-fixture", rec.raster_fixture, "Use pre-rendered images instead of TeX (JSON map)");
  rec_cmd->add_flag("--require-match", rec.require_match, "Exit 1 unless the loop ends matched");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Aggregate Match / Edit / BLEU-4 over a JSONL manifest");
  eval_cmd->add_option("manifest", ev.manifest, "JSONL rows {gt_image, candidate_source[, gt_source]}")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--kind", ev.kind)->check(CLI::IsMember({"formula", "table"}));
  eval_cmd->add_option("--raster-fixture", ev.raster_fixture, "Use pre-rendered images instead of TeX (JSON map)");
  eval_cmd->add_option("--rows-out", ev.rows_out, "Write per-row results (JSONL) here");

  RenderArgs rend;
  auto* render_cmd = app.add_subcommand("render", "Render one LaTeX source to a normalized PNG");
  render_cmd->add_option("--source", rend.source, "LaTeX body");
  render_cmd->add_option("--source-file", rend.source_file, "File holding the LaTeX body");
  render_cmd->add_option("--kind", rend.kind)->check(CLI::IsMember({"formula", "table"}));
  render_cmd->add_option("--out", rend.out, "Output PNG");
  render_cmd->add_option("--raster-fixture", rend.raster_fixture, "Use pre-rendered images instead of TeX (JSON map)");

  auto* corpus_cmd = app.add_subcommand("corpus", "Dataset construction");
  corpus_cmd->require_subcommand(1);
  CorpusExtractArgs cex;
  auto* extract_cmd = corpus_cmd->add_subcommand("extract", "List outermost tabular environments");
  extract_cmd->add_option("inputs", cex.inputs, ".tex files or directories")->required();
  extract_cmd->add_option("--out", cex.out, "Write one JSON object per table here");
  CorpusBuildArgs cb;
  auto* build_cmd = corpus_cmd->add_subcommand("build", "Render extracted sources into a JSONL manifest");
  build_cmd->add_option("--input", cb.inputs, "Input directory (repeatable)")->required();
  build_cmd->add_option("--kind", cb.kind)->check(CLI::IsMember({"formula", "table"}));
  build_cmd->add_option("--out", cb.out, "Manifest path")->required();
  build_cmd->add_option("--raster-fixture", cb.raster_fixture, "Use pre-rendered images instead of TeX (JSON map)");

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve-mock", "Serve a mock backend fixture over HTTP");
  serve_cmd->add_option("--fixture", serve.fixture, "Mock fixture (JSONL)")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", serve.host);
  serve_cmd->add_option("--port", serve.port, "0 picks a free port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitUsage;
  }

  try {
    if (*diff_cmd) return run_diff(g, diff);
    if (*rec_cmd) return run_recognize(g, rec);
    if (*eval_cmd) return run_eval(g, ev);
    if (*render_cmd) return run_render(g, rend);
    if (*extract_cmd) return run_corpus_extract(g, cex);
    if (*build_cmd) return run_corpus_build(g, cb);
    if (*serve_cmd) return run_serve_mock(g, serve);
  } catch (const latte::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const latte::FixtureError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const latte::ImageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  return kExitUsage;
}
