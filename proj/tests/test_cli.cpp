#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "atlasflow/cli.hpp"
#include "atlasflow/io.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace atlasflow;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t data_rows(const fs::path& path) {
  std::ifstream in(path);
  std::size_t lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  return lines - 1;
}

// Scratch directory with a small torus dataset, its cover and a quickly
// trained checkpoint shared by the tests below.
struct Workspace {
  fs::path dir;
  std::string data, cover, model;

  Workspace() {
    dir = fs::temp_directory_path() / "atlasflow_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    data = (dir / "torus.csv").string();
    cover = (dir / "cover.json").string();
    model = (dir / "model.json").string();
    REQUIRE(run({"synth", "--manifold", "torus", "--n", "1500", "--seed", "7", "-o", data}).code == 0);
    REQUIRE(run({"cover", "-i", data, "-o", cover}).code == 0);
    REQUIRE(run(train_args(model)).code == 0);
  }
  ~Workspace() { fs::remove_all(dir); }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  std::vector<std::string> train_args(const std::string& out) const {
    return {"train", "--data", data, "--cover", cover, "-o", out, "--layers", "2", "--batch", "128",
            "--epochs-e1", "0", "--epochs-e2", "0", "--epochs-e3", "2", "--epochs-e4", "2", "--epochs-e5", "1"};
  }
};

Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("synth writes the requested rows deterministically") {
  auto& ws = workspace();
  const auto a = ws.path("a.csv"), b = ws.path("b.csv");
  auto r = run({"synth", "--manifold", "torus", "--n", "10000", "--noise", "0.1", "--seed", "7", "-o", a});
  CHECK(r.code == 0);
  CHECK(r.out.find("10000") != std::string::npos);
  CHECK(data_rows(a) == 10000);
  CHECK(run({"synth", "--manifold", "torus", "--n", "10000", "--noise", "0.1", "--seed", "7", "-o", b}).code == 0);
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("unknown manifold is a usage error listing the valid ones") {
  auto r = run({"synth", "--manifold", "klein", "-o", workspace().path("k.csv")});
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("trefoil") != std::string::npos);
  CHECK(r.err.find("torus") != std::string::npos);
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"frobnicate"}).code == cli::kUsage);
}

TEST_CASE("cover reports charts and nerve edges") {
  auto& ws = workspace();
  auto r = run({"cover", "-i", ws.data, "-o", ws.path("c.json")});
  CHECK(r.code == 0);
  CHECK(r.out.find("charts: ") != std::string::npos);
  auto flat = run({"cover", "-i", ws.data, "-o", ws.path("flat.json"), "--perc-overlap", "0"});
  CHECK(flat.code == 0);
  CHECK(io::load_cover(ws.path("flat.json")).nerve_edges.empty());
}

TEST_CASE("degenerate lens exits with code 3") {
  auto& ws = workspace();
  const auto same = ws.path("same.csv");
  io::write_points_csv(same, Matrix::Ones(10, 3));
  CHECK(run({"cover", "-i", same, "-o", ws.path("same.json")}).code == cli::kDegenerateLens);
}

TEST_CASE("train is deterministic and writes a log") {
  auto& ws = workspace();
  const auto again = ws.path("again.json");
  CHECK(run(ws.train_args(again)).code == 0);
  CHECK(slurp(ws.model) == slurp(again));
  auto log = io::read_table_csv(ws.model + ".log.csv");
  CHECK(log.column("recon") >= 0);
  CHECK_FALSE(log.rows.empty());
}

TEST_CASE("flags override the config file, which overrides the preset") {
  auto& ws = workspace();
  const auto cfg = ws.path("cfg.json");
  io::write_json_file(cfg, io::Json{{"layers", 3}, {"lambda_o", 7.0}});
  auto args = ws.train_args(ws.path("cfg_model.json"));
  args.insert(args.end(), {"--config", cfg});
  REQUIRE(run(args).code == 0);
  auto m = io::read_json_file(ws.path("cfg_model.json"));
  CHECK(m["config"]["layers"] == 2);
  CHECK(m["config"]["lambda_o"] == 7.0);
  CHECK(m["config"]["lambda_p"] == 0.1);

  io::write_json_file(cfg, io::Json{{"layer_count", 3}});
  args = ws.train_args(ws.path("bad_model.json"));
  args.insert(args.end(), {"--config", cfg});
  auto r = run(args);
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("layer_count") != std::string::npos);
}

TEST_CASE("runaway training exits with code 4 naming the phase") {
  auto& ws = workspace();
  auto args = ws.train_args(ws.path("diverged.json"));
  args.insert(args.end(), {"--lr", "1e300", "--clip-norm", "1e300"});
  auto r = run(args);
  CHECK(r.code == cli::kDivergence);
  CHECK(r.err.find("phase") != std::string::npos);
  CHECK(r.err.find("epoch") != std::string::npos);
}

TEST_CASE("sample writes chart ids from one to L") {
  auto& ws = workspace();
  const auto out = ws.path("samples.csv");
  CHECK(run({"sample", "--model", ws.model, "--count", "500", "--seed", "3", "-o", out}).code == 0);
  auto t = io::read_table_csv(out);
  CHECK(t.rows.size() == 500);
  const int col = t.column("chart");
  const int charts = io::load_cover(ws.cover).chart_count();
  for (const auto& row : t.rows) {
    CHECK(row[static_cast<std::size_t>(col)] >= 1);
    CHECK(row[static_cast<std::size_t>(col)] <= charts);
  }
}

TEST_CASE("corrupt checkpoints exit with code 5") {
  auto& ws = workspace();
  const auto bad = ws.path("corrupt.json");
  const std::string text = slurp(ws.model);
  {
    std::ofstream out(bad, std::ios::binary);
    out << text.substr(0, text.size() / 3);
  }
  auto r = run({"sample", "--model", bad, "-o", ws.path("x.csv")});
  CHECK(r.code == cli::kCorruptFile);
  CHECK(r.err.find("byte") != std::string::npos);
  auto j = io::read_json_file(ws.model);
  j["format_version"] = 99;
  io::write_json_file(bad, j);
  CHECK(run({"sample", "--model", bad, "-o", ws.path("x.csv")}).code == cli::kCorruptFile);
}

TEST_CASE("density emits one row per query with nonnegative kde") {
  auto& ws = workspace();
  const auto out = ws.path("density.csv");
  CHECK(run({"density", "--model", ws.model, "--data", ws.data, "-o", out}).code == 0);
  auto t = io::read_table_csv(out);
  CHECK(t.rows.size() == 1500);
  const int kde = t.column("kde");
  const int logp = t.column("log_density");
  REQUIRE(logp >= 0);
  for (const auto& row : t.rows) CHECK(row[static_cast<std::size_t>(kde)] >= 0.0);
  CHECK(run({"density", "--data", ws.data, "-o", ws.path("kde_only.csv")}).code == 0);
  CHECK(io::read_table_csv(ws.path("kde_only.csv")).column("log_density") == -1);
}

TEST_CASE("eval-boundary on identical checkpoints and on mismatched ones") {
  auto& ws = workspace();
  const auto out = ws.path("table.csv");
  auto r = run({"eval-boundary", "--cover-model", ws.model, "--partition-model", ws.model, "--data", ws.data, "-o", out,
                "--summary", ws.path("summary.json")});
  CHECK(r.code == 0);
  auto t = io::read_table_csv(out);
  CHECK(t.rows.size() == 2 * io::load_cover(ws.cover).nerve_edges.size());
  for (const auto& row : t.rows) {
    const double a = row[static_cast<std::size_t>(t.column("cover_error"))];
    const double b = row[static_cast<std::size_t>(t.column("partition_error"))];
    CHECK(((std::isnan(a) && std::isnan(b)) || a == b));
  }
  auto s = io::read_json_file(ws.path("summary.json"));
  CHECK(s["cover_average"] == s["partition_average"]);

  const auto small = ws.path("small.csv");
  const auto small_cover = ws.path("small_cover.json");
  const auto small_model = ws.path("small_model.json");
  REQUIRE(run({"synth", "--manifold", "trefoil", "--n", "400", "--seed", "1", "-o", small}).code == 0);
  REQUIRE(run({"cover", "-i", small, "-o", small_cover, "--preset", "trefoil"}).code == 0);
  REQUIRE(run({"train", "--data", small, "--cover", small_cover, "-o", small_model, "--preset", "trefoil", "--layers", "2",
               "--epochs-e1", "1", "--epochs-e2", "1", "--epochs-e3", "1", "--epochs-e4", "0", "--epochs-e5", "0"})
              .code == 0);
  CHECK(run({"eval-boundary", "--cover-model", ws.model, "--partition-model", small_model, "--data", ws.data, "-o", out})
            .code == cli::kLabelMismatch);
}

TEST_CASE("compare-single emits finite curves for both models") {
  auto& ws = workspace();
  const auto out = ws.path("curves.csv");
  auto r = run({"compare-single", "--data", ws.data, "--cover", ws.cover, "-o", out, "--layers", "2", "--batch", "128",
                "--epochs-e1", "1", "--epochs-e2", "1", "--epochs-e3", "2", "--epochs-e4", "1", "--epochs-e5", "0"});
  CHECK(r.code == 0);
  auto t = io::read_table_csv(out);
  CHECK(t.rows.size() == 4);
  for (const auto& row : t.rows)
    for (double v : row) CHECK(std::isfinite(v));
}

TEST_CASE("help lists every train flag with its default") {
  auto r = run({"train", "--help"});
  CHECK(r.code == 0);
  for (const char* flag : {"--epochs-e1", "--epochs-e5", "--lambda-m", "--lambda-p", "--lambda-o", "--lambda-d", "--lr",
                           "--clip-norm", "--cs", "--batch", "--partition", "--config"})
    CHECK(r.out.find(flag) != std::string::npos);
  CHECK(r.out.find("[0.0015]") != std::string::npos);
  CHECK(r.out.find("[25]") != std::string::npos);
}

TEST_CASE("the installed binary reports exit codes to the shell") {
  const char* exe = std::getenv("ATLASFLOW_CLI");
  if (!exe) return;
  const std::string cmd = std::string("\"") + exe + "\" synth --manifold klein -o /dev/null > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == cli::kUsage);
}
