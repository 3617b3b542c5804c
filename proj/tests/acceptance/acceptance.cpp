// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.
//
//   acceptance --workdir DIR [--scale reduced|full] [--reuse]
//
// The reduced scale trains 6 coupling layers with every epoch count halved;
// full uses the default 13-layer schedule.

#include "atlasflow/atlas.hpp"
#include "atlasflow/cli.hpp"
#include "atlasflow/geo.hpp"
#include "atlasflow/io.hpp"
#include "atlasflow/losses.hpp"
#include "atlasflow/synth.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>

using namespace atlasflow;
namespace fs = std::filesystem;

namespace {

constexpr double kNoise = 0.1;
constexpr double kWithin = 3.0 * kNoise;

struct Outcome {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<Outcome> outcomes;

void report(const std::string& name, bool pass, const std::string& detail) {
  outcomes.push_back({name, pass, detail});
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void cli_or_throw(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  std::cerr << "  $ atlasflow";
  for (const auto& a : args) std::cerr << ' ' << a;
  std::cerr << std::endl;
  Stopwatch sw;
  const int code = cli::run(args, out, err);
  std::cerr << out.str() << "  (" << fmt(sw.seconds(), 3) << " s)" << std::endl;
  if (code != 0) throw std::runtime_error("atlasflow " + args.front() + " exited with " + std::to_string(code) + ": " + err.str());
}

double pearson(const Vector& a, const Vector& b) {
  const Vector ac = a.array() - a.mean();
  const Vector bc = b.array() - b.mean();
  return ac.dot(bc) / std::sqrt(ac.squaredNorm() * bc.squaredNorm());
}

// ---------------------------------------------------------------- invariants

double flow_round_trip_error() {
  double worst = 0.0;
  for (int d = 1; d <= 3; ++d) {
    flow::FlowConfig cfg;
    cfg.dim = d;
    cfg.layers = 13;
    Rng rng = make_rng(100 + static_cast<std::uint64_t>(d));
    auto f = flow::FlowStack::create(cfg, rng);
    for (Index i = 0; i < f.params().size(); ++i) f.params()(i) += 0.1 * standard_normal(rng);
    Matrix x(d, 1000);
    for (Index c = 0; c < x.cols(); ++c)
      for (Index r = 0; r < d; ++r) x(r, c) = 2.0 * standard_normal(rng);
    worst = std::max(worst, (f.inverse(f.forward(x)) - x).cwiseAbs().maxCoeff());
  }
  return worst;
}

double flow_logdet_error() {
  double worst = 0.0;
  for (int d = 1; d <= 3; ++d) {
    flow::FlowConfig cfg;
    cfg.dim = d;
    cfg.layers = 5;
    cfg.hidden = {16, 16};
    Rng rng = make_rng(200 + static_cast<std::uint64_t>(d));
    auto f = flow::FlowStack::create(cfg, rng);
    for (Index i = 0; i < f.params().size(); ++i) f.params()(i) += 0.2 * standard_normal(rng);
    for (int trial = 0; trial < 20; ++trial) {
      Vector x(d);
      for (Index r = 0; r < d; ++r) x(r) = 1.5 * standard_normal(rng);
      const auto [y, logdet] = flow::stack_forward(f, x);
      Matrix jac(d, d);
      const double h = 1e-6;
      for (Index c = 0; c < d; ++c) {
        Vector up = x, dn = x;
        up(c) += h;
        dn(c) -= h;
        jac.col(c) = (flow::stack_forward(f, up).first - flow::stack_forward(f, dn).first) / (2 * h);
      }
      const double fd = std::log(std::abs(jac.determinant()));
      worst = std::max(worst, std::abs(fd - logdet) / std::max(1.0, std::abs(logdet)));
    }
  }
  return worst;
}

template <class Model, class LossFn>
double gradient_error(Model model, LossFn loss, const Vector& analytic) {
  const double h = 1e-6;
  const Vector base = model.flow.params();
  Vector fd(base.size());
  for (Index i = 0; i < base.size(); ++i) {
    Vector p = base;
    p(i) = base(i) + h;
    model.flow.set_params(p);
    const double up = loss(model);
    p(i) = base(i) - h;
    model.flow.set_params(p);
    fd(i) = (up - loss(model)) / (2 * h);
  }
  return (analytic - fd).norm() / std::max(1e-12, fd.norm());
}

double loss_gradient_error() {
  using losses::Batch;
  flow::FlowConfig cfg;
  cfg.dim = 3;
  cfg.layers = 3;
  cfg.hidden = {6};
  Rng rng = make_rng(300);
  auto f = flow::FlowStack::create(cfg, rng);
  for (Index i = 0; i < f.params().size(); ++i) f.params()(i) += 0.2 * standard_normal(rng);
  flow::CoordinateMap phi{f, Eigen::Vector3d(0.1, 0.2, -0.3), 1.4, 2};
  Batch b;
  b.x = Matrix(3, 6);
  for (Index c = 0; c < 6; ++c)
    for (Index r = 0; r < 3; ++r) b.x(r, c) = 1.5 * standard_normal(rng);
  b.ref = Matrix(2, 6);
  for (Index c = 0; c < 6; ++c)
    for (Index r = 0; r < 2; ++r) (*b.ref)(r, c) = standard_normal(rng);
  Matrix dist = Matrix::Zero(6, 6);
  for (Index i = 0; i < 6; ++i)
    for (Index j = i + 1; j < 6; ++j) dist(i, j) = dist(j, i) = 0.5 + 2.0 * uniform01(rng);
  b.dist = dist;
  for (int i = 0; i < 6; ++i) b.indices.push_back(i);
  losses::ExpectedPoints xhat{Matrix::Random(3, 6), 0};
  const std::vector<int> mult{1, 2, 2, 1, 3, 2};

  double worst = 0.0;
  auto check = [&](auto fn) { worst = std::max(worst, gradient_error(phi, [&](const auto& m) { return fn(m).loss; }, fn(phi).grad)); };
  check([&](const flow::CoordinateMap& m) { return losses::pretraining_loss(m, b); });
  check([&](const flow::CoordinateMap& m) { return losses::reconstruction_loss(m, b); });
  check([&](const flow::CoordinateMap& m) { return losses::pairwise_distance_loss(m, b); });
  check([&](const flow::CoordinateMap& m) { return losses::manifold_loss(m, b, 0.4); });
  check([&](const flow::CoordinateMap& m) { return losses::compatibility_loss(m, b, xhat, mult, 1, 2); });

  flow::FlowConfig gcfg = cfg;
  gcfg.dim = 2;
  auto g = flow::FlowStack::create(gcfg, rng);
  for (Index i = 0; i < g.params().size(); ++i) g.params()(i) += 0.2 * standard_normal(rng);
  flow::DensityMap gamma{g, Eigen::Vector2d(0.1, -0.2), 1.3};
  const Matrix v = Matrix::Random(2, 7) * 2.0;
  worst = std::max(worst, gradient_error(gamma, [&](const flow::DensityMap& m) { return losses::density_nll(m, v).loss; },
                                         losses::density_nll(gamma, v).grad));
  return worst;
}

bool disintegration_matches_counting() {
  IndexList u1, u2;
  for (int i = 0; i < 70; ++i) u1.push_back(i);
  for (int i = 30; i < 100; ++i) u2.push_back(i);
  auto part = cover::refine_partition(cover::make_cover({u1, u2}, 100));
  auto w = atlas::disintegration_weights(part, 2);
  bool ok = w.c(0) == 0.5 && w.c(1) == 0.5 && std::abs(w.c.sum() - 1.0) < 1e-12;
  for (std::size_t i = 0; i < part.cells.size(); ++i)
    if (part.cells[i].n == 2) ok = ok && std::abs(w.cell_weight[0][i] - 0.4) < 1e-15;
  auto uneven = cover::make_cover({{0, 1, 2, 3}, {3, 4, 5}, {5, 6, 0}}, 7);
  auto wu = atlas::disintegration_weights(cover::refine_partition(uneven), 3);
  return ok && std::abs(wu.c.sum() - 1.0) < 1e-12 && std::abs(wu.c(0) - 3.0 / 7.0) < 1e-15;
}

bool geodesics_match_floyd_warshall() {
  for (int n : {10, 60, 200}) {
    Rng rng = make_rng(400 + static_cast<std::uint64_t>(n));
    geo::NeighborGraph g;
    g.adjacency.arcs.resize(static_cast<std::size_t>(n));
    auto link = [&](int a, int b) {
      const double w = 0.0625 * static_cast<double>(1 + uniform_index(rng, 64));
      g.adjacency.arcs[static_cast<std::size_t>(a)].emplace_back(b, w);
      g.adjacency.arcs[static_cast<std::size_t>(b)].emplace_back(a, w);
    };
    for (int i = 0; i + 1 < n; ++i) link(i, i + 1);
    for (int e = 0; e < 2 * n; ++e) {
      const int a = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n)));
      const int b = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n)));
      if (a != b) link(a, b);
    }
    Matrix fw = Matrix::Constant(n, n, std::numeric_limits<double>::infinity());
    for (int i = 0; i < n; ++i) {
      fw(i, i) = 0.0;
      for (const auto& [j, w] : g.adjacency.arcs[static_cast<std::size_t>(i)]) fw(i, j) = std::min(fw(i, j), w);
    }
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) fw(i, j) = std::min(fw(i, j), fw(i, k) + fw(k, j));
    if (geo::geodesic_matrix(g) != fw) return false;
  }
  return true;
}

double density_normalization() {
  Rng rng = make_rng(500);
  atlas::AtlasModel m;
  m.dim = 3;
  m.latent_dim = 2;
  flow::FlowConfig pc;
  pc.dim = 3;
  pc.layers = 2;
  pc.hidden = {8};
  flow::FlowConfig gc = pc;
  gc.dim = 2;
  auto pf = flow::FlowStack::create(pc, rng);
  auto gf = flow::FlowStack::create(gc, rng);
  for (Index i = 0; i < pf.params().size(); ++i) pf.params()(i) += 0.15 * standard_normal(rng);
  for (Index i = 0; i < gf.params().size(); ++i) gf.params()(i) += 0.15 * standard_normal(rng);
  atlas::ChartModel c;
  c.members = {0};
  c.phi = flow::CoordinateMap{pf, Eigen::Vector3d(0.3, -0.2, 0.1), 1.5, 2};
  c.gamma = flow::DensityMap{gf, Eigen::Vector2d(0.2, -0.1), 1.2};
  c.c = 1.0;
  m.charts.push_back(c);
  m.cover = cover::make_cover({{0}}, 1);
  const int count = 100000;
  const double half = 7.0;
  Matrix v(2, count);
  for (int i = 0; i < count; ++i) v.col(i) << -half + 2 * half * uniform01(rng), -half + 2 * half * uniform01(rng);
  const Matrix x = c.phi.embed(v);
  const Vector logp = atlas::log_density(m, Matrix(x.transpose()), 0);
  const Vector gram = c.phi.gram_logdet(v);
  return (logp + gram).array().exp().mean() * (2 * half) * (2 * half);
}

bool checkpoints_deterministic(const fs::path& dir) {
  synth::ManifoldSpec s;
  s.kind = synth::ManifoldKind::trefoil;
  s.n_points = 800;
  s.seed = 3;
  const auto cloud = synth::generate(s);
  auto cfg = atlas::TrainConfig::trefoil();
  cfg.layers = 3;
  cfg.hidden = {16};
  cfg.batch = 128;
  cfg.e1 = cfg.e2 = cfg.e3 = cfg.e4 = cfg.e5 = 2;
  cfg.seed = 11;
  const auto cov = cover::mapper_cover(cloud.points, cfg.mapper);
  const auto a = (dir / "det_a.json").string(), b = (dir / "det_b.json").string();
  atlas::save(atlas::train(cloud.points, cov, cfg), a);
  atlas::save(atlas::train(cloud.points, cov, cfg), b);
  std::ifstream ia(a, std::ios::binary), ib(b, std::ios::binary);
  std::stringstream sa, sb;
  sa << ia.rdbuf();
  sb << ib.rdbuf();
  return sa.str() == sb.str() && !sa.str().empty();
}

void invariant_suite(const fs::path& dir) {
  Stopwatch sw;
  const double round_trip = flow_round_trip_error();
  const double logdet = flow_logdet_error();
  const double grad = loss_gradient_error();
  const bool weights = disintegration_matches_counting();
  const bool geodesics = geodesics_match_floyd_warshall();
  const double mass = density_normalization();
  const bool deterministic = checkpoints_deterministic(dir);
  const bool pass = round_trip < 1e-8 && logdet < 1e-4 && grad < 1e-3 && weights && geodesics &&
                    std::abs(mass - 1.0) < 0.05 && deterministic;
  report("invariant_suite", pass,
         "round-trip " + fmt(round_trip) + ", logdet rel " + fmt(logdet) + ", loss grad rel " + fmt(grad) +
             ", weights " + (weights ? "exact" : "WRONG") + ", geodesics " + (geodesics ? "exact" : "WRONG") +
             ", density mass " + fmt(mass) + ", checkpoints " + (deterministic ? "identical" : "DIFFER") + " (" +
             fmt(sw.seconds(), 3) + " s)");
}

// ---------------------------------------------------------------- pipelines

struct Scale {
  std::string layers;
  std::vector<std::string> epochs(const atlas::TrainConfig& base) const {
    auto e = [&](int v) { return std::to_string(halve ? (v + 1) / 2 : v); };
    return {"--epochs-e1", e(base.e1), "--epochs-e2", e(base.e2), "--epochs-e3", e(base.e3),
            "--epochs-e4", e(base.e4), "--epochs-e5", e(base.e5)};
  }
  bool halve = true;
};

std::vector<std::string> train_flags(const Scale& scale, const std::string& preset) {
  const auto base = preset == "trefoil" ? atlas::TrainConfig::trefoil() : atlas::TrainConfig::torus();
  std::vector<std::string> flags{"--preset", preset, "--layers", scale.layers, "--seed", "0"};
  const auto e = scale.epochs(base);
  flags.insert(flags.end(), e.begin(), e.end());
  return flags;
}

struct Fixture {
  std::string name;
  std::string data, cover, model;
};

Fixture build_fixture(const fs::path& dir, const std::string& preset, const Scale& scale, bool reuse) {
  Fixture f{preset, (dir / (preset + ".csv")).string(), (dir / (preset + "_cover.json")).string(),
            (dir / (preset + "_model.json")).string()};
  cli_or_throw({"synth", "--manifold", preset, "--n", "10000", "--noise", "0.1", "--seed", "0", "-o", f.data});
  cli_or_throw({"cover", "-i", f.data, "-o", f.cover, "--preset", preset});
  if (!(reuse && fs::exists(f.model))) {
    std::vector<std::string> args{"train", "--data", f.data, "--cover", f.cover, "-o", f.model};
    const auto flags = train_flags(scale, preset);
    args.insert(args.end(), flags.begin(), flags.end());
    cli_or_throw(args);
  }
  return f;
}

void chart_counts(const Fixture& torus, const Fixture& trefoil) {
  const int t = io::load_cover(torus.cover).chart_count();
  const int k = io::load_cover(trefoil.cover).chart_count();
  report("chart_counts", t == 6 && k == 4, "torus " + std::to_string(t) + " (want 6), trefoil " + std::to_string(k) + " (want 4)");
}

void cover_vs_partition(const fs::path& dir, const Fixture& torus, const Scale& scale, bool reuse) {
  const auto partition_model = (dir / "torus_partition_model.json").string();
  if (!(reuse && fs::exists(partition_model))) {
    std::vector<std::string> args{"train", "--data", torus.data, "--cover", torus.cover, "-o", partition_model, "--partition"};
    const auto flags = train_flags(scale, "torus");
    args.insert(args.end(), flags.begin(), flags.end());
    cli_or_throw(args);
  }
  const auto table_path = (dir / "boundary_table.csv").string();
  const auto summary_path = (dir / "boundary_summary.json").string();
  cli_or_throw({"eval-boundary", "--cover-model", torus.model, "--partition-model", partition_model, "--data", torus.data, "-o",
                table_path, "--summary", summary_path});
  const auto summary = io::read_json_file(summary_path);
  const double cov = summary["cover_average"].get<double>();
  const double part = summary["partition_average"].get<double>();
  const double ratio = part / cov;
  report("boundary_cover_vs_partition", cov <= 0.05 && cov < part && ratio >= 3.0,
         "cover " + fmt(cov) + " (<= 0.05), partition " + fmt(part) + ", ratio " + fmt(ratio, 3) + " (>= 3), band points " +
             std::to_string(summary["band_points"].get<int>()));

  const auto table = io::read_table_csv(table_path);
  int compared = 0, dominated = 0, empty = 0;
  std::string rows;
  for (const auto& r : table.rows) {
    const auto at = [&](const char* col) { return r[static_cast<std::size_t>(table.column(col))]; };
    const int count = static_cast<int>(at("count"));
    rows += " " + fmt(at("data_label"), 2) + "->" + fmt(at("model_label"), 2) + ":";
    if (count == 0) {
      ++empty;
      rows += "empty";
      continue;
    }
    ++compared;
    const bool ok = at("cover_error") < at("partition_error");
    dominated += ok ? 1 : 0;
    rows += fmt(at("cover_error"), 3) + "<" + fmt(at("partition_error"), 3) + (ok ? "" : "!");
  }
  report("boundary_per_pair_dominance", compared > 0 && dominated == compared,
         std::to_string(dominated) + "/" + std::to_string(compared) + " populated pairs dominated, " + std::to_string(empty) +
             " pairs without band points;" + rows);
}

void single_vs_multi(const fs::path& dir, const Fixture& torus, const Scale& scale, bool reuse) {
  const auto curves = (dir / "single_vs_multi.csv").string();
  if (!(reuse && fs::exists(curves))) {
    std::vector<std::string> args{"compare-single", "--data", torus.data, "--cover", torus.cover, "-o", curves};
    const auto flags = train_flags(scale, "torus");
    args.insert(args.end(), flags.begin(), flags.end());
    cli_or_throw(args);
  }
  const auto t = io::read_table_csv(curves);
  const auto col_m = static_cast<std::size_t>(t.column("multi"));
  const auto col_s = static_cast<std::size_t>(t.column("single"));
  if (t.rows.size() < 10) {
    report("single_vs_multi", false, "curve has only " + std::to_string(t.rows.size()) + " epochs");
    return;
  }
  const double m10 = t.rows[9][col_m], s10 = t.rows[9][col_s];
  const double mf = t.rows.back()[col_m], sf = t.rows.back()[col_s];
  report("single_vs_multi", mf < sf && m10 < s10,
         "final multi " + fmt(mf) + " < single " + fmt(sf) + "; epoch 10 multi " + fmt(m10) + " < single " + fmt(s10));
}

Matrix sample_model(const fs::path& dir, const Fixture& f) {
  const auto out = (dir / (f.name + "_samples.csv")).string();
  cli_or_throw({"sample", "--model", f.model, "--count", "5000", "--seed", "1", "-o", out});
  return io::read_points_csv(out).points;
}

Vector torus_surface_distance(const Matrix& x) {
  Vector d(x.rows());
  for (Index i = 0; i < x.rows(); ++i) d(i) = std::abs(std::hypot(std::hypot(x(i, 0), x(i, 1)) - 3.0, x(i, 2)) - 1.0);
  return d;
}

Vector trefoil_curve_distance(const Matrix& x) {
  const int grid = 20000;
  Matrix curve(grid, 3);
  for (int j = 0; j < grid; ++j) curve.row(j) = synth::trefoil_point(2.0 * std::numbers::pi * j / grid).transpose();
  Vector d(x.rows());
  for (Index i = 0; i < x.rows(); ++i) d(i) = std::sqrt((curve.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff());
  return d;
}

Matrix ideal_grid(const std::string& name) {
  if (name == "trefoil") {
    Matrix g(400, 3);
    for (int i = 0; i < 400; ++i) g.row(i) = synth::trefoil_point(2.0 * std::numbers::pi * i / 400).transpose();
    return g;
  }
  Matrix g(40 * 40, 3);
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 40; ++j)
      g.row(i * 40 + j) = synth::torus_point(2.0 * std::numbers::pi * i / 40, 2.0 * std::numbers::pi * j / 40).transpose();
  return g;
}

void generation_and_density(const fs::path& dir, const Fixture& torus, const Fixture& trefoil) {
  std::string fidelity_detail, kde_detail;
  bool fidelity_ok = true, kde_ok = true;
  for (const Fixture* f : {&torus, &trefoil}) {
    const Matrix samples = sample_model(dir, *f);
    const Vector dist = f->name == "torus" ? torus_surface_distance(samples) : trefoil_curve_distance(samples);
    const double within = (dist.array() < kWithin).cast<double>().mean();
    fidelity_ok = fidelity_ok && within >= 0.95;
    fidelity_detail += f->name + " " + fmt(100.0 * within, 4) + "% within 0.3; ";

    const Matrix train = io::read_points_csv(f->data).points;
    const Matrix grid = ideal_grid(f->name);
    const Vector bw = synth::scott_bandwidth(train);
    const double r = pearson(synth::kde_density(samples, grid, bw), synth::kde_density(train, grid, bw));
    kde_ok = kde_ok && r > 0.7;
    kde_detail += f->name + " r = " + fmt(r) + "; ";
  }
  report("generation_fidelity", fidelity_ok, fidelity_detail + "need >= 95%");
  report("density_fidelity", kde_ok, kde_detail + "need > 0.7");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string workdir = "acceptance_work";
  std::string scale_name = "reduced";
  bool reuse = false;
  app.add_option("--workdir", workdir, "scratch directory")->capture_default_str();
  app.add_option("--scale", scale_name, "training scale")->check(CLI::IsMember({"reduced", "full"}))->capture_default_str();
  app.add_flag("--reuse", reuse, "reuse trained checkpoints already in the workdir");
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(workdir);
  fs::create_directories(dir);
  Scale scale;
  scale.layers = scale_name == "full" ? "13" : "6";
  scale.halve = scale_name != "full";
  std::cout << "acceptance: scale " << scale_name << " (" << scale.layers << " layers"
            << (scale.halve ? ", halved epochs" : "") << "), workdir " << dir.string() << std::endl;

  Stopwatch total;
  try {
    invariant_suite(dir);
    Stopwatch sw;
    const auto torus = build_fixture(dir, "torus", scale, reuse);
    const auto trefoil = build_fixture(dir, "trefoil", scale, reuse);
    chart_counts(torus, trefoil);
    cover_vs_partition(dir, torus, scale, reuse);
    single_vs_multi(dir, torus, scale, reuse);
    generation_and_density(dir, torus, trefoil);
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance_run: " << e.what() << std::endl;
    return 1;
  }
  int failed = 0;
  for (const auto& o : outcomes) failed += o.pass ? 0 : 1;
  std::cout << "acceptance: " << outcomes.size() - static_cast<std::size_t>(failed) << "/" << outcomes.size()
            << " criteria passed in " << fmt(total.seconds() / 60.0, 3) << " min" << std::endl;
  return failed == 0 ? 0 : 1;
}
