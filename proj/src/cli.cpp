#include "atlasflow/cli.hpp"

#include "atlasflow/atlas.hpp"
#include "atlasflow/cover.hpp"
#include "atlasflow/io.hpp"
#include "atlasflow/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <map>
#include <optional>
#include <ostream>

namespace atlasflow::cli {
namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("ATLASFLOW_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
      throw ArgumentError(std::string("ATLASFLOW_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

atlas::TrainConfig preset_config(const std::string& name) {
  return name == "trefoil" ? atlas::TrainConfig::trefoil() : atlas::TrainConfig::torus();
}

template <class T>
std::string show(T v) {
  if constexpr (std::is_floating_point_v<T>) return io::format_double(v);
  else return std::to_string(v);
}

struct TrainFlags {
  std::string preset = "torus";
  std::string config;
  std::optional<int> latent_dim, layers, spline_bins, batch, e1, e2, e3, e4, e5, cs, isomap_k;
  std::optional<double> lr, lambda_m, lambda_p, lambda_o, lambda_d, clip_norm, weight_decay, membership_threshold;
  std::optional<std::uint64_t> seed;
  bool no_density = false;
};

void add_train_flags(CLI::App* app, TrainFlags& f) {
  const auto d = atlas::TrainConfig::torus();
  app->add_option("--preset", f.preset, "named default settings to start from")
      ->check(CLI::IsMember({"torus", "trefoil"}))
      ->capture_default_str();
  app->add_option("--config", f.config, "JSON file of train settings (flags take precedence)");
  app->add_option("--latent-dim", f.latent_dim, "latent dimension n")->default_str(show(d.latent_dim));
  app->add_option("--layers", f.layers, "coupling layers per flow")->default_str(show(d.layers));
  app->add_option("--spline-bins", f.spline_bins, "spline bins K")->default_str(show(d.spline_bins));
  app->add_option("--lr", f.lr, "Adam learning rate")->default_str(show(d.lr));
  app->add_option("--batch", f.batch, "minibatch size")->default_str(show(d.batch));
  app->add_option("--epochs-e1", f.e1, "pretraining epochs")->default_str(show(d.e1));
  app->add_option("--epochs-e2", f.e2, "epochs with decaying lambda")->default_str(show(d.e2));
  app->add_option("--epochs-e3", f.e3, "manifold epochs at lambda_p")->default_str(show(d.e3));
  app->add_option("--epochs-e4", f.e4, "compatibility epochs")->default_str(show(d.e4));
  app->add_option("--epochs-e5", f.e5, "density-only epochs")->default_str(show(d.e5));
  app->add_option("--lambda-m", f.lambda_m, "coordinate-map loss weight")->default_str(show(d.lambda_m));
  app->add_option("--lambda-p", f.lambda_p, "final pairwise-distance weight")->default_str(show(d.lambda_p));
  app->add_option("--lambda-o", f.lambda_o, "compatibility weight")->default_str(show(d.lambda_o));
  app->add_option("--lambda-d", f.lambda_d, "density loss weight")->default_str(show(d.lambda_d));
  app->add_option("--cs", f.cs, "epochs between expected-point refreshes")->default_str(show(d.cs));
  app->add_option("--clip-norm", f.clip_norm, "gradient clipping norm")->default_str(show(d.clip_norm));
  app->add_option("--weight-decay", f.weight_decay, "decoupled weight decay")->default_str(show(d.weight_decay));
  app->add_option("--isomap-k", f.isomap_k, "neighbours in the Isomap graph")->default_str(show(d.isomap_k));
  app->add_option("--membership-threshold", f.membership_threshold,
                  "reconstruction distance admitting a point to a chart")
      ->default_str(show(d.membership_threshold));
  app->add_option("--seed", f.seed, "random seed (default from ATLASFLOW_SEED)")->default_str("0");
  app->add_flag("--no-density", f.no_density, "skip density-map training");
}

atlas::TrainConfig resolve(const TrainFlags& f) {
  auto cfg = preset_config(f.preset);
  cfg.seed = default_seed();
  if (!f.config.empty()) cfg = io::config_from_json(io::read_json_file(f.config), cfg);
  auto set = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  set(cfg.latent_dim, f.latent_dim);
  set(cfg.layers, f.layers);
  set(cfg.spline_bins, f.spline_bins);
  set(cfg.batch, f.batch);
  set(cfg.e1, f.e1);
  set(cfg.e2, f.e2);
  set(cfg.e3, f.e3);
  set(cfg.e4, f.e4);
  set(cfg.e5, f.e5);
  set(cfg.cs, f.cs);
  set(cfg.isomap_k, f.isomap_k);
  set(cfg.lr, f.lr);
  set(cfg.lambda_m, f.lambda_m);
  set(cfg.lambda_p, f.lambda_p);
  set(cfg.lambda_o, f.lambda_o);
  set(cfg.lambda_d, f.lambda_d);
  set(cfg.clip_norm, f.clip_norm);
  set(cfg.weight_decay, f.weight_decay);
  set(cfg.membership_threshold, f.membership_threshold);
  set(cfg.seed, f.seed);
  if (f.no_density) cfg.train_density = false;
  cfg.mapper.latent_dim = cfg.latent_dim;
  cfg.validate();
  return cfg;
}

void write_log(const std::string& path, const std::vector<atlas::LogRow>& log) {
  std::vector<std::vector<double>> rows;
  for (const auto& r : log)
    rows.push_back({static_cast<double>(r.phase), static_cast<double>(r.epoch), static_cast<double>(r.chart + 1), r.lambda,
                    r.pretrain, r.distance, r.recon, r.compat, r.density, static_cast<double>(r.batches)});
  io::write_table_csv(path,
                      {"phase", "epoch", "chart", "lambda", "pretrain", "distance", "recon", "compat", "density",
                       "batches"},
                      rows);
}

struct Command {
  CLI::App* app = nullptr;
  std::function<int(std::ostream&)> body;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Atlas-of-charts manifold learning and density estimation", "atlasflow"};
  app.require_subcommand(1);
  std::vector<Command> commands;

  // synth
  std::string manifold;
  int n_points = 10000;
  double noise = 0.1;
  std::optional<std::uint64_t> synth_seed;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "sample a noisy trefoil or torus");
  synth_cmd->add_option("--manifold", manifold, "dataset")->required()->check(CLI::IsMember({"trefoil", "torus"}));
  synth_cmd->add_option("--n", n_points, "number of points")->capture_default_str()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--noise", noise, "ambient noise std")->capture_default_str()->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--seed", synth_seed, "random seed (default from ATLASFLOW_SEED)")->default_str("0");
  synth_cmd->add_option("-o,--output", synth_out, "output CSV")->required();
  commands.push_back({synth_cmd, [&](std::ostream& o) {
                        synth::ManifoldSpec spec;
                        spec.kind = manifold == "trefoil" ? synth::ManifoldKind::trefoil : synth::ManifoldKind::torus;
                        spec.n_points = n_points;
                        spec.noise_sigma = noise;
                        spec.seed = synth_seed.value_or(default_seed());
                        const auto cloud = synth::generate(spec);
                        io::write_points_csv(synth_out, cloud.points, cloud.params);
                        o << "wrote " << cloud.size() << " rows to " << synth_out << '\n';
                        return kOk;
                      }});

  // cover
  std::string cover_in, cover_out, cover_preset = "torus";
  std::optional<int> n_cubes, cover_latent;
  std::optional<double> perc_overlap, threshold;
  auto* cover_cmd = app.add_subcommand("cover", "build a Mapper cover of a point cloud");
  cover_cmd->add_option("-i,--input", cover_in, "point CSV")->required();
  cover_cmd->add_option("-o,--output", cover_out, "cover JSON")->required();
  cover_cmd->add_option("--preset", cover_preset, "named Mapper defaults")
      ->check(CLI::IsMember({"torus", "trefoil"}))
      ->capture_default_str();
  cover_cmd->add_option("--n-cubes", n_cubes, "lens intervals")->default_str("5");
  cover_cmd->add_option("--perc-overlap", perc_overlap, "interval overlap fraction")->default_str("0.45");
  cover_cmd->add_option("--threshold", threshold, "single-linkage distance threshold")->default_str("1");
  cover_cmd->add_option("--latent-dim", cover_latent, "latent dimension (small charts are merged)")->default_str("2");
  commands.push_back({cover_cmd, [&](std::ostream& o) {
                        auto mapper = preset_config(cover_preset).mapper;
                        if (n_cubes) mapper.n_cubes = *n_cubes;
                        if (perc_overlap) mapper.perc_overlap = *perc_overlap;
                        if (threshold) mapper.linkage_threshold = *threshold;
                        if (cover_latent) mapper.latent_dim = *cover_latent;
                        const auto cloud = io::read_points_csv(cover_in);
                        const auto cov = cover::mapper_cover(cloud.points, mapper);
                        io::save_cover(cover_out, cov);
                        o << "charts: " << cov.chart_count() << '\n' << "nerve edges:";
                        for (const auto& [a, b] : cov.nerve_edges) o << " (" << a + 1 << "," << b + 1 << ")";
                        o << '\n';
                        return kOk;
                      }});

  // train
  TrainFlags train_flags;
  std::string train_data, train_cover, train_out, train_log;
  bool partition = false;
  auto* train_cmd = app.add_subcommand("train", "train an atlas on a cover");
  train_cmd->add_option("--data", train_data, "point CSV")->required();
  train_cmd->add_option("--cover", train_cover, "cover JSON")->required();
  train_cmd->add_option("-o,--output", train_out, "checkpoint JSON")->required();
  train_cmd->add_option("--log", train_log, "training-log CSV (default <output>.log.csv)");
  train_cmd->add_flag("--partition", partition, "train on the hard partition derived from the cover");
  add_train_flags(train_cmd, train_flags);
  commands.push_back({train_cmd, [&](std::ostream& o) {
                        const auto cfg = resolve(train_flags);
                        const auto cloud = io::read_points_csv(train_data);
                        auto cov = io::load_cover(train_cover);
                        if (partition)
                          cov = cover::cover_from_labels(cover::partition_from_cover(cov, cloud.points), cov.chart_count());
                        atlas::TrainReport report;
                        const auto model = atlas::train(cloud.points, cov, cfg, &report);
                        atlas::save(model, train_out);
                        write_log(train_log.empty() ? train_out + ".log.csv" : train_log, report.log);
                        o << "trained " << model.chart_count() << " charts; checkpoint " << train_out << '\n';
                        if (!report.recon_curve.empty()) o << "final recon " << report.recon_curve.back() << '\n';
                        return kOk;
                      }});

  // sample
  std::string sample_model, sample_out;
  int sample_count = 5000;
  std::optional<std::uint64_t> sample_seed;
  auto* sample_cmd = app.add_subcommand("sample", "generate points from a trained atlas");
  sample_cmd->add_option("--model", sample_model, "checkpoint JSON")->required();
  sample_cmd->add_option("--count", sample_count, "number of samples")->capture_default_str()->check(CLI::NonNegativeNumber);
  sample_cmd->add_option("--seed", sample_seed, "random seed (default from ATLASFLOW_SEED)")->default_str("0");
  sample_cmd->add_option("-o,--output", sample_out, "output CSV")->required();
  commands.push_back({sample_cmd, [&](std::ostream& o) {
                        const auto model = atlas::load(sample_model);
                        Rng rng = make_rng(sample_seed.value_or(default_seed()), {0x5a4d504cULL});
                        auto s = atlas::sample(model, sample_count, rng);
                        for (auto& c : s.chart) ++c;
                        io::write_points_csv(sample_out, s.points, std::nullopt, "chart", &s.chart);
                        o << "wrote " << sample_count << " samples to " << sample_out << '\n';
                        return kOk;
                      }});

  // density
  std::string density_model, density_data, density_queries, density_out;
  std::optional<double> bandwidth;
  auto* density_cmd = app.add_subcommand("density", "per-point model log-density and KDE estimate");
  density_cmd->add_option("--model", density_model, "checkpoint JSON (omit for KDE only)");
  density_cmd->add_option("--data", density_data, "reference CSV for the KDE")->required();
  density_cmd->add_option("--queries", density_queries, "points to evaluate (default: the reference)");
  density_cmd->add_option("--bandwidth", bandwidth, "KDE bandwidth (default: Scott's rule per axis)")
      ->check(CLI::PositiveNumber);
  density_cmd->add_option("-o,--output", density_out, "output CSV")->required();
  commands.push_back({density_cmd, [&](std::ostream& o) {
                        const auto ref = io::read_points_csv(density_data);
                        const auto queries = density_queries.empty() ? ref : io::read_points_csv(density_queries);
                        const Vector kde = bandwidth
                                               ? synth::kde_density(ref.points, queries.points, *bandwidth)
                                               : synth::kde_density(ref.points, queries.points,
                                                                    synth::scott_bandwidth(ref.points));
                        std::vector<std::string> header;
                        for (Index c = 0; c < queries.dim(); ++c) header.push_back("x" + std::to_string(c));
                        std::optional<Vector> logp;
                        if (!density_model.empty()) {
                          logp = atlas::log_density_mixture(atlas::load(density_model), queries.points);
                          header.push_back("log_density");
                        }
                        header.push_back("kde");
                        std::vector<std::vector<double>> rows;
                        for (Index i = 0; i < queries.size(); ++i) {
                          std::vector<double> row;
                          for (Index c = 0; c < queries.dim(); ++c) row.push_back(queries.points(i, c));
                          if (logp) row.push_back((*logp)(i));
                          row.push_back(kde(i));
                          rows.push_back(std::move(row));
                        }
                        io::write_table_csv(density_out, header, rows);
                        o << "wrote " << rows.size() << " rows to " << density_out << '\n';
                        return kOk;
                      }});

  // eval-boundary
  std::string eb_cover, eb_partition, eb_data, eb_out, eb_summary;
  auto* eb_cmd = app.add_subcommand("eval-boundary", "cover-versus-partition reconstruction on the overlap band");
  eb_cmd->add_option("--cover-model", eb_cover, "checkpoint trained on the cover")->required();
  eb_cmd->add_option("--partition-model", eb_partition, "checkpoint trained on the partition")->required();
  eb_cmd->add_option("--data", eb_data, "point CSV both models were trained on")->required();
  eb_cmd->add_option("-o,--output", eb_out, "table CSV")->required();
  eb_cmd->add_option("--summary", eb_summary, "JSON file for the overall averages");
  commands.push_back({eb_cmd, [&](std::ostream& o) {
                        const auto cm = atlas::load(eb_cover);
                        const auto pm = atlas::load(eb_partition);
                        const auto cloud = io::read_points_csv(eb_data);
                        if (cloud.size() != cm.cover.point_count() || cloud.dim() != cm.dim)
                          throw LabelMismatchError("data file does not match the checkpoints");
                        const auto table = atlas::boundary_table(cm, pm, cloud.points);
                        std::vector<std::vector<double>> rows;
                        for (const auto& r : table.rows)
                          rows.push_back({static_cast<double>(r.data_label + 1), static_cast<double>(r.model_label + 1),
                                          r.cover_error, r.partition_error, static_cast<double>(r.count)});
                        io::write_table_csv(eb_out, {"data_label", "model_label", "cover_error", "partition_error", "count"},
                                            rows);
                        if (!eb_summary.empty())
                          io::write_json_file(eb_summary, io::Json{{"cover_average", table.cover_average},
                                                                   {"partition_average", table.partition_average},
                                                                   {"band_points", table.band_points}});
                        o << "band points " << table.band_points << '\n'
                          << "cover average " << io::format_double(table.cover_average) << '\n'
                          << "partition average " << io::format_double(table.partition_average) << '\n';
                        return kOk;
                      }});

  // compare-single
  TrainFlags cs_flags;
  std::string cs_data, cs_cover, cs_out;
  auto* cs_cmd = app.add_subcommand("compare-single", "reconstruction curves of one chart versus the cover");
  cs_cmd->add_option("--data", cs_data, "point CSV")->required();
  cs_cmd->add_option("--cover", cs_cover, "cover JSON")->required();
  cs_cmd->add_option("-o,--output", cs_out, "loss-curve CSV")->required();
  add_train_flags(cs_cmd, cs_flags);
  commands.push_back({cs_cmd, [&](std::ostream& o) {
                        auto cfg = resolve(cs_flags);
                        cfg.train_density = false;
                        const auto cloud = io::read_points_csv(cs_data);
                        const auto cov = io::load_cover(cs_cover);
                        IndexList all(static_cast<std::size_t>(cloud.size()));
                        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
                        const auto single = cover::make_cover({all}, cloud.size());
                        atlas::TrainReport multi_report, single_report;
                        atlas::train(cloud.points, cov, cfg, &multi_report);
                        atlas::train(cloud.points, single, cfg, &single_report);
                        const auto& a = multi_report.recon_curve;
                        const auto& b = single_report.recon_curve;
                        std::vector<std::vector<double>> rows;
                        for (std::size_t e = 0; e < std::min(a.size(), b.size()); ++e)
                          rows.push_back({static_cast<double>(e + 1), a[e], b[e]});
                        io::write_table_csv(cs_out, {"epoch", "multi", "single"}, rows);
                        if (!rows.empty())
                          o << "final recon multi " << io::format_double(a.back()) << " single "
                            << io::format_double(b.back()) << '\n';
                        return kOk;
                      }});

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    for (auto& c : commands)
      if (c.app->parsed()) return c.body(out);
    return kUsage;
  } catch (const DegenerateLensError& e) {
    err << "error: " << e.what() << '\n';
    return kDegenerateLens;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kDivergence;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kCorruptFile;
  } catch (const FormatVersionError& e) {
    err << "error: " << e.what() << '\n';
    return kCorruptFile;
  } catch (const LabelMismatchError& e) {
    err << "error: " << e.what() << '\n';
    return kLabelMismatch;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace atlasflow::cli
