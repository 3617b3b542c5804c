#include "atlasflow/io.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace atlasflow::io {
namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot open " + path + " for writing");
  return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& path, std::size_t line) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw ParseError(path + ":" + std::to_string(line) + ": cannot parse '" + s + "' as a number", line);
  }
  return v;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_points_csv(const std::string& path, const Matrix& points, const std::optional<Matrix>& params,
                      const std::string& extra_name, const IndexList* extra) {
  if (params && params->rows() != points.rows()) throw ArgumentError("parameter rows do not match the points");
  if (extra && static_cast<Index>(extra->size()) != points.rows())
    throw ArgumentError("extra column length does not match the points");
  auto out = open_out(path);
  std::string line;
  for (Index c = 0; c < points.cols(); ++c) line += (c ? ",x" : "x") + std::to_string(c);
  if (params)
    for (Index c = 0; c < params->cols(); ++c) line += ",t" + std::to_string(c);
  if (extra) line += "," + extra_name;
  out << line << '\n';
  for (Index r = 0; r < points.rows(); ++r) {
    line.clear();
    for (Index c = 0; c < points.cols(); ++c) {
      if (c) line += ',';
      line += format_double(points(r, c));
    }
    if (params)
      for (Index c = 0; c < params->cols(); ++c) line += "," + format_double((*params)(r, c));
    if (extra) line += "," + std::to_string((*extra)[static_cast<std::size_t>(r)]);
    out << line << '\n';
  }
}

Table read_table_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path);
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file", 0);
  t.header = split(line, ',');
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split(line, ',');
    if (fields.size() != t.header.size())
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                           " fields, found " + std::to_string(fields.size()),
                       lineno);
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_double(f, path, lineno));
    t.rows.push_back(std::move(row));
  }
  return t;
}

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

synth::PointCloud read_points_csv(const std::string& path) {
  const Table t = read_table_csv(path);
  std::vector<int> xs, ts;
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    const auto& h = t.header[i];
    if (h.size() > 1 && h[0] == 'x' && std::isdigit(static_cast<unsigned char>(h[1]))) xs.push_back(static_cast<int>(i));
    if (h.size() > 1 && h[0] == 't' && std::isdigit(static_cast<unsigned char>(h[1]))) ts.push_back(static_cast<int>(i));
  }
  if (xs.empty()) throw ParseError(path + ": no x0.. columns in header", 0);
  synth::PointCloud pc;
  pc.points = Matrix(static_cast<Index>(t.rows.size()), static_cast<Index>(xs.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 0; c < xs.size(); ++c)
      pc.points(static_cast<Index>(r), static_cast<Index>(c)) = t.rows[r][static_cast<std::size_t>(xs[c])];
  if (!ts.empty()) {
    Matrix p(static_cast<Index>(t.rows.size()), static_cast<Index>(ts.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      for (std::size_t c = 0; c < ts.size(); ++c)
        p(static_cast<Index>(r), static_cast<Index>(c)) = t.rows[r][static_cast<std::size_t>(ts[c])];
    pc.params = p;
  }
  if (!pc.points.allFinite()) throw ParseError(path + ": point coordinates must be finite", 0);
  return pc;
}

void write_table_csv(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<double>>& rows) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double v = row[i];
      // Integral columns (labels, counts) print without a fraction.
      if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 1e15)
        out << (i ? "," : "") << static_cast<long long>(v);
      else
        out << (i ? "," : "") << format_double(v);
    }
    out << '\n';
  }
}

Json cover_to_json(const cover::ChartCover& c, const cover::RefinedPartition& part) {
  Json j;
  j["format_version"] = 1;
  j["charts"] = c.charts;
  Json edges = Json::array();
  for (const auto& [a, b] : c.nerve_edges) edges.push_back({a, b});
  j["nerve_edges"] = edges;
  j["multiplicity"] = c.multiplicity;
  Json cells = Json::array();
  for (const auto& cell : part.cells)
    cells.push_back({{"signature", cell.owners}, {"indices", cell.indices}, {"nu", cell.nu}});
  j["cells"] = cells;
  return j;
}

cover::ChartCover cover_from_json(const Json& j) {
  try {
    if (j.at("format_version").get<int>() != 1)
      throw FormatVersionError("unsupported cover format_version " + j.at("format_version").dump());
    auto charts = j.at("charts").get<std::vector<IndexList>>();
    const auto mult = j.at("multiplicity").get<std::vector<int>>();
    auto c = cover::make_cover(std::move(charts), static_cast<Index>(mult.size()));
    if (c.multiplicity != mult) throw CoverError("cover multiplicities disagree with the chart lists");
    std::vector<std::pair<int, int>> edges;
    for (const auto& e : j.at("nerve_edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    if (edges != c.nerve_edges) throw CoverError("cover nerve edges disagree with the chart lists");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed cover: ") + e.what(), 0);
  }
}

void save_cover(const std::string& path, const cover::ChartCover& c) {
  write_json_file(path, cover_to_json(c, cover::refine_partition(c)));
}

cover::ChartCover load_cover(const std::string& path) { return cover_from_json(read_json_file(path)); }

Json config_to_json(const atlas::TrainConfig& cfg) {
  return Json{{"latent_dim", cfg.latent_dim},
              {"layers", cfg.layers},
              {"hidden", cfg.hidden},
              {"spline_bins", cfg.spline_bins},
              {"lr", cfg.lr},
              {"batch", cfg.batch},
              {"epochs_e1", cfg.e1},
              {"epochs_e2", cfg.e2},
              {"epochs_e3", cfg.e3},
              {"epochs_e4", cfg.e4},
              {"epochs_e5", cfg.e5},
              {"lambda_m", cfg.lambda_m},
              {"lambda_p", cfg.lambda_p},
              {"lambda_o", cfg.lambda_o},
              {"lambda_d", cfg.lambda_d},
              {"cs", cfg.cs},
              {"clip_norm", cfg.clip_norm},
              {"weight_decay", cfg.weight_decay},
              {"seed", cfg.seed},
              {"isomap_k", cfg.isomap_k},
              {"membership_threshold", cfg.membership_threshold},
              {"train_density", cfg.train_density},
              {"n_cubes", cfg.mapper.n_cubes},
              {"perc_overlap", cfg.mapper.perc_overlap},
              {"linkage_threshold", cfg.mapper.linkage_threshold}};
}

atlas::TrainConfig config_from_json(const Json& j, atlas::TrainConfig cfg) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const Json& v = it.value();
    auto num = [&]() {
      if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
      return v.get<double>();
    };
    auto integer = [&]() {
      if (!v.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
      return v.get<long long>();
    };
    if (key == "latent_dim") cfg.latent_dim = static_cast<int>(integer());
    else if (key == "layers") cfg.layers = static_cast<int>(integer());
    else if (key == "hidden") {
      if (!v.is_array()) throw ConfigError("config key 'hidden' must be an array of integers");
      cfg.hidden.clear();
      for (const auto& h : v) {
        if (!h.is_number_integer()) throw ConfigError("config key 'hidden' must be an array of integers");
        cfg.hidden.push_back(h.get<int>());
      }
    } else if (key == "spline_bins") cfg.spline_bins = static_cast<int>(integer());
    else if (key == "lr") cfg.lr = num();
    else if (key == "batch") cfg.batch = static_cast<int>(integer());
    else if (key == "epochs_e1") cfg.e1 = static_cast<int>(integer());
    else if (key == "epochs_e2") cfg.e2 = static_cast<int>(integer());
    else if (key == "epochs_e3") cfg.e3 = static_cast<int>(integer());
    else if (key == "epochs_e4") cfg.e4 = static_cast<int>(integer());
    else if (key == "epochs_e5") cfg.e5 = static_cast<int>(integer());
    else if (key == "lambda_m") cfg.lambda_m = num();
    else if (key == "lambda_p") cfg.lambda_p = num();
    else if (key == "lambda_o") cfg.lambda_o = num();
    else if (key == "lambda_d") cfg.lambda_d = num();
    else if (key == "cs") cfg.cs = static_cast<int>(integer());
    else if (key == "clip_norm") cfg.clip_norm = num();
    else if (key == "weight_decay") cfg.weight_decay = num();
    else if (key == "seed") {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
        throw ConfigError("config key 'seed' must be a nonnegative integer");
      cfg.seed = v.get<std::uint64_t>();
    } else if (key == "isomap_k") cfg.isomap_k = static_cast<int>(integer());
    else if (key == "membership_threshold") cfg.membership_threshold = num();
    else if (key == "train_density") {
      if (!v.is_boolean()) throw ConfigError("config key 'train_density' must be a boolean");
      cfg.train_density = v.get<bool>();
    } else if (key == "n_cubes") cfg.mapper.n_cubes = static_cast<int>(integer());
    else if (key == "perc_overlap") cfg.mapper.perc_overlap = num();
    else if (key == "linkage_threshold") cfg.mapper.linkage_threshold = num();
    else throw ConfigError("unknown config key '" + key + "'");
  }
  cfg.mapper.latent_dim = cfg.latent_dim;
  cfg.validate();
  return cfg;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return Json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": parse error at byte " + std::to_string(e.byte) + ": " + e.what(), e.byte);
  }
}

void write_json_file(const std::string& path, const Json& j) {
  auto out = open_out(path);
  out << j.dump() << '\n';
  if (!out) throw ArgumentError("failed writing " + path);
}

}  // namespace atlasflow::io
