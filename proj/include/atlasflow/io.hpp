#pragma once

#include "atlasflow/atlas.hpp"
#include "atlasflow/cover.hpp"
#include "atlasflow/synth.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace atlasflow::io {

using Json = nlohmann::json;

// Shortest text that parses back to the same double.
std::string format_double(double v);

// Header x0..x{d-1}, then t0.. when params are present, then any extra
// integer column.
void write_points_csv(const std::string& path, const Matrix& points, const std::optional<Matrix>& params = {},
                      const std::string& extra_name = {}, const IndexList* extra = nullptr);

// Reads x* columns as points and t* columns as params; other columns are
// ignored. Throws ParseError naming the line of the first bad row.
synth::PointCloud read_points_csv(const std::string& path);

// Generic numeric table with a header row.
void write_table_csv(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<double>>& rows);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  int column(const std::string& name) const;
};
Table read_table_csv(const std::string& path);

Json cover_to_json(const cover::ChartCover& c, const cover::RefinedPartition& part);
cover::ChartCover cover_from_json(const Json& j);
void save_cover(const std::string& path, const cover::ChartCover& c);
cover::ChartCover load_cover(const std::string& path);

// Train configuration as a flat object. from_json starts from base and
// rejects unknown keys and ill-typed values with ConfigError.
Json config_to_json(const atlas::TrainConfig& cfg);
atlas::TrainConfig config_from_json(const Json& j, atlas::TrainConfig base);

// Reads a whole file and parses it, mapping syntax errors to ParseError with
// the byte offset reported by the parser.
Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

}  // namespace atlasflow::io
