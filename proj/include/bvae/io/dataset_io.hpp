#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "bvae/data/amoeba.hpp"
#include "bvae/data/dataset.hpp"
#include "bvae/io/tensor_file.hpp"
#include "bvae/io/text.hpp"

namespace bvae::io {

inline constexpr const char* kFactorCsvHeader = "index,shape,scale_idx,rot_idx,x_idx,y_idx,scale,rot,x,y";

inline void write_factor_row(std::ostream& os, std::size_t row, const FactorCoordinates& c) {
  os << row << ',' << to_string(c.shape) << ',' << c.index[1] << ',' << c.index[2] << ','
     << c.index[3] << ',' << c.index[4] << ',' << fmt_double(c.scale) << ',' << fmt_double(c.rotation)
     << ',' << fmt_double(c.x) << ',' << fmt_double(c.y) << '\n';
}

inline void write_factor_csv(const std::filesystem::path& path, const ShapesDataset& ds) {
  auto os = open_out(path);
  os << kFactorCsvHeader << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) write_factor_row(os, i, ds.factor(i));
}

inline nlohmann::json provenance_json(const DatasetProvenance& p, std::size_t resolution) {
  return {{"shapes", p.shapes},
          {"strides", p.strides},
          {"predicate", p.predicate},
          {"selection", p.selection == Selection::retained ? "retained" : "held_out"},
          {"resolution", resolution}};
}

/// Writes `images.tnsr` (N x R x R, u8), `factors.csv` and
/// `dataset.json` (provenance) into `dir`.
inline void save_dataset(const std::filesystem::path& dir, const ShapesDataset& ds) {
  std::filesystem::create_directories(dir);
  const auto r = std::uint32_t(ds.resolution());
  write_u8_tensor(dir / "images.tnsr", {std::uint32_t(ds.size()), r, r}, ds.pixels());
  write_factor_csv(dir / "factors.csv", ds);
  auto os = open_out(dir / "dataset.json");
  os << provenance_json(ds.provenance(), ds.resolution()).dump(2) << '\n';
}

inline HoldoutPredicate predicate_by_id(const std::string& id) {
  if (id == "none") return HoldoutPredicate::none();
  if (id == "zero-shot") return HoldoutPredicate::zero_shot();
  throw DataError("unknown holdout predicate '" + id + "'");
}

inline std::vector<ShapeKind> parse_shape_list(const std::string& s) {
  std::vector<ShapeKind> out;
  for (const auto& name : split(s, ',')) out.push_back(shape_from_string(name));
  return out;
}

inline ShapesDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream js(dir / "dataset.json");
  if (!js) throw DataError("missing " + (dir / "dataset.json").string());
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed dataset.json: " + std::string(e.what()));
  }
  DatasetProvenance prov;
  prov.shapes = meta.at("shapes").get<std::string>();
  prov.strides = meta.at("strides").get<Strides>();
  prov.predicate = meta.at("predicate").get<std::string>();
  prov.selection = meta.at("selection").get<std::string>() == "held_out" ? Selection::held_out : Selection::retained;
  FactorGrid grid = FactorGrid::standard(parse_shape_list(prov.shapes));

  TensorHeader header;
  auto pixels = read_u8_tensor(dir / "images.tnsr", &header);
  if (header.dims.size() != 3 || header.dims[1] != grid.resolution || header.dims[2] != grid.resolution) {
    throw DataError("images.tnsr: expected N x 64 x 64");
  }
  std::ifstream csv(dir / "factors.csv");
  if (!csv) throw DataError("missing " + (dir / "factors.csv").string());
  std::string line;
  std::getline(csv, line);
  if (line != kFactorCsvHeader) throw DataError("factors.csv: unexpected header");
  std::vector<FactorCoordinates> factors;
  factors.reserve(header.dims[0]);
  std::size_t shape_pos[6];
  for (std::size_t i = 0; i < 6; ++i) shape_pos[i] = SIZE_MAX;
  for (std::size_t i = 0; i < grid.shapes.size(); ++i) shape_pos[std::size_t(grid.shapes[i])] = i;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 10) throw DataError("factors.csv: expected 10 fields, got " + std::to_string(f.size()));
    FactorIndex idx{};
    const auto kind = shape_from_string(f[1]);
    idx[0] = shape_pos[std::size_t(kind)];
    if (idx[0] == SIZE_MAX) throw DataError("factors.csv: shape not in provenance list");
    for (int k = 0; k < 4; ++k) idx[std::size_t(k + 1)] = std::stoul(f[std::size_t(k + 2)]);
    factors.push_back(grid.resolve(idx));
  }
  if (factors.size() != header.dims[0]) throw DataError("factors.csv row count does not match images.tnsr");
  return ShapesDataset(std::move(grid), std::move(prov), std::move(factors), std::move(pixels));
}

inline void save_amoeba(const std::filesystem::path& dir, const AmoebaDataset& ds) {
  std::filesystem::create_directories(dir);
  const auto r = std::uint32_t(ds.geometry.resolution);
  write_u8_tensor(dir / "images.tnsr", {std::uint32_t(ds.size()), r, r}, ds.pixels);
  auto os = open_out(dir / "factors.csv");
  os << "index,s,t,arm_up,arm_down,arm_left,arm_right\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& a = ds.samples[i];
    os << i << ',' << fmt_double(a.s) << ',' << fmt_double(a.t);
    for (double l : a.arms) os << ',' << fmt_double(l);
    os << '\n';
  }
}

}  // namespace bvae::io
