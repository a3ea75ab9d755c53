#include "nsfs/samples.hpp"

#include "json.hpp"

#include <fstream>
#include <sstream>

namespace nsfs {

namespace {

std::filesystem::path sidecar(const std::filesystem::path& csv) {
  auto p = csv;
  p += ".json";
  return p;
}

}  // namespace

void save_samples(const SampleSet& set, const std::filesystem::path& csv,
                  const std::string& config_echo) {
  if (!set.samples.allFinite()) throw NumericError("save_samples: non-finite sample entries");
  std::ofstream out(csv);
  if (!out) throw IoError("cannot write samples to " + csv.string());
  out.precision(17);
  for (Index j = 0; j < set.dim(); ++j) out << (j ? "," : "") << "theta" << j;
  out << "\n";
  for (Index i = 0; i < set.size(); ++i) {
    for (Index j = 0; j < set.dim(); ++j) out << (j ? "," : "") << set.samples(i, j);
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + csv.string());

  nlohmann::json meta = {
      {"method", set.meta.method},         {"seed", set.meta.seed},
      {"gamma", set.meta.gamma},           {"dt", set.meta.dt},
      {"iterations", set.meta.iterations}, {"wall_seconds", set.meta.wall_seconds},
      {"samples", set.size()},             {"dim", set.dim()},
  };
  meta["config"] = config_echo.empty() ? nlohmann::json(nullptr) : nlohmann::json(config_echo);
  std::ofstream js(sidecar(csv));
  if (!js) throw IoError("cannot write " + sidecar(csv).string());
  js << meta.dump(2) << "\n";
}

SampleSet load_samples(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot open samples file " + csv.string());
  SampleSet set;
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError("bad sample value '" + cell + "'", line_no);
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError("inconsistent sample width", line_no);
    }
    rows.push_back(std::move(row));
  }
  const Index n = static_cast<Index>(rows.size());
  const Index d = n ? static_cast<Index>(rows.front().size()) : 0;
  set.samples.resize(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) set.samples(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }

  std::ifstream js(sidecar(csv));
  if (js) {
    const auto meta = nlohmann::json::parse(js);
    set.meta.method = meta.value("method", "");
    set.meta.seed = meta.value("seed", std::uint64_t{0});
    set.meta.gamma = meta.value("gamma", 0.0);
    set.meta.dt = meta.value("dt", 0.0);
    set.meta.iterations = meta.value("iterations", Index{0});
    set.meta.wall_seconds = meta.value("wall_seconds", 0.0);
  }
  return set;
}

}  // namespace nsfs
