#include <fmt/format.h>

#include <fstream>
#include <istream>
#include <json.hpp>
#include <ostream>
#include <stdexcept>

#include "pdiff/datasets.hpp"

namespace pdiff {

namespace {

using nlohmann::json;

std::string real(double v) { return fmt::format("{:.17g}", v); }

std::string range_obj(const ChannelRange& r) { return "{\"min\":" + real(r.min) + ",\"max\":" + real(r.max) + "}"; }

template <std::size_t N>
std::string range_list(const std::array<ChannelRange, N>& rs) {
  std::string s = "[";
  for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + range_obj(rs[i]);
  return s + "]";
}

std::string reals(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + real(v[i]);
  return s + "]";
}

std::string pairs(const std::vector<Vec2>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ",[" : "[") + real(v[i][0]) + "," + real(v[i][1]) + "]";
  return s + "]";
}

ChannelRange parse_range(const json& j) { return {j.at("min").get<double>(), j.at("max").get<double>()}; }

std::vector<Vec2> parse_pairs(const json& j) {
  std::vector<Vec2> out;
  for (const auto& p : j) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return out;
}

}  // namespace

std::string dataset_filename(Family family, std::size_t task_index, const std::string& tier) {
  return fmt::format("{}_task{:02d}_{}.jsonl", to_string(family), task_index, tier);
}

void write_dataset(std::ostream& out, const Dataset& ds) {
  const DatasetHeader& h = ds.header;
  out << "{\"format_version\":" << h.format_version << ",\"family\":\"" << to_string(h.family)
      << "\",\"task_index\":" << h.task_index << ",\"tier\":\"" << h.tier << "\",\"seed\":" << h.seed
      << ",\"horizon\":" << h.horizon << ",\"generated\":" << (h.generated ? "true" : "false")
      << ",\"norm_stats\":{\"state\":" << range_list(h.stats.state) << ",\"action\":" << range_list(h.stats.action)
      << ",\"reward\":" << range_obj(h.stats.reward) << ",\"rtg\":" << range_obj(h.stats.rtg) << "}}\n";
  for (const Trajectory& t : ds.trajectories) {
    out << "{\"states\":" << pairs(t.states) << ",\"actions\":" << pairs(t.actions) << ",\"rewards\":" << reals(t.rewards)
        << ",\"rtg\":" << reals(t.rtg) << ",\"timesteps\":[";
    for (std::size_t i = 0; i < t.timesteps.size(); ++i) out << (i ? "," : "") << t.timesteps[i];
    out << "]}\n";
  }
  if (!out) throw std::runtime_error("dataset: write failed");
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset: missing header line");
  Dataset ds;
  try {
    const json h = json::parse(line);
    DatasetHeader& hd = ds.header;
    hd.format_version = h.at("format_version").get<int>();
    if (hd.format_version != 1) throw std::runtime_error("dataset: unsupported format version");
    hd.family = parse_family(h.at("family").get<std::string>());
    hd.task_index = h.at("task_index").get<std::size_t>();
    hd.tier = h.at("tier").get<std::string>();
    hd.seed = h.at("seed").get<std::uint64_t>();
    hd.horizon = h.at("horizon").get<int>();
    hd.generated = h.value("generated", false);
    const json& ns = h.at("norm_stats");
    for (std::size_t i = 0; i < kStateDim; ++i) hd.stats.state[i] = parse_range(ns.at("state").at(i));
    for (std::size_t i = 0; i < kActionDim; ++i) hd.stats.action[i] = parse_range(ns.at("action").at(i));
    hd.stats.reward = parse_range(ns.at("reward"));
    hd.stats.rtg = parse_range(ns.at("rtg"));
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json r = json::parse(line);
      Trajectory t;
      t.states = parse_pairs(r.at("states"));
      t.actions = parse_pairs(r.at("actions"));
      t.rewards = r.at("rewards").get<std::vector<double>>();
      t.rtg = r.at("rtg").get<std::vector<double>>();
      t.timesteps = r.at("timesteps").get<std::vector<std::size_t>>();
      const std::size_t n = t.rewards.size();
      if (t.states.size() != n || t.actions.size() != n || t.rtg.size() != n || t.timesteps.size() != n) {
        throw std::runtime_error("dataset: trajectory fields differ in length");
      }
      ds.trajectories.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("dataset: malformed record: ") + e.what());
  }
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dataset: cannot open " + path.string() + " for writing");
  write_dataset(out, ds);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset: cannot open " + path.string());
  return read_dataset(in);
}

}  // namespace pdiff
