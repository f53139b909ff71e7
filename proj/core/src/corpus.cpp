#include <fstream>
#include <sstream>

#include "json.hpp"
#include "latentplan/world.hpp"

namespace latentplan::world {

namespace {

using nlohmann::json;

json point_to_json(const geom::Point2& p) { return json::array({p.x, p.y}); }

geom::Point2 point_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

}  // namespace

std::string scenario_to_json(const Scenario& s) {
  json j;
  j["seed"] = s.seed;
  j["difficulty"] = to_string(s.difficulty);
  j["command"] = to_string(s.command);
  j["ego"] = {{"x", s.ego_start.position.x},
              {"y", s.ego_start.position.y},
              {"heading", s.ego_start.heading},
              {"speed", s.ego_start.speed}};
  json agents = json::array();
  for (const AgentTrack& a : s.agents) {
    json poses = json::array();
    for (const AgentPose& p : a.poses) {
      poses.push_back(json::array({p.position.x, p.position.y, p.heading}));
    }
    agents.push_back({{"hx", a.half_extents.x},
                      {"hy", a.half_extents.y},
                      {"poses", std::move(poses)}});
  }
  j["agents"] = std::move(agents);
  json drivable = json::array();
  for (const geom::Point2& v : s.drivable.vertices) {
    drivable.push_back(point_to_json(v));
  }
  j["drivable"] = std::move(drivable);
  json route = json::array();
  for (const geom::Point2& v : s.route) route.push_back(point_to_json(v));
  j["route"] = std::move(route);
  json expert_pts = json::array();
  for (const geom::Point2& p : s.expert.points) {
    expert_pts.push_back(point_to_json(p));
  }
  j["expert"] = {{"dt", s.expert.dt}, {"points", std::move(expert_pts)}};
  return j.dump();
}

Scenario scenario_from_json(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw CorpusError(std::string("corpus line is not valid JSON: ") + e.what());
  }
  try {
    Scenario s;
    s.seed = j.at("seed").get<uint64_t>();
    s.difficulty = difficulty_from_string(j.at("difficulty").get<std::string>());
    s.command = command_from_string(j.at("command").get<std::string>());
    const json& ego = j.at("ego");
    s.ego_start.position = {ego.at("x").get<double>(), ego.at("y").get<double>()};
    s.ego_start.heading = ego.at("heading").get<double>();
    s.ego_start.speed = ego.at("speed").get<double>();
    for (const json& a : j.at("agents")) {
      AgentTrack track;
      track.half_extents = {a.at("hx").get<double>(), a.at("hy").get<double>()};
      for (const json& p : a.at("poses")) {
        track.poses.push_back(AgentPose{
            {p.at(0).get<double>(), p.at(1).get<double>()},
            p.at(2).get<double>()});
      }
      s.agents.push_back(std::move(track));
    }
    for (const json& v : j.at("drivable")) {
      s.drivable.vertices.push_back(point_from_json(v));
    }
    for (const json& v : j.at("route")) s.route.push_back(point_from_json(v));
    const json& expert = j.at("expert");
    s.expert.dt = expert.at("dt").get<double>();
    for (const json& p : expert.at("points")) {
      s.expert.points.push_back(point_from_json(p));
    }
    return s;
  } catch (const json::exception& e) {
    throw CorpusError(std::string("corpus line missing fields: ") + e.what());
  }
}

void write_corpus(const std::filesystem::path& path,
                  std::span<const Scenario> scenarios) {
  std::ofstream out(path);
  if (!out) {
    throw CorpusError("cannot open corpus for writing: " + path.string());
  }
  for (const Scenario& s : scenarios) {
    out << scenario_to_json(s) << '\n';
  }
  if (!out) {
    throw CorpusError("write failed for corpus: " + path.string());
  }
}

std::vector<Scenario> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw CorpusError("cannot open corpus: " + path.string());
  }
  std::vector<Scenario> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(scenario_from_json(line));
    } catch (const CorpusError& e) {
      throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
  return out;
}

}  // namespace latentplan::world
