#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "qgnn/assigner/plan.hpp"
#include "qgnn/assigner/trace.hpp"
#include "qgnn/common/errors.hpp"

namespace qgnn {

inline std::string key_label(TensorKey key) {
  return std::to_string(key.layer) + ":" + dir_name(key.dir);
}

inline TensorKey key_from_label(const std::string& s) {
  const auto pos = s.find(':');
  if (pos == std::string::npos) throw IoError("tensor key must look like <layer>:<fwd|bwd>");
  TensorKey key;
  key.layer = static_cast<uint32_t>(std::stoul(s.substr(0, pos)));
  const std::string d = s.substr(pos + 1);
  if (d == "fwd")
    key.dir = Direction::kForward;
  else if (d == "bwd")
    key.dir = Direction::kBackward;
  else
    throw IoError("tensor key direction must be fwd or bwd");
  return key;
}

inline nlohmann::json stats_to_json(const std::map<TensorKey, InstanceStats>& stats) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [key, inst] : stats) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const PairStats& ps : inst.pairs) {
      nlohmann::json msgs = nlohmann::json::array();
      for (const MessageStats& m : ps.messages)
        msgs.push_back({{"id", m.id},
                        {"dim", m.dim},
                        {"lo", m.lo},
                        {"hi", m.hi},
                        {"sum_alpha_sq", m.sum_alpha_sq}});
      pairs.push_back({{"src", ps.src}, {"dst", ps.dst}, {"messages", std::move(msgs)}});
    }
    out[key_label(key)] = {{"pairs", std::move(pairs)}};
  }
  return out;
}

inline std::map<TensorKey, InstanceStats> stats_from_json(const nlohmann::json& j) {
  std::map<TensorKey, InstanceStats> stats;
  for (const auto& [label, body] : j.items()) {
    InstanceStats inst;
    for (const auto& jp : body.at("pairs")) {
      PairStats ps;
      ps.src = jp.at("src").get<uint32_t>();
      ps.dst = jp.at("dst").get<uint32_t>();
      for (const auto& jm : jp.at("messages")) {
        MessageStats m;
        m.id = jm.at("id").get<uint32_t>();
        m.dim = jm.at("dim").get<uint64_t>();
        m.lo = jm.at("lo").get<double>();
        m.hi = jm.at("hi").get<double>();
        m.sum_alpha_sq = jm.at("sum_alpha_sq").get<double>();
        ps.messages.push_back(m);
      }
      inst.pairs.push_back(std::move(ps));
    }
    stats[key_from_label(label)] = std::move(inst);
  }
  return stats;
}

inline nlohmann::json plan_to_json(const BitWidthPlan& plan) {
  nlohmann::json out;
  out["version"] = plan.version;
  nlohmann::json insts = nlohmann::json::object();
  for (const auto& [key, inst] : plan.instances) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const PlanPair& pp : inst.pairs) {
      nlohmann::json groups = nlohmann::json::array();
      for (const PlanGroup& g : pp.groups)
        groups.push_back(
            {{"ids", g.ids}, {"dims", g.dims}, {"beta", g.beta}, {"bits", g.bits}});
      pairs.push_back({{"src", pp.src}, {"dst", pp.dst}, {"groups", std::move(groups)}});
    }
    insts[key_label(key)] = {{"pairs", std::move(pairs)},
                             {"objective", inst.objective},
                             {"variance_term", inst.variance_term},
                             {"z_seconds", inst.z_seconds}};
  }
  out["instances"] = std::move(insts);
  return out;
}

inline BitWidthPlan plan_from_json(const nlohmann::json& j) {
  BitWidthPlan plan;
  plan.version = j.at("version").get<uint64_t>();
  for (const auto& [label, body] : j.at("instances").items()) {
    InstancePlan inst;
    for (const auto& jp : body.at("pairs")) {
      PlanPair pp;
      pp.src = jp.at("src").get<uint32_t>();
      pp.dst = jp.at("dst").get<uint32_t>();
      for (const auto& jg : jp.at("groups")) {
        PlanGroup g;
        g.ids = jg.at("ids").get<std::vector<uint32_t>>();
        g.dims = jg.at("dims").get<std::vector<uint64_t>>();
        g.beta = jg.at("beta").get<double>();
        g.bits = jg.at("bits").get<int>();
        pp.groups.push_back(std::move(g));
      }
      inst.pairs.push_back(std::move(pp));
    }
    inst.objective = body.at("objective").get<double>();
    inst.variance_term = body.at("variance_term").get<double>();
    inst.z_seconds = body.at("z_seconds").get<double>();
    plan.instances[key_from_label(label)] = std::move(inst);
  }
  return plan;
}

}  // namespace qgnn
