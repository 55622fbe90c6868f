#pragma once

// Independent checks over task trees, written against the tree's plain data
// rather than the library's validator.

#include <map>
#include <set>
#include <span>
#include <string>

#include "coex/task_tree.hpp"

namespace tree_oracle {

using namespace coex;

// Critical value of chi-square with 8 degrees of freedom at p = 0.01.
inline constexpr double kChi2Crit8 = 20.090;

inline double chi_square(const std::map<ObjectSpec, int>& counts, std::span<const ObjectSpec> pool, int total) {
  const double expected = static_cast<double>(total) / static_cast<double>(pool.size());
  double chi2 = 0.0;
  for (const ObjectSpec& s : pool) {
    const auto it = counts.find(s);
    const double c = it == counts.end() ? 0.0 : it->second;
    chi2 += (c - expected) * (c - expected) / expected;
  }
  return chi2;
}

inline bool is_forced(TaskType t) {
  return t == TaskType::kForcedLandmarks || t == TaskType::kMeetingPoint || t == TaskType::kForcedLemonHunt;
}

// Empty when the tree is sound; otherwise a description of the first problem.
// Executes the chain symbolically on a multiset of objects: each stage must find
// its inputs, and after the last stage the end condition must hold.
inline std::string violation(const TaskTree& tree, std::span<const ObjectSpec> pool) {
  const std::set<ObjectSpec> allowed(pool.begin(), pool.end());
  if (static_cast<int>(tree.subtasks.size()) != tree.depth) return "subtask count";
  const bool exists = tree.end.kind == EndCondition::Kind::kObjectExists;
  if (!allowed.contains(tree.end.target)) return "end target outside pool";

  std::multiset<ObjectSpec> world;
  for (const auto& [spec, n] : tree.initial_spawn) {
    if (!allowed.contains(spec)) return "spawned spec outside pool";
    for (int i = 0; i < n; ++i) world.insert(spec);
  }
  auto take = [&](const ObjectSpec& s) {
    const auto it = world.find(s);
    if (it == world.end()) return false;
    world.erase(it);
    return true;
  };
  bool any_forced = false;
  for (int s = 1; s <= tree.depth; ++s) {
    const Subtask& st = tree.stage(s);
    if (st.stage != s) return "stage order";
    any_forced = any_forced || is_forced(st.type);
    const bool last = s == tree.depth;
    if (!last) {
      const bool producer = st.type == TaskType::kActivateLandmarks || st.type == TaskType::kLemonHunt ||
                            st.type == TaskType::kInOutMachine || is_forced(st.type) ||
                            (st.type == TaskType::kCrafting && st.craft == CraftMode::kSpawn);
      if (!producer) return "stage " + std::to_string(s) + " is not a producer";
      if (st.outputs.size() != 1) return "stage " + std::to_string(s) + " must produce one object";
    } else {
      const bool creates = st.type == TaskType::kInOutMachine ||
                           (st.type == TaskType::kCrafting && st.craft == CraftMode::kSpawn);
      const bool destroys = st.type == TaskType::kDropOffPoint ||
                            (st.type == TaskType::kCrafting && st.craft == CraftMode::kDespawn);
      if (exists && !creates) return "final stage cannot create the target";
      if (!exists && !destroys) return "final stage cannot destroy the target";
    }
    if (st.type == TaskType::kActivateLandmarks && st.landmark_count == 2 && st.window != 300) return "window";
    if ((st.type == TaskType::kForcedLandmarks || st.type == TaskType::kMeetingPoint) && st.window != 10) {
      return "forced window";
    }
    for (const ObjectSpec& in : st.inputs) {
      if (!allowed.contains(in)) return "input outside pool";
      if (!take(in)) return "stage " + std::to_string(s) + " input " + to_string(in) + " missing";
    }
    if (st.type == TaskType::kLemonHunt || st.type == TaskType::kForcedLemonHunt) {
      if (!st.lemon) return "lemon hunt without lemon";
    }
    for (const ObjectSpec& out : st.outputs) {
      if (!allowed.contains(out)) return "output outside pool";
      world.insert(out);
    }
  }
  if (tree.forced && !any_forced) return "forced tree without forced subtask";
  const bool present = world.contains(tree.end.target);
  if (exists != present) return "end condition does not hold after the chain";
  return {};
}

}  // namespace tree_oracle
