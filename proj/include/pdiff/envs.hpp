#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pdiff/rng.hpp"

namespace pdiff {

/// Point-mass task families: signed 1-D direction, target speed along x, and
/// 2-D heading.
enum class Family { Dir1d, Vel, Dir2d };
enum class Tier { Expert, Medium, Random };

std::string to_string(Family f);
std::string to_string(Tier t);
Family parse_family(const std::string& s);
Tier parse_tier(const std::string& s);

using Vec2 = std::array<double, 2>;

inline constexpr int kHorizon = 50;
inline constexpr double kVMax = 2.0;
inline constexpr double kDt = 0.1;
inline constexpr double kDamping = 0.9;
inline constexpr std::size_t kStateDim = 2;
inline constexpr std::size_t kActionDim = 2;

struct TaskSpec {
  Family family;
  std::size_t index;
  double goal;
};

std::size_t task_count(Family f);
TaskSpec make_task(Family f, std::size_t index);

struct EnvState {
  Vec2 position{};
  Vec2 velocity{};
  int t = 0;
};

struct StepResult {
  EnvState state;
  double reward;
};

EnvState reset(const TaskSpec& task, std::uint64_t seed);
/// Damped double integrator. Actions are clamped to [-1, 1] per component.
StepResult step(const TaskSpec& task, const EnvState& state, Vec2 action);
double reward_for(const TaskSpec& task, const Vec2& velocity);

/// The agent's observation. The goal is never observable.
Vec2 observe(const EnvState& state);

Vec2 scripted_policy(const TaskSpec& task, Tier tier, const EnvState& state, Rng& rng);

struct TaskSplit {
  Family family;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  bool ood = false;
};

TaskSplit default_split(Family f);
/// dir-2d split whose test headings lie outside the arc covered by training.
TaskSplit ood_split();

}  // namespace pdiff
