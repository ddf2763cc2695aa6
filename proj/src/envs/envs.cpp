#include "pdiff/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pdiff {

std::string to_string(Family f) {
  switch (f) {
    case Family::Dir1d: return "dir-1d";
    case Family::Vel: return "vel";
    case Family::Dir2d: return "dir-2d";
  }
  throw std::invalid_argument("unknown family");
}

std::string to_string(Tier t) {
  switch (t) {
    case Tier::Expert: return "expert";
    case Tier::Medium: return "medium";
    case Tier::Random: return "random";
  }
  throw std::invalid_argument("unknown tier");
}

Family parse_family(const std::string& s) {
  if (s == "dir-1d") return Family::Dir1d;
  if (s == "vel") return Family::Vel;
  if (s == "dir-2d") return Family::Dir2d;
  throw std::invalid_argument("unknown family '" + s + "' (expected dir-1d, vel or dir-2d)");
}

Tier parse_tier(const std::string& s) {
  if (s == "expert") return Tier::Expert;
  if (s == "medium") return Tier::Medium;
  if (s == "random") return Tier::Random;
  throw std::invalid_argument("unknown tier '" + s + "' (expected expert, medium or random)");
}

std::size_t task_count(Family f) {
  switch (f) {
    case Family::Dir1d: return 2;
    case Family::Vel: return 40;
    case Family::Dir2d: return 50;
  }
  throw std::invalid_argument("unknown family");
}

TaskSpec make_task(Family f, std::size_t index) {
  if (index >= task_count(f)) {
    throw std::out_of_range("task index " + std::to_string(index) + " out of range for " + to_string(f) + " (" +
                            std::to_string(task_count(f)) + " tasks)");
  }
  const double i = static_cast<double>(index);
  switch (f) {
    case Family::Dir1d: return {f, index, index == 0 ? 1.0 : -1.0};
    case Family::Vel: return {f, index, 3.0 * i / 39.0};
    case Family::Dir2d: return {f, index, 2.0 * std::numbers::pi * i / 50.0};
  }
  throw std::invalid_argument("unknown family");
}

EnvState reset(const TaskSpec&, std::uint64_t seed) {
  Rng rng(seed);
  EnvState s;
  s.position = {uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1)};
  return s;
}

double reward_for(const TaskSpec& task, const Vec2& v) {
  switch (task.family) {
    case Family::Dir1d: return task.goal * v[0];
    case Family::Vel: return -(v[0] - task.goal) * (v[0] - task.goal);
    case Family::Dir2d: return v[0] * std::cos(task.goal) + v[1] * std::sin(task.goal);
  }
  throw std::invalid_argument("unknown family");
}

StepResult step(const TaskSpec& task, const EnvState& state, Vec2 action) {
  if (state.t >= kHorizon) throw std::logic_error("step() called on a finished episode");
  EnvState next = state;
  for (std::size_t i = 0; i < 2; ++i) {
    const double a = std::clamp(action[i], -1.0, 1.0);
    next.velocity[i] = std::clamp(kDamping * state.velocity[i] + kDt * a, -kVMax, kVMax);
    next.position[i] = state.position[i] + kDt * next.velocity[i];
  }
  next.t = state.t + 1;
  return {next, reward_for(task, next.velocity)};
}

Vec2 observe(const EnvState& state) { return state.velocity; }

namespace {

Vec2 expert_action(const TaskSpec& task, const EnvState& state) {
  switch (task.family) {
    case Family::Dir1d: return {task.goal, 0.0};
    case Family::Vel:
      return {std::clamp(5.0 * (task.goal - state.velocity[0]), -1.0, 1.0),
              std::clamp(-5.0 * state.velocity[1], -1.0, 1.0)};
    case Family::Dir2d: return {std::cos(task.goal), std::sin(task.goal)};
  }
  throw std::invalid_argument("unknown family");
}

Vec2 random_action(Rng& rng) { return {uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)}; }

}  // namespace

Vec2 scripted_policy(const TaskSpec& task, Tier tier, const EnvState& state, Rng& rng) {
  switch (tier) {
    case Tier::Expert: return expert_action(task, state);
    case Tier::Medium: {
      Vec2 a = expert_action(task, state);
      for (auto& c : a) c = std::clamp(c + 0.5 * normal(rng), -1.0, 1.0);
      if (uniform(rng) < 0.3) a = random_action(rng);
      return a;
    }
    case Tier::Random: return random_action(rng);
  }
  throw std::invalid_argument("unknown tier");
}

TaskSplit default_split(Family f) {
  switch (f) {
    case Family::Dir1d: return {f, {0, 1}, {0, 1}, false};
    case Family::Vel: {
      const std::vector<std::size_t> test{2, 7, 15, 23, 26};
      TaskSplit s{f, {}, test, false};
      for (std::size_t i = 0; i < 40; ++i)
        if (std::find(test.begin(), test.end(), i) == test.end()) s.train.push_back(i);
      return s;
    }
    case Family::Dir2d: {
      const std::vector<std::size_t> test{6, 17, 23, 30, 41};
      TaskSplit s{f, {}, test, false};
      for (std::size_t i = 0; i < 50; ++i)
        if (std::find(test.begin(), test.end(), i) == test.end()) s.train.push_back(i);
      return s;
    }
  }
  throw std::invalid_argument("unknown family");
}

TaskSplit ood_split() {
  // Training headings span [0.88, 3.52] rad; two test headings fall below the
  // arc and one above it.
  return {Family::Dir2d, {7, 10, 13, 16, 19, 22, 25, 28}, {1, 4, 32}, true};
}

}  // namespace pdiff
