#include <stdexcept>

#include "pdiff/prompt_dt.hpp"

namespace pdiff {

void PLMConfig::validate() const {
  if (layers == 0 || heads == 0 || width == 0) throw std::invalid_argument("PLMConfig: layers, heads, width must be > 0");
  if (width % heads != 0) {
    throw std::invalid_argument("PLMConfig: width " + std::to_string(width) + " not divisible by heads " +
                                std::to_string(heads));
  }
  if (history_len == 0) throw std::invalid_argument("PLMConfig: history_len must be > 0");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("PLMConfig: dropout must be in [0, 1)");
}

std::vector<Modality> TokenSequence::modalities() const {
  std::vector<Modality> out;
  out.reserve(size());
  for (std::size_t i = 0; i < steps(); ++i) {
    out.push_back(Modality::ReturnToGo);
    out.push_back(Modality::State);
    out.push_back(Modality::Action);
  }
  return out;
}

std::vector<std::size_t> TokenSequence::token_timesteps() const {
  std::vector<std::size_t> out;
  out.reserve(size());
  for (std::size_t t : timesteps) out.insert(out.end(), {t, t, t});
  return out;
}

TokenSequence build_input(const Trajectory& prompt, const Trajectory& history) {
  auto check = [](const Trajectory& t, const char* what) {
    const std::size_t n = t.length();
    if (t.states.size() != n || t.actions.size() != n || t.rtg.size() != n || t.timesteps.size() != n) {
      throw std::invalid_argument(std::string("build_input: ") + what + " fields differ in length");
    }
  };
  check(prompt, "prompt");
  check(history, "history");
  TokenSequence seq;
  seq.prompt_steps = prompt.length();
  seq.history_steps = history.length();
  for (const Trajectory* t : {&prompt, &history}) {
    seq.rtg.insert(seq.rtg.end(), t->rtg.begin(), t->rtg.end());
    seq.states.insert(seq.states.end(), t->states.begin(), t->states.end());
    seq.actions.insert(seq.actions.end(), t->actions.begin(), t->actions.end());
    seq.timesteps.insert(seq.timesteps.end(), t->timesteps.begin(), t->timesteps.end());
  }
  return seq;
}

}  // namespace pdiff
