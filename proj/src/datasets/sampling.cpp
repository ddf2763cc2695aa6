#include <stdexcept>

#include "pdiff/datasets.hpp"

namespace pdiff {

Trajectory sample_prompt(std::span<const Trajectory> dataset, std::size_t len, Rng& rng) {
  if (dataset.empty()) throw std::invalid_argument("sample_prompt: empty dataset");
  const Trajectory& traj = dataset[uniform_index(rng, dataset.size())];
  if (len > traj.length()) {
    throw std::invalid_argument("sample_prompt: window of " + std::to_string(len) + " steps exceeds trajectory of " +
                                std::to_string(traj.length()));
  }
  const std::size_t start = uniform_index(rng, traj.length() - len + 1);
  return traj.window(start, len);
}

std::vector<Trajectory> sample_history_batch(std::span<const Trajectory> dataset, std::size_t len, std::size_t batch,
                                             Rng& rng) {
  std::vector<Trajectory> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) out.push_back(sample_prompt(dataset, len, rng));
  return out;
}

}  // namespace pdiff
