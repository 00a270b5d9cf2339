#include "mmfusion/verify.hpp"

#include "mmfusion/losses.hpp"

namespace mmf {

GradcheckReport topology_gradcheck(Topology topology, Task task, std::uint64_t seed,
                                   const ToyGradcheckSetup& setup) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.face_in = setup.face_in;
  cfg.pose_in = setup.pose_in;
  const auto model = FusionModel<double>::build(topology, task, cfg, seed);

  Rng rng(seed ^ 0x5eedull);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto random_input = [&](std::size_t cols) {
    std::vector<double> v(setup.frames * cols);
    for (auto& x : v) x = unit(rng);
    return Tensor<double>({setup.frames, cols}, std::move(v));
  };
  const auto face = random_input(setup.face_in);
  const auto pose = random_input(setup.pose_in);
  const double label = task == Task::Detection ? 1.0 : 0.3;
  const auto weights = LossWeights::defaults().get(topology);

  std::function<Tensor<double>()> loss = [&] {
    return combined_loss(model.forward(face, pose, {}), label, weights, task);
  };
  return finite_diff_gradcheck<double>(loss, model.parameters(), setup.step, setup.tolerance);
}

}  // namespace mmf
