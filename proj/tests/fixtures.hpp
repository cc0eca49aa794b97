#pragma once

#include <vector>

#include "protoscale/config.hpp"
#include "protoscale/scenegen.hpp"

namespace testutil {

// Small enough for many training steps inside a unit test.
inline protoscale::RunConfig tiny_run_config() {
  protoscale::RunConfig cfg;
  auto& enc = cfg.model.encoder;
  enc.input_size = 32;
  enc.channels = {4, 6, 8};
  enc.dim = 8;
  enc.heads = 2;
  auto& g = cfg.model.grouping;
  g.semantic_prototypes = 4;
  g.auxiliary_prototypes = 2;
  g.instance_prototypes = 3;
  g.dim = 8;
  g.relation_dim = 4;
  cfg.train.steps = 10;
  cfg.train.batch_size = 2;
  cfg.train.checkpoint_every = 5;
  cfg.train.log_every = 5;
  cfg.train.seed = 3;
  cfg.validate();
  return cfg;
}

inline std::vector<protoscale::Image> tiny_images(std::size_t n, std::uint64_t master = 1) {
  protoscale::SceneConfig sc;
  sc.size = 32;
  std::vector<protoscale::Image> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(protoscale::generate_scene(sc, protoscale::scene_seed(master, i)).image);
  return out;
}

}  // namespace testutil
