// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Renders one synthetic scene's camera sweep to PNG files.
// Usage: demo_render_orbit [out_dir] [seed] [frames]

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "latentview/synthetic.hpp"

using namespace latentview;

int main(int argc, char** argv) {
  const std::string out = argc > 1 ? argv[1] : "orbit";
  const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 3;
  const int frames = argc > 3 ? std::atoi(argv[3]) : 8;

  const SyntheticSpec spec = SyntheticSpec::random(seed);
  const RenderedScene scene = generate_synthetic_scene(spec, frames, seed);

  std::filesystem::create_directories(out);
  for (int k = 0; k < frames; ++k) {
    const std::string path = out + "/" + frame_file_name(k + 1);
    write_png(path, scene.images[static_cast<std::size_t>(k)]);
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}
