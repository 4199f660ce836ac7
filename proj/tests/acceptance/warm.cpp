// Trains (or resumes) every cached acceptance model, in order.
#include <cstdio>

#include "model_zoo.hpp"

int main(int argc, char** argv) {
  const std::filesystem::path cache = argc > 1 ? argv[1] : BVAE_ACCEPTANCE_CACHE;
  for (const auto& spec : zoo::all_models()) {
    if (argc > 2) {
      bool wanted = false;
      for (int i = 2; i < argc; ++i) wanted |= spec.name == argv[i];
      if (!wanted) continue;
    }
    std::printf("%s (%s)\n", spec.name.c_str(), spec.key().c_str());
    std::fflush(stdout);
    const auto t = zoo::ensure_model(spec, cache);
    std::printf("%s done: %zu steps, %.0f s%s\n", spec.name.c_str(), t.steps, t.train_seconds,
                t.from_cache ? " (cached)" : "");
    std::fflush(stdout);
  }
}
