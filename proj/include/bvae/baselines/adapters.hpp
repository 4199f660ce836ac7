#pragma once

#include <memory>
#include <string>

#include "bvae/baselines/projection.hpp"
#include "bvae/metric/factor_change.hpp"
#include "bvae/model/vae.hpp"

namespace bvae {

enum class RepresentationKind : std::uint8_t { pca, ica, pixels, ground_truth, vae };

inline std::string_view to_string(RepresentationKind k) {
  constexpr std::array<std::string_view, 5> names{"pca", "ica", "pixels", "ground-truth", "vae"};
  return names[std::size_t(k)];
}

inline RepresentationKind representation_from_string(std::string_view s) {
  for (std::size_t i = 0; i < 5; ++i) {
    if (to_string(RepresentationKind(i)) == s) return RepresentationKind(i);
  }
  if (s == "ground_truth") return RepresentationKind::ground_truth;
  throw ContractError("unknown representation '" + std::string(s) + "'");
}

inline Representation pixels_representation(std::size_t image_size = 4096) {
  return {"pixels", image_size, [image_size](std::span<const FactorCoordinates> c, std::span<const std::uint8_t> px) {
            if (px.size() != c.size() * image_size) throw ShapeError("pixels: buffer does not match image count");
            Matrixd out(c.size(), image_size);
            for (std::size_t i = 0; i < px.size(); ++i) out[i] = px[i];
            return out;
          }};
}

/// The generating values (scale, rotation, x, y).
inline Representation ground_truth_representation() {
  return {"ground-truth", 4, [](std::span<const FactorCoordinates> c, std::span<const std::uint8_t>) {
            Matrixd out(c.size(), 4);
            for (std::size_t i = 0; i < c.size(); ++i) {
              const auto v = c[i].values();
              for (std::size_t j = 0; j < 4; ++j) out(i, j) = v[j];
            }
            return out;
          }};
}

inline Representation projection_representation(std::string name, std::shared_ptr<const LinearProjection> p) {
  if (!p || !p->fitted()) throw ContractError(name + ": projection is not fitted");
  const std::size_t dim = p->outputs();
  return {std::move(name), dim, [p](std::span<const FactorCoordinates>, std::span<const std::uint8_t> px) {
            return p->project(px);
          }};
}

/// Posterior means of a VAE encoder.
inline Representation vae_representation(std::shared_ptr<const VaeModel> model, std::string name = "vae") {
  if (!model) throw ContractError("vae representation needs a model");
  const std::size_t dim = model->config().latent_size;
  return {std::move(name), dim, [model](std::span<const FactorCoordinates>, std::span<const std::uint8_t> px) {
            const auto enc = encode_pixels(*model, px);
            Matrixd out(enc.mu.rows(), enc.mu.cols());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = enc.mu[i];
            return out;
          }};
}

}  // namespace bvae
