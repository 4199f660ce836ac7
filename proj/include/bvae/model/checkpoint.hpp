#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bvae/io/binary.hpp"
#include "bvae/model/vae.hpp"

namespace bvae {

// BVAE checkpoint, little endian:
//   "BVAE" | version u32
//   config: n u32 | m u32 | beta f64 | normalized u8 | optimizer u8 | seed u64
//           | encoder activation u8 | decoder activation u8 | learning rate f64
//           | batch u32 | encoder hidden layer count u32
//   layer count u32 (encoder hidden + decoder layers), per layer:
//           rows u32 | cols u32 | rows*cols weight f32 | cols bias f32
//   latent head: rows u32 | cols u32 | weight f32 | bias f32
//   optimizer block: has_state u8, then byte length u64 and
//           steps u64 | tensor count u32 | per tensor: which u8 (0 first
//           moment, 1 second) | index u32 | rows u32 | cols u32 | f32 data

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_matrix(std::ostream& os, const Matrixf& m) {
  io::write_le_array(os, m.data(), m.size());
}

inline void write_layer(std::ostream& os, const Matrixf& w, const Matrixf& b) {
  io::write_le<std::uint32_t>(os, std::uint32_t(w.rows()));
  io::write_le<std::uint32_t>(os, std::uint32_t(w.cols()));
  write_matrix(os, w);
  write_matrix(os, b);
}

inline void read_layer(std::istream& is, Matrixf& w, Matrixf& b) {
  const auto rows = io::read_le<std::uint32_t>(is);
  const auto cols = io::read_le<std::uint32_t>(is);
  if (rows != w.rows() || cols != w.cols()) {
    throw DataError("checkpoint: layer shape " + shape_string(rows, cols) + " does not match config " +
                    shape_string(w.rows(), w.cols()));
  }
  io::read_le_array(is, w.data(), w.size());
  io::read_le_array(is, b.data(), b.size());
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const VaeModel& model, bool with_optimizer = true) {
  const auto& c = model.config();
  io::write_magic(os, "BVAE");
  io::write_le<std::uint32_t>(os, kCheckpointVersion);
  io::write_le<std::uint32_t>(os, std::uint32_t(c.input_size));
  io::write_le<std::uint32_t>(os, std::uint32_t(c.latent_size));
  io::write_le<double>(os, c.beta);
  io::write_le<std::uint8_t>(os, c.normalized_beta ? 1 : 0);
  io::write_le<std::uint8_t>(os, std::uint8_t(c.optimizer));
  io::write_le<std::uint64_t>(os, c.seed);
  io::write_le<std::uint8_t>(os, std::uint8_t(c.encoder_activation));
  io::write_le<std::uint8_t>(os, std::uint8_t(c.decoder_activation));
  io::write_le<double>(os, c.learning_rate);
  io::write_le<std::uint32_t>(os, std::uint32_t(c.batch_size));
  io::write_le<std::uint32_t>(os, std::uint32_t(c.encoder_hidden.size()));

  const std::size_t head = model.head_layer();
  io::write_le<std::uint32_t>(os, std::uint32_t(model.layer_count() - 1));
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    if (l != head) detail::write_layer(os, model.weight(l), model.bias(l));
  }
  detail::write_layer(os, model.weight(head), model.bias(head));

  const auto& opt = model.optimizer();
  const bool has_state = with_optimizer && opt.step_count() > 0;
  io::write_le<std::uint8_t>(os, has_state ? 1 : 0);
  if (!has_state) return;
  std::ostringstream block(std::ios::binary);
  io::write_le<std::uint64_t>(block, opt.step_count());
  io::write_le<std::uint32_t>(block, std::uint32_t(opt.first_moments().size() + opt.second_moments().size()));
  const auto put = [&](std::uint8_t which, const std::vector<Matrixf>& ms) {
    for (std::size_t i = 0; i < ms.size(); ++i) {
      io::write_le<std::uint8_t>(block, which);
      io::write_le<std::uint32_t>(block, std::uint32_t(i));
      io::write_le<std::uint32_t>(block, std::uint32_t(ms[i].rows()));
      io::write_le<std::uint32_t>(block, std::uint32_t(ms[i].cols()));
      detail::write_matrix(block, ms[i]);
    }
  };
  put(0, opt.first_moments());
  put(1, opt.second_moments());
  const std::string bytes = block.str();
  io::write_le<std::uint64_t>(os, bytes.size());
  os.write(bytes.data(), std::streamsize(bytes.size()));
}

/// Restores a model. Hidden widths come from the stored layer shapes.
inline VaeModel load_checkpoint(std::istream& is) {
  io::expect_magic(is, "BVAE", "checkpoint");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  VaeConfig c;
  c.input_size = io::read_le<std::uint32_t>(is);
  c.latent_size = io::read_le<std::uint32_t>(is);
  c.beta = io::read_le<double>(is);
  c.normalized_beta = io::read_le<std::uint8_t>(is) != 0;
  const auto opt_kind = io::read_le<std::uint8_t>(is);
  if (opt_kind > 2) throw DataError("checkpoint: unknown optimizer");
  c.optimizer = OptimizerKind(opt_kind);
  c.seed = io::read_le<std::uint64_t>(is);
  const auto enc_act = io::read_le<std::uint8_t>(is);
  const auto dec_act = io::read_le<std::uint8_t>(is);
  if (enc_act > 3 || dec_act > 3) throw DataError("checkpoint: unknown activation");
  c.encoder_activation = Activation(enc_act);
  c.decoder_activation = Activation(dec_act);
  c.learning_rate = io::read_le<double>(is);
  c.batch_size = io::read_le<std::uint32_t>(is);
  const auto enc_layers = io::read_le<std::uint32_t>(is);
  const auto layers = io::read_le<std::uint32_t>(is);
  if (enc_layers >= layers + 1 || layers > 64) throw DataError("checkpoint: inconsistent layer counts");

  // Read raw layers first; widths determine the config.
  struct Raw {
    Matrixf w, b;
  };
  std::vector<Raw> raw;
  const auto read_raw = [&]() {
    const auto rows = io::read_le<std::uint32_t>(is);
    const auto cols = io::read_le<std::uint32_t>(is);
    if (std::uint64_t(rows) * cols > (std::uint64_t(1) << 32)) throw DataError("checkpoint: layer too large");
    Raw r{Matrixf(rows, cols), Matrixf(1, cols)};
    io::read_le_array(is, r.w.data(), r.w.size());
    io::read_le_array(is, r.b.data(), r.b.size());
    return r;
  };
  for (std::uint32_t l = 0; l < layers; ++l) raw.push_back(read_raw());
  Raw head = read_raw();

  c.encoder_hidden.clear();
  c.decoder_hidden.clear();
  for (std::uint32_t l = 0; l < enc_layers; ++l) c.encoder_hidden.push_back(raw[l].w.cols());
  for (std::uint32_t l = enc_layers; l + 1 < layers; ++l) c.decoder_hidden.push_back(raw[l].w.cols());
  VaeModel model(c);

  auto& params = model.parameters();
  std::size_t next = 0;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    Raw& r = (l == model.head_layer()) ? head : raw[next++];
    if (!r.w.same_shape(params[2 * l].value) || !r.b.same_shape(params[2 * l + 1].value)) {
      throw DataError("checkpoint: layer " + std::to_string(l) + " shape mismatch");
    }
    params[2 * l].value = std::move(r.w);
    params[2 * l + 1].value = std::move(r.b);
  }

  if (io::read_le<std::uint8_t>(is) != 0) {
    const auto len = io::read_le<std::uint64_t>(is);
    (void)len;
    const auto steps = io::read_le<std::uint64_t>(is);
    const auto count = io::read_le<std::uint32_t>(is);
    std::vector<Matrixf> first, second;
    for (std::uint32_t k = 0; k < count; ++k) {
      const auto which = io::read_le<std::uint8_t>(is);
      const auto index = io::read_le<std::uint32_t>(is);
      const auto rows = io::read_le<std::uint32_t>(is);
      const auto cols = io::read_le<std::uint32_t>(is);
      if (index >= params.size() || rows != params[index].value.rows() || cols != params[index].value.cols()) {
        throw DataError("checkpoint: optimizer state does not match parameters");
      }
      Matrixf m(rows, cols);
      io::read_le_array(is, m.data(), m.size());
      (which == 0 ? first : second).push_back(std::move(m));
    }
    model.optimizer().restore(steps, std::move(first), std::move(second));
  }
  return model;
}

inline void save_checkpoint(const std::filesystem::path& path, const VaeModel& model, bool with_optimizer = true) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + tmp + " for writing");
    save_checkpoint(os, model, with_optimizer);
    if (!os) throw DataError("checkpoint write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline VaeModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  return load_checkpoint(is);
}

}  // namespace bvae
