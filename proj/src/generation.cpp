#include "xtra/generation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "xtra/error.hpp"

namespace xtra {

TeacherForcedResult teacher_forced_predict(const ModelConfig& cfg,
                                           const ModelParameters& params,
                                           const Tensor& image,
                                           const AttentionMask& mask) {
  const BlockLayout layout = cfg.layout();
  const std::size_t K = layout.blocks;
  const std::size_t D = layout.block_pixel_count();

  Tensor batch = Tensor::zeros({1, layout.channels, layout.image_h, layout.image_w});
  std::copy(image.data.begin(), image.data.end(), batch.data.begin());
  const Tensor pred = forward_predictions(cfg, params, batch, mask);

  const Tensor tokens = patchify(image, layout);
  Tensor tokens3 = Tensor::zeros({1, layout.tokens, layout.patch_dim()});
  std::copy(tokens.data.begin(), tokens.data.end(), tokens3.data.begin());
  const BlockTargets stats = normalize_blocks(block_pixels(tokens3, layout), 1e-6f);

  TeacherForcedResult out;
  out.blocks = Tensor::zeros({K, D});
  out.mean = Tensor::zeros({K});
  out.var = Tensor::zeros({K});
  out.eps = stats.eps;
  for (std::size_t r = 0; r < K; ++r) {
    out.mean.data[r] = stats.mean.data[r];
    out.var.data[r] = stats.var.data[r];
  }
  const std::size_t M = cfg.num_predicted_blocks;
  for (std::size_t r = 1; r < K; ++r) {
    // slot (context rank r-1, m=0)
    const float* src = pred.data.data() + ((r - 1) * M + 0) * D;
    std::copy(src, src + D, out.blocks.data.data() + r * D);
  }
  return out;
}

Tensor reconstruct_image(const ModelConfig& cfg, const TeacherForcedResult& pred,
                         const Tensor& image) {
  const BlockLayout layout = cfg.layout();
  const std::size_t K = layout.blocks;
  const std::size_t D = layout.block_pixel_count();

  Tensor tokens3 = Tensor::zeros({1, layout.tokens, layout.patch_dim()});
  {
    const Tensor tokens = patchify(image, layout);
    std::copy(tokens.data.begin(), tokens.data.end(), tokens3.data.begin());
  }
  const Tensor truth = block_pixels(tokens3, layout);  // [1 x K x D]

  Tensor blocks = Tensor::zeros({K, D});
  for (std::size_t r = 0; r < K; ++r) {
    if (r == 0) {
      std::copy(truth.data.begin(), truth.data.begin() + D, blocks.data.begin());
      continue;
    }
    Tensor row({D}, std::vector<float>(pred.blocks.data.begin() + r * D,
                                       pred.blocks.data.begin() + (r + 1) * D));
    Tensor denorm = denormalize_block(row, pred.mean.data[r], pred.var.data[r],
                                      pred.eps);
    std::copy(denorm.data.begin(), denorm.data.end(),
              blocks.data.begin() + r * D);
  }
  return unpatchify(scatter_block_pixels(blocks, layout), layout);
}

std::string encode_ppm(const Tensor& image) {
  if (image.ndim() != 3 || (image.shape[0] != 3 && image.shape[0] != 1)) {
    throw ShapeError("encode_ppm: need [1 or 3 x H x W], got " +
                     image.shape_string());
  }
  const std::size_t C = image.shape[0], H = image.shape[1], W = image.shape[2];
  std::ostringstream os;
  os << "P6\n" << W << ' ' << H << "\n255\n";
  std::string body;
  body.reserve(3 * H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t ch = C == 3 ? c : 0;
        float v = image.data[(ch * H + y) * W + x];
        v = std::min(1.0f, std::max(0.0f, v));
        body.push_back(static_cast<char>(std::lround(v * 255.0f)));
      }
    }
  }
  return os.str() + body;
}

Tensor decode_ppm(const std::string& bytes) {
  std::istringstream is(bytes);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w == 0 || h == 0) {
    throw FormatError("ppm: unsupported header");
  }
  is.get();  // single whitespace after maxval
  const std::size_t offset = static_cast<std::size_t>(is.tellg());
  if (bytes.size() < offset + 3 * w * h) {
    throw FormatError("ppm: truncated pixel data");
  }
  Tensor out = Tensor::zeros({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const auto byte = static_cast<std::uint8_t>(
            bytes[offset + (y * w + x) * 3 + c]);
        out.data[(c * h + y) * w + x] = static_cast<float>(byte) / 255.0f;
      }
    }
  }
  return out;
}

void render_grid(const std::vector<Tensor>& originals,
                 const std::vector<Tensor>& reconstructions,
                 const std::string& path) {
  if (originals.empty() || originals.size() != reconstructions.size()) {
    throw ContractError("render_grid: need matching non-empty image lists");
  }
  const std::size_t C = originals[0].shape[0];
  const std::size_t H = originals[0].shape[1];
  const std::size_t W = originals[0].shape[2];
  for (const auto& list : {originals, reconstructions}) {
    for (const Tensor& t : list) {
      if (t.shape != originals[0].shape) {
        throw ContractError("render_grid: images must share one shape");
      }
    }
  }
  const std::size_t n = originals.size();
  Tensor canvas = Tensor::zeros({C, n * H, 2 * W});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        float* row = canvas.data.data() + (c * n * H + i * H + y) * 2 * W;
        const float* orig = originals[i].data.data() + (c * H + y) * W;
        const float* rec = reconstructions[i].data.data() + (c * H + y) * W;
        std::copy(orig, orig + W, row);
        std::copy(rec, rec + W, row + W);
      }
    }
  }
  const std::string ppm = encode_ppm(canvas);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("render_grid: cannot open '" + path + "' for writing");
  f.write(ppm.data(), static_cast<std::streamsize>(ppm.size()));
  if (!f) throw FormatError("render_grid: short write to '" + path + "'");
}

}  // namespace xtra
