#include "xtra/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>

#include "xtra/error.hpp"

namespace xtra {

namespace {

constexpr char kMagic[4] = {'X', 'I', 'D', '1'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size()) {
      throw FormatError("xid: truncated " + std::string(what) + " at byte offset " +
                        std::to_string(pos));
    }
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
};

// hue in [0,1) -> rgb in [0,1], s/v fixed by caller
void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(hh);
  const double f = hh - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i % 6) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

}  // namespace

void save_xid(const Dataset& dataset, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(dataset.size()));
  put_u16(out, static_cast<std::uint16_t>(dataset.channels));
  put_u16(out, static_cast<std::uint16_t>(dataset.height));
  put_u16(out, static_cast<std::uint16_t>(dataset.width));
  put_u16(out, static_cast<std::uint16_t>(dataset.num_classes));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    put_u16(out, dataset.labels[i]);
    out.append(reinterpret_cast<const char*>(dataset.images[i].data()),
               dataset.images[i].size());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("xid: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("xid: short write to '" + path + "'");
}

Dataset load_xid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("xid: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  Reader r{buf};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError("xid: bad magic at byte offset 0");
  }
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != 1) {
    throw FormatError("xid: unsupported version " + std::to_string(version) +
                      " at byte offset 4");
  }
  const std::uint32_t count = r.u32("count");
  Dataset d;
  d.channels = r.u16("channels");
  d.height = r.u16("height");
  d.width = r.u16("width");
  d.num_classes = r.u16("num_classes");
  if (d.channels == 0 || d.height == 0 || d.width == 0) {
    throw FormatError("xid: zero image dimension in header");
  }
  const std::size_t n = d.pixels_per_image();
  d.images.reserve(count);
  d.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t label = r.u16("record label");
    if (label >= d.num_classes) {
      throw FormatError("xid: label " + std::to_string(label) +
                        " out of range at byte offset " + std::to_string(r.pos - 2));
    }
    r.need(n, "record pixels");
    d.images.emplace_back(buf.begin() + static_cast<std::ptrdiff_t>(r.pos),
                          buf.begin() + static_cast<std::ptrdiff_t>(r.pos + n));
    r.pos += n;
    d.labels.push_back(label);
  }
  if (r.pos != buf.size()) {
    throw FormatError("xid: " + std::to_string(buf.size() - r.pos) +
                      " trailing bytes at byte offset " + std::to_string(r.pos));
  }
  return d;
}

Dataset synth_dataset(std::size_t classes, std::size_t count, std::size_t size,
                      std::uint64_t seed, std::size_t channels) {
  if (classes < 2) throw ContractError("synth_dataset: need at least 2 classes");
  if (channels == 0) throw ContractError("synth_dataset: need channels >= 1");
  Dataset d;
  d.channels = channels;
  d.height = size;
  d.width = size;
  d.num_classes = classes;
  d.images.reserve(count);
  d.labels.reserve(count);

  const double cx = (static_cast<double>(size) - 1.0) / 2.0;
  const double half = std::max(1.0, static_cast<double>(size) / 2.0);

  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = derive_rng(seed, 0x5f3ull, i);
    const std::size_t cls = i % classes;
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(cls) /
                         static_cast<double>(classes);
    double base[3];
    hsv_to_rgb(static_cast<double>(cls) / static_cast<double>(classes) + 0.03,
               0.45, 0.55, base);
    const double brightness = rng.uniform(0.85, 1.15);
    const double grad_amp = rng.uniform(0.22, 0.34);

    // Nuisance: two low-frequency color waves with random direction/phase.
    struct Wave { double fx, fy, phase, amp, col[3]; };
    Wave waves[2];
    for (Wave& w : waves) {
      const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double freq = rng.uniform(0.6, 1.6);
      w.fx = std::cos(ang) * freq;
      w.fy = std::sin(ang) * freq;
      w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      w.amp = rng.uniform(0.05, 0.16);
      for (double& c : w.col) c = rng.uniform(-1.0, 1.0);
    }
    const double noise_amp = 0.05;

    std::vector<std::uint8_t> img(d.pixels_per_image());
    std::vector<double> vals(d.pixels_per_image());
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double gx = (static_cast<double>(x) - cx) / half;
        const double gy = (static_cast<double>(y) - cx) / half;
        const double ramp = gx * std::cos(theta) + gy * std::sin(theta);
        double wave[3] = {0, 0, 0};
        for (const Wave& w : waves) {
          const double s = std::sin(2.0 * std::numbers::pi *
                                        (w.fx * gx + w.fy * gy) / 2.0 +
                                    w.phase) *
                           w.amp;
          for (int c = 0; c < 3; ++c) wave[c] += s * w.col[c];
        }
        for (std::size_t c = 0; c < channels; ++c) {
          const double b = base[c % 3] * brightness;
          const double v = b + grad_amp * ramp + wave[c % 3] +
                           noise_amp * rng.normal();
          vals[(c * size + y) * size + x] = v;
        }
      }
    }
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double v = std::clamp(vals[j], 0.0, 1.0);
      img[j] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    d.images.push_back(std::move(img));
    d.labels.push_back(static_cast<std::uint16_t>(cls));
  }
  return d;
}

Tensor image_to_f32(const Dataset& dataset, std::size_t index) {
  const auto& src = dataset.images.at(index);
  Tensor out = Tensor::zeros({dataset.channels, dataset.height, dataset.width});
  for (std::size_t i = 0; i < src.size(); ++i) {
    out.data[i] = static_cast<float>(src[i]) * (1.0f / 255.0f);
  }
  return out;
}

Tensor bilinear_resize(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.ndim() != 3) throw ShapeError("bilinear_resize: need [C x H x W]");
  const std::size_t C = image.shape[0], H = image.shape[1], W = image.shape[2];
  if (out_h == H && out_w == W) return image;
  Tensor out = Tensor::zeros({C, out_h, out_w});
  const double sy = static_cast<double>(H) / static_cast<double>(out_h);
  const double sx = static_cast<double>(W) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, H - 1);
    const float ty = static_cast<float>(fy - static_cast<double>(y0));
    for (std::size_t x = 0; x < out_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, W - 1);
      const float tx = static_cast<float>(fx - static_cast<double>(x0));
      for (std::size_t c = 0; c < C; ++c) {
        const float v00 = image.data[(c * H + y0) * W + x0];
        const float v01 = image.data[(c * H + y0) * W + x1];
        const float v10 = image.data[(c * H + y1) * W + x0];
        const float v11 = image.data[(c * H + y1) * W + x1];
        // lerp form keeps constants exact
        const float top = v00 + tx * (v01 - v00);
        const float bot = v10 + tx * (v11 - v10);
        out.data[(c * out_h + y) * out_w + x] = top + ty * (bot - top);
      }
    }
  }
  return out;
}

namespace {

Tensor crop(const Tensor& image, std::size_t y0, std::size_t x0, std::size_t h,
            std::size_t w) {
  const std::size_t C = image.shape[0], H = image.shape[1], W = image.shape[2];
  Tensor out = Tensor::zeros({C, h, w});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      const float* src = image.data.data() + (c * H + y0 + y) * W + x0;
      std::copy(src, src + w, out.data.data() + (c * h + y) * w);
    }
  }
  return out;
}

}  // namespace

Tensor random_resized_crop(const Tensor& image, double scale_lo, double scale_hi,
                           double ratio_lo, double ratio_hi, std::size_t out_size,
                           Rng& rng) {
  if (image.ndim() != 3) throw ShapeError("random_resized_crop: need [C x H x W]");
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi && scale_hi <= 1.0)) {
    throw ContractError("random_resized_crop: scale must be within (0, 1]");
  }
  if (!(ratio_lo > 0.0 && ratio_lo <= ratio_hi)) {
    throw ContractError("random_resized_crop: ratio must be positive");
  }
  const std::size_t H = image.shape[1], W = image.shape[2];
  const double area = static_cast<double>(H) * static_cast<double>(W);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = rng.uniform(scale_lo, scale_hi) * area;
    const double aspect = std::exp(rng.uniform(std::log(ratio_lo), std::log(ratio_hi)));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * aspect)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / aspect)));
    if (w >= 1 && h >= 1 && w <= W && h <= H) {
      const std::size_t y0 = rng.index(H - h + 1);
      const std::size_t x0 = rng.index(W - w + 1);
      return bilinear_resize(crop(image, y0, x0, h, w), out_size, out_size);
    }
  }
  const std::size_t side = std::min(H, W);
  const std::size_t y0 = (H - side) / 2;
  const std::size_t x0 = (W - side) / 2;
  return bilinear_resize(crop(image, y0, x0, side, side), out_size, out_size);
}

Tensor horizontal_flip(const Tensor& image, double p, Rng& rng) {
  if (image.ndim() != 3) throw ShapeError("horizontal_flip: need [C x H x W]");
  if (p < 0.0 || p > 1.0) throw ContractError("horizontal_flip: p must be in [0,1]");
  if (p == 0.0 || rng.uniform01() >= p) return image;
  const std::size_t C = image.shape[0], H = image.shape[1], W = image.shape[2];
  Tensor out = Tensor::zeros(image.shape);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      const float* src = image.data.data() + (c * H + y) * W;
      float* dst = out.data.data() + (c * H + y) * W;
      for (std::size_t x = 0; x < W; ++x) dst[x] = src[W - 1 - x];
    }
  }
  return out;
}

std::vector<std::size_t> epoch_permutation(std::size_t count, std::uint64_t seed,
                                           std::size_t epoch) {
  Rng rng = derive_rng(seed, 0xe90cull, epoch);
  return random_permutation(count, rng);
}

std::size_t batches_per_epoch(std::size_t count, std::size_t batch_size,
                              bool drop_last) {
  if (batch_size < 1) throw ContractError("batches_per_epoch: batch_size >= 1");
  if (drop_last) return count / batch_size;
  return (count + batch_size - 1) / batch_size;
}

Batch make_batch(const Dataset& dataset, std::size_t batch_size,
                 std::uint64_t seed, std::size_t epoch, std::size_t batch_index,
                 bool drop_last, const AugmentConfig& augment,
                 std::size_t out_size) {
  const std::size_t nb = batches_per_epoch(dataset.size(), batch_size, drop_last);
  if (batch_index >= nb) throw ContractError("make_batch: batch index out of range");
  const auto perm = epoch_permutation(dataset.size(), seed, epoch);
  const std::size_t begin = batch_index * batch_size;
  const std::size_t end = std::min(begin + batch_size, dataset.size());
  const std::size_t B = end - begin;
  Rng rng = derive_rng(seed, 0xa46ull, epoch, batch_index);

  Batch batch;
  batch.pixels = Tensor::zeros({B, dataset.channels, out_size, out_size});
  batch.labels.resize(B);
  const std::size_t per = dataset.channels * out_size * out_size;
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t idx = perm[begin + i];
    Tensor img = image_to_f32(dataset, idx);
    if (augment.enabled) {
      img = random_resized_crop(img, augment.scale_lo, augment.scale_hi,
                                augment.ratio_lo, augment.ratio_hi, out_size, rng);
      img = horizontal_flip(img, augment.flip_p, rng);
    } else {
      img = bilinear_resize(img, out_size, out_size);
    }
    std::copy(img.data.begin(), img.data.end(),
              batch.pixels.data.begin() + i * per);
    batch.labels[i] = dataset.labels[idx];
  }
  return batch;
}

std::vector<Batch> make_epoch_batches(const Dataset& dataset,
                                      std::size_t batch_size, std::uint64_t seed,
                                      std::size_t epoch, bool drop_last,
                                      const AugmentConfig& augment,
                                      std::size_t out_size) {
  const std::size_t nb = batches_per_epoch(dataset.size(), batch_size, drop_last);
  std::vector<Batch> out;
  out.reserve(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    out.push_back(make_batch(dataset, batch_size, seed, epoch, i, drop_last,
                             augment, out_size));
  }
  return out;
}

}  // namespace xtra
