#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "xtra/cost.hpp"
#include "xtra/data.hpp"
#include "xtra/graph.hpp"
#include "xtra/masking.hpp"
#include "xtra/objective.hpp"
#include "xtra/trainer.hpp"

namespace py = pybind11;
using namespace xtra;

namespace {

TensorD tensor_from_array(const py::array_t<double, py::array::c_style |
                                                        py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(a.shape(i));
  }
  TensorD t = TensorD::zeros(shape);
  std::memcpy(t.data.data(), a.data(), t.numel() * sizeof(double));
  return t;
}

py::array_t<double> array_from_tensor(const TensorD& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), t.data.data(), t.numel() * sizeof(double));
  return out;
}

AttentionMask mask_from_array(
    const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("mask must be a 2-d boolean array");
  AttentionMask m(static_cast<std::size_t>(a.shape(0)),
                  static_cast<std::size_t>(a.shape(1)));
  const bool* data = a.data();
  for (std::size_t i = 0; i < m.allow.size(); ++i) m.allow[i] = data[i] ? 1 : 0;
  return m;
}

py::array_t<bool> array_from_mask(const AttentionMask& m) {
  py::array_t<bool> out({static_cast<py::ssize_t>(m.rows),
                         static_cast<py::ssize_t>(m.cols)});
  bool* data = out.mutable_data();
  for (std::size_t i = 0; i < m.allow.size(); ++i) data[i] = m.allow[i] != 0;
  return out;
}

BlockLayout layout_from_args(std::size_t grid_h, std::size_t grid_w,
                             std::size_t k, const std::string& pattern,
                             std::uint64_t seed) {
  const BlockLayout base = BlockLayout::create(grid_h, grid_w, 1, 1, k);
  return BlockLayout::create(
      grid_h, grid_w, 1, 1, k,
      make_block_order(base.blocks, parse_block_pattern(pattern), seed));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "core operations: masks, numeric kernels, data, cost estimate";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<MaskError>(m, "MaskError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);

  m.def(
      "block_causal_mask",
      [](std::size_t grid_h, std::size_t grid_w, std::size_t k,
         const std::string& pattern, std::uint64_t seed) {
        return array_from_mask(
            build_block_causal_mask(layout_from_args(grid_h, grid_w, k, pattern, seed)));
      },
      py::arg("grid_h"), py::arg("grid_w"), py::arg("block_tokens") = 1,
      py::arg("pattern") = "raster", py::arg("seed") = 0,
      "Boolean [T x T] mask: full attention within a block, causal across block ranks.");

  m.def(
      "make_block_order",
      [](std::size_t blocks, const std::string& pattern, std::uint64_t seed) {
        return make_block_order(blocks, parse_block_pattern(pattern), seed);
      },
      py::arg("blocks"), py::arg("pattern") = "raster", py::arg("seed") = 0);

  m.def(
      "token_to_block",
      [](std::size_t grid_h, std::size_t grid_w, std::size_t k,
         std::size_t token, const std::string& pattern, std::uint64_t seed) {
        return token_to_block(layout_from_args(grid_h, grid_w, k, pattern, seed),
                              token);
      },
      py::arg("grid_h"), py::arg("grid_w"), py::arg("block_tokens"),
      py::arg("token"), py::arg("pattern") = "raster", py::arg("seed") = 0);

  m.def(
      "gelu",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
        return array_from_tensor(gelu(tensor_from_array(x)));
      },
      py::arg("x"), "Elementwise GELU, tanh approximation.");

  m.def(
      "matmul",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
        return array_from_tensor(matmul(tensor_from_array(a), tensor_from_array(b)));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "masked_softmax",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits,
         const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask) {
        return array_from_tensor(
            masked_softmax(tensor_from_array(logits), mask_from_array(mask)));
      },
      py::arg("logits"), py::arg("mask"),
      "Softmax over the last dim; masked entries come out exactly zero.");

  m.def(
      "layer_norm",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& gamma,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& beta,
         double eps) {
        return array_from_tensor(layer_norm(tensor_from_array(x),
                                            tensor_from_array(gamma),
                                            tensor_from_array(beta), eps));
      },
      py::arg("x"), py::arg("gamma"), py::arg("beta"), py::arg("eps") = 1e-6);

  m.def(
      "normalize_blocks",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& raw,
         double eps) {
        const auto t = normalize_blocks(tensor_from_array(raw), eps);
        return py::make_tuple(array_from_tensor(t.values), array_from_tensor(t.mean),
                              array_from_tensor(t.var));
      },
      py::arg("raw"), py::arg("eps") = 1e-6,
      "Per-(image, block) standardization; returns (values, mean, var).");

  m.def(
      "reconstruction_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& raw,
         const std::string& norm, double eps) {
        const auto targets = normalize_blocks(tensor_from_array(raw), eps);
        return reconstruction_loss(tensor_from_array(pred), targets,
                                   parse_loss_norm(norm));
      },
      py::arg("pred"), py::arg("raw_blocks"), py::arg("norm") = "l2",
      py::arg("eps") = 1e-6,
      "Next-block loss of pred [B,K-1,M,D] against raw block pixels [B,K,D].");

  m.def(
      "lr_at",
      [](std::size_t step, std::size_t steps_per_epoch, double peak_lr,
         double min_lr, std::size_t warmup_epochs, std::size_t total_epochs) {
        TrainConfig cfg;
        cfg.peak_lr = peak_lr;
        cfg.min_lr = min_lr;
        cfg.warmup_epochs = warmup_epochs;
        cfg.total_epochs = total_epochs;
        return lr_at(step, steps_per_epoch, cfg);
      },
      py::arg("step"), py::arg("steps_per_epoch"), py::arg("peak_lr") = 1e-3,
      py::arg("min_lr") = 1e-6, py::arg("warmup_epochs") = 2,
      py::arg("total_epochs") = 20);

  m.def(
      "estimate_cost",
      [](double parameters, double samples, double epochs, double views,
         double tokens) {
        return estimate_cost({parameters, samples, epochs, views, tokens});
      },
      py::arg("parameters"), py::arg("samples"), py::arg("epochs"),
      py::arg("views"), py::arg("tokens"),
      "parameters*samples*epochs*views^2*tokens^2 in 1e22 units.");

  m.def(
      "synth_dataset",
      [](std::size_t classes, std::size_t count, std::size_t size,
         std::uint64_t seed, std::size_t channels) {
        const Dataset d = synth_dataset(classes, count, size, seed, channels);
        py::array_t<std::uint8_t> images(
            {static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(channels),
             static_cast<py::ssize_t>(size), static_cast<py::ssize_t>(size)});
        py::array_t<std::uint16_t> labels(static_cast<py::ssize_t>(d.size()));
        for (std::size_t i = 0; i < d.size(); ++i) {
          std::memcpy(images.mutable_data() + i * d.pixels_per_image(),
                      d.images[i].data(), d.pixels_per_image());
          labels.mutable_data()[i] = d.labels[i];
        }
        return py::make_tuple(images, labels);
      },
      py::arg("classes"), py::arg("count"), py::arg("size"), py::arg("seed") = 0,
      py::arg("channels") = 3,
      "Deterministic labeled images; returns (u8 images [N,C,H,W], u16 labels).");

  m.def(
      "save_xid",
      [](const std::string& path,
         const py::array_t<std::uint8_t, py::array::c_style>& images,
         const py::array_t<std::uint16_t, py::array::c_style>& labels,
         std::size_t num_classes) {
        if (images.ndim() != 4) throw ShapeError("images must be [N,C,H,W]");
        Dataset d;
        d.channels = static_cast<std::size_t>(images.shape(1));
        d.height = static_cast<std::size_t>(images.shape(2));
        d.width = static_cast<std::size_t>(images.shape(3));
        d.num_classes = num_classes;
        const std::size_t n = static_cast<std::size_t>(images.shape(0));
        for (std::size_t i = 0; i < n; ++i) {
          d.images.emplace_back(images.data() + i * d.pixels_per_image(),
                                images.data() + (i + 1) * d.pixels_per_image());
          d.labels.push_back(labels.data()[i]);
        }
        save_xid(d, path);
      },
      py::arg("path"), py::arg("images"), py::arg("labels"),
      py::arg("num_classes"));
}
