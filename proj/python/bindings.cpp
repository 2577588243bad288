// Python bindings. Arrays cross the boundary as numpy: images H×W×3 float32
// in [0,1], masks H×W uint8, depth and heights H×W float64.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "floodgen/geometry.hpp"
#include "floodgen/inference.hpp"
#include "floodgen/losses.hpp"
#include "floodgen/networks.hpp"

namespace py = pybind11;
namespace fg = floodgen;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

template <typename T, typename A>
fg::Grid<T> grid_from(const A& a, int channels) {
  const int expected_dims = channels == 1 ? 2 : 3;
  if (a.ndim() != expected_dims || (channels > 1 && a.shape(2) != channels)) {
    throw fg::DimensionMismatch("expected an array of shape (H, W" +
                                std::string(channels > 1 ? ", " + std::to_string(channels) : "") + ")");
  }
  fg::Grid<T> g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), channels);
  std::copy_n(a.data(), g.size(), g.storage().begin());
  return g;
}

template <typename T>
py::array_t<T> array_from(const fg::Grid<T>& g) {
  std::vector<py::ssize_t> shape{g.height(), g.width()};
  if (g.channels() > 1) shape.push_back(g.channels());
  py::array_t<T> out(shape);
  std::copy(g.storage().begin(), g.storage().end(), out.mutable_data());
  return out;
}

fg::Image image_from(const F32& a) { return fg::Image(grid_from<float>(a, 3)); }
fg::FloodMask mask_from(const U8& a) {
  fg::FloodMask m;
  m.bits = grid_from<std::uint8_t>(a, 1);
  return m;
}

torch::Tensor nchw(const F32& a) {
  if (a.ndim() != 4) throw fg::DimensionMismatch("expected an array of shape (N, C, H, W)");
  std::vector<int64_t> shape(a.shape(), a.shape() + 4);
  return torch::from_blob(const_cast<float*>(a.data()), shape, torch::kFloat32).clone();
}

py::dict to_dict(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "floodgen native core";

  // Later registrations are tried first, so subclasses follow the base.
  auto base = py::register_exception<fg::Error>(m, "FloodgenError");
  py::register_exception<fg::BadRequest>(m, "BadRequest", base.ptr());
  py::register_exception<fg::ModelLoadError>(m, "ModelLoadError", base.ptr());
  py::register_exception<fg::OutOfRange>(m, "OutOfRange", base.ptr());

  // depth codec
  m.attr("DEPTH_RANGE_M") = fg::kDepthRangeM;
  m.attr("MAX_DEPTH_CODE") = fg::kMaxDepthCode;
  m.def("depth_from_code", &fg::depth_from_code, py::arg("code"));
  m.def("code_from_depth", &fg::code_from_depth, py::arg("meters"));
  m.def("decode_depth", [](const U8& rgb) { return array_from(fg::decode_depth(grid_from<std::uint8_t>(rgb, 3)).values); },
        py::arg("rgb"), "H×W×3 uint8 depth image -> H×W meters");
  m.def("encode_depth", [](const F64& meters) {
    return array_from(fg::encode_depth(fg::DepthMap{grid_from<double>(meters, 1), true}));
  }, py::arg("meters"));

  // geometry
  py::class_<fg::CameraModel>(m, "CameraModel")
      .def_static("from_fov", &fg::CameraModel::from_fov, py::arg("width"), py::arg("height"),
                  py::arg("hfov_deg"), py::arg("camera_height_m"))
      .def_static("default_for", &fg::CameraModel::default_for, py::arg("width"), py::arg("height"))
      .def_readwrite("fx", &fg::CameraModel::fx)
      .def_readwrite("fy", &fg::CameraModel::fy)
      .def_readwrite("cx", &fg::CameraModel::cx)
      .def_readwrite("cy", &fg::CameraModel::cy)
      .def_readwrite("camera_height_m", &fg::CameraModel::camera_height_m)
      .def_readwrite("width", &fg::CameraModel::width)
      .def_readwrite("height", &fg::CameraModel::height);

  m.def("backproject_heights", [](const F64& depth, bool metric, const fg::CameraModel& camera) {
    return array_from(fg::backproject_heights(fg::DepthMap{grid_from<double>(depth, 1), metric}, camera).values);
  }, py::arg("depth"), py::arg("metric"), py::arg("camera"));
  m.def("flood_mask_metric", [](const F64& heights, double level) {
    return array_from(fg::flood_mask_metric(fg::HeightMap{grid_from<double>(heights, 1), true}, level).bits);
  }, py::arg("heights"), py::arg("flood_level_m"));
  m.def("flood_mask_percentile", [](const F64& heights, double fraction) {
    return array_from(fg::flood_mask_percentile(fg::HeightMap{grid_from<double>(heights, 1), false}, fraction).bits);
  }, py::arg("heights"), py::arg("fraction"));
  m.def("estimate_scale", [](const std::vector<std::pair<double, double>>& pairs) {
    std::vector<fg::ReferenceDetection> dets;
    for (auto [metric, relative] : pairs) {
      fg::ReferenceDetection d;
      d.estimated_height_m = metric;
      d.relative_height = relative;
      dets.push_back(d);
    }
    return fg::estimate_scale(dets).scale;
  }, py::arg("pairs"), "median of metric/relative over (metric_height, relative_height) pairs");

  // losses
  m.def("masked_cycle_loss", [](const F32& x, const F32& cycled, const F32& mask, double inside_weight) {
    return fg::masked_cycle_loss(nchw(x), nchw(cycled), nchw(mask), inside_weight).item<double>();
  }, py::arg("x"), py::arg("x_cycled"), py::arg("mask"), py::arg("inside_weight") = 0.0);
  m.def("semantic_consistency_loss", [](const F32& source, const F32& translated, const F32& mask, double inside_weight) {
    return fg::semantic_consistency_loss(nchw(source), nchw(translated), nchw(mask), inside_weight).item<double>();
  }, py::arg("source_logits"), py::arg("translated_logits"), py::arg("mask"), py::arg("inside_weight") = 0.0);

  // models
  m.def("save_random_checkpoint", [](const std::filesystem::path& path, const std::string& arch_json, std::uint64_t seed) {
    auto arch = arch_json.empty() ? fg::ArchConfig::desk_scale()
                                  : fg::ArchConfig::from_json(nlohmann::json::parse(arch_json));
    auto bundle = fg::make_bundle(arch, seed);
    fg::save_bundle(bundle, path);
  }, py::arg("path"), py::arg("arch_json") = "", py::arg("seed") = 0);

  py::class_<fg::Flooder>(m, "Flooder")
      .def(py::init([](const std::filesystem::path& checkpoint, bool composite, int model_side, bool exclude_sky) {
             fg::InferenceConfig c;
             c.composite = composite;
             c.model_side = model_side;
             c.exclude_sky = exclude_sky;
             return fg::Flooder::from_checkpoint(checkpoint, nullptr, nullptr, c);
           }),
           py::arg("checkpoint"), py::arg("composite") = true, py::arg("model_side") = 0,
           py::arg("exclude_sky") = true)
      .def("flood", [](const fg::Flooder& self, const F32& image, std::optional<double> level_m,
                       std::optional<double> fraction, std::optional<std::uint64_t> style_seed) {
             fg::FloodRequest r;
             r.image = image_from(image);
             r.flood_level_m = level_m;
             r.flood_fraction = fraction;
             r.style_seed = style_seed;
             fg::FloodResult res;
             {
               py::gil_scoped_release release;
               res = self.flood(r);
             }
             return py::make_tuple(array_from(res.flooded.pixels), array_from(res.mask.bits), to_dict(res.diagnostics));
           },
           py::arg("image"), py::arg("level_m") = py::none(), py::arg("fraction") = py::none(),
           py::arg("style_seed") = py::none(), "returns (flooded, mask, diagnostics)");

  m.def("composite", [](const F32& original, const F32& generated, const U8& mask) {
    return array_from(fg::composite(image_from(original), image_from(generated), mask_from(mask)).pixels);
  }, py::arg("original"), py::arg("generated"), py::arg("mask"));
}
