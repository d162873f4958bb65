// Python module: images are float arrays of shape (H, W, 3) in [0, 1] and
// masks are (H, W) arrays with 1 for known pixels.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "refpaint/data.hpp"
#include "refpaint/evaluation.hpp"
#include "refpaint/gradcheck.hpp"
#include "refpaint/metrics.hpp"
#include "refpaint/rtv.hpp"
#include "refpaint/sift.hpp"
#include "refpaint/training.hpp"

namespace py = pybind11;
using namespace refpaint;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> image_from_numpy(const FloatArray& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected an (H, W, C) array");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1)), c = static_cast<int>(a.shape(2));
  auto t = Tensor<float>::zeros({1, c, h, w});
  auto in = a.unchecked<3>();
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t.at(0, k, y, x) = in(y, x, k);
  return t;
}

Tensor<float> mask_from_numpy(const FloatArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected an (H, W) mask");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  std::vector<float> data(a.data(), a.data() + a.size());
  return Tensor<float>({1, 1, h, w}, std::move(data));
}

py::array_t<float> image_to_numpy(const Tensor<float>& t) {
  const Shape s = t.shape();
  py::array_t<float> out({s.h, s.w, s.c});
  auto o = out.mutable_unchecked<3>();
  for (int k = 0; k < s.c; ++k)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) o(y, x, k) = t.at(0, k, y, x);
  return out;
}

class Model {
 public:
  explicit Model(const std::string& checkpoint) : loaded_(load_model(checkpoint)) {}

  py::array_t<float> inpaint(const FloatArray& image, const FloatArray& mask, std::optional<FloatArray> reference) {
    std::optional<Tensor<float>> ref;
    if (reference) ref = image_from_numpy(*reference);
    Tensor<float> out;
    {
      py::gil_scoped_release release;
      out = refpaint::inpaint(*loaded_.generator, image_from_numpy(image), mask_from_numpy(mask), ref);
    }
    return image_to_numpy(out);
  }

  int image_size() const { return loaded_.config.network.image_size; }

 private:
  LoadedModel loaded_;
};

}  // namespace

PYBIND11_MODULE(_refpaint, m) {
  m.doc() = "Reference-guided image inpainting";

  m.def(
      "rtv_smooth",
      [](const FloatArray& image, double lambda_, double sigma, int iterations) {
        RtvParams p;
        p.lambda = lambda_;
        p.sigma = sigma;
        p.iterations = iterations;
        return image_to_numpy(rtv_smooth(image_from_numpy(image), p));
      },
      py::arg("image"), py::arg("lambda_") = RtvParams{}.lambda, py::arg("sigma") = RtvParams{}.sigma,
      py::arg("iterations") = RtvParams{}.iterations, "Structure image with texture smoothed away.");

  m.def(
      "detect_keypoints",
      [](const FloatArray& image) {
        const auto kps = sift_detect(image_from_numpy(image));
        py::array_t<float> frames({static_cast<py::ssize_t>(kps.size()), py::ssize_t{4}});
        py::array_t<float> desc({static_cast<py::ssize_t>(kps.size()), py::ssize_t{128}});
        auto f = frames.mutable_unchecked<2>();
        auto d = desc.mutable_unchecked<2>();
        for (std::size_t i = 0; i < kps.size(); ++i) {
          const auto& k = kps[i];
          f(i, 0) = k.x;
          f(i, 1) = k.y;
          f(i, 2) = k.scale;
          f(i, 3) = k.orientation;
          for (int j = 0; j < 128; ++j) d(i, j) = k.descriptor[j];
        }
        return py::make_tuple(frames, desc);
      },
      py::arg("image"), "Keypoint frames (x, y, scale, orientation) and unit descriptors.");

  m.def(
      "mine_pairs",
      [](const FloatArray& a, const FloatArray& b, int crop, int min_matches, int crops_per_image,
         std::uint64_t seed) {
        MiningOptions opt;
        opt.crop = crop;
        opt.min_matches = min_matches;
        opt.crops_per_image = crops_per_image;
        opt.seed = seed;
        const auto res = refpaint::mine_pairs(image_from_numpy(a), image_from_numpy(b), opt);
        py::list pairs;
        for (const auto& p : res.pairs)
          pairs.append(py::make_tuple(p.input_y, p.input_x, p.reference_y, p.reference_x, p.match_score));
        return pairs;
      },
      py::arg("a"), py::arg("b"), py::arg("crop") = 256, py::arg("min_matches") = 20,
      py::arg("crops_per_image") = 1, py::arg("seed") = 0,
      "Crop origins (input_y, input_x, reference_y, reference_x, score) of matched pairs.");

  m.def(
      "classify_bucket", [](const FloatArray& mask) { return classify_bucket(mask_from_numpy(mask)); },
      py::arg("mask"), "Hole-ratio bucket 0-4, or None outside [10%, 60%).");

  m.def(
      "hole_ratio", [](const FloatArray& mask) { return count_holes(mask_from_numpy(mask)).ratio(); },
      py::arg("mask"));

  m.def(
      "psnr", [](const FloatArray& a, const FloatArray& b) { return psnr(image_from_numpy(a), image_from_numpy(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "ssim", [](const FloatArray& a, const FloatArray& b) { return ssim(image_from_numpy(a), image_from_numpy(b)); },
      py::arg("a"), py::arg("b"));

  m.def("gradcheck_components", &gradcheck_components);
  m.def(
      "gradcheck",
      [](const std::string& name, std::uint64_t seed) {
        const auto r = run_gradcheck(name, seed);
        py::dict errors;
        for (const auto& g : r.groups) errors[py::str(g.group)] = g.max_rel_error;
        return py::make_tuple(r.passed, errors);
      },
      py::arg("component"), py::arg("seed") = 0, "(passed, {group: max relative error}).");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def_property_readonly("image_size", &Model::image_size)
      .def("inpaint", &Model::inpaint, py::arg("image"), py::arg("mask"), py::arg("reference") = py::none(),
           "Composited result; a missing reference is replaced by black.");
}
