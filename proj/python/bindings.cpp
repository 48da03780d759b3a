// Python bindings: the file formats the exporter writes and the pure
// functions worth calling from notebooks.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sdls/bundle.hpp"
#include "sdls/corpus.hpp"
#include "sdls/error.hpp"
#include "sdls/forge.hpp"
#include "sdls/metrics.hpp"
#include "sdls/model.hpp"

namespace py = pybind11;
using namespace sdls;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Vector to_vector(const Array& a) {
  if (a.ndim() != 1) throw Error(ErrorCode::kGeometry, "expected a 1-d array");
  return Vector(a.data(), a.data() + a.shape(0));
}

Array to_array(const Vector& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

// (D, N) array, one column per sample.
Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::kGeometry, "expected a 2-d array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    for (py::ssize_t j = 0; j < a.shape(1); ++j) m(i, j) = r(i, j);
  return m;
}

CueDictionary dict_or_default(const std::optional<std::string>& path) {
  return path ? CueDictionary::load(*path) : CueDictionary::default_dictionary();
}

Tokens as_tokens(const py::object& report) {
  if (py::isinstance<py::str>(report)) return tokenize(report.cast<std::string>());
  return report.cast<Tokens>();
}

py::dict vector_dict(const SteeringVector& v) {
  py::dict d;
  d["v"] = to_array(v.v);
  d["kind"] = std::string(vector_kind_name(v.kind));
  d["label"] = v.label();
  d["layers"] = v.geometry.layers;
  d["d_model"] = v.geometry.d_model;
  d["k"] = v.k ? py::cast(*v.k) : py::none();
  d["effective_k"] = v.effective_k ? py::cast(*v.effective_k) : py::none();
  d["dropped_classes"] = v.dropped_classes;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Steering-vector toolkit core";
  py::register_exception<Error>(m, "SdlsError", PyExc_ValueError);

  m.def("tokenize", [](const std::string& text) { return tokenize(text); });
  m.def(
      "hsr", [](const py::object& report, std::optional<std::string> dict) {
        return hsr(as_tokens(report), dict_or_default(dict));
      },
      py::arg("report"), py::arg("dict") = py::none());
  m.def(
      "hsc", [](const py::object& report, std::optional<std::string> dict) {
        return hsc(as_tokens(report), dict_or_default(dict));
      },
      py::arg("report"), py::arg("dict") = py::none());
  m.def("default_dictionary_json", [] { return CueDictionary::default_dictionary().to_json().dump(); });

  m.def(
      "write_bundle",
      [](const std::string& path, std::size_t layers, std::size_t d_model, const std::vector<std::string>& image_ids,
         const std::vector<std::string>& roles, const Array& mcvs, const std::string& backbone,
         const std::string& provenance_json) {
        if (mcvs.ndim() != 2 || static_cast<std::size_t>(mcvs.shape(0)) != image_ids.size() ||
            roles.size() != image_ids.size())
          throw Error(ErrorCode::kGeometry, "mcvs must be (n_samples, L*d_model) with one id and role per row");
        ActivationBundle b;
        b.backbone = backbone;
        b.layers = layers;
        b.d_model = d_model;
        b.provenance = provenance_json.empty() ? nlohmann::json(nullptr) : nlohmann::json::parse(provenance_json);
        const std::size_t dim = static_cast<std::size_t>(mcvs.shape(1));
        for (std::size_t i = 0; i < image_ids.size(); ++i)
          b.add(image_ids[i], roles[i], std::span<const double>(mcvs.data() + i * dim, dim));
        return write_bundle(b, path);
      },
      py::arg("path"), py::arg("layers"), py::arg("d_model"), py::arg("image_ids"), py::arg("roles"), py::arg("mcvs"),
      py::arg("backbone") = "toy", py::arg("provenance_json") = "");

  m.def("read_bundle", [](const std::string& path) {
    const ActivationBundle b = read_bundle(path);
    Array mcvs({static_cast<py::ssize_t>(b.samples.size()), static_cast<py::ssize_t>(b.dim())});
    auto w = mcvs.mutable_unchecked<2>();
    std::vector<std::string> ids, roles;
    for (std::size_t i = 0; i < b.samples.size(); ++i) {
      const Vector z = b.mcv(i);
      for (std::size_t j = 0; j < z.size(); ++j) w(i, j) = z[j];
      ids.push_back(b.samples[i].image_id);
      roles.push_back(b.samples[i].role);
    }
    py::dict d;
    d["backbone"] = b.backbone;
    d["layers"] = b.layers;
    d["d_model"] = b.d_model;
    d["image_ids"] = ids;
    d["roles"] = roles;
    d["mcvs"] = mcvs;
    d["provenance_json"] = b.provenance.dump();
    return d;
  });

  m.def("load_vector", [](const std::string& path) { return vector_dict(load_vector(path)); });
  m.def(
      "global_icv",
      [](const Array& diffs, std::size_t k, std::size_t layers, std::size_t d_model) {
        return vector_dict(global_icv(to_matrix(diffs), k, {layers, d_model}));
      },
      py::arg("diffs"), py::arg("k"), py::arg("layers"), py::arg("d_model"));
  m.def(
      "sdiv",
      [](const std::map<std::string, Array>& classes, std::size_t layers, std::size_t d_model) {
        std::map<std::string, Matrix> c;
        for (const auto& [name, a] : classes) c.emplace(name, to_matrix(a));
        return vector_dict(sdiv(c, {layers, d_model}));
      },
      py::arg("classes"), py::arg("layers"), py::arg("d_model"));
  m.def(
      "norm_preserving_inject",
      [](const Array& h, const Array& v, double lam) {
        return to_array(norm_preserving_inject(to_vector(h), to_vector(v), lam));
      },
      py::arg("h"), py::arg("v"), py::arg("lam"));
}
