#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <span>
#include <stdexcept>
#include <vector>

#include "gptqt/calib.hpp"
#include "gptqt/engine.hpp"
#include "gptqt/fuse.hpp"
#include "gptqt/gemm.hpp"
#include "gptqt/quant.hpp"
#include "gptqt/tensor.hpp"

namespace py = pybind11;
using namespace gptqt;

namespace {

using Arr1f = py::array_t<float, py::array::c_style | py::array::forcecast>;
using Arr1d = py::array_t<double, py::array::c_style | py::array::forcecast>;

TensorF32 tensor_from_numpy(const Arr1f& arr) {
  if (arr.ndim() < 1 || arr.ndim() > 2)
    throw std::invalid_argument("expected a 1-D or 2-D array");
  TensorF32 t;
  for (py::ssize_t i = 0; i < arr.ndim(); ++i)
    t.dims.push_back(static_cast<std::size_t>(arr.shape(i)));
  t.data.assign(arr.data(), arr.data() + arr.size());
  return t;
}

py::array_t<float> tensor_to_numpy(const TensorF32& t) {
  std::vector<py::ssize_t> shape(t.dims.begin(), t.dims.end());
  py::array_t<float> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

std::span<const float> row_span(const Arr1f& arr) {
  if (arr.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
  return {arr.data(), static_cast<std::size_t>(arr.size())};
}

std::span<const double> vec_span(const Arr1d& arr) {
  if (arr.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
  return {arr.data(), static_cast<std::size_t>(arr.size())};
}

QuantMethod make_method(const std::string& name, int bits, int inter_bits, int range_bits,
                        int grid_points, int als_iters, int clip_grid, bool actorder,
                        bool joint_search, bool shared_codebook) {
  const auto tag = parse_method(name);
  if (!tag) throw std::invalid_argument("unknown method '" + name + "'");
  QuantMethod m;
  m.tag = *tag;
  m.bits = bits;
  m.inter_bits = inter_bits;
  m.range_bits = range_bits;
  m.grid_points = grid_points;
  m.als_iters = als_iters;
  m.clip_grid = clip_grid;
  m.actorder = actorder;
  m.joint_search = joint_search;
  m.shared_codebook = shared_codebook;
  validate_method(m);
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-step binary-coding weight quantization core";

  // tensors and generators
  m.def("read_tensor",
        [](const std::string& path) { return tensor_to_numpy(read_tensor(path)); },
        py::arg("path"));
  m.def("write_tensor",
        [](const std::string& path, const Arr1f& arr) { write_tensor(path, tensor_from_numpy(arr)); },
        py::arg("path"), py::arg("tensor"));
  m.def("gen_weights",
        [](std::size_t rows, std::size_t cols, std::uint64_t seed, float scale) {
          return tensor_to_numpy(gen_weights(rows, cols, seed, scale));
        },
        py::arg("rows"), py::arg("cols"), py::arg("seed"), py::arg("scale") = 1.0f);
  m.def("gen_activations",
        [](std::size_t cols, std::size_t nsamples, std::uint64_t seed, float rho) {
          return tensor_to_numpy(gen_activations(cols, nsamples, seed, rho));
        },
        py::arg("cols"), py::arg("nsamples"), py::arg("seed"), py::arg("rho") = 0.0f);
  m.def("splitmix64_at", &splitmix64_at, py::arg("seed"), py::arg("index"));

  // calibration
  py::class_<HessianState>(m, "HessianState")
      .def(py::init<std::size_t>(), py::arg("k"))
      .def("accumulate",
           [](HessianState& s, const Arr1f& x) { s.accumulate(tensor_from_numpy(x)); },
           py::arg("activations"))
      .def("finalize", &HessianState::finalize, py::arg("damp_pct") = 0.01)
      .def("hdiag", [](const HessianState& s) { return py::array_t<double>(py::cast(s.hdiag())); })
      .def("h",
           [](const HessianState& s) {
             py::array_t<double> out({s.k(), s.k()});
             std::copy(s.h().begin(), s.h().end(), out.mutable_data());
             return out;
           })
      .def("hinv_chol",
           [](const HessianState& s) {
             py::array_t<double> out({s.k(), s.k()});
             std::copy(s.hinv_chol().begin(), s.hinv_chol().end(), out.mutable_data());
             return out;
           })
      .def_property_readonly("k", &HessianState::k)
      .def_property_readonly("nsamples", &HessianState::nsamples)
      .def_property_readonly("finalized", &HessianState::finalized)
      .def_property_readonly("damping_lambda", &HessianState::damping_lambda);

  // row-level quantization
  py::class_<LinearParams>(m, "LinearParams")
      .def_readonly("bits", &LinearParams::bits)
      .def_readonly("scale", &LinearParams::scale)
      .def_readonly("zero", &LinearParams::zero);

  py::class_<Codebook>(m, "Codebook")
      .def_readonly("base", &Codebook::base)
      .def_readonly("deltas", &Codebook::deltas)
      .def_readonly("levels", &Codebook::levels)
      .def("__repr__", [](const Codebook& cb) {
        std::string s = "Codebook(levels=[";
        for (std::size_t i = 0; i < cb.levels.size(); ++i)
          s += (i ? "," : "") + std::to_string(cb.levels[i]);
        return s + "])";
      });

  py::class_<RowPlan>(m, "RowPlan")
      .def_readonly("inter_bits", &RowPlan::inter_bits)
      .def_readonly("bits", &RowPlan::bits)
      .def_readonly("scale", &RowPlan::scale)
      .def_readonly("zero", &RowPlan::zero)
      .def_readonly("codebook", &RowPlan::codebook)
      .def_readonly("float_levels", &RowPlan::float_levels)
      .def_readonly("degenerate", &RowPlan::degenerate);

  py::class_<BinaryCode>(m, "BinaryCode")
      .def_readonly("alphas", &BinaryCode::alphas)
      .def_readonly("mse_history", &BinaryCode::mse_history)
      .def_property_readonly("bits", [](const BinaryCode& c) {
        py::array_t<std::int8_t> out({c.bits.size(), c.bits.empty() ? 0 : c.bits[0].size()});
        auto view = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < c.bits.size(); ++i)
          for (std::size_t j = 0; j < c.bits[i].size(); ++j) view(i, j) = c.bits[i][j];
        return out;
      });

  m.def("fit_linear", [](const Arr1f& row, int n) { return fit_linear(row_span(row), n); },
        py::arg("row"), py::arg("bits"));
  m.def("quantize_linear",
        [](const Arr1f& row, const LinearParams& p) { return quantize_linear(row_span(row), p); },
        py::arg("row"), py::arg("params"));
  m.def("greedy_bc", [](const Arr1f& row, int nbits) { return greedy_bc(row_span(row), nbits); },
        py::arg("row"), py::arg("nbits"));
  m.def("bcq_als",
        [](const Arr1f& row, int nbits, int iters) { return bcq_als(row_span(row), nbits, iters); },
        py::arg("row"), py::arg("nbits"), py::arg("iters") = 10);
  m.def("enumerate_codebooks", &enumerate_codebooks, py::arg("inter_bits"), py::arg("bits"));
  m.def("round_to_codebook",
        [](const std::vector<int>& ints, const Codebook& cb) {
          return round_to_codebook(ints, cb);
        },
        py::arg("ints"), py::arg("codebook"));
  m.def("row_proxy_error",
        [](const Arr1f& row, const Arr1d& levels, const Arr1d& hdiag) {
          return row_proxy_error(row_span(row), vec_span(levels), vec_span(hdiag));
        },
        py::arg("row"), py::arg("levels"), py::arg("hdiag"));
  m.def("search_codebook",
        [](const Arr1f& row, const Arr1d& hdiag, const LinearParams& p, int bits) {
          return search_codebook(row_span(row), vec_span(hdiag), p, bits);
        },
        py::arg("row"), py::arg("hdiag"), py::arg("params"), py::arg("bits"));
  m.def("reexplore_scale",
        [](const Arr1f& row, const Arr1d& hdiag, const Codebook& cb, const LinearParams& p,
           int range_bits, int grid_points) {
          return reexplore_scale(row_span(row), vec_span(hdiag), cb, p, range_bits, grid_points);
        },
        py::arg("row"), py::arg("hdiag"), py::arg("codebook"), py::arg("params"),
        py::arg("range_bits") = 1, py::arg("grid_points") = 64);
  m.def("build_row_plan",
        [](const Arr1f& row, const Arr1d& hdiag, int inter_bits, int bits, int range_bits,
           int grid_points) {
          PlanConfig cfg;
          cfg.inter_bits = inter_bits;
          cfg.bits = bits;
          cfg.range_bits = range_bits;
          cfg.grid_points = grid_points;
          return build_row_plan(row_span(row), vec_span(hdiag), cfg);
        },
        py::arg("row"), py::arg("hdiag"), py::arg("inter_bits") = 5, py::arg("bits") = 3,
        py::arg("range_bits") = 1, py::arg("grid_points") = 64);

  // layer engine
  py::class_<QuantizedLayer>(m, "QuantizedLayer")
      .def_readonly("rows", &QuantizedLayer::rows)
      .def_readonly("cols", &QuantizedLayer::cols)
      .def_readonly("plans", &QuantizedLayer::plans)
      .def_readonly("plan_proxy", &QuantizedLayer::plan_proxy)
      .def_readonly("row_proxy", &QuantizedLayer::row_proxy)
      .def_readonly("plan_seconds", &QuantizedLayer::plan_seconds)
      .def_readonly("loop_seconds", &QuantizedLayer::loop_seconds)
      .def_property_readonly("indices",
                             [](const QuantizedLayer& l) {
                               py::array_t<std::uint8_t> out({l.rows, l.cols});
                               std::copy(l.indices.begin(), l.indices.end(), out.mutable_data());
                               return out;
                             })
      .def_property_readonly("dequant", [](const QuantizedLayer& l) {
        return tensor_to_numpy(l.dequant_tensor());
      });

  m.def("quantize_layer",
        [](const Arr1f& w, const HessianState& hess, const std::string& method, int bits,
           int inter_bits, int range_bits, int grid_points, int als_iters, int clip_grid,
           int block, bool actorder, bool joint_search, bool shared_codebook) {
          return quantize_layer(tensor_from_numpy(w), hess,
                                make_method(method, bits, inter_bits, range_bits, grid_points,
                                            als_iters, clip_grid, actorder, joint_search,
                                            shared_codebook),
                                block);
        },
        py::arg("weights"), py::arg("hessian"), py::arg("method") = "gptqt", py::arg("bits") = 3,
        py::arg("inter_bits") = 5, py::arg("range_bits") = 1, py::arg("grid_points") = 64,
        py::arg("als_iters") = 10, py::arg("clip_grid") = 100, py::arg("block") = 128,
        py::arg("actorder") = false, py::arg("joint_search") = false,
        py::arg("shared_codebook") = false);
  m.def("rtn_layer",
        [](const Arr1f& w, const std::string& method, int bits, int als_iters) {
          QuantMethod qm = make_method(method, bits, bits + 1, 0, 1, als_iters, 1, false, false,
                                       false);
          return rtn_layer(tensor_from_numpy(w), qm);
        },
        py::arg("weights"), py::arg("method") = "rtn", py::arg("bits") = 3,
        py::arg("als_iters") = 10);
  m.def("minmse_clip_fit",
        [](const Arr1f& row, int n, int grid) { return minmse_clip_fit(row_span(row), n, grid); },
        py::arg("row"), py::arg("bits"), py::arg("grid") = 100);
  m.def("layer_output_error",
        [](const Arr1f& w, const Arr1f& w_dq, const Arr1f& x) {
          return layer_output_error(tensor_from_numpy(w), tensor_from_numpy(w_dq),
                                    tensor_from_numpy(x));
        },
        py::arg("weights"), py::arg("dequantized"), py::arg("activations"));
  m.def("proxy_loss_full",
        [](const Arr1f& w, const Arr1f& w_dq, const HessianState& hess) {
          return proxy_loss_full(tensor_from_numpy(w), tensor_from_numpy(w_dq), hess);
        },
        py::arg("weights"), py::arg("dequantized"), py::arg("hessian"));

  // fusion, packing, kernels
  py::class_<FusedRow>(m, "FusedRow")
      .def_readonly("m", &FusedRow::m)
      .def_readonly("alpha_hat", &FusedRow::alpha_hat)
      .def_readonly("beta", &FusedRow::beta);

  py::class_<PackedBCMatrix>(m, "PackedBCMatrix")
      .def_readonly("rows", &PackedBCMatrix::rows)
      .def_readonly("cols", &PackedBCMatrix::cols)
      .def_readonly("m", &PackedBCMatrix::m)
      .def_readonly("fused", &PackedBCMatrix::fused)
      .def_property_readonly("bitplanes", [](const PackedBCMatrix& p) {
        py::array_t<std::uint8_t> out(static_cast<py::ssize_t>(p.bitplanes.size()));
        std::copy(p.bitplanes.begin(), p.bitplanes.end(), out.mutable_data());
        return out;
      });

  m.def("fuse_plan", &fuse_plan, py::arg("plan"));
  m.def("pack", &pack, py::arg("layer"));
  m.def("dequantize_packed",
        [](const PackedBCMatrix& p) { return tensor_to_numpy(dequantize_packed(p)); },
        py::arg("packed"));
  m.def("serialize",
        [](const PackedBCMatrix& p, const std::string& path) { serialize(p, path); },
        py::arg("packed"), py::arg("path"));
  m.def("deserialize", [](const std::string& path) { return deserialize(path); },
        py::arg("path"));
  m.def("matvec_lut",
        [](const PackedBCMatrix& p, const Arr1f& x, int group_size) {
          return matvec_lut(p, row_span(x), group_size);
        },
        py::arg("packed"), py::arg("x"), py::arg("group_size") = 8);
  m.def("matvec_reference",
        [](const PackedBCMatrix& p, const Arr1f& x) { return matvec_reference(p, row_span(x)); },
        py::arg("packed"), py::arg("x"));
}
