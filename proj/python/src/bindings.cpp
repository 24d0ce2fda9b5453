#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fwsvd/analyzer.hpp"
#include "fwsvd/checkpoint.hpp"
#include "fwsvd/error.hpp"
#include "fwsvd/factorizer.hpp"
#include "fwsvd/fisher.hpp"
#include "fwsvd/net.hpp"
#include "fwsvd/svd.hpp"

namespace py = pybind11;
using namespace fwsvd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw ValidationError("expected a 2-D array");
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

std::vector<double> to_vector(const Array& a) {
    if (a.ndim() != 1) throw ValidationError("expected a 1-D array");
    return {a.data(), a.data() + a.shape(0)};
}

Array to_array(const Matrix& m) {
    Array out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

Array to_array(const std::vector<double>& v) {
    Array out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

SvdResult to_svd(const Array& u, const Array& s, const Array& v) {
    return {to_matrix(u), to_vector(s), to_matrix(v)};
}

ImportanceVector importance_of(const Array& values) {
    const std::vector<double> v = to_vector(values);
    return row_importance(Matrix(v.size(), 1, v));
}

py::dict fisher_to_dict(const FisherMap& f) {
    py::dict d;
    for (const auto& [name, m] : f.weights) d[py::str(name)] = to_array(m);
    return d;
}

FisherMap dict_to_fisher(const py::dict& d) {
    FisherMap f;
    for (auto [key, value] : d) f.weights.emplace(key.cast<std::string>(), to_matrix(value.cast<Array>()));
    return f;
}

py::dict dataset_to_dict(const Dataset& d) {
    py::dict out;
    out["inputs"] = to_array(d.inputs);
    if (d.is_classification())
        out["labels"] = d.labels;
    else
        out["targets"] = to_array(d.targets);
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Fisher-weighted low-rank factorization of linear layers";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    m.def(
        "svd",
        [](const Array& w) {
            const SvdResult f = svd(to_matrix(w));
            return py::make_tuple(to_array(f.u), to_array(f.s), to_array(f.v));
        },
        py::arg("w"), "Thin SVD; returns (U, s, V) with W = U @ diag(s) @ V.T.");
    m.def(
        "truncate",
        [](const Array& u, const Array& s, const Array& v, std::size_t r) {
            const SvdResult f = truncate(to_svd(u, s, v), r);
            return py::make_tuple(to_array(f.u), to_array(f.s), to_array(f.v));
        },
        py::arg("u"), py::arg("s"), py::arg("v"), py::arg("r"));
    m.def(
        "reconstruct",
        [](const Array& u, const Array& s, const Array& v) { return to_array(reconstruct(to_svd(u, s, v))); },
        py::arg("u"), py::arg("s"), py::arg("v"));
    m.def(
        "frobenius_error", [](const Array& a, const Array& b) { return frobenius_error(to_matrix(a), to_matrix(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "weighted_frobenius_error",
        [](const Array& w, const Array& w_hat, const Array& fisher) {
            return weighted_frobenius_error(to_matrix(w), to_matrix(w_hat), to_matrix(fisher));
        },
        py::arg("w"), py::arg("w_hat"), py::arg("fisher"));

    m.def("rank_for_ratio", &rank_for_ratio, py::arg("n"), py::arg("m"), py::arg("ratio"));
    m.def(
        "row_importance",
        [](const Array& fisher) {
            const ImportanceVector v = row_importance(to_matrix(fisher));
            return py::make_tuple(to_array(v.values), to_array(v.diagonal));
        },
        py::arg("fisher"), "Floored row sums and their square roots.");
    m.def(
        "factorize_svd",
        [](const Array& w, std::size_t r) {
            const FactorizedLinear f = factorize_svd(to_matrix(w), std::nullopt, r);
            return py::make_tuple(to_array(f.a), to_array(f.b));
        },
        py::arg("w"), py::arg("r"));
    m.def(
        "factorize_fwsvd",
        [](const Array& w, const Array& importance, std::size_t r) {
            const FactorizedLinear f = factorize_fwsvd(to_matrix(w), importance_of(importance), std::nullopt, r);
            return py::make_tuple(to_array(f.a), to_array(f.b));
        },
        py::arg("w"), py::arg("importance"), py::arg("r"),
        "Row-weighted rank-r factors (A, B); importance is one nonnegative weight per row.");
    m.def(
        "row_weighted_error",
        [](const Array& w, const Array& w_hat, const Array& importance) {
            return row_weighted_error(to_matrix(w), to_matrix(w_hat), importance_of(importance));
        },
        py::arg("w"), py::arg("w_hat"), py::arg("importance"));
    m.def(
        "group_partition",
        [](std::size_t k, std::size_t groups) { return group_partition(k, groups).ranges; },
        py::arg("k"), py::arg("groups"), "Half-open index ranges, largest singular values first.");

    py::class_<NetModel>(m, "Model")
        .def_property_readonly("input_dim", &NetModel::input_dim)
        .def_property_readonly("output_dim", &NetModel::output_dim)
        .def_property_readonly("parameter_count", &NetModel::parameter_count)
        .def_property_readonly("dense_layers", &NetModel::linear_layer_names)
        .def_readwrite("provenance", &NetModel::provenance)
        .def("weight", [](const NetModel& model, const std::string& name) {
            const auto idx = model.find(name);
            if (!idx) throw ValidationError("no layer named '" + name + "'");
            const Layer& layer = model.layers()[*idx].layer;
            if (const auto* d = std::get_if<LinearLayer>(&layer)) return to_array(d->weight);
            return to_array(std::get<FactorizedLinear>(layer).product());
        });

    py::class_<Dataset>(m, "Dataset")
        .def_property_readonly("size", &Dataset::size)
        .def("to_dict", &dataset_to_dict);

    py::class_<DemoTask>(m, "DemoTask")
        .def_readonly("teacher", &DemoTask::teacher)
        .def_readonly("student", &DemoTask::student)
        .def_readonly("train", &DemoTask::train)
        .def_readonly("eval", &DemoTask::eval)
        .def_readonly("rare_dims", &DemoTask::rare_dims);

    m.def("make_demo_task", [](std::uint64_t seed) { return make_demo_task(seed); }, py::arg("seed"));
    m.def(
        "train_demo",
        [](const NetModel& model, const Dataset& data, std::uint64_t seed, std::size_t epochs) {
            TrainConfig c = demo_train_config(seed);
            c.epochs = epochs;
            py::gil_scoped_release release;
            return train(model, data, c);
        },
        py::arg("model"), py::arg("data"), py::arg("seed"), py::arg("epochs") = TrainConfig{}.epochs);
    m.def(
        "evaluate",
        [](const NetModel& model, const Dataset& data, const std::string& metric) {
            if (metric != "loss" && metric != "accuracy") throw ValidationError("metric must be loss or accuracy");
            return evaluate(model, data, metric == "loss" ? Metric::Loss : Metric::Accuracy);
        },
        py::arg("model"), py::arg("data"), py::arg("metric") = "loss");
    m.def(
        "accumulate_fisher",
        [](const NetModel& model, const Dataset& data, std::size_t workers) {
            FisherMap f;
            {
                py::gil_scoped_release release;
                f = accumulate_fisher(model, data, FisherOptions{workers});
            }
            return fisher_to_dict(f);
        },
        py::arg("model"), py::arg("data"), py::arg("workers") = 1,
        "Per-layer mean squared per-example gradients, keyed by layer name.");
    m.def(
        "compress",
        [](const NetModel& model, const std::string& method, double ratio, const py::object& fisher) {
            CompressionSpec spec;
            spec.method = parse_method(method);
            spec.rank_ratio = ratio;
            std::optional<FisherMap> f;
            if (!fisher.is_none()) f = dict_to_fisher(fisher.cast<py::dict>());
            auto [out, report] = compress_model(model, f ? &*f : nullptr, spec);
            py::list rows;
            for (const auto& l : report.layers) {
                py::dict row;
                row["layer"] = l.layer;
                row["rank"] = l.rank;
                row["params_before"] = l.params_before;
                row["params_after"] = l.params_after;
                row["err_unweighted"] = l.err_unweighted;
                row["err_weighted"] = l.err_weighted ? py::cast(*l.err_weighted) : py::none();
                rows.append(row);
            }
            return py::make_tuple(std::move(out), rows);
        },
        py::arg("model"), py::arg("method") = "fwsvd", py::arg("ratio") = 0.3, py::arg("fisher") = py::none());
    m.def(
        "group_truncation",
        [](const NetModel& model, const py::dict& fisher, const Dataset& data, std::size_t groups) {
            const auto report = run_group_truncation(model, dict_to_fisher(fisher), data, groups);
            py::list rows;
            for (const auto& r : report.rows) {
                py::dict row;
                row["method"] = std::string(to_string(r.method));
                row["group"] = r.group;
                row["drop"] = r.drop;
                row["recon_err_mean"] = r.recon_err_mean;
                rows.append(row);
            }
            return rows;
        },
        py::arg("model"), py::arg("fisher"), py::arg("data"), py::arg("groups") = 10);

    m.def("save_model", [](const NetModel& model, const std::filesystem::path& p) { save_model(model, p); },
          py::arg("model"), py::arg("path"));
    m.def("load_model", &load_model, py::arg("path"));
    m.def("load_dataset", &load_dataset, py::arg("path"));
    m.def("load_fisher", [](const std::filesystem::path& p) { return fisher_to_dict(load_fisher(p)); },
          py::arg("path"));
}
