#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sauge/data.hpp"
#include "sauge/edge_eval.hpp"
#include "sauge/errors.hpp"
#include "sauge/granularity.hpp"
#include "sauge/losses.hpp"
#include "sauge/trainer.hpp"

namespace py = pybind11;
using namespace sauge;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Mask = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

template <typename T>
Grid<T> to_grid(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
    Grid<T> g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), g.data.begin());
    return g;
}

template <typename T>
py::array_t<T> to_array(const Grid<T>& g) {
    py::array_t<T> a({g.rows, g.cols});
    std::copy(g.data.begin(), g.data.end(), a.mutable_data());
    return a;
}

AnnotationSet to_annotations(const std::vector<Mask>& labels) {
    AnnotationSet a;
    for (const auto& l : labels) a.labels.push_back(to_grid<std::uint8_t>(l));
    return a;
}

// (H, W, 3) in [0, 1] -> (3, H, W)
Image to_image(const Array& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw DimensionError("expected an (H, W, 3) image");
    const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
    Image img({3, h, w});
    const double* p = a.data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = *p++;
    return img;
}

EdgeMapSet to_edge_maps(const py::dict& d) {
    EdgeMapSet m;
    m.coarse = to_grid<double>(d["coarse"].cast<Array>());
    m.medium = to_grid<double>(d["medium"].cast<Array>());
    m.fine = to_grid<double>(d["fine"].cast<Array>());
    m.fused = d.contains("fused") ? to_grid<double>(d["fused"].cast<Array>()) : m.medium;
    return m;
}

KeyValues to_key_values(const std::map<std::string, std::string>& cfg) {
    KeyValues kv;
    for (const auto& [k, v] : cfg) kv.set(k, v);
    return kv;
}

class Model {
public:
    explicit Model(const std::filesystem::path& path)
        : ckpt_(load_checkpoint(path)), provider_(make_provider(ckpt_.config.provider)) {}

    std::vector<py::array_t<double>> infer(const Array& image, std::optional<double> alpha,
                                           std::optional<int> candidates) const {
        std::vector<py::array_t<double>> out;
        for (const auto& m : sauge::infer(ckpt_, *provider_, to_image(image), {alpha, candidates})) out.push_back(to_array(m));
        return out;
    }
    std::size_t parameter_count() const { return ckpt_.model.parameter_count(); }
    int epoch() const { return ckpt_.epoch; }
    std::uint64_t step() const { return ckpt_.step; }
    std::map<std::string, std::string> config() const { return ckpt_.config.to_key_values().entries(); }

private:
    Checkpoint ckpt_;
    std::unique_ptr<FeatureProvider> provider_;
};

}  // namespace

PYBIND11_MODULE(_sauge, m) {
    m.doc() = "SAUGE multi-granularity edge detection";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);
    py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

    m.def(
        "balanced_bce",
        [](const Array& pred, const Mask& target) {
            const LossValue v = balanced_bce(to_grid<double>(pred), to_grid<std::uint8_t>(target));
            return py::make_tuple(v.value, to_array(v.grad));
        },
        py::arg("pred"), py::arg("target"));
    m.def(
        "differ_loss",
        [](const py::dict& maps, const std::vector<Mask>& annotations) {
            return differ_loss(to_edge_maps(maps), build_ladder(to_annotations(annotations))).value;
        },
        py::arg("maps"), py::arg("annotations"));
    m.def("total_loss",
          [](double guide, double differ, double side, double lambda, double beta) {
              return total_loss(guide, differ, side, lambda, beta).l_total;
          },
          py::arg("guide"), py::arg("differ"), py::arg("side"), py::arg("lam") = kDefaultLambda,
          py::arg("beta") = kDefaultBeta);

    m.def(
        "build_ladder",
        [](const std::vector<Mask>& annotations) {
            const GranularityLabels l = build_ladder(to_annotations(annotations));
            py::dict d;
            d["coarse"] = to_array(l.coarse);
            d["medium"] = to_array(l.medium);
            d["fine"] = to_array(l.fine);
            return d;
        },
        py::arg("annotations"));
    m.def(
        "sample_consensus",
        [](const std::vector<Mask>& annotations, double zeta, std::uint64_t seed) {
            const ConsensusSample c = sample_consensus(to_annotations(annotations), zeta, seed);
            return py::make_tuple(to_array(c.label), to_array(c.soft));
        },
        py::arg("annotations"), py::arg("zeta") = 0.2, py::arg("seed") = 0);
    m.def(
        "blend", [](const py::dict& maps, double alpha) { return to_array(blend(to_edge_maps(maps), alpha)); },
        py::arg("maps"), py::arg("alpha"));
    m.def("sweep_alphas", &sweep_alphas, py::arg("m"));

    m.def(
        "nms_thin", [](const Array& prob) { return to_array(nms_thin(to_grid<double>(prob))); }, py::arg("prob"));
    m.def(
        "_evaluate",
        [](const std::vector<std::vector<Array>>& candidates, const std::vector<std::vector<Mask>>& annotations,
           double tolerance, int thresholds, bool nms, int workers) {
            EvalConfig cfg{tolerance, thresholds, nms, workers};
            std::vector<std::vector<ProbMap>> preds;
            for (const auto& c : candidates) {
                preds.emplace_back();
                for (const auto& p : c) preds.back().push_back(to_grid<double>(p));
            }
            std::vector<AnnotationSet> gts;
            for (const auto& a : annotations) gts.push_back(to_annotations(a));
            py::gil_scoped_release release;
            if (!preds.empty() && preds.front().size() == 1) {
                std::vector<ProbMap> single;
                for (auto& p : preds) single.push_back(std::move(p.front()));
                return report_to_json(evaluate(single, gts, cfg));
            }
            return report_to_json(best_match_evaluate(preds, gts, cfg));
        },
        py::arg("candidates"), py::arg("annotations"), py::arg("tolerance"), py::arg("thresholds"), py::arg("nms"),
        py::arg("workers"));

    m.def("base_parameter_count", [] { return Stn(StnConfig::base(), 0).parameter_count(); });
    m.def(
        "train",
        [](const std::map<std::string, std::string>& config, const std::filesystem::path& data,
           const std::filesystem::path& out) {
            const TrainConfig cfg = TrainConfig::from_key_values(to_key_values(config));
            const DatasetManifest manifest = std::filesystem::is_directory(data) ? scan_dataset(data) : load_manifest(data);
            const std::vector<Sample> samples = load_samples(manifest);
            Checkpoint ckpt = make_checkpoint(cfg);
            TrainOptions opts;
            opts.checkpoint_dir = out;
            opts.log_path = out / "train_log.jsonl";
            std::filesystem::create_directories(out);
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(ckpt, samples, opts);
            }
            std::vector<double> totals;
            for (const auto& s : r.log) totals.push_back(s.loss.l_total);
            return py::make_tuple(totals, r.last_checkpoint);
        },
        py::arg("config"), py::arg("data"), py::arg("out"));

    py::class_<Model>(m, "Model")
        .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
        .def("infer", &Model::infer, py::arg("image"), py::arg("alpha") = std::nullopt,
             py::arg("candidates") = std::nullopt)
        .def_property_readonly("parameter_count", &Model::parameter_count)
        .def_property_readonly("epoch", &Model::epoch)
        .def_property_readonly("step", &Model::step)
        .def_property_readonly("config", &Model::config);
}
