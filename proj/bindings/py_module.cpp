// Python bindings over the core: model lifecycle, the TeDiO operations,
// synthetic data and metrics. Arrays cross the boundary as float32 numpy
// copies.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tedio/config.hpp"
#include "tedio/metrics.hpp"
#include "tedio/synth.hpp"
#include "tedio/tdt_io.hpp"

namespace py = pybind11;
using namespace tedio;

namespace {

Tensor tensor_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
    Tensor t = Tensor::uninit(std::move(shape));
    std::copy_n(a.data(), static_cast<size_t>(a.size()), t.ptr());
    return t;
}

py::array_t<float> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> a(shape);
    std::copy_n(t.ptr(), static_cast<size_t>(t.numel()), a.mutable_data());
    return a;
}

ModelConfig config_from_dict(const py::dict& d) {
    nlohmann::json j;
    for (auto item : d)
        j[py::cast<std::string>(item.first)] = py::cast<int64_t>(item.second);
    return ModelConfig::from_json(j);
}

TedioConfig tedio_from_dict(const py::dict& d) {
    nlohmann::json j;
    for (auto item : d) {
        const auto key = py::cast<std::string>(item.first);
        if (key == "bands" || key == "explicit_steps")
            j[key] = py::cast<std::vector<int64_t>>(item.second);
        else if (key == "eta")
            j[key] = py::cast<double>(item.second);
        else
            j[key] = py::cast<int64_t>(item.second);
    }
    return TedioConfig::from_json(j);
}

struct Model {
    DiTParams params;
    NoiseSchedule schedule;

    Model(const py::dict& config, uint64_t seed, const std::string& objective)
        : params(init_params<float>(config_from_dict(config), seed)),
          schedule(NoiseSchedule::make(
              {objective_from_name(objective), 50, 1000})) {}

    explicit Model(const std::string& checkpoint, const std::string& objective)
        : params(load_checkpoint(checkpoint)),
          schedule(NoiseSchedule::make({objective_from_name(objective), 50, 1000})) {}

    py::array_t<float> forward(const py::array_t<float>& z, int64_t cond, int64_t position) {
        auto out = dit_forward<float>(params, tensor_from_array(z), cond, position);
        return array_from_tensor(*out.prediction);
    }

    py::array_t<float> temporal_attention_map(const py::array_t<float>& z, int64_t cond,
                                              int64_t position, int64_t block) {
        auto out = dit_forward<float>(params, tensor_from_array(z), cond, position, block, block);
        return array_from_tensor(temporal_attention(*out.capture, params.config).detached());
    }

    py::array_t<float> variability(const py::array_t<float>& z, int64_t cond, int64_t position,
                                   int64_t block, const std::vector<int64_t>& bands) {
        auto out = dit_forward<float>(params, tensor_from_array(z), cond, position, block, block);
        auto attn = temporal_attention(*out.capture, params.config);
        return array_from_tensor(variability_scores(attn, bands).detached());
    }

    std::vector<double> train_clips(const py::array_t<float>& clips,
                                    const std::vector<int64_t>& classes, int64_t steps, double lr,
                                    int64_t batch, uint64_t seed) {
        if (clips.ndim() != 5) throw UsageError("train: clips must be [n, F, C, H, W]");
        std::vector<TrainItem> data;
        const auto n = clips.shape(0);
        Shape clip_shape{clips.shape(1), clips.shape(2), clips.shape(3), clips.shape(4)};
        const int64_t csz = numel_of(clip_shape);
        for (py::ssize_t i = 0; i < n; ++i) {
            Tensor t = Tensor::uninit(clip_shape);
            std::copy_n(clips.data() + i * csz, static_cast<size_t>(csz), t.ptr());
            data.push_back({t, classes.at(static_cast<size_t>(i))});
        }
        TrainConfig tc;
        tc.steps = steps;
        tc.lr = lr;
        tc.batch = batch;
        auto log = train(params, schedule, data, tc, seed);
        std::vector<double> losses;
        for (const auto& row : log) losses.push_back(row.loss);
        return losses;
    }

    py::tuple sample_video(int64_t cond, uint64_t seed, const py::object& tedio) {
        SampleResult result;
        if (tedio.is_none()) {
            result = sample(params, schedule, cond, seed, nullptr);
        } else {
            TedioConfig cfg = tedio_from_dict(py::cast<py::dict>(tedio));
            result = sample(params, schedule, cond, seed, &cfg);
        }
        py::list events;
        for (const auto& ev : result.events) events.append(py::make_tuple(ev.t, ev.iter, ev.loss));
        return py::make_tuple(array_from_tensor(result.video), events);
    }

    void save(const std::string& path) const { save_checkpoint(path, params); }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "TeDiO core: toy video DiT with temporal-diagonal latent optimization";

    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_IOError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<Model>(m, "Model")
        .def(py::init<const py::dict&, uint64_t, const std::string&>(), py::arg("config"),
             py::arg("seed") = 0, py::arg("objective") = "ddpm")
        .def_static(
            "load",
            [](const std::string& path, const std::string& objective) {
                return Model(path, objective);
            },
            py::arg("path"), py::arg("objective") = "ddpm")
        .def("forward", &Model::forward, py::arg("latent"), py::arg("cond"), py::arg("position"))
        .def("temporal_attention", &Model::temporal_attention_map, py::arg("latent"),
             py::arg("cond"), py::arg("position"), py::arg("block"))
        .def("variability_scores", &Model::variability, py::arg("latent"), py::arg("cond"),
             py::arg("position"), py::arg("block"),
             py::arg("bands") = std::vector<int64_t>{-1, 0, 1})
        .def("train", &Model::train_clips, py::arg("clips"), py::arg("classes"),
             py::arg("steps") = 100, py::arg("lr") = 0.05, py::arg("batch") = 2,
             py::arg("seed") = 0)
        .def("sample", &Model::sample_video, py::arg("cond"), py::arg("seed"),
             py::arg("tedio") = py::none())
        .def("save", &Model::save, py::arg("path"));

    m.def(
        "gen_clip",
        [](const py::dict& scene, int64_t frames, int64_t height, int64_t width) {
            nlohmann::json j;
            for (auto item : scene) {
                const auto key = py::cast<std::string>(item.first);
                if (key == "kind")
                    j[key] = py::cast<std::string>(item.second);
                else
                    j[key] = py::cast<double>(item.second);
            }
            return array_from_tensor(gen_coherent(SceneSpec::from_json(j), frames, height, width));
        },
        py::arg("scene"), py::arg("frames"), py::arg("height"), py::arg("width"));

    m.def(
        "inject_jitter",
        [](const py::array_t<float>& video, const py::dict& scene, const std::string& mode,
           double amplitude, uint64_t seed) {
            nlohmann::json j;
            for (auto item : scene) {
                const auto key = py::cast<std::string>(item.first);
                if (key == "kind")
                    j[key] = py::cast<std::string>(item.second);
                else
                    j[key] = py::cast<double>(item.second);
            }
            JitterSpec spec{jitter_mode_from_name(mode), amplitude, seed};
            return array_from_tensor(
                inject_jitter(tensor_from_array(video), SceneSpec::from_json(j), spec));
        },
        py::arg("video"), py::arg("scene"), py::arg("mode"), py::arg("amplitude"),
        py::arg("seed") = 0);

    m.def("flicker_score",
          [](const py::array_t<float>& v) { return flicker_score(tensor_from_array(v)); });
    m.def(
        "dynamic_proxy",
        [](const py::array_t<float>& v, double thr) {
            return dynamic_proxy(tensor_from_array(v), thr);
        },
        py::arg("video"), py::arg("threshold") = kDynamicProxyThreshold);
    m.def("separation_auroc", [](const std::vector<double>& coh, const std::vector<double>& inc) {
        return separation_auroc(coh, inc);
    });

    m.def("read_tdt", [](const std::string& path) { return array_from_tensor(read_tdt(path)); });
    m.def("write_tdt", [](const std::string& path, const py::array_t<float>& a) {
        write_tdt(path, tensor_from_array(a));
    });
}
