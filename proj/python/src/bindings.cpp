// JSON crosses the boundary as text; the Python package wraps it in dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "teleshift/codec.hpp"
#include "teleshift/error.hpp"
#include "teleshift/hub.hpp"
#include "teleshift/scenario.hpp"
#include "teleshift/sync.hpp"

namespace py = pybind11;
using namespace teleshift;

namespace {

Json parse(const std::string& text) {
    try {
        return Json::parse(text);
    } catch (const Json::exception& e) {
        throw Error(Errc::MalformedEnvelope, e.what());
    }
}

std::vector<ArmUpdate> updates_of(const std::string& text) {
    std::vector<ArmUpdate> out;
    for (const Json& u : parse(text)) out.push_back(arm_update_from_json(u));
    return out;
}

std::string merge(const std::string& topology, const std::string& updates) {
    MergeResult r = merge_topology(topology_from_json(parse(topology)), updates_of(updates));
    Json out{{"topology", to_json(r.topology)}, {"unknown", r.unknown}};
    Json applied = Json::array();
    for (const ArmUpdate& u : r.applied) applied.push_back(to_json(u));
    out["applied"] = std::move(applied);
    return out.dump();
}

std::string embed(const std::string& topology, const std::string& anchor) {
    const Embedding e = embed_assembly(topology_from_json(parse(topology)), anchor);
    Json out = Json::object();
    for (const auto& [id, p] : e.positions) out[id] = p;
    return out.dump();
}

std::string run(const std::string& scenario, bool realtime) {
    return to_json(run_scenario(parse_scenario_text(scenario), RunOptions{realtime, false})).dump();
}

std::string run_file(const std::string& path) { return to_json(run_scenario(load_scenario(path))).dump(); }

class PyHub {
public:
    ConnectionId open() { return hub_.open_connection(); }
    void close(ConnectionId c) { hub_.close_connection(c); }

    std::vector<std::pair<ConnectionId, std::string>> handle_line(ConnectionId c, const std::string& line,
                                                                  std::int64_t now_ms) {
        std::vector<std::pair<ConnectionId, std::string>> out;
        for (const auto& o : hub_.handle_line(c, line, now_ms)) out.emplace_back(o.to, encode_line(o.envelope));
        return out;
    }

    std::optional<std::string> session(const std::string& id) const {
        auto s = hub_.session(id);
        if (!s) return std::nullopt;
        return to_json(*s).dump();
    }

private:
    Hub hub_;
};

}  // namespace

PYBIND11_MODULE(_teleshift, m) {
    // Kept alive by the module attribute for the life of the interpreter.
    static py::handle error_type = py::exception<Error>(m, "TeleshiftError").release();
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object err = py::reinterpret_borrow<py::object>(error_type)(py::str(e.what()));
            err.attr("code") = py::str(std::string(to_string(e.code())));
            err.attr("subjects") = py::cast(e.subjects());
            err.attr("magnitude") = e.magnitude();
            PyErr_SetObject(error_type.ptr(), err.ptr());
        }
    });

    m.def("merge_topology", &merge, py::arg("topology"), py::arg("updates"));
    m.def("embed_assembly", &embed, py::arg("topology"), py::arg("anchor"));
    m.def("run_scenario", &run, py::arg("scenario"), py::arg("realtime") = false,
          py::call_guard<py::gil_scoped_release>());
    m.def("run_scenario_file", &run_file, py::arg("path"), py::call_guard<py::gil_scoped_release>());
    m.def("canonical", [](const std::string& text) { return canonical(parse(text)); });
    m.def("sha256_hex", [](const std::string& bytes) { return sha256_hex(bytes); });
    m.def("backoff_delay_ms", &backoff_delay_ms);

    py::class_<PyHub>(m, "Hub")
        .def(py::init<>())
        .def("open_connection", &PyHub::open)
        .def("close_connection", &PyHub::close)
        .def("handle_line", &PyHub::handle_line, py::arg("conn"), py::arg("line"), py::arg("now_ms") = 0)
        .def("session", &PyHub::session);
}
