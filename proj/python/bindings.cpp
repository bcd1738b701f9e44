// Python module `evrank._core`. Event types cross the boundary as a category
// string or a (subject, predicate, object) tuple; dates as "YYYY-MM-DD".

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "evrank/abduction.hpp"
#include "evrank/error.hpp"
#include "evrank/intensity.hpp"
#include "evrank/metrics.hpp"
#include "evrank/pipeline.hpp"
#include "evrank/proposer.hpp"
#include "evrank/retrieval.hpp"
#include "evrank/synthetic.hpp"

namespace py = pybind11;
using namespace evrank;

namespace {

EventType to_type(const py::handle& h) {
    if (py::isinstance<py::str>(h)) return CategoricalType{h.cast<std::string>()};
    const auto t = h.cast<std::tuple<std::string, std::string, std::string>>();
    return StructuredType{std::get<0>(t), std::get<1>(t), std::get<2>(t)};
}

py::object from_type(const EventType& type) {
    if (const auto* c = std::get_if<CategoricalType>(&type)) return py::str(c->category);
    const auto& s = std::get<StructuredType>(type);
    return py::make_tuple(s.subject, s.predicate, s.object);
}

py::dict cause_dict(const CauseHypothesis& c) {
    py::dict d;
    d["type"] = c.type;
    d["time"] = format_date(c.time);
    d["subject"] = c.subject ? py::cast(*c.subject) : py::none();
    d["object"] = c.object ? py::cast(*c.object) : py::none();
    d["text"] = c.text ? py::cast(*c.text) : py::none();
    return d;
}

std::vector<Event> to_events(const std::vector<std::pair<double, py::object>>& items) {
    std::vector<Event> out;
    for (const auto& [t, ty] : items) out.push_back({t, to_type(ty), std::nullopt});
    return out;
}

HawkesModel make_hawkes(std::vector<double> mu, std::vector<double> alpha, double delta) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < mu.size(); ++i) names.push_back("k" + std::to_string(i));
    HawkesParams p{std::move(mu), std::move(alpha), delta};
    return HawkesModel(Vocabulary(Schema::categorical, names), p);
}

std::vector<CodedEvent> to_coded(const std::vector<std::pair<double, TypeId>>& items) {
    std::vector<CodedEvent> out;
    for (const auto& [t, k] : items) out.push_back({t, k});
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Event sequence prediction with abductive reranking";
    py::register_exception<Error>(m, "EvrankError", PyExc_RuntimeError);

    // ---------------------------------------------------------- retrieval
    m.def("levenshtein", [](const std::string& a, const std::string& b) { return levenshtein(a, b); });
    m.def(
        "similarity",
        [](const std::string& a, const std::string& b, const std::string& kind) {
            return similarity(parse_sim_kind(kind), a, b);
        },
        py::arg("a"), py::arg("b"), py::arg("kind") = "edit");
    m.def(
        "retrieve",
        [](const std::vector<std::pair<double, py::object>>& history, const std::vector<std::string>& hypotheses,
           std::size_t d, double proposal_time, const std::string& kind, std::optional<std::size_t> cap) {
            HistoryIndex index(to_events(history), parse_sim_kind(kind));
            return index.retrieve(hypotheses, d, proposal_time, cap).history_index;
        },
        py::arg("history"), py::arg("hypotheses"), py::arg("d"), py::arg("proposal_time"), py::arg("kind") = "edit",
        py::arg("total_cap") = py::none(),
        "Indices into `history` (a time-sorted list of (time, type)) of the evidence for `hypotheses`.");

    // ------------------------------------------------------------ prompts
    py::class_<PromptTemplate>(m, "PromptTemplate")
        .def_property_readonly("demonstrations", [](const PromptTemplate& t) { return t.demonstrations.size(); });
    m.def(
        "load_template",
        [](const std::filesystem::path& tmpl, const std::optional<std::filesystem::path>& demos,
           const std::vector<std::string>& vocabulary) { return load_template(tmpl, demos.value_or(""), vocabulary); },
        py::arg("template"), py::arg("demos") = py::none(), py::arg("vocabulary") = std::vector<std::string>{});
    m.def(
        "build_prompt",
        [](const PromptTemplate& t, const py::object& type, double time, const std::string& epoch) {
            return build_prompt(t, Event{time, to_type(type), std::nullopt}, parse_date(epoch));
        },
        py::arg("template"), py::arg("type"), py::arg("time"), py::arg("epoch"));
    m.def(
        "parse_causes",
        [](const std::string& text, const std::string& schema) {
            const auto parsed = parse_causes(text, parse_schema(schema));
            py::list causes;
            for (const auto& c : parsed.causes) causes.append(cause_dict(c));
            return py::make_tuple(causes, parsed.warnings);
        },
        py::arg("text"), py::arg("schema") = "categorical", "Returns (causes, warnings).");

    // ------------------------------------------------------------ metrics
    py::class_<EvalRecord>(m, "EvalRecord")
        .def(py::init([](std::vector<std::string> ranked, std::vector<std::string> truths, std::string id,
                         std::optional<double> true_time, std::optional<double> predicted_time) {
                 return EvalRecord{std::move(id), std::move(ranked), std::move(truths), true_time, predicted_time};
             }),
             py::arg("ranked"), py::arg("truths"), py::arg("query_id") = "q", py::arg("true_time") = py::none(),
             py::arg("predicted_time") = py::none())
        .def_readwrite("query_id", &EvalRecord::query_id)
        .def_readwrite("ranked", &EvalRecord::ranked)
        .def_readwrite("truths", &EvalRecord::truths)
        .def_readwrite("true_time", &EvalRecord::true_time)
        .def_readwrite("predicted_time", &EvalRecord::predicted_time);
    m.def("mean_rank", [](const std::vector<EvalRecord>& r, std::optional<std::size_t> m) { return mean_rank(r, m); },
          py::arg("records"), py::arg("m") = py::none());
    m.def("map_at_m", [](const std::vector<EvalRecord>& r, std::size_t m) { return map_at_m(r, m); });
    m.def("mar_at_m", [](const std::vector<EvalRecord>& r, std::size_t m) { return mar_at_m(r, m); });
    m.def("rmse_time", [](const std::vector<EvalRecord>& r) { return rmse_time(r); });

    // -------------------------------------------------------- point process
    py::class_<HawkesModel>(m, "Hawkes")
        .def(py::init(&make_hawkes), py::arg("mu"), py::arg("alpha"), py::arg("delta"),
             "alpha is row-major K x K, alpha[src * K + dst].")
        .def(
            "intensity",
            [](const HawkesModel& h, const std::vector<std::pair<double, TypeId>>& history, TypeId type, double t) {
                return intensity(h, to_coded(history), type, t);
            },
            py::arg("history"), py::arg("type"), py::arg("t"))
        .def(
            "log_likelihood",
            [](const HawkesModel& h, const std::vector<std::pair<double, TypeId>>& events, double start, double end) {
                Rng rng(0);
                return h.objective(to_coded(events), start, end, {}, rng, {});
            },
            py::arg("events"), py::arg("start"), py::arg("end"))
        .def(
            "sample_next",
            [](const HawkesModel& h, const std::vector<std::pair<double, TypeId>>& history, double t0, std::size_t n,
               std::uint64_t seed) {
                const auto coded = to_coded(history);
                auto ev = h.bind(coded);
                Rng rng(seed);
                std::vector<double> out(n);
                for (auto& x : out) x = sample_next_time_thinning(*ev, t0, rng);
                return out;
            },
            py::arg("history"), py::arg("t0"), py::arg("n"), py::arg("seed") = 1,
            "n independent next-event times after t0 by thinning.");

    m.def(
        "generate_synthetic",
        [](std::size_t types, std::size_t sequences, double horizon, std::uint64_t seed) {
            const auto ds = generate_synthetic(default_synthetic_spec(types, sequences, horizon, seed));
            py::list out;
            for (const auto& s : ds.sequences) {
                py::list events;
                for (const auto& e : s.events) events.append(py::make_tuple(e.time, from_type(e.type)));
                out.append(events);
            }
            return out;
        },
        py::arg("types") = 10, py::arg("sequences") = 100, py::arg("horizon") = 40.0, py::arg("seed") = 7,
        "Rule-structured synthetic sequences as lists of (time, category).");

    // ----------------------------------------------------------- pipeline
    m.def(
        "run_stage",
        [](const std::string& stage, const std::filesystem::path& config, const std::map<std::string, std::string>& overrides) {
            auto c = Config::load(config);
            for (const auto& [k, v] : overrides) c.set(k, v);
            py::gil_scoped_release release;
            const auto r = run_stage(parse_stage(stage), c);
            return std::make_pair(r.lines, r.backend_calls);
        },
        py::arg("stage"), py::arg("config"), py::arg("overrides") = std::map<std::string, std::string>{},
        "Runs one pipeline stage; returns (summary lines, backend calls).");
}
