#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dapp/matrix.hpp"

namespace dapp {

// One timestamped point; mark index is absent for purely temporal data.
struct Event {
    double t = 0.0;
    std::optional<int> mark;
};

struct EventSequence {
    std::vector<Event> events;  // strictly increasing in t, all t in [0, T)
    double horizon = 0.0;

    [[nodiscard]] std::size_t size() const { return events.size(); }
    [[nodiscard]] bool empty() const { return events.empty(); }
};

// Discrete mark set; size 0 means temporal-only. Events embed into R^d with
// coordinate 0 = time and a one-hot mark block, so d = 1 + size.
struct MarkSpace {
    int size = 0;

    [[nodiscard]] int dim() const { return 1 + size; }
    // Number of mark channels the intensity ranges over (1 when temporal-only).
    [[nodiscard]] int channels() const { return size == 0 ? 1 : size; }
};

// Ground-truth intensity descriptor for synthetic data. `scales` carries the
// per-sequence uniform factor of the non-homogeneous generators, aligned with
// Dataset::sequences.
struct TruthDescriptor {
    std::string name;                   // hawkes | self_correction | nhpp1 | nhpp2
    std::vector<double> params;
    std::vector<double> scales;
};

struct Dataset {
    std::vector<EventSequence> sequences;
    MarkSpace mark_space;
    std::optional<TruthDescriptor> truth;
};

enum class ValidationError : std::uint8_t {
    None,
    NonMonotoneTimes,
    TimeOutOfHorizon,
    NonFiniteValue,
    MarkOutOfRange,
};

struct ValidationResult {
    ValidationError error = ValidationError::None;
    std::size_t index = 0;  // offending event, when error != None

    [[nodiscard]] bool ok() const { return error == ValidationError::None; }
};

inline const char* to_string(ValidationError e) {
    switch (e) {
        case ValidationError::None: return "ok";
        case ValidationError::NonMonotoneTimes: return "NonMonotoneTimes";
        case ValidationError::TimeOutOfHorizon: return "TimeOutOfHorizon";
        case ValidationError::NonFiniteValue: return "NonFiniteValue";
        case ValidationError::MarkOutOfRange: return "MarkOutOfRange";
    }
    return "?";
}

inline ValidationResult validate_sequence(const EventSequence& seq,
                                          const MarkSpace& ms = MarkSpace{}) {
    if (!std::isfinite(seq.horizon) || seq.horizon <= 0.0)
        return {ValidationError::NonFiniteValue, 0};
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        const Event& e = seq.events[i];
        if (!std::isfinite(e.t)) return {ValidationError::NonFiniteValue, i};
        if (e.t < 0.0 || e.t >= seq.horizon) return {ValidationError::TimeOutOfHorizon, i};
        if (e.t <= prev) return {ValidationError::NonMonotoneTimes, i};
        if (e.mark && (*e.mark < 0 || *e.mark >= ms.size))
            return {ValidationError::MarkOutOfRange, i};
        prev = e.t;
    }
    return {};
}

struct MarkOutOfRange : std::runtime_error {
    explicit MarkOutOfRange(const std::string& what) : std::runtime_error(what) {}
};

// Embeds (t, mark) as [t, one-hot(mark)]. Temporal-only events with d = 1
// embed as [t]; a temporal-only event in a marked space gets an all-zero
// mark block.
inline Vec embed_event(double t, std::optional<int> mark, const MarkSpace& ms) {
    Vec x = Vec::Zero(ms.dim());
    x[0] = t;
    if (mark) {
        if (*mark < 0 || *mark >= ms.size)
            throw MarkOutOfRange("mark " + std::to_string(*mark) + " outside mark set of size " +
                                 std::to_string(ms.size));
        x[1 + *mark] = 1.0;
    }
    return x;
}

inline Vec embed_event(const Event& e, const MarkSpace& ms) { return embed_event(e.t, e.mark, ms); }

// Events of one sequence embedded as columns of a d x n matrix.
inline Mat embed_sequence(const EventSequence& seq, const MarkSpace& ms) {
    Mat x(ms.dim(), static_cast<Eigen::Index>(seq.size()));
    for (std::size_t i = 0; i < seq.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = embed_event(seq.events[i], ms);
    return x;
}

struct ParseError : std::runtime_error {
    std::size_t line;
    ParseError(std::size_t line_, const std::string& what)
        : std::runtime_error("line " + std::to_string(line_) + ": " + what), line(line_) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline nlohmann::json truth_to_json(const TruthDescriptor& t) {
    nlohmann::json j{{"name", t.name}, {"params", t.params}};
    if (!t.scales.empty()) j["scales"] = t.scales;
    return j;
}

inline TruthDescriptor truth_from_json(const nlohmann::json& j, std::size_t line) {
    if (!j.is_object() || !j.contains("name"))
        throw ParseError(line, "truth descriptor must be an object with a name");
    TruthDescriptor t;
    t.name = j.at("name").get<std::string>();
    if (j.contains("params")) t.params = j.at("params").get<std::vector<double>>();
    if (j.contains("scales")) t.scales = j.at("scales").get<std::vector<double>>();
    return t;
}

}  // namespace detail

// JSON Lines, one sequence per line:
//   {"T": <real>, "events": [{"t": <real>, "mark": <int, optional>}, ...]}
// with an optional first header line {"marks": <int>, "truth": {...}}.
inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    if (ds.mark_space.size != 0 || ds.truth) {
        nlohmann::json header;
        header["marks"] = ds.mark_space.size;
        if (ds.truth) header["truth"] = detail::truth_to_json(*ds.truth);
        out << header.dump() << "\n";
    }
    for (const EventSequence& seq : ds.sequences) {
        nlohmann::json line;
        line["T"] = seq.horizon;
        nlohmann::json evs = nlohmann::json::array();
        for (const Event& e : seq.events) {
            nlohmann::json ev{{"t", e.t}};
            if (e.mark) ev["mark"] = *e.mark;
            evs.push_back(std::move(ev));
        }
        line["events"] = std::move(evs);
        out << line.dump() << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    Dataset ds;
    std::string raw;
    std::size_t lineno = 0;
    bool first = true;
    while (std::getline(in, raw)) {
        ++lineno;
        if (raw.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(raw);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(lineno, e.what());
        }
        if (first && j.is_object() && !j.contains("events")) {
            if (j.contains("marks")) ds.mark_space.size = j.at("marks").get<int>();
            if (j.contains("truth")) ds.truth = detail::truth_from_json(j.at("truth"), lineno);
            first = false;
            continue;
        }
        first = false;
        if (!j.is_object() || !j.contains("T") || !j.contains("events"))
            throw ParseError(lineno, "sequence record needs T and events");
        EventSequence seq;
        try {
            seq.horizon = j.at("T").get<double>();
            for (const auto& ev : j.at("events")) {
                Event e;
                e.t = ev.at("t").get<double>();
                if (ev.contains("mark")) e.mark = ev.at("mark").get<int>();
                seq.events.push_back(e);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(lineno, e.what());
        }
        const ValidationResult v = validate_sequence(seq, ds.mark_space);
        if (!v.ok())
            throw ParseError(lineno, std::string(to_string(v.error)) + " at event " +
                                          std::to_string(v.index));
        ds.sequences.push_back(std::move(seq));
    }
    return ds;
}

}  // namespace dapp
