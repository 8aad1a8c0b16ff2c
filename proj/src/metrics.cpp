#include "calib/metrics.hpp"

#include "calib/csv.hpp"
#include "calib/error.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <map>
#include <sstream>

namespace calib {

double nrmse(std::span<const double> y, std::span<const double> y_hat) {
    if (y.size() != y_hat.size()) {
        throw Error("length mismatch: " + std::to_string(y.size()) + " vs " + std::to_string(y_hat.size()));
    }
    if (y.size() < 2) throw Error("nrmse needs at least 2 points");
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) throw Error("zero range");
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) sum += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    return std::sqrt(sum / static_cast<double>(y.size())) / range;
}

std::array<double, KineticParams::kSize> parameter_nrmse(std::span<const KineticParams> predictions,
                                                         std::span<const KineticParams> truths) {
    if (predictions.size() != truths.size()) {
        throw Error("length mismatch: " + std::to_string(predictions.size()) + " predictions vs " +
                    std::to_string(truths.size()) + " truths");
    }
    std::array<double, KineticParams::kSize> out{};
    std::vector<double> y(truths.size()), yh(truths.size());
    for (std::size_t k = 0; k < KineticParams::kSize; ++k) {
        for (std::size_t i = 0; i < truths.size(); ++i) {
            y[i] = truths[i].to_array()[k];
            yh[i] = predictions[i].to_array()[k];
        }
        try {
            out[k] = nrmse(y, yh);
        } catch (const Error& e) {
            throw Error(std::string(e.what()) + " in parameter " + param_names()[k]);
        }
    }
    return out;
}

namespace {

std::string echo(const KineticParams& p) {
    std::string s;
    const auto v = p.to_array();
    for (std::size_t i = 0; i < v.size(); ++i) {
        s += (i ? ", " : "") + param_names()[i] + "=" + csv::format_double(v[i]);
    }
    return s;
}

} // namespace

SpeciesTriple trajectory_nrmse(const KineticParams& predicted, const ObservationSeries& sample,
                               const SolverConfig& solver) {
    sample.validate();
    Trajectory traj;
    try {
        traj = simulate(predicted, sample.initial_state(), sample.times, solver);
    } catch (const DivergenceError& e) {
        throw Error(std::string(e.what()) + " for params {" + echo(predicted) + "}");
    }
    std::vector<double> X, S, P;
    for (const auto& s : traj.states) {
        X.push_back(s.X);
        S.push_back(s.S);
        P.push_back(s.P);
    }
    return {nrmse(sample.X, X), nrmse(sample.S, S), nrmse(sample.P, P)};
}

SpeciesTriple median_triple(std::span<const SpeciesTriple> triples) {
    if (triples.empty()) throw Error("median of an empty set");
    auto median = [&](double SpeciesTriple::*field) {
        std::vector<double> v;
        for (const auto& t : triples) v.push_back(t.*field);
        const std::size_t n = v.size();
        std::sort(v.begin(), v.end());
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    return {median(&SpeciesTriple::X), median(&SpeciesTriple::S), median(&SpeciesTriple::P)};
}

ComparisonReport comparison_report(std::span<const MethodPredictions> methods, std::span<const EvalSample> samples,
                                   const std::string& dataset_id, const SolverConfig& solver) {
    if (samples.empty()) throw Error("comparison report needs at least one sample");
    const bool truths_known =
        samples.size() >= 2 && std::all_of(samples.begin(), samples.end(), [](const auto& s) { return s.truth.has_value(); });

    ComparisonReport report;
    for (const auto& m : methods) {
        if (m.ids.size() != m.params.size()) throw Error("method '" + m.label + "': ids and params differ in length");
        std::map<std::string, const KineticParams*> by_id;
        for (std::size_t i = 0; i < m.ids.size(); ++i) by_id[m.ids[i]] = &m.params[i];

        std::string missing;
        for (const auto& s : samples) {
            if (!by_id.count(s.id)) missing += (missing.empty() ? "" : ", ") + s.id;
        }
        if (!missing.empty()) throw Error("method '" + m.label + "' is missing samples: " + missing);

        MetricReport r;
        r.method = m.label;
        r.dataset = dataset_id;
        r.n_samples = samples.size();
        std::vector<KineticParams> preds, truths;
        for (const auto& s : samples) {
            const KineticParams& p = *by_id.at(s.id);
            r.per_sample.push_back(trajectory_nrmse(p, s.series, solver));
            if (truths_known) {
                preds.push_back(p);
                truths.push_back(*s.truth);
            }
        }
        r.trajectory = median_triple(r.per_sample);
        if (truths_known) r.parameter_nrmse = parameter_nrmse(preds, truths);
        report.methods.push_back(std::move(r));
    }
    return report;
}

namespace {

using Table = std::vector<std::vector<std::string>>;

Table build_table(const ComparisonReport& report, std::string (*fmt)(double)) {
    Table t;
    std::vector<std::string> header{"quantity"};
    for (const auto& m : report.methods) header.push_back(m.method);
    t.push_back(header);

    const std::pair<const char*, double SpeciesTriple::*> species[] = {
        {"biomass", &SpeciesTriple::X}, {"glucose", &SpeciesTriple::S}, {"itaconic_acid", &SpeciesTriple::P}};
    for (const auto& [name, field] : species) {
        std::vector<std::string> row{name};
        for (const auto& m : report.methods) row.push_back(fmt(m.trajectory.*field));
        t.push_back(row);
    }
    const bool with_params = !report.methods.empty() && std::all_of(report.methods.begin(), report.methods.end(),
                                                                     [](const auto& m) { return m.parameter_nrmse; });
    if (with_params) {
        for (std::size_t k = 0; k < KineticParams::kSize; ++k) {
            std::vector<std::string> row{"param_" + param_names()[k]};
            for (const auto& m : report.methods) row.push_back(fmt((*m.parameter_nrmse)[k]));
            t.push_back(row);
        }
    }
    return t;
}

} // namespace

std::string ComparisonReport::to_csv() const {
    std::string out;
    for (const auto& row : build_table(*this, csv::format_double)) {
        for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
        out += '\n';
    }
    return out;
}

std::string ComparisonReport::to_text() const {
    const Table t = build_table(*this, [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", v);
        return std::string(buf);
    });
    std::vector<std::size_t> width(t.front().size(), 0);
    for (const auto& row : t) {
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    }
    std::ostringstream os;
    os << "NRMSE";
    if (!methods.empty()) os << " (" << methods.front().dataset << ", n = " << methods.front().n_samples << ")";
    os << '\n';
    for (const auto& row : t) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            const std::string pad(width[i] - row[i].size(), ' ');
            os << (i ? "  " : "") << (i ? pad + row[i] : row[i] + pad);
        }
        os << '\n';
    }
    return os.str();
}

} // namespace calib
