#include "verblab/probe.hpp"
#include "verblab/common.hpp"

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace verblab {

void ProbeConfig::validate() const {
    if (l1_weight < 0 || l2_weight < 0) throw ValidationError("probe penalties must be non-negative");
    if (!std::isfinite(l1_weight) || !std::isfinite(l2_weight)) throw ValidationError("probe penalties must be finite");
    if (iterations < 1) throw ValidationError("probe iterations must be at least 1");
}

std::vector<double> Probe::scores(std::span<const float> act) const {
    if (static_cast<int>(act.size()) != dim) {
        throw ValidationError("probe expects " + std::to_string(dim) + " features, got " + std::to_string(act.size()));
    }
    std::vector<double> s(bias.begin(), bias.end());
    for (int j = 0; j < dim; ++j) {
        const double z = (static_cast<double>(act[j]) - mean[j]) * inv_std[j];
        const float * w = weights.row(j);
        for (int c = 0; c < n_labels(); ++c) s[c] += z * w[c];
    }
    return s;
}

namespace {

double largest_eigenvalue(const Eigen::MatrixXd & gram, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "probe-power-iteration"));
    Eigen::VectorXd v(gram.rows());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = standard_normal(rng);
    double lambda = 0.0;
    for (int it = 0; it < 100; ++it) {
        Eigen::VectorXd w = gram * v;
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        lambda = v.dot(w) / v.squaredNorm();
        v = w / norm;
    }
    return lambda;
}

} // namespace

Probe train_probe(std::span<const ActivationVector> acts, std::span<const std::string> labels, const ProbeConfig & cfg) {
    cfg.validate();
    if (acts.size() != labels.size()) throw ValidationError("activations and labels are not aligned");
    if (acts.empty()) throw ValidationError("probe training set is empty");
    const int d = static_cast<int>(acts[0].values.size());
    const int n = static_cast<int>(acts.size());

    Probe p;
    std::set<std::string> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2) throw ValidationError("probe training needs at least two distinct labels");
    p.labels.assign(distinct.begin(), distinct.end());
    std::map<std::string, int> index;
    for (int c = 0; c < p.n_labels(); ++c) index[p.labels[c]] = c;
    p.dim = d;
    p.layer = acts[0].layer;
    const int k = p.n_labels();

    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(acts[i].values.size()) != d) throw ValidationError("activation widths differ");
        for (int j = 0; j < d; ++j) {
            const float v = acts[i].values[j];
            if (!std::isfinite(v)) throw ValidationError("non-finite probe feature");
            x(i, j) = v;
        }
    }
    p.mean.assign(d, 0.0f);
    p.inv_std.assign(d, 1.0f);
    if (cfg.standardize) {
        for (int j = 0; j < d; ++j) {
            const double m = x.col(j).mean();
            const double var = (x.col(j).array() - m).square().mean();
            p.mean[j] = static_cast<float>(m);
            p.inv_std[j] = var > 1e-12 ? static_cast<float>(1.0 / std::sqrt(var)) : 1.0f;
        }
    }
    // Standardise with the stored float statistics so prediction sees the same features.
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) x(i, j) = (x(i, j) - p.mean[j]) * p.inv_std[j];
    }
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, k);
    for (int i = 0; i < n; ++i) y(i, index.at(labels[i])) = 1.0;

    Eigen::MatrixXd xa(n, d + 1);
    xa << x, Eigen::VectorXd::Ones(n);
    const double lipschitz = 0.5 * largest_eigenvalue(xa.transpose() * xa / n, cfg.seed) + cfg.l2_weight / n;
    const double step = lipschitz > 0 ? 1.0 / lipschitz : 1.0;
    const double l1 = cfg.l1_weight / n, l2 = cfg.l2_weight / n;

    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, k);
    Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k);
    for (int it = 0; it < cfg.iterations; ++it) {
        Eigen::MatrixXd z = (x * w).rowwise() + b;
        Eigen::MatrixXd prob(n, k);
        for (int i = 0; i < n; ++i) {
            const double mx = z.row(i).maxCoeff();
            Eigen::RowVectorXd e = (z.row(i).array() - mx).exp();
            prob.row(i) = e / e.sum();
        }
        const Eigen::MatrixXd g = (prob - y) / n;
        const Eigen::MatrixXd gw = x.transpose() * g + l2 * w;
        b -= step * g.colwise().sum();
        w -= step * gw;
        const double t = step * l1;
        w = w.unaryExpr([t](double v) { return v > t ? v - t : (v < -t ? v + t : 0.0); });
    }

    p.weights = Mat(d, k);
    for (int j = 0; j < d; ++j) {
        for (int c = 0; c < k; ++c) p.weights.at(j, c) = static_cast<float>(w(j, c));
    }
    p.bias.resize(k);
    for (int c = 0; c < k; ++c) p.bias[c] = static_cast<float>(b[c]);
    return p;
}

int probe_predict_index(const Probe & probe, std::span<const float> act) {
    const auto s = probe.scores(act);
    int best = 0;
    for (int c = 1; c < static_cast<int>(s.size()); ++c) {
        if (s[c] > s[best]) best = c;
    }
    return best;
}

std::string probe_predict(const Probe & probe, const ActivationVector & act) {
    return probe.labels[static_cast<std::size_t>(probe_predict_index(probe, act.values))];
}

// ----------------------------------------------------------------------------------------------
// verblab-probe v1, then "dim", "labels", "layer" lines, one "label <text>" line per label, "end",
// then float32 blobs: mean[dim], inv_std[dim], weights[dim x labels], bias[labels].

namespace {

constexpr std::string_view kProbeMagic = "verblab-probe v1";

static_assert(std::endian::native == std::endian::little, "probe blobs assume a little-endian host");

void write_floats(std::ofstream & f, std::span<const float> v) {
    f.write(reinterpret_cast<const char *>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

void read_floats(std::ifstream & f, std::span<float> v, const std::filesystem::path & path) {
    f.read(reinterpret_cast<char *>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
    if (!f) throw ValidationError("truncated probe file: " + path.string());
}

} // namespace

void save_probe(const Probe & probe, const std::filesystem::path & path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write probe: " + path.string());
    f << kProbeMagic << '\n' << "dim " << probe.dim << '\n' << "labels " << probe.n_labels() << '\n';
    f << "layer " << probe.layer << '\n';
    for (const auto & l : probe.labels) f << "label " << l << '\n';
    f << "end\n";
    write_floats(f, probe.mean);
    write_floats(f, probe.inv_std);
    write_floats(f, probe.weights.data);
    write_floats(f, probe.bias);
    if (!f) throw RuntimeFailure("failed writing probe: " + path.string());
}

Probe load_probe(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open probe: " + path.string());
    std::string line;
    std::getline(f, line);
    if (line != kProbeMagic) throw ValidationError("not a version-1 probe file: " + path.string());
    Probe p;
    int n_labels = -1;
    while (std::getline(f, line) && line != "end") {
        const auto sp = line.find(' ');
        if (sp == std::string::npos) throw ValidationError("malformed probe header line: " + line);
        const std::string key = line.substr(0, sp), value = line.substr(sp + 1);
        if (key == "dim") p.dim = std::stoi(value);
        else if (key == "labels") n_labels = std::stoi(value);
        else if (key == "layer") p.layer = std::stoi(value);
        else if (key == "label") p.labels.push_back(value);
        else throw ValidationError("unknown probe header key: " + key);
    }
    if (p.dim <= 0 || n_labels != static_cast<int>(p.labels.size()) || n_labels < 2) {
        throw ValidationError("inconsistent probe header: " + path.string());
    }
    p.mean.resize(p.dim);
    p.inv_std.resize(p.dim);
    p.weights = Mat(p.dim, n_labels);
    p.bias.resize(n_labels);
    read_floats(f, p.mean, path);
    read_floats(f, p.inv_std, path);
    read_floats(f, p.weights.data, path);
    read_floats(f, p.bias, path);
    return p;
}

ClassificationReport classification_report(const Probe & probe, std::span<const ActivationVector> acts,
                                           std::span<const std::string> gold) {
    if (acts.size() != gold.size()) throw ValidationError("activations and labels are not aligned");
    ClassificationReport r;
    std::map<std::string, std::size_t> pos;
    for (const auto & l : probe.labels) {
        pos[l] = r.per_label.size();
        r.per_label.push_back({l});
    }
    for (std::size_t i = 0; i < acts.size(); ++i) {
        if (!pos.count(gold[i])) {
            pos[gold[i]] = r.per_label.size();
            r.per_label.push_back({gold[i]});
        }
        const std::string pred = probe_predict(probe, acts[i]);
        ++r.per_label[pos[gold[i]]].support;
        ++r.per_label[pos[pred]].predicted;
        ++r.n;
        if (pred == gold[i]) {
            ++r.correct;
            ++r.per_label[pos[pred]].correct;
        }
    }
    return r;
}

void write_classification_csv(const std::filesystem::path & path, const ClassificationReport & report) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + path.string());
    f << "label,support,predicted,correct,precision,recall\n";
    char buf[64];
    for (const auto & s : report.per_label) {
        f << s.label << ',' << s.support << ',' << s.predicted << ',' << s.correct << ',';
        std::snprintf(buf, sizeof buf, "%.6f,%.6f", s.precision(), s.recall());
        f << buf << '\n';
    }
}

} // namespace verblab
