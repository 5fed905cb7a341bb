#include "doctest.h"
#include "verblab/common.hpp"
#include "verblab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>

using namespace verblab;

namespace {

struct Data {
    std::vector<ActivationVector> x;
    std::vector<std::string> y;
};

// Gaussian clusters around well separated centres, one per label.
Data clusters(int n_labels, int per_label, int dim, double margin, double noise, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<float>> centres(static_cast<std::size_t>(n_labels));
    for (int c = 0; c < n_labels; ++c) {
        centres[c].assign(static_cast<std::size_t>(dim), 0.0f);
        centres[c][static_cast<std::size_t>(c % dim)] = static_cast<float>(margin * 2.0);
        for (auto & v : centres[c]) v += static_cast<float>(0.1 * standard_normal(rng));
    }
    Data d;
    for (int i = 0; i < per_label; ++i) {
        for (int c = 0; c < n_labels; ++c) {
            ActivationVector a;
            a.layer = 2;
            a.values = centres[c];
            for (auto & v : a.values) v += static_cast<float>(noise * standard_normal(rng));
            d.x.push_back(std::move(a));
            d.y.push_back("label" + std::to_string(c));
        }
    }
    return d;
}

double accuracy(const Probe & p, const Data & d) {
    int ok = 0;
    for (std::size_t i = 0; i < d.x.size(); ++i) ok += probe_predict(p, d.x[i]) == d.y[i];
    return double(ok) / d.x.size();
}

} // namespace

TEST_CASE("separable clusters are learned") {
    const auto train = clusters(10, 30, 16, 1.0, 0.3, 1);
    // Same centres; the draws past the first 300 are new.
    auto fresh = clusters(10, 50, 16, 1.0, 0.3, 1);
    fresh.x.erase(fresh.x.begin(), fresh.x.begin() + 300);
    fresh.y.erase(fresh.y.begin(), fresh.y.begin() + 300);
    const Probe p = train_probe(train.x, train.y, ProbeConfig{});
    CHECK(p.n_labels() == 10);
    CHECK(p.dim == 16);
    CHECK(accuracy(p, fresh) >= 0.95);
    // Training points get their own label.
    CHECK(accuracy(p, train) >= 0.95);
}

TEST_CASE("shuffled labels stay near chance") {
    auto train = clusters(10, 40, 16, 1.0, 0.3, 2);
    auto test = clusters(10, 100, 16, 1.0, 0.3, 2);
    Rng rng(5);
    shuffle_in_place(train.y, rng);
    shuffle_in_place(test.y, rng);
    const Probe p = train_probe(train.x, train.y, ProbeConfig{});
    CHECK(std::abs(accuracy(p, test) - 0.1) <= 0.08);
}

TEST_CASE("training is deterministic") {
    const auto d = clusters(4, 20, 8, 1.0, 0.5, 3);
    ProbeConfig c;
    c.seed = 9;
    const Probe a = train_probe(d.x, d.y, c);
    const Probe b = train_probe(d.x, d.y, c);
    CHECK(a.weights.data == b.weights.data);
    CHECK(a.bias == b.bias);
}

TEST_CASE("degenerate inputs are rejected") {
    auto d = clusters(3, 5, 8, 1.0, 0.3, 4);
    std::vector<std::string> one(d.y.size(), "same");
    CHECK_THROWS_AS(train_probe(d.x, one, ProbeConfig{}), ValidationError);
    std::vector<std::string> short_y(d.y.begin(), d.y.end() - 1);
    CHECK_THROWS_AS(train_probe(d.x, short_y, ProbeConfig{}), ValidationError);
    auto bad = d.x;
    bad[2].values[1] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(train_probe(bad, d.y, ProbeConfig{}), ValidationError);
    const Probe p = train_probe(d.x, d.y, ProbeConfig{});
    ActivationVector wrong;
    wrong.values.assign(7, 0.0f);
    CHECK_THROWS_AS(probe_predict(p, wrong), ValidationError);
    ProbeConfig c;
    c.l1_weight = -1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("zero vector falls back to the bias; ties go to the lowest index") {
    const auto d = clusters(3, 10, 6, 1.0, 0.3, 6);
    ProbeConfig c;
    c.standardize = false;
    Probe p = train_probe(d.x, d.y, c);
    ActivationVector z;
    z.values.assign(6, 0.0f);
    const auto best = std::max_element(p.bias.begin(), p.bias.end()) - p.bias.begin();
    CHECK(probe_predict(p, z) == p.labels[static_cast<std::size_t>(best)]);
    std::fill(p.bias.begin(), p.bias.end(), 0.25f);
    CHECK(probe_predict_index(p, z.values) == 0);
}

TEST_CASE("save and load reproduce predictions") {
    const auto d = clusters(5, 10, 8, 1.0, 0.4, 7);
    Probe p = train_probe(d.x, d.y, ProbeConfig{});
    p.layer = 3;
    const auto path = std::filesystem::temp_directory_path() / "verblab_probe.txt";
    save_probe(p, path);
    const Probe q = load_probe(path);
    CHECK(q.labels == p.labels);
    CHECK(q.layer == 3);
    CHECK(q.weights.data == p.weights.data);
    for (const auto & x : d.x) CHECK(probe_predict(q, x) == probe_predict(p, x));
    {
        std::ofstream f(path);
        f << "something else\n";
    }
    CHECK_THROWS(load_probe(path));
    std::filesystem::remove(path);
}

TEST_CASE("classification report") {
    const auto d = clusters(4, 10, 8, 1.0, 0.3, 8);
    const Probe p = train_probe(d.x, d.y, ProbeConfig{});
    const auto r = classification_report(p, d.x, d.y);
    CHECK(r.n == 40);
    int support = 0, predicted = 0, correct = 0;
    for (const auto & s : r.per_label) {
        support += s.support;
        predicted += s.predicted;
        correct += s.correct;
        CHECK(s.support == 10);
    }
    CHECK(support == 40);
    CHECK(predicted == 40);
    CHECK(correct == r.correct);
    const auto path = std::filesystem::temp_directory_path() / "verblab_report.csv";
    write_classification_csv(path, r);
    std::ifstream f(path);
    std::string header;
    std::getline(f, header);
    if (header.starts_with("#")) std::getline(f, header);
    CHECK(header == "label,support,predicted,correct,precision,recall");
    std::filesystem::remove(path);
}
