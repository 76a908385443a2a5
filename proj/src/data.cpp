#include "mgssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mgssl {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Dataset::Dataset(Mat x, std::vector<int> y, std::string name, uint64_t seed)
    : x_(std::move(x)), y_(std::move(y)), name_(std::move(name)), seed_(seed) {
    if (static_cast<int>(y_.size()) != x_.rows)
        throw std::invalid_argument("Dataset: label count differs from row count");
    mask_.assign(y_.size(), 0);
    for (size_t i = 0; i < y_.size(); ++i) {
        if (y_[i] >= 0) {
            mask_[i] = 1;
            classes_ = std::max(classes_, y_[i] + 1);
        }
    }
}

int Dataset::label(int i) const {
    if (!mask_[i])
        throw std::logic_error("Dataset: label of unlabeled row " + std::to_string(i) +
                               " is hidden from training");
    return y_[i];
}

int Dataset::label_for_eval(int i) const {
    if (y_[i] < 0)
        throw std::logic_error("Dataset: row " + std::to_string(i) + " has no label at all");
    return y_[i];
}

int Dataset::labeled_count() const {
    int n = 0;
    for (uint8_t m : mask_) n += m;
    return n;
}

std::vector<int> Dataset::labeled_indices() const {
    std::vector<int> idx;
    for (int i = 0; i < size(); ++i)
        if (mask_[i]) idx.push_back(i);
    return idx;
}

std::vector<int> Dataset::unlabeled_indices() const {
    std::vector<int> idx;
    for (int i = 0; i < size(); ++i)
        if (!mask_[i]) idx.push_back(i);
    return idx;
}

void Dataset::set_mask(std::vector<uint8_t> mask) {
    if (mask.size() != mask_.size()) throw std::invalid_argument("set_mask: size mismatch");
    mask_ = std::move(mask);
}

// --- generators -----------------------------------------------------------------

Dataset gen_two_moons(int n, double noise_std, uint64_t seed) {
    if (n < 4 || noise_std < 0)
        throw std::invalid_argument("gen_two_moons: need n >= 4 and noise_std >= 0");
    Rng rng(seed);
    Mat x(n, 2);
    std::vector<int> y(n);
    int n0 = (n + 1) / 2;
    for (int i = 0; i < n; ++i) {
        double t = rng.uniform(0.0, kPi);
        double px, py;
        if (i < n0) {
            px = std::cos(t);
            py = std::sin(t);
            y[i] = 0;
        } else {
            px = 1.0 - std::cos(t);
            py = 0.5 - std::sin(t);
            y[i] = 1;
        }
        x.at(i, 0) = px + noise_std * rng.normal();
        x.at(i, 1) = py + noise_std * rng.normal();
    }
    return Dataset(std::move(x), std::move(y), "two_moons", seed);
}

Dataset gen_blobs(int n, int classes, double centers_spread, double noise_std, uint64_t seed) {
    if (classes < 2 || n < 2 * classes || noise_std < 0)
        throw std::invalid_argument("gen_blobs: need classes >= 2, n >= 2*classes, noise >= 0");
    Rng rng(seed);
    Mat x(n, 2);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
        int c = i % classes;  // balanced within +-1
        double a = 2.0 * kPi * c / classes;
        x.at(i, 0) = centers_spread * std::cos(a) + noise_std * rng.normal();
        x.at(i, 1) = centers_spread * std::sin(a) + noise_std * rng.normal();
        y[i] = c;
    }
    return Dataset(std::move(x), std::move(y), "blobs", seed);
}

Dataset gen_rings(int n, int classes, double radius_step, double noise_std, uint64_t seed) {
    if (classes < 2 || n < 2 * classes || noise_std < 0 || radius_step <= 0)
        throw std::invalid_argument("gen_rings: bad parameters");
    Rng rng(seed);
    Mat x(n, 2);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
        int c = i % classes;
        double r = radius_step * (c + 1) + noise_std * rng.normal();
        double a = rng.uniform(0.0, 2.0 * kPi);
        x.at(i, 0) = r * std::cos(a);
        x.at(i, 1) = r * std::sin(a);
        y[i] = c;
    }
    return Dataset(std::move(x), std::move(y), "rings", seed);
}

// --- CSV ------------------------------------------------------------------------

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file " + path);

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) header.push_back(tok);
    }
    if (header.size() < 2 || header.back() != "label")
        throw std::runtime_error("load_csv: header must be x0,...,x{d-1},label");
    int d = static_cast<int>(header.size()) - 1;
    for (int i = 0; i < d; ++i) {
        if (header[i] != "x" + std::to_string(i))
            throw std::runtime_error("load_csv: unexpected header column '" + header[i] + "'");
    }

    std::vector<double> vals;
    std::vector<int> labels;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::vector<std::string> toks;
        while (std::getline(ss, tok, ',')) toks.push_back(tok);
        if (static_cast<int>(toks.size()) != d + 1)
            throw std::runtime_error("load_csv: line " + std::to_string(lineno) + " has " +
                                     std::to_string(toks.size()) + " fields, expected " +
                                     std::to_string(d + 1));
        try {
            size_t used = 0;
            for (int i = 0; i < d; ++i) {
                vals.push_back(std::stod(toks[i], &used));
                if (used != toks[i].size()) throw std::invalid_argument("trailing junk");
            }
            labels.push_back(std::stoi(toks[d]));
        } catch (const std::exception&) {
            throw std::runtime_error("load_csv: parse error at line " + std::to_string(lineno));
        }
    }
    int n = static_cast<int>(labels.size());
    if (n == 0) throw std::runtime_error("load_csv: no data rows in " + path);
    Mat x(n, d);
    x.v = std::move(vals);
    Dataset ds(std::move(x), std::move(labels), path, 0);
    if (ds.labeled_count() == 0)
        throw std::runtime_error("load_csv: " + path + " has no labeled rows");
    return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_csv: cannot open " + path);
    for (int c = 0; c < ds.dim(); ++c) out << "x" << c << ",";
    out << "label\n";
    char buf[32];
    for (int i = 0; i < ds.size(); ++i) {
        for (int c = 0; c < ds.dim(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.features().at(i, c));
            out << buf << ",";
        }
        out << (ds.is_labeled(i) ? ds.label(i) : -1) << "\n";
    }
}

// --- split & sampling -------------------------------------------------------------

Dataset split_labeled(const Dataset& ds, const SplitSpec& spec) {
    const int C = ds.classes();
    if (spec.n_labeled < 1 || spec.n_labeled > ds.size())
        throw std::invalid_argument("split_labeled: n_labeled out of range");
    if (spec.stratified && spec.n_labeled < C)
        throw std::invalid_argument("split_labeled: stratified split needs n_labeled >= classes");

    Rng rng(spec.seed);
    Dataset out = ds;
    std::vector<uint8_t> mask(ds.size(), 0);
    if (spec.stratified) {
        for (int c = 0; c < C; ++c) {
            std::vector<int> pool;
            for (int i = 0; i < ds.size(); ++i)
                if (ds.has_eval_label(i) && ds.label_for_eval(i) == c) pool.push_back(i);
            int want = spec.n_labeled / C + (c < spec.n_labeled % C ? 1 : 0);
            if (static_cast<int>(pool.size()) < want)
                throw std::invalid_argument("split_labeled: class " + std::to_string(c) +
                                            " has only " + std::to_string(pool.size()) +
                                            " rows, needs " + std::to_string(want));
            rng.shuffle(pool);
            for (int k = 0; k < want; ++k) mask[pool[k]] = 1;
        }
    } else {
        std::vector<int> pool;
        for (int i = 0; i < ds.size(); ++i)
            if (ds.has_eval_label(i)) pool.push_back(i);
        if (static_cast<int>(pool.size()) < spec.n_labeled)
            throw std::invalid_argument("split_labeled: not enough labeled rows");
        rng.shuffle(pool);
        for (int k = 0; k < spec.n_labeled; ++k) mask[pool[k]] = 1;
    }
    out.set_mask(std::move(mask));
    // every class must keep at least one labeled row
    std::vector<int> seen(C, 0);
    for (int i : out.labeled_indices()) seen[out.label(i)] = 1;
    for (int c = 0; c < C; ++c)
        if (!seen[c])
            throw std::invalid_argument("split_labeled: class " + std::to_string(c) +
                                        " lost all labeled rows");
    return out;
}

BatchSampler::BatchSampler(const Dataset& ds, uint64_t seed) : ds_(&ds), rng_(seed) {
    labeled_order_ = ds.labeled_indices();
    unlabeled_order_ = ds.unlabeled_indices();
    rng_.shuffle(labeled_order_);
    rng_.shuffle(unlabeled_order_);
}

int BatchSampler::draw(std::vector<int>& order, size_t& cursor, Rng& rng) {
    if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
    }
    return order[cursor++];
}

Batch BatchSampler::next(int b_labeled, int b_unlabeled) {
    if (labeled_order_.empty() || b_labeled > static_cast<int>(labeled_order_.size()))
        throw std::invalid_argument("sample_batch: labeled pool smaller than batch size");
    if (b_unlabeled > 0 && unlabeled_order_.empty())
        throw std::invalid_argument("sample_batch: no unlabeled rows available");
    if (b_unlabeled > static_cast<int>(unlabeled_order_.size()))
        throw std::invalid_argument("sample_batch: unlabeled pool smaller than batch size");

    Batch b;
    b.x = Mat(b_labeled + b_unlabeled, ds_->dim());
    for (int k = 0; k < b_labeled; ++k) {
        int i = draw(labeled_order_, labeled_cursor_, rng_);
        b.idx_labeled.push_back(i);
        b.labels.push_back(ds_->label(i));
        for (int c = 0; c < ds_->dim(); ++c) b.x.at(k, c) = ds_->features().at(i, c);
    }
    for (int k = 0; k < b_unlabeled; ++k) {
        int i = draw(unlabeled_order_, unlabeled_cursor_, rng_);
        b.idx_unlabeled.push_back(i);
        for (int c = 0; c < ds_->dim(); ++c) b.x.at(b_labeled + k, c) = ds_->features().at(i, c);
    }
    return b;
}

}  // namespace mgssl
