#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgssl/rng.hpp"
#include "mgssl/tensor.hpp"

namespace mgssl {

// A dataset with a labeled/unlabeled mask. Labels of unlabeled rows stay
// hidden: label(i) throws for them, so training code cannot read them even
// by accident; evaluation goes through label_for_eval(i).
class Dataset {
public:
    Dataset() = default;
    Dataset(Mat x, std::vector<int> y, std::string name, uint64_t seed);

    int size() const { return x_.rows; }
    int dim() const { return x_.cols; }
    int classes() const { return classes_; }
    const std::string& name() const { return name_; }
    uint64_t seed() const { return seed_; }
    const Mat& features() const { return x_; }

    bool is_labeled(int i) const { return mask_[i] != 0; }
    int label(int i) const;           // hidden-label taint: throws on unlabeled rows
    int label_for_eval(int i) const;  // evaluation-only accessor
    bool has_eval_label(int i) const { return y_[i] >= 0; }

    int labeled_count() const;
    std::vector<int> labeled_indices() const;
    std::vector<int> unlabeled_indices() const;

    void set_mask(std::vector<uint8_t> mask);

private:
    Mat x_;
    std::vector<int> y_;          // -1 marks rows with no known label at all
    std::vector<uint8_t> mask_;   // 1 = labeled (visible to training)
    int classes_ = 0;
    std::string name_;
    uint64_t seed_ = 0;
};

struct SplitSpec {
    int n_labeled = 0;
    bool stratified = true;
    uint64_t seed = 0;
};

Dataset gen_two_moons(int n, double noise_std, uint64_t seed);
Dataset gen_blobs(int n, int classes, double centers_spread, double noise_std, uint64_t seed);
Dataset gen_rings(int n, int classes, double radius_step, double noise_std, uint64_t seed);

Dataset load_csv(const std::string& path);
void save_csv(const Dataset& ds, const std::string& path);

// Keeps exactly spec.n_labeled rows labeled; everything else becomes unlabeled
// (true labels retained internally for evaluation only).
Dataset split_labeled(const Dataset& ds, const SplitSpec& spec);

struct Batch {
    Mat x;                        // (B_l + B_u) x d, labeled rows first
    std::vector<int> labels;      // size B_l
    std::vector<int> idx_labeled;
    std::vector<int> idx_unlabeled;
    int n_labeled() const { return static_cast<int>(idx_labeled.size()); }
    int n_unlabeled() const { return static_cast<int>(idx_unlabeled.size()); }
};

// Without-replacement sampler: each pool is shuffled per epoch and drawn
// sequentially, so every index appears exactly once per epoch.
class BatchSampler {
public:
    BatchSampler(const Dataset& ds, uint64_t seed);
    Batch next(int b_labeled, int b_unlabeled);

private:
    int draw(std::vector<int>& order, size_t& cursor, Rng& rng);
    const Dataset* ds_;
    std::vector<int> labeled_order_, unlabeled_order_;
    size_t labeled_cursor_ = 0, unlabeled_cursor_ = 0;
    Rng rng_;
};

}  // namespace mgssl
