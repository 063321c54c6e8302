#pragma once

// Active user-goal selection: per-category failure statistics from
// validation and a Gaussian-perturbed argmax over failure rates whose width
// shrinks as a category accumulates evidence.

#include <functional>
#include <vector>

#include "sddq/domain.hpp"
#include "sddq/nn.hpp"

namespace sddq::goals {

inline constexpr int kPrefillCount = 5;

class CategoryStats {
 public:
  explicit CategoryStats(std::size_t k = domain::kCategoryCount);

  // Counts persist across epochs.
  void update(std::size_t category, bool success);

  std::size_t k() const { return n_.size(); }
  int failures(std::size_t i) const { return failures_.at(i); }
  int n(std::size_t i) const { return n_.at(i); }
  double failure_rate(std::size_t i) const;
  long long total() const { return total_; }  // N, prefill included

  // sigma_i = sqrt(k ln N / n_i)
  double sigma(std::size_t i) const;

  // Test hook: overwrite the raw counts of one category.
  void set_counts(std::size_t i, int failures, int n);

 private:
  std::vector<int> failures_;
  std::vector<int> n_;
  long long total_ = 0;
};

// sqrt(k ln N / n)
double exploration_width(std::size_t k, double total, double n);

std::size_t sample_category(const CategoryStats& stats, Rng& rng);

enum class SamplingMode { kActive, kUniform };

class GoalSampler {
 public:
  GoalSampler(const domain::GoalCorpus& corpus, SamplingMode mode);

  // Active: category from sample_category, then a uniform goal of that
  // category; an empty bucket falls back to a uniform goal over the corpus.
  // Uniform: category drawn uniformly over 128.
  const domain::UserGoal& sample(const CategoryStats& stats, Rng& rng);

  // Replaces the category draw; used to verify that the two modes differ
  // only there.
  void set_category_override(std::function<std::size_t(Rng&)> draw) { override_ = std::move(draw); }

  SamplingMode mode() const { return mode_; }
  std::size_t fallbacks() const { return fallbacks_; }

 private:
  const domain::GoalCorpus* corpus_;
  SamplingMode mode_;
  std::function<std::size_t(Rng&)> override_;
  std::size_t fallbacks_ = 0;
};

}  // namespace sddq::goals
