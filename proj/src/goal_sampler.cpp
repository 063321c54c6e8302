#include "sddq/goal_sampler.hpp"

#include <cmath>
#include <iostream>

namespace sddq::goals {

CategoryStats::CategoryStats(std::size_t k) : failures_(k, 0), n_(k, kPrefillCount) {
  if (k == 0) throw ConfigError("category count must be positive");
  total_ = static_cast<long long>(k) * kPrefillCount;
}

void CategoryStats::update(std::size_t category, bool success) {
  if (category >= k()) throw ContractError("category " + std::to_string(category) + " out of range");
  n_[category] += 1;
  if (!success) failures_[category] += 1;
  total_ += 1;
}

double CategoryStats::failure_rate(std::size_t i) const {
  return static_cast<double>(failures_.at(i)) / static_cast<double>(n_.at(i));
}

double CategoryStats::sigma(std::size_t i) const {
  return exploration_width(k(), static_cast<double>(total_), static_cast<double>(n_.at(i)));
}

void CategoryStats::set_counts(std::size_t i, int failures, int n) {
  if (i >= k()) throw ContractError("category out of range");
  if (n < kPrefillCount || failures < 0 || failures > n) {
    throw ContractError("counts violate 0 <= failures <= n, n >= 5");
  }
  total_ += n - n_[i];
  n_[i] = n;
  failures_[i] = failures;
}

double exploration_width(std::size_t k, double total, double n) {
  return std::sqrt(static_cast<double>(k) * std::log(total) / n);
}

std::size_t sample_category(const CategoryStats& stats, Rng& rng) {
  std::size_t best = 0;
  double best_value = -INFINITY;
  for (std::size_t i = 0; i < stats.k(); ++i) {
    std::normal_distribution<double> draw(stats.failure_rate(i), stats.sigma(i));
    const double p = draw(rng);
    if (p > best_value) {
      best_value = p;
      best = i;
    }
  }
  return best;
}

GoalSampler::GoalSampler(const domain::GoalCorpus& corpus, SamplingMode mode)
    : corpus_(&corpus), mode_(mode) {
  if (corpus.goals().empty()) throw ConfigError("goal sampler needs a non-empty corpus");
}

const domain::UserGoal& GoalSampler::sample(const CategoryStats& stats, Rng& rng) {
  std::size_t category = 0;
  if (override_) {
    category = override_(rng);
  } else if (mode_ == SamplingMode::kActive) {
    category = sample_category(stats, rng);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, domain::kCategoryCount - 1);
    category = pick(rng);
  }
  const auto& bucket = corpus_->bucket(static_cast<int>(category));
  if (bucket.empty()) {
    ++fallbacks_;
    std::cerr << "warning: goal category " << category << " has no goals; sampling uniformly\n";
    std::uniform_int_distribution<std::size_t> pick(0, corpus_->goals().size() - 1);
    return corpus_->goals()[pick(rng)];
  }
  std::uniform_int_distribution<std::size_t> pick(0, bucket.size() - 1);
  return corpus_->goals()[bucket[pick(rng)]];
}

}  // namespace sddq::goals
