#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace lbea {

/// Neumaier compensated summation.
class CompensatedSum {
public:
    void add(double x)
    {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) comp_ += (sum_ - t) + x;
        else comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

struct MeanAndError {
    double mean = 0.0;
    double std_error = 0.0;
};

/// Sample mean and standard error of the mean, summed in index order.
MeanAndError mean_and_error(std::span<const double> xs);

/// Runs f(i) for i in [0, n) on up to `threads` workers. Each index is
/// processed exactly once; results must be written to per-index slots.
void parallel_for(int n, int threads, const std::function<void(int)>& f);

}  // namespace lbea
