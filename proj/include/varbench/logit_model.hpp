#pragma once

#include "varbench/image.hpp"
#include "varbench/ops.hpp"
#include "varbench/tensor.hpp"

namespace varbench {

/// Anything that maps image batches to class logits through the tape, so both
/// attacks and oracles can differentiate through it.
class LogitModel {
public:
    virtual ~LogitModel() = default;
    virtual int num_classes() const = 0;
    /// x is a 1xCxHxW (or NxCxHxW) batch; the output is N x num_classes.
    virtual Tensor logits(Tape& tape, const Tensor& x) const = 0;

    /// Argmax of the class probabilities; ties go to the smallest class id.
    int predict(const Image& img) const {
        Tape tape;
        const Tensor z = logits(tape, img.to_tensor());
        return argmax_row(z.values().data(), num_classes());
    }

    static int argmax_row(const double* row, int m) {
        int best = 0;
        for (int j = 1; j < m; ++j)
            if (row[j] > row[best]) best = j;
        return best;
    }
};

}  // namespace varbench
