#pragma once

#include <cmath>
#include <stdexcept>

namespace sizegen {

// Symmetric kernel W: [0,1]^2 -> [0,1]. Edge probabilities of sampled graphs
// are W evaluated at latent pairs (times an optional sparsity factor).
struct GraphonKernel {
    enum class Kind { two_block_sine, sbm, constant };

    Kind kind = Kind::constant;

    // two_block_sine: W(x,y) = ((sin(2 pi x) sin(2 pi y) + 1)/2)^5 * p + q
    double p = 1.0;
    double q = 1e-3;

    // sbm: intra within a block, inter across; blocks split at `split`
    double intra = 0.9;
    double inter = 1e-3;
    double split = 0.5;

    // constant
    double c = 0.5;

    static GraphonKernel TwoBlockSine(double p, double q) {
        GraphonKernel k;
        k.kind = Kind::two_block_sine;
        k.p = p;
        k.q = q;
        return k;
    }

    static GraphonKernel Sbm(double intra, double inter, double split = 0.5) {
        if (!(split > 0.0 && split < 1.0)) throw std::invalid_argument("sbm split must lie in (0,1)");
        GraphonKernel k;
        k.kind = Kind::sbm;
        k.intra = intra;
        k.inter = inter;
        k.split = split;
        return k;
    }

    static GraphonKernel Constant(double c) {
        if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("constant kernel value must lie in [0,1]");
        GraphonKernel k;
        k.kind = Kind::constant;
        k.c = c;
        return k;
    }
};

// Kernel evaluation, clamped to [0,1] so the result is always a valid
// Bernoulli parameter (the raw two-block expression peaks at p + q).
inline double eval_graphon(const GraphonKernel& kernel, double x, double y) {
    double w = 0.0;
    switch (kernel.kind) {
        case GraphonKernel::Kind::two_block_sine: {
            const double s = (std::sin(2.0 * M_PI * x) * std::sin(2.0 * M_PI * y) + 1.0) * 0.5;
            const double s2 = s * s;
            w = s2 * s2 * s * kernel.p + kernel.q;
            break;
        }
        case GraphonKernel::Kind::sbm: {
            const bool left_x = x <= kernel.split;
            const bool left_y = y <= kernel.split;
            w = (left_x == left_y) ? kernel.intra : kernel.inter;
            break;
        }
        case GraphonKernel::Kind::constant:
            w = kernel.c;
            break;
    }
    if (w < 0.0) return 0.0;
    if (w > 1.0) return 1.0;
    return w;
}

}  // namespace sizegen
