#include "cstvae/stn.hpp"

#include <cmath>

#include "cstvae/errors.hpp"
#include "cstvae/kernels.hpp"

namespace cstvae {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

void invert_row(const double* t, double* out, double det) {
    const double u = 1.0 / det;
    const double ia = t[4] * u;
    const double ib = -t[1] * u;
    const double ic = -t[3] * u;
    const double id = t[0] * u;
    out[0] = ia;
    out[1] = ib;
    out[2] = -(ia * t[2] + ib * t[5]);
    out[3] = ic;
    out[4] = id;
    out[5] = -(ic * t[2] + id * t[5]);
}

void check_grid_extents(i64 out_h, i64 out_w, const char* who) {
    if (out_h < 2 || out_w < 2) {
        throw DimensionError(std::string(who) + ": output extents must be >= 2, got " +
                             std::to_string(out_h) + "x" + std::to_string(out_w));
    }
}

}  // namespace

AffineTransform invert(const AffineTransform& t) {
    const double det = t.det();
    if (std::abs(det) <= kSingularDetThreshold) {
        throw SingularTransformError("invert: transform is singular, det=" + std::to_string(det), det);
    }
    AffineTransform r;
    invert_row(t.m.data(), r.m.data(), det);
    return r;
}

Tensor make_grid(const AffineTransform& t, i64 out_h, i64 out_w) {
    check_grid_extents(out_h, out_w, "make_grid");
    std::vector<double> grid(static_cast<std::size_t>(out_h * out_w * 2));
    kernels::affine_grid(t.m.data(), grid.data(), 1, out_h, out_w);
    return Tensor::constant({out_h, out_w, 2}, std::move(grid));
}

Tensor bilinear_sample(const Tensor& src, const Tensor& grid) {
    if (src.rank() != 2) {
        throw DimensionError("bilinear_sample: expected 2-d source, got " + shape_str(src.shape()));
    }
    if (grid.rank() != 3 || grid.shape()[2] != 2) {
        throw DimensionError("bilinear_sample: expected [h x w x 2] grid, got " + shape_str(grid.shape()));
    }
    Tensor src3 = reshape(src, {1, src.shape()[0], src.shape()[1]});
    Tensor grid4 = reshape(grid, {1, grid.shape()[0], grid.shape()[1], 2});
    Tensor out = grid_sample(src3, grid4);
    return reshape(out, {grid.shape()[0], grid.shape()[1]});
}

Tensor stn(const Tensor& src, const AffineTransform& t, i64 out_h, i64 out_w) {
    return bilinear_sample(src, make_grid(t, out_h, out_w));
}

Tensor affine_grid(const Tensor& theta, i64 out_h, i64 out_w) {
    check_grid_extents(out_h, out_w, "affine_grid");
    const auto& tn = theta.node_;
    if (!tn) throw ContractError("affine_grid: undefined theta");
    if (theta.rank() != 2 || theta.shape()[1] != 6) {
        throw DimensionError("affine_grid: expected [B x 6] theta, got " + shape_str(theta.shape()));
    }
    const i64 b = theta.shape()[0];
    std::vector<double> grid(static_cast<std::size_t>(b * out_h * out_w * 2));
    kernels::affine_grid(tn->value.data(), grid.data(), b, out_h, out_w);

    Tensor out;
    out.node_ = std::make_shared<TensorNode>();
    out.node_->shape = {b, out_h, out_w, 2};
    out.node_->value = std::move(grid);
    out.node_->tape = tn->tape;
    if (tn->tape != nullptr && tn->grad_path) {
        out.node_->grad_path = true;
        out.node_->grad.assign(out.node_->value.size(), 0.0);
        auto on = out.node_;
        tn->tape->record(on, [tn, on, b, out_h, out_w] {
            kernels::affine_grid_backward(on->grad.data(), tn->grad.data(), b, out_h, out_w);
        });
    }
    return out;
}

Tensor grid_sample(const Tensor& src, const Tensor& grid) {
    const auto& sn = src.node_;
    const auto& gn = grid.node_;
    if (!sn || !gn) throw ContractError("grid_sample: undefined operand");
    if (src.rank() != 3) {
        throw DimensionError("grid_sample: expected [B x h x w] source, got " + shape_str(src.shape()));
    }
    if (grid.rank() != 4 || grid.shape()[3] != 2 || grid.shape()[0] != src.shape()[0]) {
        throw DimensionError("grid_sample: grid " + shape_str(grid.shape()) + " does not match source " +
                             shape_str(src.shape()));
    }
    for (double v : sn->value) {
        if (!std::isfinite(v)) throw ContractError("grid_sample: non-finite source value");
    }
    const i64 b = src.shape()[0], sh = src.shape()[1], sw = src.shape()[2];
    const i64 oh = grid.shape()[1], ow = grid.shape()[2];
    std::vector<double> out(static_cast<std::size_t>(b * oh * ow));
    kernels::grid_sample(sn->value.data(), gn->value.data(), out.data(), b, sh, sw, oh, ow);

    Tensor result;
    result.node_ = std::make_shared<TensorNode>();
    result.node_->shape = {b, oh, ow};
    result.node_->value = std::move(out);
    Tape* tape = sn->tape != nullptr ? sn->tape : gn->tape;
    if (sn->tape != nullptr && gn->tape != nullptr && sn->tape != gn->tape) {
        throw ContractError("grid_sample: operands belong to different tapes");
    }
    result.node_->tape = tape;
    if (tape != nullptr && (sn->grad_path || gn->grad_path)) {
        result.node_->grad_path = true;
        result.node_->grad.assign(result.node_->value.size(), 0.0);
        auto on = result.node_;
        tape->record(on, [sn, gn, on, b, sh, sw, oh, ow] {
            kernels::grid_sample_backward(sn->value.data(), gn->value.data(), on->grad.data(),
                                          sn->grad_path ? sn->grad.data() : nullptr,
                                          gn->grad_path ? gn->grad.data() : nullptr,
                                          b, sh, sw, oh, ow);
        });
    }
    return result;
}

std::vector<double> transform_determinants(const Tensor& theta) {
    if (theta.rank() != 2 || theta.shape()[1] != 6) {
        throw DimensionError("transform_determinants: expected [B x 6], got " + shape_str(theta.shape()));
    }
    const i64 b = theta.shape()[0];
    std::vector<double> dets(static_cast<std::size_t>(b));
    const auto& v = theta.value();
    for (i64 i = 0; i < b; ++i) {
        const double* t = v.data() + i * 6;
        dets[static_cast<std::size_t>(i)] = t[0] * t[4] - t[1] * t[3];
    }
    return dets;
}

Tensor affine_invert(const Tensor& theta) {
    const auto& tn = theta.node_;
    if (!tn) throw ContractError("affine_invert: undefined theta");
    if (theta.rank() != 2 || theta.shape()[1] != 6) {
        throw DimensionError("affine_invert: expected [B x 6] theta, got " + shape_str(theta.shape()));
    }
    const i64 b = theta.shape()[0];
    std::vector<double> dets = transform_determinants(theta);
    std::vector<i64> bad;
    double worst = 0.0;
    for (i64 i = 0; i < b; ++i) {
        if (std::abs(dets[static_cast<std::size_t>(i)]) <= kSingularDetThreshold) {
            bad.push_back(i);
            worst = dets[static_cast<std::size_t>(i)];
        }
    }
    if (!bad.empty()) {
        throw SingularTransformError("affine_invert: " + std::to_string(bad.size()) +
                                         " singular transform(s) in batch, det=" + std::to_string(worst),
                                     worst, std::move(bad));
    }

    std::vector<double> out(static_cast<std::size_t>(b * 6));
    for (i64 i = 0; i < b; ++i) {
        invert_row(tn->value.data() + i * 6, out.data() + i * 6, dets[static_cast<std::size_t>(i)]);
    }

    Tensor result;
    result.node_ = std::make_shared<TensorNode>();
    result.node_->shape = {b, 6};
    result.node_->value = std::move(out);
    result.node_->tape = tn->tape;
    if (tn->tape != nullptr && tn->grad_path) {
        result.node_->grad_path = true;
        result.node_->grad.assign(result.node_->value.size(), 0.0);
        auto on = result.node_;
        tn->tape->record(on, [tn, on, b] {
            for (i64 i = 0; i < b; ++i) {
                const double* t = tn->value.data() + i * 6;
                const double* inv = on->value.data() + i * 6;
                const double* g = on->grad.data() + i * 6;
                double* dt = tn->grad.data() + i * 6;
                const double det = t[0] * t[4] - t[1] * t[3];
                const double u = 1.0 / det;
                const double ia = inv[0], ib = inv[1], ic = inv[3], id = inv[4];
                // Translation outputs feed back into the linear entries.
                const double g_ia = g[0] - t[2] * g[2];
                const double g_ib = g[1] - t[5] * g[2];
                const double g_ic = g[3] - t[2] * g[5];
                const double g_id = g[4] - t[5] * g[5];
                dt[2] += -(ia * g[2] + ic * g[5]);
                dt[5] += -(ib * g[2] + id * g[5]);
                // (ia, ib, ic, id) = (d, -b, -c, a) / det
                const double g_u = t[4] * g_ia - t[1] * g_ib - t[3] * g_ic + t[0] * g_id;
                dt[0] += u * g_id;
                dt[1] += -u * g_ib;
                dt[3] += -u * g_ic;
                dt[4] += u * g_ia;
                const double g_det = -u * u * g_u;
                dt[0] += t[4] * g_det;
                dt[4] += t[0] * g_det;
                dt[1] += -t[3] * g_det;
                dt[3] += -t[1] * g_det;
            }
        });
    }
    return result;
}

Tensor stn(const Tensor& src, const Tensor& theta, i64 out_h, i64 out_w) {
    return grid_sample(src, affine_grid(theta, out_h, out_w));
}

}  // namespace cstvae
