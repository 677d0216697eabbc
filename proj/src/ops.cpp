#include "plm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "plm/error.hpp"

namespace plm {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
bool tracks(const BasicTape<T>& tape, std::initializer_list<const BasicTensor<T>*> inputs) {
    if (!tape.recording()) return false;
    return std::ranges::any_of(inputs, [](const BasicTensor<T>* t) { return t->requires_grad(); });
}

std::string dims2(const char* op, const Shape& a, const Shape& b) {
    return std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " + shape_to_string(b);
}

// Elementwise transcendental work goes through a fixed-size aligned buffer so every
// element takes the same vector path whatever the address or length of the data.
constexpr std::size_t kChunk = 64;

template <typename F>
void for_chunks(std::size_t n, F&& f) {
    for (std::size_t start = 0; start < n; start += kChunk) f(start, std::min(kChunk, n - start));
}

template <typename T>
using Chunk = Eigen::Array<T, static_cast<int>(kChunk), 1>;

template <typename T>
Chunk<T> load_chunk(const T* src, std::size_t len) {
    Chunk<T> c = Chunk<T>::Zero();
    std::copy_n(src, len, c.data());
    return c;
}

template <typename T>
void store_chunk(const Chunk<T>& c, T* dst, std::size_t len) {
    std::copy_n(c.data(), len, dst);
}

// Last extent, treating rank-0 as width 1.
std::size_t last_extent(const Shape& dims) {
    return dims.empty() ? 1 : dims.back();
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const Shape& ad = a.dims();
    const Shape& bd = b.dims();
    const bool batched = ad.size() == 3 && bd.size() == 3;
    if (ad.size() < 2 || (bd.size() != 2 && !batched)) {
        throw DimensionError(dims2("matmul", ad, bd));
    }
    const std::size_t k = ad.back();
    if (bd[bd.size() - 2] != k || (batched && ad[0] != bd[0])) {
        throw DimensionError(dims2("matmul", ad, bd));
    }
    const std::size_t n = bd.back();
    const std::size_t groups = batched ? ad[0] : 1;
    const std::size_t m = batched ? ad[1] : a.numel() / k;

    Shape od = ad;
    od.back() = n;
    BasicTensor<T> out(od);
    for (std::size_t g = 0; g < groups; ++g) {
        ConstMap<T> am(a.data().data() + g * m * k, m, k);
        ConstMap<T> bm(b.data().data() + g * k * n, k, n);
        MutMap<T> cm(out.data().data() + g * m * n, m, n);
        cm.noalias() = am * bm;
    }
    if (tracks(tape, {&a, &b})) {
        out.set_requires_grad();
        tape.record({a, b}, out, [a, b, groups, m, k, n](std::span<const T> gout) mutable {
            for (std::size_t g = 0; g < groups; ++g) {
                ConstMap<T> dc(gout.data() + g * m * n, m, n);
                if (a.requires_grad()) {
                    ConstMap<T> bm(b.data().data() + g * k * n, k, n);
                    MutMap<T> da(a.grad_buffer().data() + g * m * k, m, k);
                    da.noalias() += dc * bm.transpose();
                }
                if (b.requires_grad()) {
                    ConstMap<T> am(a.data().data() + g * m * k, m, k);
                    MutMap<T> db(b.grad_buffer().data() + g * k * n, k, n);
                    db.noalias() += am.transpose() * dc;
                }
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> add(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const Shape& ad = a.dims();
    const Shape& bd = b.dims();
    if (bd.size() > ad.size() || !std::equal(bd.rbegin(), bd.rend(), ad.rbegin())) {
        throw DimensionError(dims2("add", ad, bd));
    }
    const std::size_t inner = b.numel();
    BasicTensor<T> out(ad);
    auto o = out.data();
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t base = 0; base < o.size(); base += inner) {
        for (std::size_t i = 0; i < inner; ++i) o[base + i] = av[base + i] + bv[i];
    }
    if (tracks(tape, {&a, &b})) {
        out.set_requires_grad();
        tape.record({a, b}, out, [a, b, inner](std::span<const T> g) mutable {
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t base = 0; base < g.size(); base += inner) {
                    for (std::size_t i = 0; i < inner; ++i) gb[i] += g[base + i];
                }
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> mul(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.dims() != b.dims()) throw DimensionError(dims2("mul", a.dims(), b.dims()));
    BasicTensor<T> out(a.dims());
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
    if (tracks(tape, {&a, &b})) {
        out.set_requires_grad();
        tape.record({a, b}, out, [a, b](std::span<const T> g) mutable {
            if (a.requires_grad()) {
                auto ga = a.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> scale(BasicTape<T>& tape, const BasicTensor<T>& x, T factor) {
    BasicTensor<T> out(x.dims());
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
    if (tracks(tape, {&x})) {
        out.set_requires_grad();
        tape.record({x}, out, [x, factor](std::span<const T> g) mutable {
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& x) {
    double total = 0.0;
    for (T v : x.data()) total += v;
    auto out = BasicTensor<T>::scalar(static_cast<T>(total));
    if (tracks(tape, {&x})) {
        out.set_requires_grad();
        tape.record({x}, out, [x](std::span<const T> g) mutable {
            for (T& v : x.grad_buffer()) v += g[0];
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> transpose(BasicTape<T>& tape, const BasicTensor<T>& x) {
    const Shape& d = x.dims();
    if (d.size() != 2 && d.size() != 3) {
        throw DimensionError("transpose: expected rank 2 or 3, got " + shape_to_string(d));
    }
    const std::size_t groups = d.size() == 3 ? d[0] : 1;
    const std::size_t r = d[d.size() - 2];
    const std::size_t c = d.back();
    Shape od = d;
    std::swap(od[od.size() - 2], od.back());
    BasicTensor<T> out(od);
    for (std::size_t g = 0; g < groups; ++g) {
        ConstMap<T> src(x.data().data() + g * r * c, r, c);
        MutMap<T> dst(out.data().data() + g * r * c, c, r);
        dst = src.transpose();
    }
    if (tracks(tape, {&x})) {
        out.set_requires_grad();
        tape.record({x}, out, [x, groups, r, c](std::span<const T> gout) mutable {
            for (std::size_t g = 0; g < groups; ++g) {
                ConstMap<T> src(gout.data() + g * r * c, c, r);
                MutMap<T> dst(x.grad_buffer().data() + g * r * c, r, c);
                dst += src.transpose();
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> reshape(BasicTape<T>& tape, const BasicTensor<T>& x, Shape dims) {
    if (shape_numel(dims) != x.numel()) {
        throw DimensionError(dims2("reshape", x.dims(), dims));
    }
    BasicTensor<T> out(std::move(dims), std::vector<T>(x.data().begin(), x.data().end()));
    if (tracks(tape, {&x})) {
        out.set_requires_grad();
        tape.record({x}, out, [x](std::span<const T> g) mutable {
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> permute(BasicTape<T>& tape, const BasicTensor<T>& x, std::span<const std::size_t> perm) {
    const Shape& d = x.dims();
    const std::size_t r = d.size();
    if (perm.size() != r) {
        throw DimensionError("permute: " + std::to_string(perm.size()) + " axes for shape " +
                             shape_to_string(d));
    }
    std::vector<bool> seen(r, false);
    for (std::size_t p : perm) {
        if (p >= r || seen[p]) throw ContractError("permute: invalid axis permutation");
        seen[p] = true;
    }
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * d[i];
    Shape od(r);
    std::vector<std::size_t> src_stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        od[i] = d[perm[i]];
        src_stride[i] = in_stride[perm[i]];
    }
    // offsets[o] = input offset feeding output element o
    std::vector<std::size_t> offsets(x.numel());
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < offsets.size(); ++o) {
        offsets[o] = off;
        for (std::size_t i = r; i-- > 0;) {
            off += src_stride[i];
            if (++idx[i] < od[i]) break;
            off -= src_stride[i] * od[i];
            idx[i] = 0;
        }
    }
    BasicTensor<T> out(od);
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[offsets[i]];
    if (tracks(tape, {&x})) {
        out.set_requires_grad();
        tape.record({x}, out, [x, offsets = std::move(offsets)](std::span<const T> g) mutable {
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[offsets[i]] += g[i];
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> slice_rows(BasicTape<T>& tape, const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
    if (x.rank() != 2) throw DimensionError("slice_rows: expected rank 2, got " + shape_to_string(x.dims()));
    const std::size_t rows = x.dim(0);
    const std::size_t w = x.dim(1);
    if (begin > end || end > rows) {
        throw IndexError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + std::to_string(rows) + " rows");
    }
    BasicTensor<T> out(Shape{end - begin, w},
                       std::vector<T>(x.data().begin() + begin * w, x.data().begin() + end * w));
    if (tracks(tape, {&x})) {
        out.set_requires_grad();
        tape.record({x}, out, [x, begin, w](std::span<const T> g) mutable {
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[begin * w + i] += g[i];
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> gather_rows(BasicTape<T>& tape, const BasicTensor<T>& x, std::span<const std::size_t> rows) {
    if (x.rank() < 1) throw DimensionError("gather_rows: scalar input");
    const std::size_t w = last_extent(x.dims());
    const std::size_t n = w ? x.numel() / w : 0;
    BasicTensor<T> out(Shape{rows.size(), w});
    auto o = out.data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= n) {
            throw IndexError("gather_rows: row " + std::to_string(rows[r]) + " at position " +
                             std::to_string(r) + " outside [0," + std::to_string(n) + ")");
        }
        std::copy_n(x.data().begin() + rows[r] * w, w, o.begin() + r * w);
    }
    if (tracks(tape, {&x})) {
        out.set_requires_grad();
        tape.record({x}, out,
                    [x, w, rows = std::vector<std::size_t>(rows.begin(), rows.end())](std::span<const T> g) mutable {
                        auto gx = x.grad_buffer();
                        for (std::size_t r = 0; r < rows.size(); ++r) {
                            for (std::size_t c = 0; c < w; ++c) gx[rows[r] * w + c] += g[r * w + c];
                        }
                    });
    }
    return out;
}

template <typename T>
BasicTensor<T> embedding_lookup(BasicTape<T>& tape, const BasicTensor<T>& table, std::span<const TokenId> ids) {
    if (table.rank() != 2) {
        throw DimensionError("embedding_lookup: table must be [V,H], got " + shape_to_string(table.dims()));
    }
    const std::size_t vocab = table.dim(0);
    std::vector<std::size_t> rows(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) + " at position " +
                             std::to_string(i) + " outside [0," + std::to_string(vocab) + ")");
        }
        rows[i] = static_cast<std::size_t>(ids[i]);
    }
    return gather_rows(tape, table, rows);
}

template <typename T>
BasicTensor<T> layer_norm(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps) {
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    const std::size_t h = last_extent(x.dims());
    if (x.rank() == 0 || gamma.dims() != Shape{h} || beta.dims() != Shape{h}) {
        throw DimensionError("layer_norm: input " + shape_to_string(x.dims()) + " with gamma " +
                             shape_to_string(gamma.dims()) + " and beta " + shape_to_string(beta.dims()));
    }
    const std::size_t rows = h ? x.numel() / h : 0;
    BasicTensor<T> out(x.dims());
    std::vector<T> xhat(x.numel());
    std::vector<T> rstd(rows);
    auto xv = x.data();
    auto o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * h;
        double mean = 0.0;
        for (std::size_t i = 0; i < h; ++i) mean += row[i];
        mean /= static_cast<double>(h);
        double var = 0.0;
        for (std::size_t i = 0; i < h; ++i) {
            const double c = row[i] - mean;
            var += c * c;
        }
        var /= static_cast<double>(h);
        const double inv = 1.0 / std::sqrt(var + eps);
        rstd[r] = static_cast<T>(inv);
        for (std::size_t i = 0; i < h; ++i) {
            const T xn = static_cast<T>((row[i] - mean) * inv);
            xhat[r * h + i] = xn;
            o[r * h + i] = gamma[i] * xn + beta[i];
        }
    }
    if (tracks(tape, {&x, &gamma, &beta})) {
        out.set_requires_grad();
        tape.record({x, gamma, beta}, out,
                    [x, gamma, beta, h, rows, xhat = std::move(xhat), rstd = std::move(rstd)](
                        std::span<const T> g) mutable {
                        if (gamma.requires_grad() || beta.requires_grad()) {
                            auto gg = gamma.requires_grad() ? gamma.grad_buffer() : std::span<T>{};
                            auto gb = beta.requires_grad() ? beta.grad_buffer() : std::span<T>{};
                            for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t i = 0; i < h; ++i) {
                                    if (!gg.empty()) gg[i] += g[r * h + i] * xhat[r * h + i];
                                    if (!gb.empty()) gb[i] += g[r * h + i];
                                }
                            }
                        }
                        if (!x.requires_grad()) return;
                        auto gx = x.grad_buffer();
                        for (std::size_t r = 0; r < rows; ++r) {
                            double mean_d = 0.0;
                            double mean_dx = 0.0;
                            for (std::size_t i = 0; i < h; ++i) {
                                const double d = static_cast<double>(g[r * h + i]) * gamma[i];
                                mean_d += d;
                                mean_dx += d * xhat[r * h + i];
                            }
                            mean_d /= static_cast<double>(h);
                            mean_dx /= static_cast<double>(h);
                            for (std::size_t i = 0; i < h; ++i) {
                                const double d = static_cast<double>(g[r * h + i]) * gamma[i];
                                gx[r * h + i] +=
                                    static_cast<T>(rstd[r] * (d - mean_d - xhat[r * h + i] * mean_dx));
                            }
                        }
                    });
    }
    return out;
}

template <typename T>
BasicTensor<T> softmax_last(BasicTape<T>& tape, const BasicTensor<T>& x) {
    const std::size_t v = last_extent(x.dims());
    const std::size_t rows = v ? x.numel() / v : 0;
    BasicTensor<T> out(x.dims());
    auto xv = x.data();
    auto o = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * v;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t i = 0; i < v; ++i) {
            if (std::isnan(row[i]) || row[i] == std::numeric_limits<T>::infinity()) {
                throw NumericError("softmax_last: non-finite input at row " + std::to_string(r));
            }
            mx = std::max(mx, row[i]);
        }
        if (mx == -std::numeric_limits<T>::infinity()) {
            throw NumericError("softmax_last: every entry of row " + std::to_string(r) + " is masked");
        }
        T* orow = o.data() + r * v;
        for (std::size_t i = 0; i < v; ++i) orow[i] = row[i] - mx;
        for_chunks(v, [&](std::size_t at, std::size_t len) {
            store_chunk<T>(load_chunk(orow + at, len).exp(), orow + at, len);
        });
        double total = 0.0;
        for (std::size_t i = 0; i < v; ++i) {
            // the vectorized exp clamps its input, so masked entries are zeroed explicitly
            if (row[i] == -std::numeric_limits<T>::infinity()) orow[i] = T(0);
            total += orow[i];
        }
        const double inv = 1.0 / total;
        for (std::size_t i = 0; i < v; ++i) o[r * v + i] = static_cast<T>(o[r * v + i] * inv);
    }
    if (tracks(tape, {&x})) {
        out.set_requires_grad();
        BasicTensor<T> y = out;
        tape.record({x}, out, [x, y, v, rows](std::span<const T> g) mutable {
            auto gx = x.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t i = 0; i < v; ++i) dot += static_cast<double>(g[r * v + i]) * y[r * v + i];
                for (std::size_t i = 0; i < v; ++i) {
                    gx[r * v + i] += static_cast<T>(y[r * v + i] * (g[r * v + i] - dot));
                }
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> gelu(BasicTape<T>& tape, const BasicTensor<T>& x) {
    // tanh approximation, written as v * sigmoid(2u) with u = c (v + a v^3)
    constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    constexpr T a = static_cast<T>(0.044715);
    const std::size_t n = x.numel();
    BasicTensor<T> out(x.dims());
    for_chunks(n, [&](std::size_t at, std::size_t len) {
        const Chunk<T> v = load_chunk(x.data().data() + at, len);
        store_chunk<T>(v / (T(1) + (T(-2) * c * (v + a * v.cube())).exp()), out.data().data() + at, len);
    });
    if (tracks(tape, {&x})) {
        out.set_requires_grad();
        tape.record({x}, out, [x, n, c, a](std::span<const T> g) mutable {
            auto gx = x.grad_buffer();
            for_chunks(n, [&](std::size_t at, std::size_t len) {
                const Chunk<T> v = load_chunk(x.data().data() + at, len);
                const Chunk<T> gv = load_chunk(g.data() + at, len);
                const Chunk<T> s = T(1) / (T(1) + (T(-2) * c * (v + a * v.cube())).exp());
                const Chunk<T> d = gv * (s + v * s * (T(1) - s) * (T(2) * c) * (T(1) + T(3) * a * v.square()));
                for (std::size_t i = 0; i < len; ++i) gx[at + i] += d[static_cast<Eigen::Index>(i)];
            });
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> masked_fill(BasicTape<T>& tape, const BasicTensor<T>& x, std::span<const std::uint8_t> keep,
                           T value) {
    if (keep.size() != x.numel()) {
        throw DimensionError("masked_fill: mask of " + std::to_string(keep.size()) +
                             " entries for shape " + shape_to_string(x.dims()));
    }
    BasicTensor<T> out(x.dims());
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = keep[i] ? x[i] : value;
    if (tracks(tape, {&x})) {
        out.set_requires_grad();
        tape.record({x}, out,
                    [x, keep = std::vector<std::uint8_t>(keep.begin(), keep.end())](std::span<const T> g) mutable {
                        auto gx = x.grad_buffer();
                        for (std::size_t i = 0; i < g.size(); ++i) {
                            if (keep[i]) gx[i] += g[i];
                        }
                    });
    }
    return out;
}

template <typename T>
BasicTensor<T> dropout(BasicTape<T>& tape, const BasicTensor<T>& x, double rate, Rng* rng) {
    if (rng == nullptr || rate <= 0.0) return x;
    if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> factor(x.numel());
    for (T& f : factor) f = uniform01(*rng) < rate ? T{0} : keep_scale;
    BasicTensor<T> out(x.dims());
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor[i];
    if (tracks(tape, {&x})) {
        out.set_requires_grad();
        tape.record({x}, out, [x, factor = std::move(factor)](std::span<const T> g) mutable {
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor[i];
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> cross_entropy_masked(BasicTape<T>& tape, const BasicTensor<T>& logits,
                                    std::span<const TokenId> targets, std::span<const std::uint8_t> select) {
    if (logits.rank() < 2) {
        throw DimensionError("cross_entropy_masked: logits must be [N,V], got " + shape_to_string(logits.dims()));
    }
    const std::size_t v = logits.dims().back();
    const std::size_t n = v ? logits.numel() / v : 0;
    if (targets.size() != n || select.size() != n) {
        throw DimensionError("cross_entropy_masked: " + std::to_string(n) + " rows but " +
                             std::to_string(targets.size()) + " targets and " + std::to_string(select.size()) +
                             " selection flags");
    }
    std::vector<std::size_t> picked;
    for (std::size_t i = 0; i < n; ++i) {
        if (!select[i]) continue;
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
            throw IndexError("cross_entropy_masked: target " + std::to_string(targets[i]) + " at row " +
                             std::to_string(i) + " outside [0," + std::to_string(v) + ")");
        }
        picked.push_back(i);
    }
    if (picked.empty()) throw ContractError("cross_entropy_masked: empty selection");

    std::vector<double> lse(picked.size());
    double total = 0.0;
    for (std::size_t p = 0; p < picked.size(); ++p) {
        const T* row = logits.data().data() + picked[p] * v;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < v; ++j) {
            if (!std::isfinite(row[j])) {
                throw NumericError("cross_entropy_masked: non-finite logit at row " + std::to_string(picked[p]));
            }
            mx = std::max(mx, static_cast<double>(row[j]));
        }
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
        lse[p] = mx + std::log(s);
        total += lse[p] - row[targets[picked[p]]];
    }
    const double count = static_cast<double>(picked.size());
    auto out = BasicTensor<T>::scalar(static_cast<T>(total / count));
    if (tracks(tape, {&logits})) {
        out.set_requires_grad();
        tape.record({logits}, out,
                    [logits, v, count, picked = std::move(picked), lse = std::move(lse),
                     tgt = std::vector<TokenId>(targets.begin(), targets.end())](std::span<const T> g) mutable {
                        auto gl = logits.grad_buffer();
                        const double scale_ = g[0] / count;
                        for (std::size_t p = 0; p < picked.size(); ++p) {
                            const std::size_t base = picked[p] * v;
                            for (std::size_t j = 0; j < v; ++j) {
                                double prob = std::exp(logits[base + j] - lse[p]);
                                if (static_cast<TokenId>(j) == tgt[picked[p]]) prob -= 1.0;
                                gl[base + j] += static_cast<T>(prob * scale_);
                            }
                        }
                    });
    }
    return out;
}

template <typename T>
BasicTensor<T> bce_with_logits_masked(BasicTape<T>& tape, const BasicTensor<T>& logits,
                                      std::span<const std::uint8_t> targets, std::span<const std::uint8_t> select) {
    const std::size_t n = logits.numel();
    if (targets.size() != n || select.size() != n) {
        throw DimensionError("bce_with_logits_masked: " + std::to_string(n) + " logits but " +
                             std::to_string(targets.size()) + " targets and " + std::to_string(select.size()) +
                             " selection flags");
    }
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!select[i]) continue;
        const double z = logits[i];
        if (!std::isfinite(z)) throw NumericError("bce_with_logits_masked: non-finite logit at " + std::to_string(i));
        const double y = targets[i] ? 1.0 : 0.0;
        total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        ++count;
    }
    if (count == 0) throw ContractError("bce_with_logits_masked: empty selection");
    auto out = BasicTensor<T>::scalar(static_cast<T>(total / static_cast<double>(count)));
    if (tracks(tape, {&logits})) {
        out.set_requires_grad();
        tape.record({logits}, out,
                    [logits, count, tg = std::vector<std::uint8_t>(targets.begin(), targets.end()),
                     sel = std::vector<std::uint8_t>(select.begin(), select.end())](std::span<const T> g) mutable {
                        auto gl = logits.grad_buffer();
                        const double s = g[0] / static_cast<double>(count);
                        for (std::size_t i = 0; i < gl.size(); ++i) {
                            if (!sel[i]) continue;
                            const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
                            gl[i] += static_cast<T>((sig - (tg[i] ? 1.0 : 0.0)) * s);
                        }
                    });
    }
    return out;
}

template <typename T>
BasicTensor<T> mse_loss(BasicTape<T>& tape, const BasicTensor<T>& pred, std::span<const T> targets) {
    const std::size_t n = pred.numel();
    if (targets.size() != n) {
        throw DimensionError("mse_loss: " + std::to_string(n) + " predictions but " +
                             std::to_string(targets.size()) + " targets");
    }
    if (n == 0) throw ContractError("mse_loss: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred[i]) - targets[i];
        total += d * d;
    }
    auto out = BasicTensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
    if (tracks(tape, {&pred})) {
        out.set_requires_grad();
        tape.record({pred}, out,
                    [pred, tv = std::vector<T>(targets.begin(), targets.end())](std::span<const T> g) mutable {
                        auto gp = pred.grad_buffer();
                        const double s = 2.0 * g[0] / static_cast<double>(tv.size());
                        for (std::size_t i = 0; i < tv.size(); ++i) {
                            gp[i] += static_cast<T>((static_cast<double>(pred[i]) - tv[i]) * s);
                        }
                    });
    }
    return out;
}

#define PLM_INSTANTIATE_OPS(T)                                                                               \
    template BasicTensor<T> matmul(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);             \
    template BasicTensor<T> add(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);                \
    template BasicTensor<T> mul(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&);                \
    template BasicTensor<T> scale(BasicTape<T>&, const BasicTensor<T>&, T);                                  \
    template BasicTensor<T> sum(BasicTape<T>&, const BasicTensor<T>&);                                       \
    template BasicTensor<T> transpose(BasicTape<T>&, const BasicTensor<T>&);                                 \
    template BasicTensor<T> reshape(BasicTape<T>&, const BasicTensor<T>&, Shape);                            \
    template BasicTensor<T> permute(BasicTape<T>&, const BasicTensor<T>&, std::span<const std::size_t>);     \
    template BasicTensor<T> slice_rows(BasicTape<T>&, const BasicTensor<T>&, std::size_t, std::size_t);      \
    template BasicTensor<T> gather_rows(BasicTape<T>&, const BasicTensor<T>&, std::span<const std::size_t>); \
    template BasicTensor<T> embedding_lookup(BasicTape<T>&, const BasicTensor<T>&, std::span<const TokenId>); \
    template BasicTensor<T> layer_norm(BasicTape<T>&, const BasicTensor<T>&, const BasicTensor<T>&,          \
                                       const BasicTensor<T>&, double);                                       \
    template BasicTensor<T> softmax_last(BasicTape<T>&, const BasicTensor<T>&);                              \
    template BasicTensor<T> gelu(BasicTape<T>&, const BasicTensor<T>&);                                      \
    template BasicTensor<T> masked_fill(BasicTape<T>&, const BasicTensor<T>&, std::span<const std::uint8_t>, \
                                        T);                                                                  \
    template BasicTensor<T> dropout(BasicTape<T>&, const BasicTensor<T>&, double, Rng*);                     \
    template BasicTensor<T> cross_entropy_masked(BasicTape<T>&, const BasicTensor<T>&,                       \
                                                 std::span<const TokenId>, std::span<const std::uint8_t>);   \
    template BasicTensor<T> bce_with_logits_masked(BasicTape<T>&, const BasicTensor<T>&,                     \
                                                   std::span<const std::uint8_t>,                            \
                                                   std::span<const std::uint8_t>);                           \
    template BasicTensor<T> mse_loss(BasicTape<T>&, const BasicTensor<T>&, std::span<const T>);

PLM_INSTANTIATE_OPS(float)
PLM_INSTANTIATE_OPS(double)

#undef PLM_INSTANTIATE_OPS

}  // namespace plm
