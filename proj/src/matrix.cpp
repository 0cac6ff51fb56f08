#include "fftrain/matrix.hpp"

#include "fftrain/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fftrain {

namespace {

std::atomic<unsigned> g_math_threads{1};

constexpr std::size_t kPanel = 4;

// Two-lane vector; each lane is an ordinary IEEE double operation.
typedef double v2d __attribute__((vector_size(16)));
constexpr std::size_t kTransposeTile = 32;
constexpr double kSparseDensity = 0.125;
constexpr std::size_t kParallelMinWork = std::size_t{1} << 20;

// Splits [0, rows) into contiguous chunks, one per worker. Each output row is
// owned by exactly one worker, so the arithmetic is unaffected by the split.
template <typename Body>
void for_row_ranges(std::size_t rows, std::size_t work, Body&& body)
{
    const std::size_t workers = std::min<std::size_t>(g_math_threads.load(), rows);
    if (workers <= 1 || work < kParallelMinWork) {
        body(std::size_t{0}, rows);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    const std::size_t chunk = (rows + workers - 1) / workers;
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t begin = std::min(rows, w * chunk);
        const std::size_t end = std::min(rows, begin + chunk);
        if (begin < end) {
            pool.emplace_back([&body, begin, end] { body(begin, end); });
        }
    }
    body(std::size_t{0}, std::min(rows, chunk));
}

double density(const Matrix& m)
{
    if (m.empty()) {
        return 0.0;
    }
    const auto v = m.values();
    const auto nonzero = std::count_if(v.begin(), v.end(), [](double x) { return x != 0.0; });
    return static_cast<double>(nonzero) / static_cast<double>(v.size());
}

// Columns [j0, j0 + 4) of b (k×n), packed p-major into panel (k×4).
void pack_panel(const double* b, double* panel, std::size_t k, std::size_t n, std::size_t j0)
{
    for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * n + j0;
        double* dst = panel + p * kPanel;
        for (std::size_t j = 0; j < kPanel; ++j) {
            dst[j] = bp[j];
        }
    }
}

// c[r0..r1) = a · b for row-major a (m×k), b (k×n), c (m×n). Every element is
// accumulated from +0.0 over p = 0..k-1 in order; a 4×4 tile of c stays in
// registers while p advances.
void gemm_rows(const double* a, const double* b, double* c,
               std::size_t r0, std::size_t r1, std::size_t k, std::size_t n)
{
    std::vector<double> panel(k * kPanel);
    std::size_t j0 = 0;
    for (; j0 + kPanel <= n; j0 += kPanel) {
        pack_panel(b, panel.data(), k, n, j0);
        const double* bp = panel.data();
        std::size_t i = r0;
        for (; i + 4 <= r1; i += 4) {
            const double* a0 = a + i * k;
            const double* a1 = a0 + k;
            const double* a2 = a1 + k;
            const double* a3 = a2 + k;
            v2d c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{};
            for (std::size_t p = 0; p < k; ++p) {
                v2d b0;
                v2d b1;
                std::memcpy(&b0, bp + p * kPanel, sizeof b0);
                std::memcpy(&b1, bp + p * kPanel + 2, sizeof b1);
                const v2d v0 = {a0[p], a0[p]};
                const v2d v1 = {a1[p], a1[p]};
                const v2d v2 = {a2[p], a2[p]};
                const v2d v3 = {a3[p], a3[p]};
                c00 += v0 * b0;
                c01 += v0 * b1;
                c10 += v1 * b0;
                c11 += v1 * b1;
                c20 += v2 * b0;
                c21 += v2 * b1;
                c30 += v3 * b0;
                c31 += v3 * b1;
            }
            const v2d tile[4][2] = {{c00, c01}, {c10, c11}, {c20, c21}, {c30, c31}};
            for (std::size_t r = 0; r < 4; ++r) {
                std::memcpy(c + (i + r) * n + j0, &tile[r][0], sizeof(v2d));
                std::memcpy(c + (i + r) * n + j0 + 2, &tile[r][1], sizeof(v2d));
            }
        }
        for (; i < r1; ++i) {
            const double* ai = a + i * k;
            double acc[kPanel] = {};
            for (std::size_t p = 0; p < k; ++p) {
                for (std::size_t j = 0; j < kPanel; ++j) {
                    acc[j] += ai[p] * bp[p * kPanel + j];
                }
            }
            for (std::size_t j = 0; j < kPanel; ++j) {
                c[i * n + j0 + j] = acc[j];
            }
        }
    }
    // Remaining columns, one at a time.
    for (; j0 < n; ++j0) {
        for (std::size_t i = r0; i < r1; ++i) {
            const double* ai = a + i * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += ai[p] * b[p * n + j0];
            }
            c[i * n + j0] = acc;
        }
    }
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill)
{}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values))
{
    if (values_.size() != rows_ * cols_) {
        throw ShapeError(fmt::format("matrix {}x{} needs {} values, got {}",
                                     rows_, cols_, rows_ * cols_, values_.size()));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size())
{
    values_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw ShapeError("ragged matrix literal");
        }
        values_.insert(values_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::row_vector(std::span<const double> values)
{
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Matrix::shape_string() const
{
    return fmt::format("{}x{}", rows_, cols_);
}

void Matrix::fill(double value)
{
    std::fill(values_.begin(), values_.end(), value);
}

bool bitwise_equal(const Matrix& a, const Matrix& b) noexcept
{
    if (!a.same_shape(b)) {
        return false;
    }
    return a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool all_finite(const Matrix& m) noexcept
{
    const auto v = m.values();
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void require_finite(const Matrix& m, std::string_view what)
{
    if (!all_finite(m)) {
        throw NumericError(fmt::format("non-finite value in {}", what));
    }
}

void require_same_shape(const Matrix& a, const Matrix& b, std::string_view what)
{
    if (!a.same_shape(b)) {
        throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", what, a.shape_string(), b.shape_string()));
    }
}

Matrix matmul(const Matrix& a, const Matrix& b)
{
    if (a.cols() != b.rows()) {
        throw ShapeError(fmt::format("matmul: cannot multiply {} by {}", a.shape_string(), b.shape_string()));
    }
    Matrix c(a.rows(), b.cols());
    const std::size_t k = a.cols();
    const std::size_t n = b.cols();
    for_row_ranges(a.rows(), a.rows() * k * n, [&](std::size_t r0, std::size_t r1) {
        gemm_rows(a.data(), b.data(), c.data(), r0, r1, k, n);
    });
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b)
{
    if (a.cols() != b.cols()) {
        throw ShapeError(fmt::format("matmul_nt: cannot multiply {} by transpose of {}",
                                     a.shape_string(), b.shape_string()));
    }
    const std::size_t k = a.cols();
    const std::size_t n = b.rows();
    // Contraction indices where some row of a is nonzero.
    std::vector<char> nonzero(k, 0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            nonzero[p] |= static_cast<char>(ai[p] != 0.0);
        }
    }
    std::vector<std::size_t> used;
    for (std::size_t p = 0; p < k; ++p) {
        if (nonzero[p] != 0) {
            used.push_back(p);
        }
    }
    if (static_cast<double>(used.size()) >= kSparseDensity * static_cast<double>(k)) {
        return matmul(a, transpose(b));
    }
    // Gather the used columns of b once, as rows, then accumulate in
    // ascending contraction order like the dense kernel.
    const std::size_t u = used.size();
    Matrix gathered(u, n);
    for (std::size_t q = 0; q < u; ++q) {
        for (std::size_t j = 0; j < n; ++j) {
            gathered.data()[q * n + j] = b.data()[j * k + used[q]];
        }
    }
    Matrix c(a.rows(), n);
    for_row_ranges(a.rows(), a.rows() * n * u, [&](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
            const double* ai = a.data() + i * k;
            double* ci = c.data() + i * n;
            for (std::size_t q = 0; q < u; ++q) {
                const double v = ai[used[q]];
                if (v == 0.0) {
                    continue;
                }
                const double* gq = gathered.data() + q * n;
                for (std::size_t j = 0; j < n; ++j) {
                    ci[j] += v * gq[j];
                }
            }
        }
    });
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b)
{
    if (a.rows() != b.rows()) {
        throw ShapeError(fmt::format("matmul_tn: cannot multiply transpose of {} by {}",
                                     a.shape_string(), b.shape_string()));
    }
    if (density(b) >= kSparseDensity) {
        return matmul(transpose(a), b);
    }
    const std::size_t k = a.rows();
    const std::size_t m = a.cols();
    const std::size_t n = b.cols();
    // Nonzeros of b in ascending p, so every output element still sums its
    // products in contraction order.
    struct Entry {
        std::size_t p;
        std::size_t j;
        double v;
    };
    std::vector<Entry> entries;
    for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) {
            if (bp[j] != 0.0) {
                entries.push_back({p, j, bp[j]});
            }
        }
    }
    Matrix c(m, n);
    for_row_ranges(m, m * entries.size() * 8, [&](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
            double* ci = c.data() + i * n;
            for (const Entry& e : entries) {
                ci[e.j] += a.data()[e.p * m + i] * e.v;
            }
        }
    });
    return c;
}

Matrix transpose(const Matrix& m)
{
    Matrix t(m.cols(), m.rows());
    const std::size_t rows = m.rows();
    const std::size_t cols = m.cols();
    for (std::size_t r0 = 0; r0 < rows; r0 += kTransposeTile) {
        const std::size_t r1 = std::min(rows, r0 + kTransposeTile);
        for (std::size_t c0 = 0; c0 < cols; c0 += kTransposeTile) {
            const std::size_t c1 = std::min(cols, c0 + kTransposeTile);
            for (std::size_t r = r0; r < r1; ++r) {
                for (std::size_t c = c0; c < c1; ++c) {
                    t.data()[c * rows + r] = m.data()[r * cols + c];
                }
            }
        }
    }
    return t;
}

Matrix vstack(const Matrix& top, const Matrix& bottom)
{
    if (top.cols() != bottom.cols()) {
        throw ShapeError(fmt::format("vstack: {} over {}", top.shape_string(), bottom.shape_string()));
    }
    Matrix out(top.rows() + bottom.rows(), top.cols());
    std::copy(top.values().begin(), top.values().end(), out.values().begin());
    std::copy(bottom.values().begin(), bottom.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(top.size()));
    return out;
}

Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end)
{
    if (begin > end || end > m.rows()) {
        throw ShapeError(fmt::format("slice_rows [{}, {}) out of range for {}", begin, end, m.shape_string()));
    }
    const auto first = m.values().begin() + static_cast<std::ptrdiff_t>(begin * m.cols());
    const auto last = m.values().begin() + static_cast<std::ptrdiff_t>(end * m.cols());
    return Matrix(end - begin, m.cols(), std::vector<double>(first, last));
}

Matrix relu(const Matrix& m)
{
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) {
        // max(0, -0.0) must come out as +0.0
        out[i] = m[i] > 0.0 ? m[i] : 0.0;
    }
    return out;
}

Matrix softmax_rows(const Matrix& m)
{
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto in = m.row(r);
        auto dst = out.row(r);
        if (in.empty()) {
            continue;
        }
        const double peak = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            dst[c] = std::exp(in[c] - peak);
            total += dst[c];
        }
        for (double& v : dst) {
            v /= total;
        }
    }
    return out;
}

double logistic(double x) noexcept
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) noexcept
{
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

void set_math_threads(unsigned count)
{
    g_math_threads.store(std::max(1u, count));
}

void retain_large_allocations()
{
#if defined(__GLIBC__)
    constexpr int kLimit = 1 << 30;
    mallopt(M_MMAP_THRESHOLD, kLimit);
    mallopt(M_TRIM_THRESHOLD, kLimit);
#endif
}

unsigned math_threads() noexcept
{
    return g_math_threads.load();
}

} // namespace fftrain
