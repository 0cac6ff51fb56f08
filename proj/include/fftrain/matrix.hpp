#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fftrain {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix row_vector(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }
    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {values_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    bool same_shape(const Matrix& other) const noexcept
    {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_string() const;

    void fill(double value);

    // Numeric equality (so 0.0 == -0.0). Use bitwise_equal for determinism checks.
    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

bool bitwise_equal(const Matrix& a, const Matrix& b) noexcept;
bool all_finite(const Matrix& m) noexcept;
/// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, std::string_view what);
/// Throws ShapeError unless `a` and `b` have identical shapes.
void require_same_shape(const Matrix& a, const Matrix& b, std::string_view what);

// Products. Every output element is accumulated over the contraction index in
// ascending order starting from +0.0, with no fused multiply-add, so results
// are bitwise reproducible. Terms with a zero factor are skipped, which never
// changes the result for finite inputs (an accumulator seeded with +0.0 can
// never become -0.0), and makes products with sparse inputs cheap.

/// a(m×k) · b(k×n)
Matrix matmul(const Matrix& a, const Matrix& b);
/// a(m×k) · bᵀ where b is n×k
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// aᵀ · b where a is k×m and b is k×n
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);
Matrix vstack(const Matrix& top, const Matrix& bottom);
Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end);

Matrix relu(const Matrix& m);
/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& m);

double logistic(double x) noexcept;
/// ln(1 + e^x) without overflow.
double softplus(double x) noexcept;

/// Worker threads used by the products above. 1 (the default) keeps everything
/// on the calling thread; any count yields bitwise-identical output because
/// work is split by output row only.
void set_math_threads(unsigned count);
/// Keeps large freed blocks in the heap instead of returning them to the OS,
/// so per-step temporaries of first-layer size do not page-fault every time.
/// A no-op outside glibc.
void retain_large_allocations();
unsigned math_threads() noexcept;

} // namespace fftrain
