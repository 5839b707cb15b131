#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rotatelab {

using Vec = std::vector<double>;
using TokenId = std::int64_t;

/// Row-major single-precision matrix. Reductions over it are done in double.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    std::span<const float> row(std::size_t i) const {
        return {data_.data() + i * cols_, cols_};
    }
    std::span<float> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }

    float operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    float& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

    const std::vector<float>& data() const noexcept { return data_; }
    std::vector<float>& data() noexcept { return data_; }

    /// Row i widened to double.
    Vec row_vec(std::size_t i) const;

    Matrix transposed() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

/// The V x d unembedding together with the id -> token string table.
/// Row i is the d-dimensional read-out direction of token i, so the logit of
/// token i for a residual-space vector v is dot(v, row(i)).
class Unembedding {
public:
    Unembedding() = default;
    explicit Unembedding(Matrix weights, std::vector<std::string> tokens = {});

    std::size_t vocab_size() const noexcept { return weights_.rows(); }
    std::size_t dim() const noexcept { return weights_.cols(); }

    const Matrix& weights() const noexcept { return weights_; }
    std::span<const float> row(std::size_t i) const { return weights_.row(i); }

    bool has_tokens() const noexcept { return !tokens_.empty(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    /// Token string for id, or "<id>" when no table is bound.
    std::string token(TokenId id) const;

private:
    Matrix weights_;
    std::vector<std::string> tokens_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
Vec normalized(std::span<const double> a);

}  // namespace rotatelab
