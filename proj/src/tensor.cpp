#include "rotatelab/tensor.hpp"

#include <cmath>
#include <utility>

#include "rotatelab/errors.hpp"
#include "rotatelab/token_mask.hpp"

namespace rotatelab {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw InputError("matrix payload has " + std::to_string(data_.size()) +
                         " entries, expected " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    }
}

Vec Matrix::row_vec(std::size_t i) const {
    auto r = row(i);
    return Vec(r.begin(), r.end());
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

Unembedding::Unembedding(Matrix weights, std::vector<std::string> tokens)
    : weights_(std::move(weights)), tokens_(std::move(tokens)) {
    if (!tokens_.empty() && tokens_.size() != weights_.rows()) {
        throw InputError("vocab has " + std::to_string(tokens_.size()) +
                         " tokens but unembedding has V = " + std::to_string(weights_.rows()));
    }
}

std::string Unembedding::token(TokenId id) const {
    if (id >= 0 && static_cast<std::size_t>(id) < tokens_.size())
        return tokens_[static_cast<std::size_t>(id)];
    return "<" + std::to_string(id) + ">";
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InputError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Vec normalized(std::span<const double> a) {
    const double n = norm(a);
    if (n == 0.0) throw ZeroVector("cannot normalize");
    Vec out(a.begin(), a.end());
    for (auto& x : out) x /= n;
    return out;
}

TokenMask::TokenMask(std::size_t vocab_size) : reason_(vocab_size, kAdmissible) {}

void TokenMask::mask(std::size_t i, std::int32_t reason) {
    if (i >= reason_.size()) {
        throw InputError("token id " + std::to_string(i) + " outside vocabulary [0, " +
                         std::to_string(reason_.size()) + ")");
    }
    if (reason_[i] != kAdmissible) return;
    reason_[i] = reason;
    ++masked_count_;
}

std::vector<TokenId> TokenMask::masked_ids() const {
    std::vector<TokenId> ids;
    ids.reserve(masked_count_);
    for (std::size_t i = 0; i < reason_.size(); ++i)
        if (reason_[i] != kAdmissible) ids.push_back(static_cast<TokenId>(i));
    return ids;
}

}  // namespace rotatelab
