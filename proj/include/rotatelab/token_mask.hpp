#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rotatelab/tensor.hpp"

namespace rotatelab {

/// Boolean admissibility vector over the vocabulary. Tokens are only ever
/// removed; provenance records why each one was removed.
class TokenMask {
public:
    static constexpr std::int32_t kAdmissible = -1;
    static constexpr std::int32_t kGlitch = -2;

    TokenMask() = default;
    explicit TokenMask(std::size_t vocab_size);

    std::size_t size() const noexcept { return reason_.size(); }
    std::size_t masked_count() const noexcept { return masked_count_; }
    std::size_t admissible_count() const noexcept { return size() - masked_count_; }

    bool admissible(std::size_t i) const { return reason_[i] == kAdmissible; }
    /// kAdmissible, kGlitch, or the index of the channel that claimed the token.
    std::int32_t reason(std::size_t i) const { return reason_[i]; }

    /// Masks token i with the given reason. Already-masked tokens keep their
    /// original reason.
    void mask(std::size_t i, std::int32_t reason);

    std::vector<TokenId> masked_ids() const;

    friend bool operator==(const TokenMask&, const TokenMask&) = default;

private:
    std::vector<std::int32_t> reason_;
    std::size_t masked_count_ = 0;
};

}  // namespace rotatelab
