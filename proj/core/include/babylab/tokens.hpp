// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace babylab {

using TokenId = std::int32_t;

// Special tokens occupy the first ids of every vocabulary.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kMaskId = 2;
inline constexpr TokenId kBosId = 3;
inline constexpr TokenId kEosId = 4;
inline constexpr int kNumSpecials = 5;

}  // namespace babylab
