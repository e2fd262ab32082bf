// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace einsense {

inline constexpr const char* kVersion = "einsense 0.1.0";

}  // namespace einsense
