#pragma once

namespace equikernel {

inline constexpr const char* version = "0.1.0";

}  // namespace equikernel
