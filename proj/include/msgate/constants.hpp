#pragma once

#include <numbers>

namespace msgate::constants {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// CODATA 2018
inline constexpr double hbar = 1.054571817e-34;
inline constexpr double elementary_charge = 1.602176634e-19;
inline constexpr double epsilon0 = 8.8541878128e-12;
inline constexpr double atomic_mass_unit = 1.66053906660e-27;
inline constexpr double electron_mass = 9.1093837015e-31;

// 171Yb+ : neutral atomic mass minus one electron
inline constexpr double yb171_ion_mass = 170.9363258 * atomic_mass_unit - electron_mass;

inline constexpr double raman_wavelength = 355e-9;
inline constexpr double raman_delta_k = 2.0 * two_pi / raman_wavelength;

inline constexpr double khz = two_pi * 1e3;
inline constexpr double mhz = two_pi * 1e6;

inline constexpr double deg = pi / 180.0;

}  // namespace msgate::constants
