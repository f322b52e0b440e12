// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>

namespace crystal_evolve {

inline constexpr int kMaxAtomicNumber = 100;

inline constexpr std::array<std::string_view, kMaxAtomicNumber> kElementSymbols = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne",
    "Na", "Mg", "Al", "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca",
    "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm"};

inline bool valid_atomic_number(int z) { return z >= 1 && z <= kMaxAtomicNumber; }

inline std::string_view element_symbol(int z) {
  return valid_atomic_number(z) ? kElementSymbols[static_cast<std::size_t>(z - 1)]
                                : std::string_view{};
}

inline std::optional<int> atomic_number(std::string_view symbol) {
  for (std::size_t i = 0; i < kElementSymbols.size(); ++i)
    if (kElementSymbols[i] == symbol) return static_cast<int>(i + 1);
  return std::nullopt;
}

/// Resolve a CIF type symbol such as "Zn2+", "O1" or "FE" to an atomic
/// number: the leading alphabetic run is case-normalised and looked up,
/// trying the two-letter form before the one-letter form.
inline std::optional<int> atomic_number_from_type_symbol(std::string_view raw) {
  std::string letters;
  for (char ch : raw) {
    if (!std::isalpha(static_cast<unsigned char>(ch))) break;
    letters.push_back(ch);
  }
  if (letters.empty()) return std::nullopt;
  letters[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(letters[0])));
  for (std::size_t i = 1; i < letters.size(); ++i)
    letters[i] = static_cast<char>(std::tolower(static_cast<unsigned char>(letters[i])));
  if (letters.size() >= 2)
    if (auto z = atomic_number(std::string_view(letters).substr(0, 2))) return z;
  // A lone letter followed by more letters ("Xx") is not a valid symbol.
  if (letters.size() == 1) return atomic_number(letters);
  return std::nullopt;
}

}  // namespace crystal_evolve
