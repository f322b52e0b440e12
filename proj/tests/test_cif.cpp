// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

namespace ce = crystal_evolve;
using namespace testing_support;

namespace {

const char* kMinimal = R"(data_minimal
_cell_length_a    5.000000
_cell_length_b    5.000000
_cell_length_c    5.000000
_cell_angle_alpha 90
_cell_angle_beta  90
_cell_angle_gamma 90
loop_
_atom_site_type_symbol
_atom_site_fract_x
_atom_site_fract_y
_atom_site_fract_z
C 0 0 0
)";

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  if (pos != std::string::npos) s.replace(pos, from.size(), to);
  return s;
}

ce::Errc parse_error(const std::string& text) {
  try {
    ce::parse_cif(text);
  } catch (const ce::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a parse error";
  return ce::Errc::MalformedDocument;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST(CifParse, MinimalCubicCarbon) {
  const auto s = ce::parse_cif(kMinimal);
  EXPECT_EQ(s.id, "minimal");
  EXPECT_EQ(s.cell.a, 5.0);
  EXPECT_EQ(s.cell.gamma, 90.0);
  ASSERT_EQ(s.sites.size(), 1u);
  EXPECT_EQ(s.sites[0].element, 6);
  EXPECT_EQ(s.sites[0].fx, 0.0);
  EXPECT_EQ(s.sites[0].fy, 0.0);
  EXPECT_EQ(s.sites[0].fz, 0.0);
}

TEST(CifParse, CoordinatesAreWrapped) {
  const auto s = ce::parse_cif(replace_once(kMinimal, "C 0 0 0", "C 1.25 -0.25 2"));
  EXPECT_DOUBLE_EQ(s.sites[0].fx, 0.25);
  EXPECT_DOUBLE_EQ(s.sites[0].fy, 0.75);
  EXPECT_EQ(s.sites[0].fz, 0.0);
}

TEST(CifParse, MissingCellLengthIsMissingTag) {
  std::string text = kMinimal;
  text = replace_once(text, "_cell_length_a    5.000000\n", "");
  EXPECT_EQ(parse_error(text), ce::Errc::MissingTag);
}

TEST(CifParse, ErrorsNameTheLine) {
  try {
    ce::parse_cif(replace_once(kMinimal, "C 0 0 0", "Xx 0 0 0"));
    FAIL();
  } catch (const ce::Error& e) {
    EXPECT_EQ(e.code(), ce::Errc::UnknownElement);
    EXPECT_NE(std::string(e.what()).find("line 13"), std::string::npos) << e.what();
  }
}

TEST(CifParse, ErrorKinds) {
  EXPECT_EQ(parse_error(replace_once(kMinimal, "C 0 0 0\n", "")), ce::Errc::EmptyAtomLoop);
  EXPECT_EQ(parse_error(replace_once(kMinimal, "_cell_angle_beta  90", "_cell_angle_beta  9x0")),
            ce::Errc::MalformedNumber);
  EXPECT_EQ(parse_error(replace_once(replace_once(kMinimal, "_atom_site_type_symbol\n", ""), "C 0 0 0", "0 0 0")),
            ce::Errc::MissingTag);
  EXPECT_EQ(parse_error(replace_once(kMinimal, "C 0 0 0", "C 0 0 0 C")), ce::Errc::MalformedDocument);
  EXPECT_EQ(parse_error(replace_once(kMinimal, "C 0 0 0", "C 0 nan 0")), ce::Errc::MalformedNumber);
  EXPECT_EQ(parse_error(std::string(kMinimal) + "data_second\n"), ce::Errc::MalformedDocument);
}

TEST(CifParse, ImpossibleAnglesRejected) {
  std::string text = replace_once(kMinimal, "_cell_angle_alpha 90", "_cell_angle_alpha 10");
  text = replace_once(text, "_cell_angle_beta  90", "_cell_angle_beta  170");
  EXPECT_EQ(parse_error(text), ce::Errc::InvalidStructure);
}

TEST(CifParse, SymmetryTagsWarnAndAreIgnored) {
  std::vector<std::string> warnings;
  const std::string text = replace_once(kMinimal, "loop_", "_symmetry_space_group_name_H-M 'P 1'\nloop_");
  const auto s = ce::parse_cif(text, &warnings);
  EXPECT_EQ(s.sites.size(), 1u);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(CifParse, TypeSymbolsWithChargeAndUncertainty) {
  const auto s = ce::parse_cif(replace_once(kMinimal, "C 0 0 0", "Zn2+ 0.5(3) 0.25 0\nCL1 0.1 0.1 0.1"));
  ASSERT_EQ(s.sites.size(), 2u);
  EXPECT_EQ(s.sites[0].element, 30);
  EXPECT_EQ(s.sites[0].fx, 0.5);
  EXPECT_EQ(s.sites[1].element, 17);
}

TEST(CifWrite, CellLengthLineFormat) {
  const auto text = ce::write_cif(ce::parse_cif(kMinimal));
  EXPECT_NE(text.find("\n_cell_length_a    5.000000\n"), std::string::npos) << text;
}

TEST(CifWrite, LoopRowsInInputOrder) {
  ce::CrystalStructure s;
  s.id = "three";
  s.cell = {5, 6, 7, 90, 90, 90};
  s.sites = {{8, 0.1, 0.2, 0.3}, {6, 0.4, 0.5, 0.6}, {1, 0.7, 0.8, 0.9}};
  const auto text = ce::write_cif(s);
  const auto loop = text.find("_atom_site_fract_z\n");
  ASSERT_NE(loop, std::string::npos);
  const std::string rows = text.substr(loop + std::string("_atom_site_fract_z\n").size());
  EXPECT_EQ(rows, "O1 O 0.100000 0.200000 0.300000\nC2 C 0.400000 0.500000 0.600000\nH3 H 0.700000 0.800000 0.900000\n");
  const auto back = ce::parse_cif(text);
  ASSERT_EQ(back.sites.size(), 3u);
  EXPECT_EQ(back.sites[0].element, 8);
  EXPECT_EQ(back.sites[2].element, 1);
}

TEST(CifRoundTrip, RandomStructuresWithinTolerance) {
  ce::Rng rng(11);
  for (int k = 0; k < 300; ++k) {
    const auto s = random_structure(rng, 6, "rt_" + std::to_string(k));
    const auto back = ce::parse_cif(ce::write_cif(s));
    ASSERT_EQ(back.id, s.id);
    ASSERT_EQ(back.sites.size(), s.sites.size());
    EXPECT_NEAR(back.cell.a, s.cell.a, 1e-6);
    EXPECT_NEAR(back.cell.beta, s.cell.beta, 1e-6);
    for (std::size_t i = 0; i < s.sites.size(); ++i) {
      EXPECT_EQ(back.sites[i].element, s.sites[i].element);
      for (int axis = 0; axis < 3; ++axis) {
        const double d = std::abs(back.sites[i].frac(axis) - s.sites[i].frac(axis));
        EXPECT_LE(std::min(d, 1.0 - d), 1e-6);  // 0.9999996 legitimately quantizes to 0
      }
    }
    // Exact fixpoint after one quantization.
    EXPECT_EQ(ce::parse_cif(ce::write_cif(back)), back);
  }
}

TEST(CifRoundTrip, BundledCorpusFixpoint) {
  int files = 0;
  for (const auto& dir : {"toy/pool", "toy/train", "toy/holdout"})
    for (const auto& e : std::filesystem::directory_iterator(data_path(dir))) {
      const auto s1 = ce::read_cif_file(e.path().string());
      const auto s2 = ce::parse_cif(ce::write_cif(s1));
      EXPECT_EQ(s1, s2) << e.path();
      ++files;
    }
  EXPECT_EQ(files, 80);
}

TEST(Wrap, Idempotent) {
  ce::Rng rng(5);
  for (int k = 0; k < 10000; ++k) {
    const double x = rng.uniform(-50.0, 50.0);
    const double w = ce::wrap_fraction(x);
    EXPECT_GE(w, 0.0);
    EXPECT_LT(w, 1.0);
    EXPECT_EQ(ce::wrap_fraction(w), w);
  }
  EXPECT_EQ(ce::wrap_fraction(-1e-18), 0.0);
  EXPECT_FALSE(std::signbit(ce::wrap_fraction(-0.0)));
}

TEST(CifFuzz, ParserIsTotal) {
  ce::Rng rng(99);
  const std::string alphabet = " \n\t_;'\"#0123456789.-+()abcxyzCNOHZnloop_data_";
  int parsed = 0, rejected = 0;
  for (int k = 0; k < 3000; ++k) {
    std::string text = ce::write_cif(random_structure(rng, 4, "fz"));
    const int edits = 1 + static_cast<int>(rng.index(6));
    for (int e = 0; e < edits && !text.empty(); ++e) {
      const std::size_t pos = rng.index(text.size());
      switch (rng.index(4)) {
        case 0: text.erase(pos, 1 + rng.index(8)); break;
        case 1: text.insert(pos, 1, alphabet[rng.index(alphabet.size())]); break;
        case 2: text[pos] = alphabet[rng.index(alphabet.size())]; break;
        default: {
          const std::size_t len = std::min<std::size_t>(20, text.size() - pos);
          text.insert(rng.index(text.size()), text.substr(pos, len));
        }
      }
    }
    try {
      const auto s = ce::parse_cif(text);
      EXPECT_EQ(ce::structure_violation(s), "") << text;
      ++parsed;
    } catch (const ce::Error&) {
      ++rejected;
    }
  }
  EXPECT_GT(parsed, 0);
  EXPECT_GT(rejected, 0);
}

TEST(Dataset, LoadsMeasuredEntries) {
  const auto dir = scratch_dir("dataset_ok");
  const std::string cif = ce::write_cif(ce::parse_cif(kMinimal));
  write_file(dir / "a.cif", cif);
  write_file(dir / "b.cif", cif);
  write_file(dir / "m.jsonl",
             R"({"cif": "a.cif", "fe_percent": 50, "voltage_v": -1.2, "free_energy_ev_atom": -0.5})" "\n\n"
             R"({"cif": "b.cif", "fe_percent": 80, "voltage_v": -0.7, "free_energy_ev_atom": 0.1})" "\n");
  const auto entries = ce::load_dataset((dir / "m.jsonl").string());
  ASSERT_EQ(entries.size(), 2u);
  for (const auto& e : entries) {
    EXPECT_EQ(e.provenance, ce::Provenance::Measured);
    EXPECT_TRUE(e.labels.fe && e.labels.v && e.labels.de);
  }
  EXPECT_EQ(*entries[1].labels.v, -0.7);
}

TEST(Dataset, PartialLabels) {
  const auto dir = scratch_dir("dataset_partial");
  write_file(dir / "a.cif", kMinimal);
  write_file(dir / "m.jsonl", R"({"cif": "a.cif", "fe_percent": 12.5})" "\n");
  const auto entries = ce::load_dataset((dir / "m.jsonl").string());
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(*entries[0].labels.fe, 12.5);
  EXPECT_FALSE(entries[0].labels.v);
  EXPECT_FALSE(entries[0].labels.de);
}

TEST(Dataset, MissingCifNamesPathAndLine) {
  const auto dir = scratch_dir("dataset_missing");
  write_file(dir / "a.cif", kMinimal);
  write_file(dir / "m.jsonl", R"({"cif": "a.cif", "fe_percent": 1})" "\n" R"({"cif": "gone.cif", "fe_percent": 1})" "\n");
  try {
    ce::load_dataset((dir / "m.jsonl").string());
    FAIL();
  } catch (const ce::Error& e) {
    EXPECT_EQ(e.code(), ce::Errc::FileNotFound);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("gone.cif"), std::string::npos) << msg;
    EXPECT_NE(msg.find(":2"), std::string::npos) << msg;
  }
}

TEST(Dataset, LineErrors) {
  const auto dir = scratch_dir("dataset_bad");
  write_file(dir / "a.cif", kMinimal);
  write_file(dir / "m.jsonl", R"({"cif": "a.cif", "fe_percent": 1})" "\n{not json\n");
  try {
    ce::load_dataset((dir / "m.jsonl").string());
    FAIL();
  } catch (const ce::Error& e) {
    EXPECT_EQ(e.code(), ce::Errc::LineParseError);
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
  write_file(dir / "n.jsonl", R"({"cif": "a.cif"})" "\n");
  EXPECT_THROW(ce::load_dataset((dir / "n.jsonl").string()), ce::Error);
  write_file(dir / "o.jsonl", R"({"cif": "a.cif", "fe_percent": 140})" "\n");
  EXPECT_THROW(ce::load_dataset((dir / "o.jsonl").string()), ce::Error);
  EXPECT_THROW(ce::load_dataset((dir / "absent.jsonl").string()), ce::Error);
}

TEST(Dataset, BundledManifest) {
  const auto entries = ce::load_dataset(data_path("toy/manifest.jsonl"));
  EXPECT_EQ(entries.size(), 15u);
}
