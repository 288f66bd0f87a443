#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "careseg/volume.hpp"

namespace careseg {

// Label codes are fixed integers across the whole toolkit. In the stage-1
// schema code 2 is the composite f-MYO (MYO + MIT + MVO); in the stage-2
// schema code 3 is the composite f-MIT (MIT + MVO).
namespace label {
constexpr uint8_t BG = 0;
constexpr uint8_t LV = 1;
constexpr uint8_t MYO = 2;
constexpr uint8_t MIT = 3;
constexpr uint8_t MVO = 4;
constexpr uint8_t FMYO = 2;  // stage-1 schema
constexpr uint8_t FMIT = 3;  // stage-2 schema
}  // namespace label

struct LabelSchema {
  uint8_t stage;          // 1, 2 or 3
  int64_t channels;       // 3, 4 or 5
  std::array<const char*, 5> names;
};

const LabelSchema& schema_for_stage(uint8_t stage);
inline int64_t channels_for_stage(uint8_t stage) { return schema_for_stage(stage).channels; }

enum class Subgroup { D8, M1, M12 };

std::string to_string(Subgroup sg);
Subgroup subgroup_from_string(const std::string& s);

// Collapses stage-3 ground truth onto the label definition of the given
// stage: stage 2 folds MIT and MVO into f-MIT, stage 1 additionally folds
// MYO into f-MYO. Stage 3 is the identity.
LabelVolume collapse_to_stage(const LabelVolume& y, uint8_t stage);

// true iff at least one voxel carries the MVO label (stage-3 schema input)
bool contains_mvo(const LabelVolume& y);

// Subgroup routing of the final prediction: stage-3 probabilities for D8,
// stage-2 probabilities for M1 and M12.
ProbVolume select_final(const ProbVolume& y2, const ProbVolume& y3, Subgroup sg);

}  // namespace careseg
