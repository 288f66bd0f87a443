#include "careseg/hierarchy.hpp"

namespace careseg {

const LabelSchema& schema_for_stage(uint8_t stage) {
  static const LabelSchema s1{1, 3, {"BG", "LV", "f-MYO", "", ""}};
  static const LabelSchema s2{2, 4, {"BG", "LV", "MYO", "f-MIT", ""}};
  static const LabelSchema s3{3, 5, {"BG", "LV", "MYO", "MIT", "MVO"}};
  switch (stage) {
    case 1: return s1;
    case 2: return s2;
    case 3: return s3;
  }
  throw SchemaMismatch("no schema for stage " + std::to_string(stage));
}

std::string to_string(Subgroup sg) {
  switch (sg) {
    case Subgroup::D8: return "D8";
    case Subgroup::M1: return "M1";
    case Subgroup::M12: return "M12";
  }
  return "";
}

Subgroup subgroup_from_string(const std::string& s) {
  if (s == "D8") return Subgroup::D8;
  if (s == "M1") return Subgroup::M1;
  if (s == "M12") return Subgroup::M12;
  throw UnknownCode("unknown subgroup '" + s + "'");
}

LabelVolume collapse_to_stage(const LabelVolume& y, uint8_t stage) {
  if (y.schema != 3) throw SchemaMismatch("collapse_to_stage expects stage-3 ground truth");
  LabelVolume out = y;
  out.schema = stage;
  if (stage == 3) return out;

  // stage 2: MVO -> f-MIT; stage 1: additionally MYO/MIT/MVO -> f-MYO
  static const uint8_t to_stage2[5] = {label::BG, label::LV, label::MYO, label::FMIT, label::FMIT};
  static const uint8_t to_stage1[5] = {label::BG, label::LV, label::FMYO, label::FMYO, label::FMYO};
  const uint8_t* map = nullptr;
  if (stage == 2) map = to_stage2;
  else if (stage == 1) map = to_stage1;
  else throw SchemaMismatch("collapse_to_stage: stage must be 1, 2 or 3");

  for (auto& code : out.data) {
    if (code > label::MVO) throw UnknownCode("label code " + std::to_string(code) + " not in stage-3 schema");
    code = map[code];
  }
  return out;
}

bool contains_mvo(const LabelVolume& y) {
  if (y.schema != 3) throw SchemaMismatch("contains_mvo expects stage-3 ground truth");
  for (uint8_t code : y.data)
    if (code == label::MVO) return true;
  return false;
}

ProbVolume select_final(const ProbVolume& y2, const ProbVolume& y3, Subgroup sg) {
  if (!(y2.dims == y3.dims) || !(y2.spacing == y3.spacing))
    throw GeometryMismatch("select_final: stage-2/3 predictions disagree on geometry");
  if (y2.kind != ProbVolume::Kind::Probs || y3.kind != ProbVolume::Kind::Probs)
    throw NotProbabilities("select_final expects softmaxed predictions");
  return sg == Subgroup::D8 ? y3 : y2;
}

}  // namespace careseg
