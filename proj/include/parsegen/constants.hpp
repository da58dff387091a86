#pragma once

// Canonical joint order, label palette, skeleton topology and body-part
// definitions. Everything in this header is part of the on-disk format:
// changing an entry requires bumping kFormatVersion.

#include <array>
#include <cstdint>
#include <string_view>

namespace parsegen {

inline constexpr int kFormatVersion = 1;

inline constexpr int kNumJoints = 18;
inline constexpr int kNumLabels = 10;
inline constexpr int kNumParts = 10;

// COCO-18 order as emitted by OpenPose.
enum class Joint : int {
  Nose = 0,
  Neck,
  RShoulder,
  RElbow,
  RWrist,
  LShoulder,
  LElbow,
  LWrist,
  RHip,
  RKnee,
  RAnkle,
  LHip,
  LKnee,
  LAnkle,
  REye,
  LEye,
  REar,
  LEar,
};

inline constexpr std::array<std::string_view, kNumJoints> kJointNames = {
    "nose",    "neck",   "r_shoulder", "r_elbow", "r_wrist", "l_shoulder",
    "l_elbow", "l_wrist", "r_hip",     "r_knee",  "r_ankle", "l_hip",
    "l_knee",  "l_ankle", "r_eye",     "l_eye",   "r_ear",   "l_ear"};

// Index of the joint that a horizontal flip maps each joint onto.
inline constexpr std::array<int, kNumJoints> kJointMirror = {
    0, 1, 5, 6, 7, 2, 3, 4, 11, 12, 13, 8, 9, 10, 15, 14, 17, 16};

enum class Label : std::uint8_t {
  Background = 0,
  Face,
  Hair,
  UpperClothes,
  Pants,
  Skirt,
  LeftArm,
  RightArm,
  LeftLeg,
  RightLeg,
};

inline constexpr std::array<std::string_view, kNumLabels> kLabelNames = {
    "background", "face",     "hair",      "upper_clothes", "pants",
    "skirt",      "left_arm", "right_arm", "left_leg",      "right_leg"};

inline constexpr std::array<int, kNumLabels> kLabelMirror = {0, 1, 2, 3, 4,
                                                             5, 7, 6, 9, 8};

struct Rgb {
  std::uint8_t r, g, b;
};

// Palette used for merged semantic maps on disk and in the editor.
inline constexpr std::array<Rgb, kNumLabels> kLabelPalette = {{
    {0, 0, 0},
    {255, 200, 150},
    {128, 64, 0},
    {220, 40, 40},
    {40, 40, 200},
    {200, 40, 200},
    {40, 200, 40},
    {40, 200, 200},
    {200, 200, 40},
    {255, 128, 0},
}};

struct Edge {
  Joint a, b;
};

// 17-edge skeleton used to rasterise pose masks.
inline constexpr std::array<Edge, 17> kSkeleton = {{
    {Joint::Neck, Joint::RShoulder},
    {Joint::Neck, Joint::LShoulder},
    {Joint::RShoulder, Joint::RElbow},
    {Joint::RElbow, Joint::RWrist},
    {Joint::LShoulder, Joint::LElbow},
    {Joint::LElbow, Joint::LWrist},
    {Joint::Neck, Joint::RHip},
    {Joint::RHip, Joint::RKnee},
    {Joint::RKnee, Joint::RAnkle},
    {Joint::Neck, Joint::LHip},
    {Joint::LHip, Joint::LKnee},
    {Joint::LKnee, Joint::LAnkle},
    {Joint::Neck, Joint::Nose},
    {Joint::Nose, Joint::REye},
    {Joint::REye, Joint::REar},
    {Joint::Nose, Joint::LEye},
    {Joint::LEye, Joint::LEar},
}};

enum class BodyPart : int {
  Head = 0,
  Torso,
  LeftUpperArm,
  LeftLowerArm,
  RightUpperArm,
  RightLowerArm,
  LeftUpperLeg,
  LeftLowerLeg,
  RightUpperLeg,
  RightLowerLeg,
};

inline constexpr std::array<std::string_view, kNumParts> kPartNames = {
    "head",           "torso",          "left_upper_arm", "left_lower_arm",
    "right_upper_arm", "right_lower_arm", "left_upper_leg", "left_lower_leg",
    "right_upper_leg", "right_lower_leg"};

// A part is defined when all of its required joints are visible. Its support
// rectangle spans the required joints plus whichever optional joints are
// visible. Unused slots hold -1.
struct PartDefinition {
  std::array<int, 4> required;
  std::array<int, 4> optional;
  std::array<int, 3> labels;
};

inline constexpr int J(Joint j) { return static_cast<int>(j); }
inline constexpr int L(Label l) { return static_cast<int>(l); }

inline constexpr std::array<PartDefinition, kNumParts> kPartDefinitions = {{
    {{J(Joint::Nose), J(Joint::Neck), -1, -1},
     {J(Joint::REye), J(Joint::LEye), J(Joint::REar), J(Joint::LEar)},
     {L(Label::Face), L(Label::Hair), -1}},
    {{J(Joint::RShoulder), J(Joint::LShoulder), J(Joint::RHip), J(Joint::LHip)},
     {J(Joint::Neck), -1, -1, -1},
     {L(Label::UpperClothes), L(Label::Pants), L(Label::Skirt)}},
    {{J(Joint::LShoulder), J(Joint::LElbow), -1, -1},
     {-1, -1, -1, -1},
     {L(Label::LeftArm), L(Label::UpperClothes), -1}},
    {{J(Joint::LElbow), J(Joint::LWrist), -1, -1},
     {-1, -1, -1, -1},
     {L(Label::LeftArm), L(Label::UpperClothes), -1}},
    {{J(Joint::RShoulder), J(Joint::RElbow), -1, -1},
     {-1, -1, -1, -1},
     {L(Label::RightArm), L(Label::UpperClothes), -1}},
    {{J(Joint::RElbow), J(Joint::RWrist), -1, -1},
     {-1, -1, -1, -1},
     {L(Label::RightArm), L(Label::UpperClothes), -1}},
    {{J(Joint::LHip), J(Joint::LKnee), -1, -1},
     {-1, -1, -1, -1},
     {L(Label::LeftLeg), L(Label::Pants), L(Label::Skirt)}},
    {{J(Joint::LKnee), J(Joint::LAnkle), -1, -1},
     {-1, -1, -1, -1},
     {L(Label::LeftLeg), L(Label::Pants), L(Label::Skirt)}},
    {{J(Joint::RHip), J(Joint::RKnee), -1, -1},
     {-1, -1, -1, -1},
     {L(Label::RightLeg), L(Label::Pants), L(Label::Skirt)}},
    {{J(Joint::RKnee), J(Joint::RAnkle), -1, -1},
     {-1, -1, -1, -1},
     {L(Label::RightLeg), L(Label::Pants), L(Label::Skirt)}},
}};

// Face joints and their template positions inside the face crop, as
// fractions of (width, height).
struct FaceAnchor {
  Joint joint;
  double u, v;
};

inline constexpr std::array<FaceAnchor, 5> kFaceTemplate = {{
    {Joint::Nose, 0.50, 0.50},
    {Joint::REye, 0.35, 0.35},
    {Joint::LEye, 0.65, 0.35},
    {Joint::REar, 0.20, 0.45},
    {Joint::LEar, 0.80, 0.45},
}};

// Raw label set of the LIP human parser (20 classes) merged onto the ten
// canonical labels. Index = raw id.
inline constexpr int kLipNumLabels = 20;
inline constexpr std::array<Label, kLipNumLabels> kLipMergeTable = {
    Label::Background,    // 0 background
    Label::Hair,          // 1 hat
    Label::Hair,          // 2 hair
    Label::UpperClothes,  // 3 glove
    Label::Face,          // 4 sunglasses
    Label::UpperClothes,  // 5 upper clothes
    Label::UpperClothes,  // 6 dress
    Label::UpperClothes,  // 7 coat
    Label::Pants,         // 8 socks
    Label::Pants,         // 9 pants
    Label::Pants,         // 10 jumpsuit
    Label::UpperClothes,  // 11 scarf
    Label::Skirt,         // 12 skirt
    Label::Face,          // 13 face
    Label::LeftArm,       // 14 left arm
    Label::RightArm,      // 15 right arm
    Label::LeftLeg,       // 16 left leg
    Label::RightLeg,      // 17 right leg
    Label::LeftLeg,       // 18 left shoe
    Label::RightLeg,      // 19 right shoe
};

}  // namespace parsegen
