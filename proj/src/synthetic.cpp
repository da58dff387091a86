#include "parsegen/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "parsegen/corpus.hpp"
#include "parsegen/errors.hpp"

namespace parsegen::synthetic {
namespace {

constexpr std::array<Rgb, 6> kSkinTones = {{{241, 194, 167}, {224, 172, 135}, {198, 134, 95},
                                            {161, 102, 70}, {120, 75, 50}, {250, 215, 190}}};
constexpr std::array<Rgb, 5> kHairTones = {{{30, 20, 15}, {90, 55, 25}, {200, 160, 80}, {140, 40, 20}, {60, 60, 60}}};

// LIP raw ids used by the renderer.
constexpr std::uint8_t kRawBackground = 0, kRawPants = 9, kRawSkirt = 12, kRawFace = 13, kRawLeftArm = 14,
                       kRawRightArm = 15, kRawLeftLeg = 16, kRawRightLeg = 17, kRawLeftShoe = 18,
                       kRawRightShoe = 19;

Rgb random_color(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> c(20, 235);
  return {static_cast<std::uint8_t>(c(rng)), static_cast<std::uint8_t>(c(rng)), static_cast<std::uint8_t>(c(rng))};
}

struct Canvas {
  LabelImage raw;
  RgbImage image;

  void put(int x, int y, std::uint8_t label, Rgb color) {
    if (x < 0 || y < 0 || x >= raw.width || y >= raw.height) return;
    raw.at(y, x) = label;
    auto* px = &image.rgb[(static_cast<std::size_t>(y) * image.width + x) * 3];
    px[0] = color.r;
    px[1] = color.g;
    px[2] = color.b;
  }

  template <class Inside, class Color>
  void fill(double x0, double y0, double x1, double y1, std::uint8_t label, Inside inside, Color color) {
    const int ix0 = std::max(0, static_cast<int>(std::floor(x0)));
    const int iy0 = std::max(0, static_cast<int>(std::floor(y0)));
    const int ix1 = std::min(raw.width - 1, static_cast<int>(std::ceil(x1)));
    const int iy1 = std::min(raw.height - 1, static_cast<int>(std::ceil(y1)));
    for (int y = iy0; y <= iy1; ++y)
      for (int x = ix0; x <= ix1; ++x)
        if (inside(x, y)) put(x, y, label, color(x, y));
  }

  void capsule(Point2 a, Point2 b, double r, std::uint8_t label, Rgb color) {
    const double vx = b.x - a.x, vy = b.y - a.y, len2 = vx * vx + vy * vy;
    fill(std::min(a.x, b.x) - r, std::min(a.y, b.y) - r, std::max(a.x, b.x) + r, std::max(a.y, b.y) + r, label,
         [&](int x, int y) {
           double t = len2 > 0 ? ((x - a.x) * vx + (y - a.y) * vy) / len2 : 0.0;
           t = std::clamp(t, 0.0, 1.0);
           const double dx = x - (a.x + t * vx), dy = y - (a.y + t * vy);
           return dx * dx + dy * dy <= r * r;
         },
         [&](int, int) { return color; });
  }

  template <class Color>
  void polygon(const std::vector<Point2>& pts, std::uint8_t label, Color color) {
    double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
    for (const auto& p : pts) {
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
    fill(x0, y0, x1, y1, label,
         [&](int x, int y) {
           // Convex polygon, either winding.
           int sign = 0;
           for (std::size_t i = 0; i < pts.size(); ++i) {
             const auto& a = pts[i];
             const auto& b = pts[(i + 1) % pts.size()];
             const double c = (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
             const int s = c > 0 ? 1 : (c < 0 ? -1 : 0);
             if (s == 0) continue;
             if (sign == 0) sign = s;
             else if (s != sign) return false;
           }
           return true;
         },
         color);
  }
};

Point2 limb_end(Point2 from, double angle, double length) {
  return {from.x + std::sin(angle) * length, from.y + std::cos(angle) * length};
}

struct Skeleton {
  Point2 head, nose, r_eye, l_eye, r_ear, l_ear, neck;
  Point2 r_shoulder, r_elbow, r_wrist, l_shoulder, l_elbow, l_wrist;
  Point2 r_hip, r_knee, r_ankle, l_hip, l_knee, l_ankle;
  double unit = 1.0;  // pixels per unit at 64 px height
};

Skeleton build_skeleton(const Articulation& art, ImageSize size) {
  const double u = size.height / 64.0;
  const double s = u * art.scale;
  const double cx = (size.width - 1) / 2.0 + art.center_x * u;
  const double cy = size.height / 2.0;
  auto at = [&](double x, double y) { return Point2{cx + x * s, cy + (y - 32.0) * s}; };
  Skeleton k;
  k.unit = s;
  k.head = at(0, 8);
  k.nose = at(0, 9.2);
  k.r_eye = at(-1.6, 7.6);
  k.l_eye = at(1.6, 7.6);
  k.r_ear = at(-3.7, 8.4);
  k.l_ear = at(3.7, 8.4);
  k.neck = at(0, 15);
  k.r_shoulder = at(-6, 16.5);
  k.l_shoulder = at(6, 16.5);
  k.r_hip = at(-3.5, 34);
  k.l_hip = at(3.5, 34);
  k.l_elbow = limb_end(k.l_shoulder, art.l_shoulder, 10 * s);
  k.l_wrist = limb_end(k.l_elbow, art.l_shoulder + art.l_elbow, 9 * s);
  k.r_elbow = limb_end(k.r_shoulder, art.r_shoulder, 10 * s);
  k.r_wrist = limb_end(k.r_elbow, art.r_shoulder + art.r_elbow, 9 * s);
  k.l_knee = limb_end(k.l_hip, art.l_hip, 13 * s);
  k.l_ankle = limb_end(k.l_knee, art.l_hip + art.l_knee, 12 * s);
  k.r_knee = limb_end(k.r_hip, art.r_hip, 13 * s);
  k.r_ankle = limb_end(k.r_knee, art.r_hip + art.r_knee, 12 * s);
  return k;
}

bool inside(const PoseSpec& pose, double margin) {
  for (const auto& kp : pose.keypoints)
    if (kp.x < margin || kp.y < margin || kp.x > pose.size.width - 1 - margin ||
        kp.y > pose.size.height - 1 - margin)
      return false;
  return true;
}

}  // namespace

Appearance random_appearance(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> skin(0, kSkinTones.size() - 1), hair(0, kHairTones.size() - 1);
  std::uniform_int_distribution<int> three(0, 2), two(0, 1), top_id(5, 7);
  std::uniform_int_distribution<int> light(185, 250);
  Appearance a;
  a.skin = kSkinTones[skin(rng)];
  a.hair = kHairTones[hair(rng)];
  a.top = random_color(rng);
  a.top_stripe = random_color(rng);
  a.bottom = random_color(rng);
  a.shoes = random_color(rng);
  a.background = {static_cast<std::uint8_t>(light(rng)), static_cast<std::uint8_t>(light(rng)),
                  static_cast<std::uint8_t>(light(rng))};
  a.sleeves = static_cast<Sleeves>(three(rng));
  a.bottom_kind = static_cast<Bottom>(three(rng));
  a.striped_top = two(rng) == 1;
  a.long_hair = two(rng) == 1;
  a.top_raw_label = top_id(rng);
  a.hair_raw_label = two(rng) == 1 ? 2 : 1;
  return a;
}

Articulation random_articulation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  Articulation a;
  a.center_x = range(-4.0, 4.0);
  a.scale = range(0.9, 1.04);
  a.l_shoulder = range(0.1, 2.2);
  a.l_elbow = range(-1.2, 1.4);
  a.r_shoulder = -range(0.1, 2.2);
  a.r_elbow = -range(-1.2, 1.4);
  a.l_hip = range(0.0, 0.45);
  a.l_knee = range(-0.35, 0.3);
  a.r_hip = -range(0.0, 0.45);
  a.r_knee = -range(-0.35, 0.3);
  return a;
}

PoseSpec doll_pose(const Articulation& art, ImageSize size) {
  const Skeleton k = build_skeleton(art, size);
  PoseSpec pose;
  pose.size = size;
  auto set = [&](Joint j, Point2 p) { pose[j] = {p.x, p.y, true}; };
  set(Joint::Nose, k.nose);
  set(Joint::Neck, k.neck);
  set(Joint::RShoulder, k.r_shoulder);
  set(Joint::RElbow, k.r_elbow);
  set(Joint::RWrist, k.r_wrist);
  set(Joint::LShoulder, k.l_shoulder);
  set(Joint::LElbow, k.l_elbow);
  set(Joint::LWrist, k.l_wrist);
  set(Joint::RHip, k.r_hip);
  set(Joint::RKnee, k.r_knee);
  set(Joint::RAnkle, k.r_ankle);
  set(Joint::LHip, k.l_hip);
  set(Joint::LKnee, k.l_knee);
  set(Joint::LAnkle, k.l_ankle);
  set(Joint::REye, k.r_eye);
  set(Joint::LEye, k.l_eye);
  set(Joint::REar, k.r_ear);
  set(Joint::LEar, k.l_ear);
  return pose;
}

Rendering render(const Appearance& look, const Articulation& art, ImageSize size, std::uint64_t noise_seed) {
  const Skeleton k = build_skeleton(art, size);
  const double s = k.unit;
  Canvas cv{LabelImage(size.height, size.width, kRawBackground), RgbImage(size.height, size.width)};
  for (int y = 0; y < size.height; ++y)
    for (int x = 0; x < size.width; ++x) cv.put(x, y, kRawBackground, look.background);

  const auto hair_id = static_cast<std::uint8_t>(look.hair_raw_label);
  const auto top_id = static_cast<std::uint8_t>(look.top_raw_label);
  auto top_color = [&](int, int y) {
    return look.striped_top && ((y / std::max(1, static_cast<int>(2 * s))) % 2 == 1) ? look.top_stripe : look.top;
  };

  if (look.long_hair) {
    cv.polygon({{k.head.x - 4.6 * s, k.head.y}, {k.head.x + 4.6 * s, k.head.y},
                {k.head.x + 4.6 * s, k.neck.y + 3 * s}, {k.head.x - 4.6 * s, k.neck.y + 3 * s}},
               hair_id, [&](int, int) { return look.hair; });
  }

  // Legs.
  struct Leg {
    Point2 hip, knee, ankle;
    std::uint8_t skin_id, shoe_id;
  };
  for (const Leg& leg : {Leg{k.l_hip, k.l_knee, k.l_ankle, kRawLeftLeg, kRawLeftShoe},
                         Leg{k.r_hip, k.r_knee, k.r_ankle, kRawRightLeg, kRawRightShoe}}) {
    const bool covered_upper = look.bottom_kind != Bottom::Skirt;
    const bool covered_lower = look.bottom_kind == Bottom::Pants;
    cv.capsule(leg.hip, leg.knee, 2.7 * s, covered_upper ? kRawPants : leg.skin_id,
               covered_upper ? look.bottom : look.skin);
    cv.capsule(leg.knee, leg.ankle, 2.3 * s, covered_lower ? kRawPants : leg.skin_id,
               covered_lower ? look.bottom : look.skin);
    cv.capsule(leg.ankle, leg.ankle, 1.9 * s, leg.shoe_id, look.shoes);
  }

  // Torso, waistband and skirt.
  cv.polygon({{k.r_shoulder.x - 0.6 * s, k.r_shoulder.y - 1.2 * s},
              {k.l_shoulder.x + 0.6 * s, k.l_shoulder.y - 1.2 * s},
              {k.l_hip.x + 1.8 * s, k.l_hip.y},
              {k.r_hip.x - 1.8 * s, k.r_hip.y}},
             top_id, top_color);
  if (look.bottom_kind == Bottom::Skirt) {
    cv.polygon({{k.r_hip.x - 1.8 * s, k.r_hip.y - 2 * s},
                {k.l_hip.x + 1.8 * s, k.l_hip.y - 2 * s},
                {k.l_hip.x + 5.5 * s, k.l_hip.y + 11 * s},
                {k.r_hip.x - 5.5 * s, k.r_hip.y + 11 * s}},
               kRawSkirt, [&](int, int) { return look.bottom; });
  } else {
    cv.polygon({{k.r_hip.x - 1.8 * s, k.r_hip.y - 3 * s},
                {k.l_hip.x + 1.8 * s, k.l_hip.y - 3 * s},
                {k.l_hip.x + 2.6 * s, k.l_hip.y + 1.5 * s},
                {k.r_hip.x - 2.6 * s, k.r_hip.y + 1.5 * s}},
               kRawPants, [&](int, int) { return look.bottom; });
  }

  // Arms in front of the torso.
  struct Arm {
    Point2 shoulder, elbow, wrist;
    std::uint8_t skin_id;
  };
  for (const Arm& arm : {Arm{k.l_shoulder, k.l_elbow, k.l_wrist, kRawLeftArm},
                         Arm{k.r_shoulder, k.r_elbow, k.r_wrist, kRawRightArm}}) {
    const bool upper = look.sleeves != Sleeves::None;
    const bool lower = look.sleeves == Sleeves::Long;
    cv.capsule(arm.shoulder, arm.elbow, 2.2 * s, upper ? top_id : arm.skin_id, upper ? look.top : look.skin);
    cv.capsule(arm.elbow, arm.wrist, 1.9 * s, lower ? top_id : arm.skin_id, lower ? look.top : look.skin);
  }

  // Neck and head.
  cv.capsule(k.neck, {k.neck.x, k.head.y}, 1.6 * s, kRawFace, look.skin);
  const double hr = 4.3 * s;
  cv.fill(k.head.x - hr, k.head.y - hr, k.head.x + hr, k.head.y + hr, kRawFace,
          [&](int x, int y) { return (x - k.head.x) * (x - k.head.x) + (y - k.head.y) * (y - k.head.y) <= hr * hr; },
          [&](int, int) { return look.skin; });
  cv.fill(k.head.x - hr, k.head.y - hr, k.head.x + hr, k.head.y - 1.3 * s, hair_id,
          [&](int x, int y) {
            return (x - k.head.x) * (x - k.head.x) + (y - k.head.y) * (y - k.head.y) <= hr * hr &&
                   y < k.head.y - 1.3 * s;
          },
          [&](int, int) { return look.hair; });

  // Mild sensor noise.
  std::mt19937_64 noise(noise_seed);
  std::uniform_int_distribution<int> jitter(-5, 5);
  for (auto& v : cv.image.rgb) v = static_cast<std::uint8_t>(std::clamp(v + jitter(noise), 0, 255));

  Rendering out;
  out.image = std::move(cv.image);
  out.raw_parse = std::move(cv.raw);
  out.parse = merge_parser_label_image(out.raw_parse, default_merge_table());
  out.pose = doll_pose(art, size);
  return out;
}

namespace {

Articulation articulation_inside(std::mt19937_64& rng, ImageSize size) {
  for (;;) {
    Articulation a = random_articulation(rng);
    if (inside(doll_pose(a, size), 2.0 * size.height / 64.0)) return a;
  }
}

}  // namespace

void write_corpus(const std::filesystem::path& root, const CorpusSpec& spec) {
  namespace fs = std::filesystem;
  if (spec.count < 1) throw InputError("synthetic corpus needs at least one record");
  fs::create_directories(root / "images");
  fs::create_directories(root / "keypoints");
  fs::create_directories(root / "parses");
  std::mt19937_64 rng(spec.seed);
  const int n_test = static_cast<int>(std::lround(spec.count * spec.test_fraction));
  std::string manifest;
  for (int i = 0; i < spec.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "doll_%04d", i);
    const Appearance look = random_appearance(rng);
    const Articulation art = articulation_inside(rng, spec.size);
    const Rendering r = render(look, art, spec.size, rng());
    write_png_rgb(root / "images" / (std::string(id) + ".png"), r.image);
    write_png_indexed(root / "parses" / (std::string(id) + ".png"), r.raw_parse, {});
    write_file(root / "keypoints" / (std::string(id) + ".json"), pose_to_json(id, r.pose) + "\n");
    manifest += std::string(id) + (i >= spec.count - n_test ? " test\n" : " train\n");
  }
  write_file(root / "manifest.txt", manifest);
}

std::vector<HeldOutPair> held_out_pairs(int count, ImageSize size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<HeldOutPair> out;
  for (int i = 0; i < count; ++i) {
    const Appearance look = random_appearance(rng);
    const Articulation a = articulation_inside(rng, size);
    const Articulation b = articulation_inside(rng, size);
    out.push_back({render(look, a, size, rng()), render(look, b, size, rng())});
  }
  return out;
}

}  // namespace parsegen::synthetic
