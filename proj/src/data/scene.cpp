#include <algorithm>
#include <cmath>

#include "selfeq/data.hpp"

namespace selfeq::data {

const char* shape_word(ShapeKind s) {
  switch (s) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Cross: return "cross";
    case ShapeKind::Ring: return "ring";
  }
  return "?";
}

const char* color_word(Color c) {
  switch (c) {
    case Color::Red: return "red";
    case Color::Green: return "green";
    case Color::Blue: return "blue";
    case Color::Yellow: return "yellow";
    case Color::Purple: return "purple";
  }
  return "?";
}

std::array<float, 3> color_rgb(Color c) {
  switch (c) {
    case Color::Red: return {0.90f, 0.12f, 0.10f};
    case Color::Green: return {0.15f, 0.80f, 0.20f};
    case Color::Blue: return {0.15f, 0.30f, 0.95f};
    case Color::Yellow: return {0.95f, 0.90f, 0.15f};
    case Color::Purple: return {0.60f, 0.20f, 0.80f};
  }
  return {0.0f, 0.0f, 0.0f};
}

double iou(const BBox& a, const BBox& b) {
  const int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const int ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  if (ix1 < ix0 || iy1 < iy0) return 0.0;
  const double inter = double(ix1 - ix0 + 1) * double(iy1 - iy0 + 1);
  const double area_a = double(a.x1 - a.x0 + 1) * double(a.y1 - a.y0 + 1);
  const double area_b = double(b.x1 - b.x0 + 1) * double(b.y1 - b.y0 + 1);
  return inter / (area_a + area_b - inter);
}

bool shape_contains(const SceneObject& obj, float px, float py) {
  const float dx = px - obj.cx;
  const float dy = py - obj.cy;
  const float s = obj.size;
  switch (obj.shape) {
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= s * s;
    case ShapeKind::Square:
      return std::fabs(dx) <= 0.85f * s && std::fabs(dy) <= 0.85f * s;
    case ShapeKind::Triangle:
      // apex up, base at +0.8s
      return dy >= -s && dy <= 0.8f * s && std::fabs(dx) <= (dy + s) / 1.8f;
    case ShapeKind::Cross: {
      const float arm = s / 3.0f;
      const bool in_span = std::fabs(dx) <= s && std::fabs(dy) <= s;
      return in_span && (std::fabs(dx) <= arm || std::fabs(dy) <= arm);
    }
    case ShapeKind::Ring: {
      const float r2 = dx * dx + dy * dy;
      const float inner = 0.55f * s;
      return r2 <= s * s && r2 >= inner * inner;
    }
  }
  return false;
}

BBox shape_bbox(const SceneObject& obj, int image_size) {
  const int lo_x = std::max(0, static_cast<int>(std::floor(obj.cx - obj.size)) - 1);
  const int hi_x = std::min(image_size - 1, static_cast<int>(std::ceil(obj.cx + obj.size)) + 1);
  const int lo_y = std::max(0, static_cast<int>(std::floor(obj.cy - obj.size)) - 1);
  const int hi_y = std::min(image_size - 1, static_cast<int>(std::ceil(obj.cy + obj.size)) + 1);
  BBox box{image_size, image_size, -1, -1};
  for (int y = lo_y; y <= hi_y; ++y) {
    for (int x = lo_x; x <= hi_x; ++x) {
      if (!shape_contains(obj, x + 0.5f, y + 0.5f)) continue;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x);
      box.y1 = std::max(box.y1, y);
    }
  }
  if (box.x1 < 0) throw DatasetError("shape covers no pixel centre");
  return box;
}

Image render_scene(const Scene& scene) {
  const auto n = static_cast<std::size_t>(scene.image_size);
  Image img{n, n, std::vector<float>(n * n * 3)};
  for (std::size_t i = 0; i < n * n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = scene.background[c];
  }
  // Later objects paint over earlier ones; generated scenes never overlap.
  for (const auto& obj : scene.objects) {
    const auto rgb = color_rgb(obj.color);
    const BBox& b = obj.bbox;
    for (int y = b.y0; y <= b.y1; ++y) {
      for (int x = b.x0; x <= b.x1; ++x) {
        if (!shape_contains(obj, x + 0.5f, y + 0.5f)) continue;
        const std::size_t at = (static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x)) * 3;
        for (std::size_t c = 0; c < 3; ++c) img.pixels[at + c] = rgb[c];
      }
    }
  }
  return img;
}

}  // namespace selfeq::data
