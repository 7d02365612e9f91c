#include "ckd/teacher.hpp"

#include <cmath>
#include <fstream>

#include "ckd/binio.hpp"

namespace ckd {
namespace {

constexpr char kMagic[4] = {'C', 'K', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

// Cap to keep a corrupt header from turning into a giant allocation.
constexpr std::uint64_t kMaxSide = 1u << 30;

}  // namespace

void ScoreMatrix::save(const std::string& path) const {
  if (logits.size() != num_users * num_items)
    throw std::runtime_error("score matrix: logit buffer does not match shape");
  for (float v : logits)
    if (!std::isfinite(v))
      throw std::runtime_error("score matrix: non-finite value");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("score matrix: cannot open '" + path + "'");
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u64(out, num_users);
  write_u64(out, num_items);
  for (float v : logits) write_f32(out, v);
  if (!out)
    throw std::runtime_error("score matrix: write failed for '" + path + "'");
}

ScoreMatrix ScoreMatrix::open(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("score matrix: cannot open '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string(magic, 4) != std::string(kMagic, 4))
    throw std::runtime_error("score matrix: bad magic in '" + path + "'");
  const std::uint32_t version = read_u32(in, "score matrix header");
  if (version != kVersion)
    throw std::runtime_error("score matrix: unsupported version " +
                             std::to_string(version));
  const std::uint64_t users = read_u64(in, "score matrix header");
  const std::uint64_t items = read_u64(in, "score matrix header");
  if (users > kMaxSide || items > kMaxSide || users * items > kMaxSide)
    throw std::runtime_error("score matrix: implausible dimensions");
  ScoreMatrix m;
  m.num_users = users;
  m.num_items = items;
  m.logits.resize(users * items);
  for (std::size_t i = 0; i < m.logits.size(); ++i) {
    float v = 0.0f;
    try {
      v = read_f32(in, "score matrix");
    } catch (const std::runtime_error&) {
      throw std::runtime_error("score matrix: truncated payload in '" + path +
                               "'");
    }
    if (!std::isfinite(v))
      throw std::runtime_error("score matrix: non-finite value in '" + path +
                               "'");
    m.logits[i] = v;
  }
  in.peek();
  if (!in.eof())
    throw std::runtime_error("score matrix: trailing bytes in '" + path + "'");
  return m;
}

void TeacherPanel::validate(std::size_t student_vocab) const {
  if (teachers.empty()) throw std::runtime_error("panel: no teachers");
  if (base_weights.size() != teachers.size())
    throw std::runtime_error("panel: " + std::to_string(base_weights.size()) +
                             " weights for " + std::to_string(teachers.size()) +
                             " teachers");
  double sum = 0.0;
  for (double w : base_weights) {
    if (!(w >= 0.0))
      throw std::runtime_error("panel: negative teacher weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::runtime_error("panel: teacher weights sum to " +
                             std::to_string(sum) + ", expected 1");
  for (const auto& t : teachers) {
    if (!t) throw std::runtime_error("panel: null teacher");
    if (t->vocab() < student_vocab)
      throw std::runtime_error("panel: teacher '" + t->describe() +
                               "' covers " + std::to_string(t->vocab()) +
                               " items, student needs " +
                               std::to_string(student_vocab));
  }
}

}  // namespace ckd
