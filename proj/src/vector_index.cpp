#include "fpe/vector_index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "fpe/jsonl.hpp"

namespace fpe {

namespace {

thread_local std::size_t g_last_scanned = 0;

// Slack on the pruning bound; rows are float-normalized so dot products can exceed the
// exact angular bound by a few ulps.
constexpr double kPruneSlack = 1e-4;

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
template <typename U>
U get(const std::string& s, std::size_t& pos) {
  if (pos + sizeof(U) > s.size()) throw ValidationError("truncated index file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  pos += sizeof(U);
  return v;
}

}  // namespace

VectorIndex::VectorIndex(std::vector<std::string> ids, EmbeddingMatrix matrix)
    : ids_(std::move(ids)), matrix_(std::move(matrix)) {
  if (ids_.size() != matrix_.rows()) throw ValidationError("index id count does not match matrix rows");
}

VectorIndex VectorIndex::from_pool(const Datastore& store) {
  auto snap = store.pool_snapshot();
  return VectorIndex(std::move(snap.ids), std::move(snap.matrix));
}

std::size_t VectorIndex::last_scanned() { return g_last_scanned; }

std::vector<Neighbor> VectorIndex::neighborhood(std::span<const float> anchor, double tau) const {
  if (anchor.size() != matrix_.dim) throw ValidationError("anchor dimension mismatch");
  const double norm = std::sqrt(kernels::dot(anchor, anchor));
  if (std::abs(norm - 1.0) > 1e-4) throw ValidationError("anchor must be unit-norm");
  if (!(tau >= 0.0 && tau < 1.0)) throw ValidationError("tau_sim must be in [0, 1)");

  std::vector<kernels::Hit> hits;
  g_last_scanned = 0;
  const std::span<const float> all(matrix_.values);
  if (cells_.empty()) {
    hits = kernels::parallel::above_threshold(all, matrix_.dim, anchor, tau);
    g_last_scanned = size();
  } else {
    for (const auto& cell : cells_) {
      const double to_center = std::clamp(kernels::dot(anchor, cell.centroid), -1.0, 1.0);
      const double gap = std::acos(to_center) - std::acos(std::clamp(cell.min_cos, -1.0, 1.0));
      const double bound = gap <= 0.0 ? 1.0 : std::cos(gap);
      if (bound < tau - kPruneSlack) continue;
      auto part = kernels::parallel::above_threshold(
          all.subspan(cell.begin * matrix_.dim, (cell.end - cell.begin) * matrix_.dim), matrix_.dim, anchor, tau);
      for (auto& h : part) {
        h.row += static_cast<std::uint32_t>(cell.begin);
        hits.push_back(h);
      }
      g_last_scanned += cell.end - cell.begin;
    }
  }

  std::vector<Neighbor> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back({ids_[h.row], h.similarity});
  std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
  });
  return out;
}

void VectorIndex::build_partitions(std::size_t partitions, int rounds) {
  cells_.clear();
  const std::size_t n = size(), dim = matrix_.dim;
  if (partitions <= 1 || n < partitions) return;

  std::vector<std::vector<float>> centers(partitions);
  for (std::size_t c = 0; c < partitions; ++c) {
    auto r = matrix_.row(c * n / partitions);
    centers[c].assign(r.begin(), r.end());
  }
  std::vector<std::size_t> assign(n, 0);
  for (int round = 0; round <= rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = -2.0;
      for (std::size_t c = 0; c < partitions; ++c) {
        const double s = kernels::dot(matrix_.row(i), centers[c]);
        if (s > best) {
          best = s;
          assign[i] = c;
        }
      }
    }
    if (round == rounds) break;
    std::vector<std::vector<double>> acc(partitions, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      auto r = matrix_.row(i);
      for (std::size_t j = 0; j < dim; ++j) acc[assign[i]][j] += r[j];
    }
    for (std::size_t c = 0; c < partitions; ++c) {
      double n2 = 0.0;
      for (double v : acc[c]) n2 += v * v;
      if (n2 <= 0.0) continue;  // empty cell keeps its previous center
      const double inv = 1.0 / std::sqrt(n2);
      for (std::size_t j = 0; j < dim; ++j) centers[c][j] = static_cast<float>(acc[c][j] * inv);
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return assign[a] < assign[b]; });
  std::vector<std::string> ids(n);
  EmbeddingMatrix m;
  m.dim = dim;
  m.values.resize(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = ids_[order[i]];
    auto r = matrix_.row(order[i]);
    std::copy(r.begin(), r.end(), m.values.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  ids_ = std::move(ids);
  matrix_ = std::move(m);

  std::size_t i = 0;
  while (i < n) {
    const std::size_t c = assign[order[i]];
    Cell cell;
    cell.begin = i;
    cell.centroid = centers[c];
    while (i < n && assign[order[i]] == c) {
      cell.min_cos = std::min(cell.min_cos, kernels::dot(matrix_.row(i), cell.centroid));
      ++i;
    }
    cell.end = i;
    cells_.push_back(std::move(cell));
  }
}

void VectorIndex::save(const std::filesystem::path& path) const {
  std::string out("FPEX", 4);
  put_u32(out, static_cast<std::uint32_t>(matrix_.dim));
  put_u64(out, ids_.size());
  for (const auto& id : ids_) {
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    out += id;
  }
  for (float f : matrix_.values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  jsonl::write_atomic(path, out);
}

VectorIndex VectorIndex::load(const std::filesystem::path& path) {
  const std::string bytes = jsonl::read_file(path);
  if (bytes.size() < 16 || bytes.compare(0, 4, "FPEX") != 0) throw ValidationError("not an FPEX index file");
  std::size_t pos = 4;
  EmbeddingMatrix m;
  m.dim = get<std::uint32_t>(bytes, pos);
  const auto count = get<std::uint64_t>(bytes, pos);
  std::vector<std::string> ids;
  ids.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(bytes, pos);
    if (pos + len > bytes.size()) throw ValidationError("truncated index id table");
    ids.emplace_back(bytes.substr(pos, len));
    pos += len;
  }
  m.values.resize(count * m.dim);
  for (auto& f : m.values) f = std::bit_cast<float>(get<std::uint32_t>(bytes, pos));
  return VectorIndex(std::move(ids), std::move(m));
}

}  // namespace fpe
