#include "povar/bal_io.hpp"

#include "povar/objective.hpp"

#include <Eigen/Geometry>
#include <spdlog/spdlog.h>
#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace povar {

const char* to_string(Stage stage) {
  return stage == Stage::kPose ? "stage1" : "stage2";
}

Mat3 MetricCamera::rotation_matrix() const {
  const double angle = rotation.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, rotation / angle).toRotationMatrix();
}

Mat3 MetricCamera::intrinsics() const {
  Mat3 k = Mat3::Zero();
  k(0, 0) = -focal;
  k(1, 1) = -focal;
  k(2, 2) = 1.0;
  return k;
}

Mat34 MetricCamera::projection_matrix() const {
  Mat34 rt;
  rt.leftCols<3>() = rotation_matrix();
  rt.col(3) = translation;
  return intrinsics() * rt;
}

BalParseError::BalParseError(int line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

namespace {

class Tokenizer {
 public:
  explicit Tokenizer(const std::string& text) : text_(text) {}

  /// Next whitespace-separated token, or empty at end of input.
  std::string_view next() {
    skip_space();
    const std::size_t begin = pos_;
    token_line_ = line_;
    while (pos_ < text_.size() && !is_space(text_[pos_])) ++pos_;
    return std::string_view(text_).substr(begin, pos_ - begin);
  }

  int token_line() const { return token_line_; }
  int line() const { return line_; }

  long long next_int(const char* what) {
    const std::string_view tok = require(what);
    long long value = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw BalParseError(token_line_, "expected integer " + std::string(what) +
                                           ", got '" + std::string(tok) + "'");
    }
    return value;
  }

  double next_double(const char* what) {
    std::string_view tok = require(what);
    // from_chars rejects a leading '+', which some writers emit.
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(value)) {
      throw BalParseError(token_line_, "expected number for " + std::string(what) +
                                           ", got '" + std::string(tok) + "'");
    }
    return value;
  }

 private:
  static bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  }

  void skip_space() {
    while (pos_ < text_.size() && is_space(text_[pos_])) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }

  std::string_view require(const char* what) {
    const std::string_view tok = next();
    if (tok.empty()) {
      throw BalParseError(line_, std::string("truncated file: missing ") + what);
    }
    return tok;
  }

  const std::string& text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int token_line_ = 1;
};

int checked_count(Tokenizer& tok, const char* what) {
  long long v = 0;
  try {
    v = tok.next_int(what);
  } catch (const BalParseError& e) {
    throw BalParseError(e.line(), std::string("malformed header: ") + e.what());
  }
  if (v < 0 || v > std::numeric_limits<int>::max()) {
    throw BalParseError(tok.token_line(), std::string("malformed header: invalid ") + what);
  }
  return static_cast<int>(v);
}

BaProblem parse_text(const std::string& text) {
  Tokenizer tok(text);
  BaProblem p;
  p.num_cameras = checked_count(tok, "camera count");
  p.num_landmarks = checked_count(tok, "point count");
  p.num_observations = checked_count(tok, "observation count");
  if (tok.token_line() != 1) {
    throw BalParseError(tok.token_line(), "malformed header: expected three counts on line 1");
  }

  p.observations.resize(p.num_observations);
  for (auto& obs : p.observations) {
    const long long cam = tok.next_int("camera index");
    if (cam < 0 || cam >= p.num_cameras) {
      throw BalParseError(tok.token_line(),
                          "camera index " + std::to_string(cam) + " out of range");
    }
    const long long pt = tok.next_int("point index");
    if (pt < 0 || pt >= p.num_landmarks) {
      throw BalParseError(tok.token_line(),
                          "point index " + std::to_string(pt) + " out of range");
    }
    obs.camera_index = static_cast<int>(cam);
    obs.landmark_index = static_cast<int>(pt);
    obs.measurement.x() = tok.next_double("measurement x");
    obs.measurement.y() = tok.next_double("measurement y");
  }

  std::vector<MetricCamera> cameras(p.num_cameras);
  for (auto& c : cameras) {
    for (int k = 0; k < 3; ++k) c.rotation[k] = tok.next_double("camera rotation");
    for (int k = 0; k < 3; ++k) c.translation[k] = tok.next_double("camera translation");
    c.focal = tok.next_double("camera focal length");
    c.k1 = tok.next_double("camera k1");
    c.k2 = tok.next_double("camera k2");
  }
  std::vector<Vec3> points(p.num_landmarks);
  for (auto& x : points) {
    for (int k = 0; k < 3; ++k) x[k] = tok.next_double("point coordinate");
  }
  p.metric_cameras = std::move(cameras);
  p.metric_points = std::move(points);

  if (const std::string_view extra = tok.next(); !extra.empty()) {
    throw BalParseError(tok.token_line(), "unexpected trailing token '" +
                                              std::string(extra) + "'");
  }
  return p;
}

std::string read_plain(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string read_gzip(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw std::runtime_error("cannot open '" + path + "'");
  std::string out;
  std::vector<char> buf(1 << 16);
  int n = 0;
  while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) {
    out.append(buf.data(), static_cast<std::size_t>(n));
  }
  int err = Z_OK;
  const char* msg = gzerror(f, &err);
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) {
    throw std::runtime_error("gzip error in '" + path + "': " + msg);
  }
  return out;
}

bool has_gzip_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char magic[2] = {0, 0};
  in.read(reinterpret_cast<char*>(magic), 2);
  return in.gcount() == 2 && magic[0] == 0x1f && magic[1] == 0x8b;
}

}  // namespace

BaProblem parse_bal(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

BaProblem parse_bal_string(const std::string& text) { return parse_text(text); }

BaProblem load_bal(const std::string& path) {
  const std::string text = has_gzip_magic(path) ? read_gzip(path) : read_plain(path);
  return parse_text(text);
}

void write_bal(std::ostream& out, const BaProblem& problem) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(17);
  out << problem.num_cameras << ' ' << problem.num_landmarks << ' '
      << problem.num_observations << '\n';
  for (const auto& o : problem.observations) {
    out << o.camera_index << ' ' << o.landmark_index << ' ' << o.measurement.x() << ' '
        << o.measurement.y() << '\n';
  }
  for (int i = 0; i < problem.num_cameras; ++i) {
    const MetricCamera c =
        problem.metric_cameras ? (*problem.metric_cameras)[i] : MetricCamera{};
    for (int k = 0; k < 3; ++k) out << c.rotation[k] << '\n';
    for (int k = 0; k < 3; ++k) out << c.translation[k] << '\n';
    out << c.focal << '\n' << c.k1 << '\n' << c.k2 << '\n';
  }
  for (int j = 0; j < problem.num_landmarks; ++j) {
    const Vec3 x = problem.metric_points ? (*problem.metric_points)[j] : Vec3::Zero();
    for (int k = 0; k < 3; ++k) out << x[k] << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

void save_bal(const std::string& path, const BaProblem& problem) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_bal(out, problem);
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

void validate(const BaProblem& problem) {
  if (problem.num_observations != static_cast<int>(problem.observations.size())) {
    throw std::invalid_argument("observation count does not match header");
  }
  for (const auto& o : problem.observations) {
    if (o.camera_index < 0 || o.camera_index >= problem.num_cameras ||
        o.landmark_index < 0 || o.landmark_index >= problem.num_landmarks) {
      throw std::invalid_argument("observation index out of range");
    }
  }
  if (problem.metric_cameras &&
      static_cast<int>(problem.metric_cameras->size()) != problem.num_cameras) {
    throw std::invalid_argument("metric camera count does not match header");
  }
  if (problem.metric_points &&
      static_cast<int>(problem.metric_points->size()) != problem.num_landmarks) {
    throw std::invalid_argument("metric point count does not match header");
  }
}

BaProblem prune(const BaProblem& problem, PruneReport* report) {
  validate(problem);
  PruneReport r;

  // Duplicate (camera, landmark) pairs: keep the first occurrence.
  std::vector<std::pair<std::pair<int, int>, int>> keyed;
  keyed.reserve(problem.observations.size());
  for (int k = 0; k < problem.num_observations; ++k) {
    const auto& o = problem.observations[k];
    keyed.push_back({{o.landmark_index, o.camera_index}, k});
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<char> keep(problem.observations.size(), 1);
  for (std::size_t k = 1; k < keyed.size(); ++k) {
    if (keyed[k].first == keyed[k - 1].first) {
      keep[keyed[k].second] = 0;
      ++r.removed_duplicate_observations;
    }
  }

  std::vector<int> landmark_count(problem.num_landmarks, 0);
  for (int k = 0; k < problem.num_observations; ++k) {
    if (keep[k]) ++landmark_count[problem.observations[k].landmark_index];
  }
  std::vector<int> landmark_map(problem.num_landmarks, -1);
  int next_landmark = 0;
  for (int j = 0; j < problem.num_landmarks; ++j) {
    if (landmark_count[j] >= 2) {
      landmark_map[j] = next_landmark++;
    } else {
      ++r.removed_landmarks;
    }
  }

  std::vector<int> camera_count(problem.num_cameras, 0);
  for (int k = 0; k < problem.num_observations; ++k) {
    const auto& o = problem.observations[k];
    if (keep[k] && landmark_map[o.landmark_index] >= 0) ++camera_count[o.camera_index];
  }
  std::vector<int> camera_map(problem.num_cameras, -1);
  int next_camera = 0;
  for (int i = 0; i < problem.num_cameras; ++i) {
    if (camera_count[i] > 0) {
      camera_map[i] = next_camera++;
    } else {
      ++r.removed_cameras;
    }
  }

  BaProblem out;
  out.num_cameras = next_camera;
  out.num_landmarks = next_landmark;
  for (int k = 0; k < problem.num_observations; ++k) {
    const auto& o = problem.observations[k];
    if (!keep[k] || landmark_map[o.landmark_index] < 0) continue;
    out.observations.push_back(
        {camera_map[o.camera_index], landmark_map[o.landmark_index], o.measurement});
  }
  out.num_observations = static_cast<int>(out.observations.size());
  if (problem.metric_cameras) {
    std::vector<MetricCamera> cams;
    for (int i = 0; i < problem.num_cameras; ++i) {
      if (camera_map[i] >= 0) cams.push_back((*problem.metric_cameras)[i]);
    }
    out.metric_cameras = std::move(cams);
  }
  if (problem.metric_points) {
    std::vector<Vec3> pts;
    for (int j = 0; j < problem.num_landmarks; ++j) {
      if (landmark_map[j] >= 0) pts.push_back((*problem.metric_points)[j]);
    }
    out.metric_points = std::move(pts);
  }

  if (r.removed_landmarks + r.removed_cameras + r.removed_duplicate_observations > 0) {
    spdlog::info("pruned {} landmarks with fewer than 2 observations, {} cameras, {} "
                 "duplicate observations",
                 r.removed_landmarks, r.removed_cameras, r.removed_duplicate_observations);
  }
  if (report) *report = r;
  return out;
}

ObservationGraph build_graph(const BaProblem& problem) {
  validate(problem);
  ObservationGraph g;
  g.landmark_offset.assign(problem.num_landmarks + 1, 0);
  for (const auto& o : problem.observations) ++g.landmark_offset[o.landmark_index + 1];
  for (int j = 0; j < problem.num_landmarks; ++j) {
    g.landmark_offset[j + 1] += g.landmark_offset[j];
  }
  g.slots.resize(problem.observations.size());
  std::vector<std::size_t> fill(g.landmark_offset.begin(), g.landmark_offset.end() - 1);
  for (int k = 0; k < problem.num_observations; ++k) {
    g.slots[fill[problem.observations[k].landmark_index]++] = k;
  }
  g.slot_camera.resize(g.slots.size());
  g.slot_landmark.resize(g.slots.size());
  for (int j = 0; j < problem.num_landmarks; ++j) {
    const auto begin = g.slots.begin() + static_cast<std::ptrdiff_t>(g.landmark_offset[j]);
    const auto end = g.slots.begin() + static_cast<std::ptrdiff_t>(g.landmark_offset[j + 1]);
    std::sort(begin, end, [&](int a, int b) {
      return problem.observations[a].camera_index < problem.observations[b].camera_index;
    });
    for (std::size_t s = g.landmark_offset[j]; s < g.landmark_offset[j + 1]; ++s) {
      g.slot_camera[s] = problem.observations[g.slots[s]].camera_index;
      g.slot_landmark[s] = j;
      if (s > g.landmark_offset[j] && g.slot_camera[s] == g.slot_camera[s - 1]) {
        throw std::invalid_argument("landmark " + std::to_string(j) +
                                    " observed twice by camera " +
                                    std::to_string(g.slot_camera[s]));
      }
    }
  }
  g.camera_slots.assign(problem.num_cameras, {});
  for (std::size_t s = 0; s < g.slots.size(); ++s) {
    g.camera_slots[g.slot_camera[s]].push_back(s);
  }
  return g;
}

NormalStream::NormalStream(std::uint64_t seed) : engine_(seed) {}

double NormalStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double NormalStream::next() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(theta);
  has_spare_ = true;
  return radius * std::cos(theta);
}

ProjectiveState random_init(const BaProblem& problem, std::uint64_t seed,
                            const PoseConfig& config) {
  ProjectiveState state;
  NormalStream normal(seed);
  state.cameras.resize(problem.num_cameras);
  for (auto& camera : state.cameras) {
    for (int k = 0; k < 12; ++k) camera.data()[k] = normal.next();
  }
  state.landmarks.assign(problem.num_landmarks, Vec4(0, 0, 0, 1));
  state.landmarks = solve_landmarks(state, problem, config);
  return state;
}

ProjectiveState random_init(const BaProblem& problem, std::uint64_t seed) {
  return random_init(problem, seed, PoseConfig{});
}

void write_state(std::ostream& out, const ProjectiveState& state) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(17);
  out << "cameras " << state.cameras.size() << '\n';
  for (const auto& c : state.cameras) {
    for (int k = 0; k < 12; ++k) out << (k ? " " : "") << c.data()[k];
    out << '\n';
  }
  out << "landmarks " << state.landmarks.size() << '\n';
  for (const auto& x : state.landmarks) {
    out << x[0] << ' ' << x[1] << ' ' << x[2] << ' ' << x[3] << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

ProjectiveState read_state(std::istream& in) {
  ProjectiveState state;
  std::string tag;
  std::size_t n = 0;
  if (!(in >> tag >> n) || tag != "cameras") {
    throw std::runtime_error("state file: expected 'cameras <count>'");
  }
  state.cameras.resize(n);
  for (auto& c : state.cameras) {
    for (int k = 0; k < 12; ++k) {
      if (!(in >> c.data()[k])) throw std::runtime_error("state file: truncated cameras");
    }
  }
  if (!(in >> tag >> n) || tag != "landmarks") {
    throw std::runtime_error("state file: expected 'landmarks <count>'");
  }
  state.landmarks.resize(n);
  for (auto& x : state.landmarks) {
    for (int k = 0; k < 4; ++k) {
      if (!(in >> x[k])) throw std::runtime_error("state file: truncated landmarks");
    }
  }
  return state;
}

}  // namespace povar
