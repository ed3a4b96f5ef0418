#include "msgate/job_protocol.hpp"

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <cstring>
#include <sstream>

#include "msgate/errors.hpp"

namespace msgate::protocol {

long long ExperimentResult::bright(std::size_t c, int ion) const {
  long long s = 0;
  const int bit = ion_count - 1 - ion;
  for (std::size_t o = 0; o < counts.at(c).size(); ++o)
    if ((o >> bit) & 1) s += counts[c][o];
  return s;
}

long long ExperimentResult::pair_outcome(std::size_t c, int i, int j, int value) const {
  long long s = 0;
  const int bi = ion_count - 1 - i, bj = ion_count - 1 - j;
  for (std::size_t o = 0; o < counts.at(c).size(); ++o) {
    const int v = 2 * int((o >> bi) & 1) + int((o >> bj) & 1);
    if (v == value) s += counts[c][o];
  }
  return s;
}

long long ExperimentResult::parity_even(std::size_t c, int i, int j) const {
  return pair_outcome(c, i, j, 0) + pair_outcome(c, i, j, 3);
}

void ExperimentResult::validate() const {
  if (!error.empty()) throw ProtocolError("backend error: " + error);
  for (const auto& row : counts) {
    if (row.size() != (std::size_t(1) << ion_count)) throw ProtocolError("result row has wrong outcome count");
    long long s = 0;
    for (auto v : row) {
      if (v < 0) throw ProtocolError("negative count");
      s += v;
    }
    if (s != shots) throw ProtocolError("counts do not sum to shots");
  }
}

nlohmann::json to_json(const ExperimentJob& j) {
  return {{"type", "job"},           {"schema_version", j.schema_version}, {"label", j.label},
          {"shots", j.shots},        {"sweep", {{"name", j.sweep_name}, {"values", j.sweep_values}}},
          {"circuits", j.circuits}};
}

ExperimentJob job_from_json(const nlohmann::json& j) {
  ExperimentJob job;
  job.schema_version = j.at("schema_version").get<int>();
  if (job.schema_version != kSchemaVersion)
    throw ProtocolError("unsupported job schema_version " + std::to_string(job.schema_version));
  job.label = j.value("label", "");
  job.shots = j.at("shots").get<long long>();
  if (job.shots < 1) throw ProtocolError("shots must be positive");
  if (j.contains("sweep")) {
    job.sweep_name = j["sweep"].value("name", "");
    if (j["sweep"].contains("values")) job.sweep_values = j["sweep"]["values"].get<std::vector<double>>();
  }
  for (const auto& c : j.at("circuits")) {
    if (!c.is_array()) throw ProtocolError("circuit must be an array of ops");
    job.circuits.push_back(c);
  }
  return job;
}

nlohmann::json to_json(const ExperimentResult& r) {
  nlohmann::json j = {{"type", "result"},      {"schema_version", r.schema_version}, {"label", r.label},
                      {"ion_count", r.ion_count}, {"shots", r.shots},                 {"counts", r.counts}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

ExperimentResult result_from_json(const nlohmann::json& j) {
  ExperimentResult r;
  r.schema_version = j.at("schema_version").get<int>();
  if (r.schema_version != kSchemaVersion) throw ProtocolError("unsupported result schema_version");
  r.label = j.value("label", "");
  r.error = j.value("error", "");
  if (!r.error.empty()) return r;
  r.ion_count = j.at("ion_count").get<int>();
  r.shots = j.at("shots").get<long long>();
  r.counts = j.at("counts").get<std::vector<std::vector<long long>>>();
  r.validate();
  return r;
}

void write_frame(std::ostream& out, const nlohmann::json& j) {
  const std::string s = j.dump();
  out << s.size() << '\n' << s;
  out.flush();
}

bool read_frame(std::istream& in, nlohmann::json& j) {
  std::string header;
  if (!std::getline(in, header)) return false;
  if (header.empty()) return read_frame(in, j);
  std::size_t used = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(header, &used);
  } catch (const std::exception&) {
    throw ProtocolError("bad frame header: " + header.substr(0, 40));
  }
  if (used != header.size() || n > (1ull << 30)) throw ProtocolError("bad frame header: " + header.substr(0, 40));
  std::string body(n, '\0');
  in.read(body.data(), static_cast<std::streamsize>(n));
  if (static_cast<unsigned long long>(in.gcount()) != n) throw ProtocolError("truncated frame");
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("frame is not JSON: ") + e.what());
  }
  return true;
}

// ---------------------------------------------------------------- subprocess backend

namespace {

void write_all(int fd, const std::string& s) {
  std::size_t off = 0;
  while (off < s.size()) {
    const ssize_t w = ::write(fd, s.data() + off, s.size() - off);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("write to backend failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(w);
  }
}

std::string read_exact(int fd, std::size_t n) {
  std::string s(n, '\0');
  std::size_t off = 0;
  while (off < n) {
    const ssize_t r = ::read(fd, s.data() + off, n - off);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) throw ProtocolError("backend closed the stream");
    off += static_cast<std::size_t>(r);
  }
  return s;
}

std::string read_line(int fd) {
  std::string s;
  char ch = 0;
  while (true) {
    const ssize_t r = ::read(fd, &ch, 1);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) throw ProtocolError("backend closed the stream");
    if (ch == '\n') return s;
    s += ch;
    if (s.size() > 32) throw ProtocolError("bad frame header from backend");
  }
}

}  // namespace

SubprocessBackend::SubprocessBackend(const std::string& command) : command_(command) {
  int in_pipe[2], out_pipe[2];
  if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0) throw ProtocolError("pipe() failed");
  pid_ = ::fork();
  if (pid_ < 0) throw ProtocolError("fork() failed");
  if (pid_ == 0) {
    ::dup2(in_pipe[0], 0);
    ::dup2(out_pipe[1], 1);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  std::signal(SIGPIPE, SIG_IGN);
  const auto hello = exchange({{"type", "hello"}, {"schema_version", kSchemaVersion}});
  if (hello.value("schema_version", -1) != kSchemaVersion) throw ProtocolError("backend schema mismatch");
  ions_ = hello.at("ion_count").get<int>();
}

SubprocessBackend::~SubprocessBackend() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }
}

nlohmann::json SubprocessBackend::exchange(const nlohmann::json& request) {
  const std::string s = request.dump();
  write_all(to_child_, std::to_string(s.size()) + "\n" + s);
  std::string header = read_line(from_child_);
  while (header.empty()) header = read_line(from_child_);
  const auto n = std::stoull(header);
  return nlohmann::json::parse(read_exact(from_child_, n));
}

ExperimentResult SubprocessBackend::run(const ExperimentJob& job) {
  ++jobs_;
  auto r = result_from_json(exchange(to_json(job)));
  if (!r.error.empty()) throw ProtocolError("backend error: " + r.error);
  return r;
}

void serve(Backend& backend, std::istream& in, std::ostream& out) {
  nlohmann::json req;
  while (true) {
    try {
      if (!read_frame(in, req)) return;
    } catch (const ProtocolError& e) {
      ExperimentResult r;
      r.error = e.what();
      write_frame(out, to_json(r));
      return;
    }
    const std::string type = req.value("type", "job");
    if (type == "hello") {
      write_frame(out, {{"type", "hello"}, {"schema_version", kSchemaVersion}, {"ion_count", backend.ion_count()},
                        {"backend", backend.name()}});
      continue;
    }
    if (type == "bye") return;
    ExperimentResult r;
    try {
      r = backend.run(job_from_json(req));
    } catch (const std::exception& e) {
      r = ExperimentResult{};
      r.label = req.value("label", "");
      r.error = e.what();
    }
    write_frame(out, to_json(r));
  }
}

}  // namespace msgate::protocol
