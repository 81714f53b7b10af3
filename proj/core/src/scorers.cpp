// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "babylab/scorers.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <httplib.h>

#include "babylab/beam_search.hpp"
#include "babylab/checkpoint.hpp"
#include "babylab/error.hpp"
#include "babylab/protocol.hpp"
#include "babylab/unicode.hpp"

namespace babylab {
namespace {

std::string rtrim(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
  return s;
}

std::string trim(std::string s) {
  s = rtrim(std::move(s));
  const auto start = s.find_first_not_of(" \t");
  return start == std::string::npos ? std::string() : s.substr(start);
}

bool ends_sentence(const std::string& token) {
  const auto t = rtrim(token);
  return !t.empty() && (t.back() == '.' || t.back() == '!' || t.back() == '?');
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelScorer

ModelScorer::ModelScorer(Tokenizer tokenizer, TransformerModel model, std::string name)
    : tokenizer_(std::move(tokenizer)), model_(std::move(model)), name_(std::move(name)) {
  if (tokenizer_.vocab_size() != model_.config().vocab_size) {
    throw ConfigError("tokenizer has " + std::to_string(tokenizer_.vocab_size()) +
                      " entries but the model expects " +
                      std::to_string(model_.config().vocab_size));
  }
  stop_ids_.push_back(kEosId);
  for (std::size_t id = kNumSpecials; id < tokenizer_.vocab_size(); ++id) {
    if (ends_sentence(tokenizer_.token_bytes(static_cast<TokenId>(id)))) {
      stop_ids_.push_back(static_cast<TokenId>(id));
    }
  }
}

ModelScorer ModelScorer::from_checkpoint(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!ckpt.metadata.contains("tokenizer")) {
    throw ConfigError("checkpoint " + path.string() + " does not embed a tokenizer");
  }
  ModelScorer scorer(Tokenizer::from_json(ckpt.metadata.at("tokenizer")), std::move(ckpt.model),
                     path.string());
  if (ckpt.metadata.contains("training_words")) {
    scorer.training_words_ = ckpt.metadata.at("training_words").get<std::size_t>();
  }
  return scorer;
}

ScorerCapabilities ModelScorer::capabilities() const {
  const bool decoder = model_.config().kind == ModelKind::Decoder;
  return {true, decoder, !decoder};
}

NllSum ModelScorer::sequence_nll(std::string_view text) const {
  const auto ids = tokenizer_.encode(text);
  try {
    return babylab::sequence_nll(model_, ids);
  } catch (const std::invalid_argument& e) {
    throw ScorerError(name_ + ": " + e.what());
  }
}

GeneratedText ModelScorer::complete(std::string_view prompt, std::size_t beams,
                                    std::size_t max_new_tokens) const {
  if (model_.config().kind != ModelKind::Decoder) return Scorer::complete(prompt, beams, max_new_tokens);
  std::vector<TokenId> ids{kBosId};
  const auto encoded = tokenizer_.encode(rtrim(std::string(prompt)));
  ids.insert(ids.end(), encoded.begin(), encoded.end());
  BeamOptions options;
  options.beams = beams;
  options.max_new_tokens = max_new_tokens;
  options.stop_ids = stop_ids_;
  std::vector<Hypothesis> hyps;
  try {
    hyps = beam_search(model_, ids, options);
  } catch (const std::invalid_argument& e) {
    throw ScorerError(name_ + ": " + e.what());
  }
  if (hyps.empty()) throw ScorerError(name_ + ": beam search produced no hypothesis");
  auto tokens = hyps.front().tokens;
  if (!tokens.empty() && tokens.back() == kEosId) tokens.pop_back();
  return {trim(unicode::scrub_utf8(tokenizer_.decode(tokens))), hyps.front().score};
}

std::vector<MaskCandidate> ModelScorer::fill_mask(std::string_view text, std::size_t k) const {
  if (model_.config().kind != ModelKind::Encoder) return Scorer::fill_mask(text, k);
  const auto marker = text.find(kMaskMarker);
  if (marker == std::string_view::npos) throw ScorerError(name_ + ": no <mask> in text");
  std::vector<TokenId> ids{kBosId};
  const auto left = tokenizer_.encode(rtrim(std::string(text.substr(0, marker))));
  ids.insert(ids.end(), left.begin(), left.end());
  const std::size_t position = ids.size();
  ids.push_back(kMaskId);
  const auto right = tokenizer_.encode(text.substr(marker + kMaskMarker.size()));
  ids.insert(ids.end(), right.begin(), right.end());
  ids.push_back(kEosId);
  std::vector<TokenScore> top;
  try {
    top = babylab::fill_mask(model_, ids, position, k);
  } catch (const std::exception& e) {
    throw ScorerError(name_ + ": " + e.what());
  }
  std::vector<MaskCandidate> out;
  for (const auto& t : top) out.push_back({unicode::scrub_utf8(tokenizer_.decode(std::span(&t.token, 1))), t.probability});
  return out;
}

// ---------------------------------------------------------------------------
// ProcessScorer

ProcessScorer::ProcessScorer(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
  ::signal(SIGPIPE, SIG_IGN);
  int in_pipe[2];
  int out_pipe[2];
  if (::pipe(in_pipe) != 0) throw ScorerError("pipe failed: " + std::string(std::strerror(errno)));
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw ScorerError("pipe failed: " + std::string(std::strerror(errno)));
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw ScorerError("fork failed: " + std::string(std::strerror(errno)));
  if (pid == 0) {
    // Own process group, so teardown reaches whatever the shell spawns.
    ::setpgid(0, 0);
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  ::fcntl(to_child_, F_SETFD, FD_CLOEXEC);
  ::fcntl(from_child_, F_SETFD, FD_CLOEXEC);
}

ProcessScorer::~ProcessScorer() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    // Give the child a moment to exit on EOF before forcing it.
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
      ::usleep(10'000);
    }
    ::kill(-pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
  }
}

nlohmann::json ProcessScorer::exchange(const nlohmann::json& request) const {
  std::lock_guard lock(mutex_);
  if (broken_) throw ScorerError(name() + ": scorer process is no longer usable");
  const std::string line = request.dump() + "\n";
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(to_child_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      broken_ = true;
      throw ScorerError(name() + ": write failed: " + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  while (true) {
    const auto newline = buffer_.find('\n');
    if (newline != std::string::npos) {
      std::string reply = buffer_.substr(0, newline);
      buffer_.erase(0, newline + 1);
      try {
        return nlohmann::json::parse(reply);
      } catch (const nlohmann::json::exception& e) {
        throw ScorerError(name() + ": malformed reply: " + e.what());
      }
    }
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) {
      broken_ = true;
      throw ScorerError(name() + ": timed out waiting for a reply");
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) continue;
    char chunk[4096];
    const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      broken_ = true;
      throw ScorerError(name() + ": scorer process closed its output");
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

bool ProcessScorer::healthy() const {
  std::lock_guard lock(mutex_);
  return !broken_;
}

NllSum ProcessScorer::sequence_nll(std::string_view text) const {
  return protocol::parse_nll_response(exchange(protocol::nll_request(text)));
}

GeneratedText ProcessScorer::complete(std::string_view prompt, std::size_t beams,
                                      std::size_t max_new_tokens) const {
  return protocol::parse_complete_response(
      exchange(protocol::complete_request(prompt, beams, max_new_tokens)));
}

std::vector<MaskCandidate> ProcessScorer::fill_mask(std::string_view text, std::size_t k) const {
  return protocol::parse_fill_mask_response(exchange(protocol::fill_mask_request(text, k)));
}

// ---------------------------------------------------------------------------
// HttpScorer

HttpScorer::HttpScorer(std::string url, std::chrono::seconds timeout)
    : url_(std::move(url)), timeout_(timeout) {
  constexpr std::string_view scheme = "http://";
  if (!url_.starts_with(scheme)) throw ConfigError("http scorer: URL must start with http://");
  const auto slash = url_.find('/', scheme.size());
  host_ = url_.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url_.substr(slash);
}

nlohmann::json HttpScorer::exchange(const nlohmann::json& request) const {
  httplib::Client client(host_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  auto res = client.Post(path_, request.dump(), "application/json");
  if (!res) throw ScorerError(url_ + ": request failed: " + httplib::to_string(res.error()));
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw ScorerError(url_ + ": malformed reply (HTTP " + std::to_string(res->status) + "): " + e.what());
  }
}

NllSum HttpScorer::sequence_nll(std::string_view text) const {
  return protocol::parse_nll_response(exchange(protocol::nll_request(text)));
}

GeneratedText HttpScorer::complete(std::string_view prompt, std::size_t beams,
                                   std::size_t max_new_tokens) const {
  return protocol::parse_complete_response(
      exchange(protocol::complete_request(prompt, beams, max_new_tokens)));
}

std::vector<MaskCandidate> HttpScorer::fill_mask(std::string_view text, std::size_t k) const {
  return protocol::parse_fill_mask_response(exchange(protocol::fill_mask_request(text, k)));
}

std::unique_ptr<Scorer> make_scorer(std::string_view spec) {
  if (spec.starts_with("ckpt:")) {
    return std::make_unique<ModelScorer>(ModelScorer::from_checkpoint(std::string(spec.substr(5))));
  }
  if (spec.ends_with(".ckpt")) {
    return std::make_unique<ModelScorer>(ModelScorer::from_checkpoint(std::string(spec)));
  }
  if (spec.starts_with("cmd:")) return std::make_unique<ProcessScorer>(std::string(spec.substr(4)));
  if (spec.starts_with("http://")) return std::make_unique<HttpScorer>(std::string(spec));
  throw ConfigError("unrecognised scorer spec '" + std::string(spec) +
                    "' (expected ckpt:PATH, cmd:COMMAND or http://URL)");
}

}  // namespace babylab
