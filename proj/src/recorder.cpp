// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/recorder.hpp"

#include <array>
#include <chrono>
#include <utility>

#include "nextsig/error.hpp"

namespace nextsig {

namespace {

constexpr std::array<std::pair<EventKind, const char*>, 9> kKindNames{{
    {EventKind::turn, "turn"},
    {EventKind::judge_enqueued, "judge_enqueued"},
    {EventKind::judge_vote, "judge_vote"},
    {EventKind::hint_selected, "hint_selected"},
    {EventKind::sample_submitted, "sample_submitted"},
    {EventKind::sample_dropped, "sample_dropped"},
    {EventKind::guarantee_applied, "guarantee_applied"},
    {EventKind::train_report, "train_report"},
    {EventKind::weight_swap, "weight_swap"},
}};

struct Schema {
  bool needs_session;
  std::vector<const char*> payload;
};

Schema schema_of(EventKind kind) {
  switch (kind) {
    case EventKind::turn:
      return {true, {"kind", "response_text", "response_tokens", "old_log_probs", "policy_version"}};
    case EventKind::judge_enqueued:
      return {true, {"next_state"}};
    case EventKind::judge_vote:
      return {true, {"mode", "votes"}};
    case EventKind::hint_selected:
      return {true, {"hint"}};
    case EventKind::sample_submitted:
      return {true, {"source", "advantage", "policy_version"}};
    case EventKind::sample_dropped:
      return {true, {"reason"}};
    case EventKind::guarantee_applied:
      return {true, {}};
    case EventKind::train_report:
      return {false, {"new_version", "samples_used"}};
    case EventKind::weight_swap:
      return {false, {"from", "to"}};
  }
  return {false, {}};
}

}  // namespace

const char* to_string(EventKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

EventKind event_kind_from_string(std::string_view s) {
  for (const auto& [k, name] : kKindNames) {
    if (s == name) return k;
  }
  throw Error(Errc::parse_error, "unknown event kind '" + std::string(s) + "'");
}

std::vector<std::string> missing_fields(const RecordEvent& event) {
  std::vector<std::string> missing;
  const Schema schema = schema_of(event.kind);
  if (schema.needs_session) {
    if (!event.session_id) missing.emplace_back("session_id");
    if (!event.turn_index) missing.emplace_back("turn_index");
  }
  if (!event.payload.is_object()) {
    missing.emplace_back("payload");
    return missing;
  }
  for (const char* key : schema.payload) {
    if (!event.payload.contains(key)) missing.emplace_back(std::string("payload.") + key);
  }
  return missing;
}

nlohmann::json to_json(const RecordEvent& event) {
  nlohmann::json j;
  j["timestamp_us"] = event.timestamp_us;
  j["kind"] = to_string(event.kind);
  j["version"] = event.version;
  j["seq"] = event.seq;
  if (event.session_id) j["session_id"] = *event.session_id;
  if (event.turn_index) j["turn_index"] = *event.turn_index;
  j["payload"] = event.payload;
  return j;
}

RecordEvent event_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::parse_error, "event is not a JSON object");
  RecordEvent e;
  try {
    e.timestamp_us = j.at("timestamp_us").get<std::int64_t>();
    e.kind = event_kind_from_string(j.at("kind").get<std::string>());
    e.version = j.at("version").get<std::uint64_t>();
    e.seq = j.at("seq").get<std::uint64_t>();
    if (j.contains("session_id")) e.session_id = j["session_id"].get<std::string>();
    if (j.contains("turn_index")) e.turn_index = j["turn_index"].get<int>();
    e.payload = j.at("payload");
  } catch (const nlohmann::json::exception& ex) {
    throw Error(Errc::parse_error, ex.what());
  }
  if (auto missing = missing_fields(e); !missing.empty()) {
    throw Error(Errc::parse_error, std::string(to_string(e.kind)) + " event lacks " + missing.front());
  }
  return e;
}

RecordEvent parse_event_line(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(Errc::parse_error, ex.what());
  }
  return event_from_json(j);
}

std::int64_t now_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

Recorder::Recorder(RecorderConfig config, std::uint64_t initial_version)
    : config_(std::move(config)), version_(initial_version), file_version_(initial_version) {
  if (config_.capacity == 0) throw Error(Errc::invalid_argument, "recorder capacity must be > 0");
  std::error_code ec;
  std::filesystem::create_directories(config_.dir, ec);
  if (ec) throw Error(Errc::io_error, "cannot create " + config_.dir.string() + ": " + ec.message());
  open_file(initial_version);
  writer_ = std::thread([this] { writer_loop(); });
}

Recorder::~Recorder() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
    paused_ = false;
  }
  cv_.notify_all();
  if (writer_.joinable()) writer_.join();
}

void Recorder::record(RecordEvent event) noexcept {
  try {
    if (event.timestamp_us == 0) event.timestamp_us = now_us();
    {
      std::lock_guard lock(mu_);
      event.version = version_;
      event.seq = seq_++;
      if (pending_events_ >= config_.capacity) {
        for (auto it = items_.begin(); it != items_.end(); ++it) {
          if (it->event) {
            items_.erase(it);
            --pending_events_;
            ++dropped_;
            break;
          }
        }
      }
      items_.push_back(Item{std::move(event), 0});
      ++pending_events_;
    }
    cv_.notify_one();
  } catch (...) {
    std::lock_guard lock(mu_);
    ++dropped_;
  }
}

void Recorder::record(EventKind kind, std::optional<std::string> session_id, std::optional<int> turn_index,
                      nlohmann::json payload) noexcept {
  try {
    RecordEvent e;
    e.kind = kind;
    e.session_id = std::move(session_id);
    e.turn_index = turn_index;
    e.payload = std::move(payload);
    record(std::move(e));
  } catch (...) {
    std::lock_guard lock(mu_);
    ++dropped_;
  }
}

void Recorder::rotate_on_version(std::uint64_t new_version) {
  {
    std::lock_guard lock(mu_);
    if (new_version != version_ + 1) {
      throw Error(Errc::version_skew,
                  "rotate from v" + std::to_string(version_) + " to v" + std::to_string(new_version));
    }
    version_ = new_version;
    items_.push_back(Item{std::nullopt, new_version});
  }
  cv_.notify_one();
}

void Recorder::flush() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [&] { return (items_.empty() && !busy_) || stop_; });
}

void Recorder::pause_writer() {
  std::lock_guard lock(mu_);
  paused_ = true;
}

void Recorder::resume_writer() {
  {
    std::lock_guard lock(mu_);
    paused_ = false;
  }
  cv_.notify_all();
}

RecorderMetrics Recorder::metrics() const {
  std::lock_guard lock(mu_);
  return {pending_events_, dropped_, write_failures_, written_, version_};
}

std::uint64_t Recorder::version() const {
  std::lock_guard lock(mu_);
  return version_;
}

std::filesystem::path Recorder::file_path(std::uint64_t version) const {
  return config_.dir / ("v" + std::to_string(version) + ".jsonl");
}

std::filesystem::path Recorder::archive_path(std::uint64_t version) const {
  return config_.dir / "archive" / ("v" + std::to_string(version) + ".jsonl");
}

std::filesystem::path Recorder::live_path() const { return file_path(version()); }

void Recorder::open_file(std::uint64_t version) {
  out_.close();
  out_.clear();
  out_.open(file_path(version), std::ios::out | std::ios::app | std::ios::binary);
  file_version_ = version;
  if (!out_) {
    std::lock_guard lock(mu_);
    ++write_failures_;
  }
}

void Recorder::purge_file(std::uint64_t version) {
  std::error_code ec;
  if (config_.archive) {
    std::filesystem::create_directories(config_.dir / "archive", ec);
    if (!ec) std::filesystem::rename(file_path(version), archive_path(version), ec);
  } else {
    std::filesystem::remove(file_path(version), ec);
  }
  if (ec) {
    std::lock_guard lock(mu_);
    ++write_failures_;
  }
}

void Recorder::writer_loop() {
  std::deque<Item> batch;
  for (;;) {
    {
      std::unique_lock lock(mu_);
      busy_ = false;
      idle_cv_.notify_all();
      cv_.wait(lock, [&] { return stop_ || (!paused_ && !items_.empty()); });
      if (items_.empty() && stop_) return;
      batch.swap(items_);
      for (const Item& item : batch) {
        if (item.event) --pending_events_;
      }
      busy_ = true;
    }

    std::uint64_t ok = 0;
    std::uint64_t failed = 0;
    for (Item& item : batch) {
      if (!item.event) {
        out_.flush();
        out_.close();
        purge_file(file_version_);
        open_file(item.rotate_to);
        continue;
      }
      std::string line;
      try {
        line = to_json(*item.event).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
      } catch (...) {
        ++failed;
        continue;
      }
      line.push_back('\n');
      out_.write(line.data(), static_cast<std::streamsize>(line.size()));
      if (out_) {
        ++ok;
      } else {
        ++failed;
        out_.clear();
      }
    }
    out_.flush();
    batch.clear();

    std::lock_guard lock(mu_);
    written_ += ok;
    write_failures_ += failed;
  }
}

std::vector<RecordEvent> read_events(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::vector<RecordEvent> events;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      events.push_back(parse_event_line(line));
    } catch (const Error& e) {
      throw Error(Errc::parse_error, path.filename().string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return events;
}

}  // namespace nextsig
