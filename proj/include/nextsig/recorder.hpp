// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"

namespace nextsig {

enum class EventKind {
  turn,
  judge_enqueued,
  judge_vote,
  hint_selected,
  sample_submitted,
  sample_dropped,
  guarantee_applied,
  train_report,
  weight_swap,
};

const char* to_string(EventKind kind);
EventKind event_kind_from_string(std::string_view s);  // throws parse_error

struct RecordEvent {
  std::int64_t timestamp_us = 0;  // unix epoch, microseconds
  EventKind kind = EventKind::turn;
  std::optional<std::string> session_id;
  std::optional<int> turn_index;
  nlohmann::json payload = nlohmann::json::object();
  std::uint64_t version = 0;  // stamped by the recorder: the file the event lands in
  std::uint64_t seq = 0;      // stamped by the recorder

  bool operator==(const RecordEvent&) const = default;
};

// Names of required fields the event lacks (envelope and payload), empty when
// well formed.
std::vector<std::string> missing_fields(const RecordEvent& event);

nlohmann::json to_json(const RecordEvent& event);
// Throws parse_error on malformed input or missing required fields.
RecordEvent event_from_json(const nlohmann::json& j);
RecordEvent parse_event_line(std::string_view line);

std::int64_t now_us();

struct RecorderConfig {
  std::filesystem::path dir;
  bool archive = true;  // purge moves v{n}.jsonl into dir/archive instead of deleting it
  std::size_t capacity = 65536;
};

struct RecorderMetrics {
  std::size_t queue_depth = 0;
  std::uint64_t dropped = 0;
  std::uint64_t write_failures = 0;
  std::uint64_t written = 0;
  std::uint64_t version = 0;
};

// Fire-and-forget JSONL sink. Producers only enqueue; a single background
// thread owns the file. One live file per policy version: dir/v{n}.jsonl.
class Recorder {
 public:
  explicit Recorder(RecorderConfig config, std::uint64_t initial_version = 0);
  ~Recorder();

  Recorder(const Recorder&) = delete;
  Recorder& operator=(const Recorder&) = delete;

  // Never throws, never waits on disk. When the queue is full the oldest
  // pending event is discarded and counted.
  void record(RecordEvent event) noexcept;
  void record(EventKind kind, std::optional<std::string> session_id, std::optional<int> turn_index,
              nlohmann::json payload) noexcept;

  // Closes and purges the current file, then opens v{new_version}.jsonl.
  // Events recorded before this call land in the old file, later ones in the
  // new. Throws version_skew unless new_version == version() + 1.
  void rotate_on_version(std::uint64_t new_version);

  // Blocks until everything enqueued so far is on disk. Must not be called
  // while the writer is paused.
  void flush();

  void pause_writer();
  void resume_writer();

  RecorderMetrics metrics() const;
  std::uint64_t version() const;
  std::filesystem::path live_path() const;
  std::filesystem::path file_path(std::uint64_t version) const;
  std::filesystem::path archive_path(std::uint64_t version) const;
  const RecorderConfig& config() const { return config_; }

 private:
  struct Item {
    std::optional<RecordEvent> event;
    std::uint64_t rotate_to = 0;
  };

  void writer_loop();
  void open_file(std::uint64_t version);
  void purge_file(std::uint64_t version);

  RecorderConfig config_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<Item> items_;
  std::size_t pending_events_ = 0;
  std::uint64_t version_ = 0;
  std::uint64_t seq_ = 0;
  std::uint64_t dropped_ = 0;
  std::uint64_t write_failures_ = 0;
  std::uint64_t written_ = 0;
  bool paused_ = false;
  bool busy_ = false;
  bool stop_ = false;

  std::ofstream out_;  // writer thread only
  std::uint64_t file_version_ = 0;
  std::thread writer_;
};

// Every event in a JSONL file; throws parse_error naming the 1-based line.
std::vector<RecordEvent> read_events(const std::filesystem::path& path);

}  // namespace nextsig
