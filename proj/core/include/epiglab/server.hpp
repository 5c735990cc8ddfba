#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <string_view>

#include "epiglab/loop.hpp"

namespace epiglab {

/// Reply of a session operation, independent of the HTTP transport.
struct Reply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// A single labelling session. Mutations go through one writer lock; readers
/// get the last published snapshot, so they never see a half-applied step.
///
/// With batch > 1 the learner's batch is exposed one index at a time and is
/// submitted once every index in it has a label.
class LabelSession {
 public:
  /// `oracle_init` reveals the stratified initial set from the oracle; without
  /// it the first init_size() queries are uniform pool draws for the human.
  LabelSession(LoopConfig config, std::shared_ptr<const DataBundle> data, std::uint64_t seed, bool oracle_init);

  /// JSON: {status, step, budget, train_size, pending, classes, accuracy_curve}.
  /// `pending` is null when done; otherwise {index, asset_url, features} with
  /// asset_url null when the index has no asset.
  std::string state_json() const;

  /// Body {"index": int, "class": int}. 400 on a malformed body or a class out
  /// of range, 409 when the index is not pending or the session is done.
  Reply post_label(std::string_view body);
  Reply post_label(std::size_t index, int label);

  /// Record CSV so far.
  std::string metrics_csv() const;
  Reply asset(std::size_t index) const;

  RunRecord record() const;
  bool done() const;

 private:
  void publish();
  std::optional<std::size_t> current_pending() const;

  mutable std::mutex writer_;
  mutable std::shared_mutex snapshot_mutex_;

  ActiveLearner learner_;
  std::vector<std::size_t> batch_;
  std::vector<int> batch_labels_;

  std::string state_snapshot_;
  std::string metrics_snapshot_;
  RunRecord record_snapshot_;
  bool done_snapshot_ = false;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 = any free port
  std::filesystem::path ui_dir;        // static bundle served at '/', optional
  std::filesystem::path metrics_path;  // written on stop(), optional
};

/// HTTP front end for a LabelSession.
class Server {
 public:
  Server(std::shared_ptr<LabelSession> session, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts serving in a background thread. Throws Error when the
  /// address cannot be bound.
  void start();
  /// Stops serving and flushes metrics to options.metrics_path.
  void stop();
  /// Blocks until the listener thread exits.
  void wait();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace epiglab
