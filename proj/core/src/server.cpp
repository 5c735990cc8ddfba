#include "epiglab/server.hpp"

#include <cmath>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "epiglab/error.hpp"

namespace epiglab {

namespace {

using nlohmann::json;

constexpr std::size_t kGlyphDims = 16;

Reply json_error(int status, std::string_view reason, std::string_view detail) {
  return {status, json{{"error", reason}, {"detail", detail}}.dump()};
}

// Served at '/' when no UI bundle directory is configured.
constexpr const char* kFallbackPage = R"html(<!doctype html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>epiglab labelling</title>
<style>
body { font-family: sans-serif; margin: 2em; max-width: 760px; }
#glyph rect { fill: #4a6fa5; }
button { margin: 0.2em; padding: 0.4em 1em; }
progress { width: 100%; }
</style>
</head>
<body>
<h1>Label the pending example</h1>
<p id="status">loading</p>
<progress id="progress" value="0" max="1"></progress>
<div id="query"></div>
<div id="buttons"></div>
<script>
let current = null;
async function refresh() {
  const r = await fetch('/api/state');
  render(await r.json());
}
function glyph(features) {
  const w = 16, h = 80, max = Math.max(1e-9, ...features.map(Math.abs));
  let bars = features.map((v, i) => {
    const bh = Math.abs(v) / max * (h / 2);
    const y = v >= 0 ? h / 2 - bh : h / 2;
    return `<rect x="${i * w}" y="${y}" width="${w - 2}" height="${bh}"/>`;
  }).join('');
  return `<svg id="glyph" width="${features.length * w}" height="${h}">${bars}</svg>`;
}
function render(s) {
  current = s;
  document.getElementById('status').textContent =
    `${s.status}: ${s.train_size} / ${s.budget} labels`;
  const p = document.getElementById('progress');
  p.max = s.budget; p.value = s.train_size;
  const q = document.getElementById('query');
  const b = document.getElementById('buttons');
  if (!s.pending) { q.innerHTML = '<p>Budget exhausted.</p>'; b.innerHTML = ''; return; }
  q.innerHTML = s.pending.asset_url
    ? `<img src="${s.pending.asset_url}" alt="example ${s.pending.index}" style="max-width:320px">`
    : glyph(s.pending.features);
  b.innerHTML = '';
  s.classes.forEach((name, c) => {
    const btn = document.createElement('button');
    btn.textContent = name;
    btn.onclick = () => submit(s.pending.index, c);
    b.appendChild(btn);
  });
}
async function submit(index, cls) {
  const r = await fetch('/api/label', {method: 'POST', headers: {'Content-Type': 'application/json'},
                                       body: JSON.stringify({index: index, class: cls})});
  if (r.status === 200) render(await r.json()); else refresh();
}
refresh();
setInterval(refresh, 1000);
</script>
</body>
</html>
)html";

}  // namespace

LabelSession::LabelSession(LoopConfig config, std::shared_ptr<const DataBundle> data, std::uint64_t seed,
                           bool oracle_init)
    : learner_(std::move(config), std::move(data), seed) {
  if (oracle_init) learner_.initialize_from_oracle();
  publish();
}

std::optional<std::size_t> LabelSession::current_pending() const {
  if (learner_.done()) return std::nullopt;
  return batch_[batch_labels_.size()];
}

// Called with the writer lock held.
void LabelSession::publish() {
  if (!learner_.done() && batch_labels_.size() == batch_.size()) {
    batch_ = learner_.pending();
    batch_labels_.clear();
  }
  const RunRecord& record = learner_.record();
  const auto pending = current_pending();

  json state;
  state["status"] = learner_.done() ? "done" : "awaiting_label";
  state["step"] = learner_.step();
  state["budget"] = learner_.config().budget;
  state["train_size"] = learner_.train_indices().size() + batch_labels_.size();
  if (pending) {
    json p;
    p["index"] = *pending;
    const auto& assets = learner_.data().assets;
    if (assets && assets->find(*pending)) {
      p["asset_url"] = "/api/asset/" + std::to_string(*pending);
    } else {
      p["asset_url"] = nullptr;
    }
    const auto row = learner_.features().row(*pending);
    std::vector<double> glyph(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(std::min(kGlyphDims, row.size())));
    p["features"] = glyph;
    state["pending"] = std::move(p);
  } else {
    state["pending"] = nullptr;
  }
  state["classes"] = learner_.config().task.effective_names();
  json curve = json::array();
  for (const auto& r : record.rows) {
    if (!std::isnan(r.accuracy)) curve.push_back({{"train_size", r.train_size}, {"accuracy", r.accuracy}});
  }
  state["accuracy_curve"] = std::move(curve);

  std::ostringstream csv;
  write_record_csv(csv, record);

  std::unique_lock lock(snapshot_mutex_);
  state_snapshot_ = state.dump();
  metrics_snapshot_ = csv.str();
  record_snapshot_ = record;
  done_snapshot_ = learner_.done();
}

std::string LabelSession::state_json() const {
  std::shared_lock lock(snapshot_mutex_);
  return state_snapshot_;
}

std::string LabelSession::metrics_csv() const {
  std::shared_lock lock(snapshot_mutex_);
  return metrics_snapshot_;
}

RunRecord LabelSession::record() const {
  std::shared_lock lock(snapshot_mutex_);
  return record_snapshot_;
}

bool LabelSession::done() const {
  std::shared_lock lock(snapshot_mutex_);
  return done_snapshot_;
}

Reply LabelSession::post_label(std::string_view body) {
  json request;
  try {
    request = json::parse(body);
  } catch (const json::parse_error& e) {
    return json_error(400, "malformed_json", e.what());
  }
  if (!request.is_object() || !request.contains("index") || !request.contains("class")) {
    return json_error(400, "missing_field", "body must be {\"index\": int, \"class\": int}");
  }
  const json& index = request["index"];
  const json& label = request["class"];
  if (!index.is_number_unsigned() && !(index.is_number_integer() && index.get<std::int64_t>() >= 0)) {
    return json_error(400, "bad_index", "index must be a non-negative integer");
  }
  if (!label.is_number_integer()) return json_error(400, "bad_class", "class must be an integer");
  const auto value = label.get<std::int64_t>();
  if (value < 0 || value > std::numeric_limits<int>::max()) {
    return json_error(400, "class_out_of_range", "class " + std::to_string(value) + " out of range");
  }
  return post_label(index.get<std::size_t>(), static_cast<int>(value));
}

Reply LabelSession::post_label(std::size_t index, int label) {
  std::lock_guard writer(writer_);
  if (learner_.done()) return json_error(409, "done", "labelling budget exhausted");
  if (label < 0 || label >= learner_.revealed().classes()) {
    return json_error(400, "class_out_of_range",
                      "class " + std::to_string(label) + " outside [0, " +
                          std::to_string(learner_.revealed().classes()) + ")");
  }
  const auto pending = current_pending();
  if (!pending || *pending != index) {
    return json_error(409, "stale_index",
                      "index " + std::to_string(index) + " is not pending" +
                          (pending ? " (pending " + std::to_string(*pending) + ")" : ""));
  }
  batch_labels_.push_back(label);
  if (batch_labels_.size() == batch_.size()) {
    {
      std::unique_lock lock(snapshot_mutex_);
      json state = json::parse(state_snapshot_);
      state["status"] = "retraining";
      state_snapshot_ = state.dump();
    }
    try {
      learner_.submit(batch_, batch_labels_);
    } catch (const Error& e) {
      batch_labels_.pop_back();
      publish();
      return json_error(500, "step_failed", e.what());
    }
  }
  publish();
  return {200, state_json()};
}

Reply LabelSession::asset(std::size_t index) const {
  const auto& assets = learner_.data().assets;
  if (!assets) return json_error(404, "no_asset", "no asset directory configured");
  const auto found = assets->find(index);
  if (!found) return json_error(404, "no_asset", "no asset for index " + std::to_string(index));
  return {200, assets->read(index), found->media_type};
}

// ---------------------------------------------------------------------------

struct Server::Impl {
  std::shared_ptr<LabelSession> session;
  ServerOptions options;
  httplib::Server http;
  std::thread thread;
  int port = -1;
  std::once_flag flushed;

  void flush() {
    std::call_once(flushed, [&] {
      if (!options.metrics_path.empty()) write_atomically(options.metrics_path, session->metrics_csv());
    });
  }
};

Server::Server(std::shared_ptr<LabelSession> session, ServerOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->session = std::move(session);
  impl_->options = std::move(options);
  auto& http = impl_->http;
  auto session_ptr = impl_->session;
  // httplib defaults to SO_REUSEPORT, which would let a second server share a
  // busy port instead of failing to start.
  http.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  auto send = [](httplib::Response& res, const Reply& reply) {
    res.status = reply.status;
    res.set_content(reply.body, reply.content_type);
  };

  http.Get("/api/state", [session_ptr](const httplib::Request&, httplib::Response& res) {
    res.set_content(session_ptr->state_json(), "application/json");
  });
  http.Post("/api/label", [session_ptr, send](const httplib::Request& req, httplib::Response& res) {
    send(res, session_ptr->post_label(req.body));
  });
  http.Get("/api/metrics.csv", [session_ptr](const httplib::Request&, httplib::Response& res) {
    res.set_content(session_ptr->metrics_csv(), "text/csv");
  });
  http.Get(R"(/api/asset/(\d+))", [session_ptr, send](const httplib::Request& req, httplib::Response& res) {
    std::size_t index = 0;
    try {
      index = std::stoull(req.matches[1].str());
    } catch (const std::exception&) {
      send(res, json_error(400, "bad_index", "index does not fit"));
      return;
    }
    send(res, session_ptr->asset(index));
  });

  const auto& ui = impl_->options.ui_dir;
  if (!ui.empty()) {
    if (!std::filesystem::is_directory(ui)) throw ConfigError("UI bundle directory " + ui.string() + " does not exist");
    http.set_mount_point("/", ui.string());
  } else {
    http.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kFallbackPage, "text/html; charset=utf-8");
    });
  }
  http.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send(res, json_error(500, "internal", e.what()));
    }
  });
}

Server::~Server() {
  try {
    stop();
  } catch (...) {
  }
}

void Server::start() {
  auto& impl = *impl_;
  if (impl.thread.joinable()) throw StateError("server already started");
  if (impl.options.port == 0) {
    impl.port = impl.http.bind_to_any_port(impl.options.host);
  } else {
    impl.port = impl.http.bind_to_port(impl.options.host, impl.options.port) ? impl.options.port : -1;
  }
  if (impl.port < 0) {
    throw Error("cannot bind " + impl.options.host + ":" + std::to_string(impl.options.port) +
                " (address in use or not available)");
  }
  impl.thread = std::thread([&impl] { impl.http.listen_after_bind(); });
  impl.http.wait_until_ready();
}

void Server::stop() {
  impl_->http.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
  impl_->flush();
}

void Server::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
  impl_->flush();
}

int Server::port() const { return impl_->port; }

}  // namespace epiglab
