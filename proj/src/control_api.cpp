#include "raft/control_api.hpp"

#include <httplib.h>
#include <json.hpp>

#include "raft/error.hpp"

namespace raft {

using nlohmann::json;

namespace {

json device_json(const InventoryEntry& e) {
  json partitions = json::array();
  for (const auto& p : e.device.partitions) {
    partitions.push_back({{"offset", p.offset}, {"length", p.length}, {"label", p.label}});
  }
  return {{"device_id", e.device.device_id},
          {"label", e.device.label},
          {"total_bytes", e.device.total_bytes},
          {"source_kind", e.device.source_kind == SourceKind::BlockDevice ? "block_device" : "file_backed"},
          {"partitions", partitions},
          {"state", selection_state_name(e.state)},
          {"priority", e.priority ? json(*e.priority) : json(nullptr)},
          {"error", e.error}};
}

json event_to_json(const ProgressEvent& ev) {
  json j{{"id", ev.id},
         {"kind", progress_kind_name(ev.kind)},
         {"at", format_timestamp(ev.at)},
         {"job_id", ev.job_id},
         {"device_id", ev.device_id},
         {"session_id", ev.session_id}};
  if (ev.seq) j["seq"] = *ev.seq;
  if (ev.attempt) j["attempt"] = *ev.attempt;
  if (!ev.detail.empty()) j["detail"] = ev.detail;
  return j;
}

json result_json(const AcquisitionResult& r) {
  json connections = json::array();
  for (const auto& c : r.connections) {
    connections.push_back({{"resume_from", c.resume_from},
                           {"sent", c.sent.size()},
                           {"acked", c.acked.size()},
                           {"nacked", c.nacked.size()},
                           {"end_reason", c.end_reason}});
  }
  return {{"device_id", r.device_id},
          {"verdict", verdict_name(r.verdict)},
          {"error", r.error ? json(std::string(to_string(*r.error))) : json(nullptr)},
          {"detail", r.detail},
          {"session_id", r.session_id},
          {"whole_image_digest", r.whole_image_digest ? json(r.whole_image_digest->hex()) : json(nullptr)},
          {"recomputed_digest", r.recomputed_digest ? json(r.recomputed_digest->hex()) : json(nullptr)},
          {"naks", r.nak_count()},
          {"connections", connections}};
}

json status_to_json(const JobStatus& s) {
  json results = json::array();
  for (const auto& r : s.results) results.push_back(result_json(r));
  return {{"job_id", s.id},
          {"state", job_state_name(s.state)},
          {"devices", s.devices},
          {"current_device", s.current_device ? json(*s.current_device) : json(nullptr)},
          {"results", results}};
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadPassphrase:
    case ErrorCode::Unauthorized: return 401;
    case ErrorCode::Locked: return 423;
    case ErrorCode::UnknownDevice:
    case ErrorCode::NotFound: return 404;
    case ErrorCode::DeviceActive:
    case ErrorCode::NoDevices: return 409;
    default: return 400;
  }
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, const Error& e) {
  reply(res, status_for(e.code()), {{"error", to_string(e.code())}, {"message", e.what()}});
}

}  // namespace

std::string progress_event_json(const ProgressEvent& event) { return event_to_json(event).dump(); }
std::string job_status_json(const JobStatus& status) { return status_to_json(status).dump(); }

struct ControlApi::Impl {
  ClientAgent& agent;
  httplib::Server http;
  std::atomic<bool> stopping{false};
  std::mutex command_mu;  // serializes mutating calls

  explicit Impl(ClientAgent& a) : agent(a) {}

  bool authorized(const httplib::Request& req, httplib::Response& res) {
    const auto header = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (header.rfind(prefix, 0) == 0 && agent.valid_token(header.substr(prefix.size()))) return true;
    reply(res, 401, {{"error", "Unauthorized"}, {"message", "missing or invalid session token"}});
    return false;
  }

  static std::optional<json> body(const httplib::Request& req, httplib::Response& res) {
    try {
      return req.body.empty() ? json::object() : json::parse(req.body);
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", "ParseError"}, {"message", e.what()}});
      return std::nullopt;
    }
  }

  void routes() {
    http.Get("/devices", [this](const httplib::Request&, httplib::Response& res) {
      json devices = json::array();
      for (const auto& e : agent.inventory()) devices.push_back(device_json(e));
      reply(res, 200, {{"unlocked", agent.unlocked()}, {"devices", devices}, {"queue", agent.queue()}});
    });

    http.Post("/unlock", [this](const httplib::Request& req, httplib::Response& res) {
      auto b = body(req, res);
      if (!b) return;
      if (!b->contains("passphrase") || !(*b)["passphrase"].is_string()) {
        reply(res, 400, {{"error", "InvalidArgument"}, {"message", "body needs a \"passphrase\" string"}});
        return;
      }
      std::lock_guard lock(command_mu);
      try {
        reply(res, 200, {{"token", agent.unlock((*b)["passphrase"].get<std::string>())}});
      } catch (const Error& e) {
        reply_error(res, e);
      }
    });

    http.Post("/queue", [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      auto b = body(req, res);
      if (!b) return;
      std::map<std::string, std::uint32_t> priorities;
      try {
        for (const auto& [id, p] : b->at("priorities").items()) {
          if (!p.is_number_unsigned()) throw Error(ErrorCode::InvalidArgument, "priority for '" + id + "' must be a non-negative integer");
          priorities[id] = p.get<std::uint32_t>();
        }
      } catch (const json::exception&) {
        reply(res, 400, {{"error", "InvalidArgument"}, {"message", "body needs a \"priorities\" object"}});
        return;
      } catch (const Error& e) {
        reply_error(res, e);
        return;
      }
      std::lock_guard lock(command_mu);
      try {
        agent.set_priorities(priorities);
        reply(res, 200, {{"queue", agent.queue()}});
      } catch (const Error& e) {
        reply_error(res, e);
      }
    });

    http.Post("/acquire", [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      auto b = body(req, res);
      if (!b) return;
      const auto mode = b->value("mode", std::string("all"));
      if (mode != "all" && mode != "selected") {
        reply(res, 400, {{"error", "InvalidArgument"}, {"message", "mode must be \"all\" or \"selected\""}});
        return;
      }
      std::lock_guard lock(command_mu);
      try {
        const auto id = agent.start_acquire(mode == "all" ? AcquireMode::All : AcquireMode::Selected);
        reply(res, 202, {{"job_id", id}});
      } catch (const Error& e) {
        reply_error(res, e);
      }
    });

    http.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto status = agent.job(req.matches[1]);
      if (!status) {
        reply(res, 404, {{"error", "NotFound"}, {"message", "no such job"}});
        return;
      }
      reply(res, 200, status_to_json(*status));
    });

    http.Post(R"(/abort/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      std::lock_guard lock(command_mu);
      try {
        const std::string id = req.matches[1];
        agent.abort(id);
        reply(res, 202, {{"job_id", id}, {"state", job_state_name(agent.job(id)->state)}});
      } catch (const Error& e) {
        reply_error(res, e);
      }
    });

    http.Get("/events", [this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t last = 0;
      try {
        if (req.has_header("Last-Event-ID")) {
          last = std::stoull(req.get_header_value("Last-Event-ID"));
        } else if (req.has_param("last_event_id")) {
          last = std::stoull(req.get_param_value("last_event_id"));
        }
      } catch (const std::exception&) {
        reply(res, 400, {{"error", "InvalidArgument"}, {"message", "bad last event id"}});
        return;
      }
      const bool follow = req.get_param_value("follow") != "0";
      auto cursor = std::make_shared<std::uint64_t>(last);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, cursor, follow](std::size_t, httplib::DataSink& sink) {
        const auto events = follow ? agent.events().wait_since(*cursor, std::chrono::milliseconds(250))
                                   : agent.events().since(*cursor);
        for (const auto& ev : events) {
          std::string frame = "id: " + std::to_string(ev.id) + "\nevent: " +
                              std::string(progress_kind_name(ev.kind)) + "\ndata: " + event_to_json(ev).dump() +
                              "\n\n";
          if (!sink.write(frame.data(), frame.size())) return false;
          *cursor = ev.id;
        }
        if (!follow || stopping) {
          sink.done();
          return true;
        }
        if (events.empty()) {
          static const std::string keepalive = ": keepalive\n\n";
          if (!sink.write(keepalive.data(), keepalive.size())) return false;
        }
        return sink.is_writable();
      });
    });
  }
};

ControlApi::ControlApi(ClientAgent& agent, std::string bind_address, std::uint16_t port)
    : impl_(std::make_unique<Impl>(agent)), bind_address_(std::move(bind_address)), port_(port) {
  impl_->routes();
}

ControlApi::~ControlApi() { stop(); }

std::uint16_t ControlApi::start() {
  int bound;
  if (port_ == 0) {
    bound = impl_->http.bind_to_any_port(bind_address_);
  } else {
    bound = impl_->http.bind_to_port(bind_address_, port_) ? port_ : -1;
  }
  if (bound <= 0) {
    throw Error(ErrorCode::BindFailed, "control API cannot bind " + bind_address_ + ":" + std::to_string(port_));
  }
  port_ = static_cast<std::uint16_t>(bound);
  thread_ = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return port_;
}

void ControlApi::stop() {
  impl_->stopping = true;
  impl_->http.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace raft
