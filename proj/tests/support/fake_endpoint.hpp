// In-process HTTP model endpoints for client tests: a deterministic linear
// scorer over CSV rows, plus knobs for flakiness, latency and request gauges.
#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "fairlens/tabular.hpp"
#include "fairlens/util.hpp"

namespace testsupport {

class FakeEndpoint {
 public:
  // scorer maps one CSV request line (already split) to one response line.
  using LineScorer = std::function<std::string(const std::vector<std::string>&)>;

  explicit FakeEndpoint(LineScorer scorer) : scorer_(std::move(scorer)) {
    server_.Post("/invocations", [this](const httplib::Request& req,
                                        httplib::Response& res) {
      const int now_in_flight = ++in_flight_;
      int seen = max_in_flight_.load();
      while (now_in_flight > seen &&
             !max_in_flight_.compare_exchange_weak(seen, now_in_flight)) {
      }
      ++total_requests_;

      if (fail_per_body_ > 0) {
        std::lock_guard<std::mutex> lock(mutex_);
        const int failures = ++failures_by_body_[req.body];
        if (failures <= fail_per_body_) {
          res.status = 503;
          --in_flight_;
          return;
        }
      }
      if (respond_status_ != 200) {
        res.status = respond_status_;
        --in_flight_;
        return;
      }
      if (latency_ms_ > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(latency_ms_));
      }

      std::string body;
      std::size_t pos = 0;
      while (pos < req.body.size()) {
        const std::size_t nl = req.body.find('\n', pos);
        const std::string line = req.body.substr(
            pos, nl == std::string::npos ? req.body.size() - pos : nl - pos);
        pos = (nl == std::string::npos) ? req.body.size() : nl + 1;
        if (line.empty()) continue;
        body += scorer_(fairlens::split_csv_fields(line));
        body += "\n";
      }
      res.set_content(body, "text/csv");
      --in_flight_;
    });

    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~FakeEndpoint() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string url() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/invocations";
  }

  void fail_each_body_times(int n) { fail_per_body_ = n; }
  void respond_with_status(int status) { respond_status_ = status; }
  void set_latency_ms(int ms) { latency_ms_ = ms; }

  int max_in_flight() const { return max_in_flight_.load(); }
  int total_requests() const { return total_requests_.load(); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  LineScorer scorer_;

  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  std::atomic<int> total_requests_{0};
  int fail_per_body_ = 0;
  int respond_status_ = 200;
  int latency_ms_ = 0;
  std::mutex mutex_;
  std::map<std::string, int> failures_by_body_;
};

}  // namespace testsupport
