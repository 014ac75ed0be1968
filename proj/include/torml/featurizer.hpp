#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "torml/dataset.hpp"
#include "torml/labels.hpp"
#include "torml/schema.hpp"

namespace torml {

enum class Direction { Outgoing, Incoming };

struct PacketMeta {
  double time = 0.0;  // seconds since flow start
  Direction direction = Direction::Outgoing;
};

struct FlowTrace {
  std::vector<PacketMeta> packets;
};

enum class ConnState { Established, S0, REJ };

struct TorConnRecord {
  double start = 0.0;  // epoch seconds
  double duration = 0.0;
  double pkts_sent = 0.0;
  double pkts_recv = 0.0;
  double bytes_sent = 0.0;
  double bytes_recv = 0.0;
  int dest_port = 443;
  ConnState state = ConnState::Established;
};

struct HostSession {
  std::string host_id;
  std::vector<TorConnRecord> connections;
  std::vector<FlowTrace> flows;
  double dns_nxdomain = 0.0;
  double dns_refused = 0.0;
  double dns_servfail = 0.0;
  double onion_accesses = 0.0;
  double unique_onion_domains = 0.0;
  double rejected_onion_queries = 0.0;
  double onion_domains_total = 0.0;
  double consensus_links = 0.0;
  double tor_keyword_urls = 0.0;
  LabelSet labels;  // optional, taken from the session log when present
};

namespace stats {

// Empty-list conventions: every aggregate of an empty list is 0, std of a
// single value is 0, mode ties resolve to the smallest value.
inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size()));
}

inline double maximum(const std::vector<double>& v) {
  return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}

inline double minimum(const std::vector<double>& v) {
  return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end());
}

inline double pct(const std::vector<double>& v, double p) {
  return v.empty() ? 0.0 : percentile(v, p);
}

inline double median(const std::vector<double>& v) { return pct(v, 50.0); }

inline double mode(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  std::map<double, int> freq;
  for (double x : v) ++freq[x];
  double best = v[0];
  int best_n = 0;
  for (const auto& [value, n] : freq)
    if (n > best_n) {  // map iterates ascending, so ties keep the smallest
      best = value;
      best_n = n;
    }
  return best;
}

inline double sum(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s;
}

}  // namespace stats

/// Connection-level features (indices 0-174) of one flow.
inline std::vector<double> connection_features(const FlowTrace& flow) {
  if (flow.packets.empty())
    throw std::invalid_argument("cannot featurize an empty flow");
  for (std::size_t i = 1; i < flow.packets.size(); ++i)
    if (flow.packets[i].time < flow.packets[i - 1].time)
      throw std::invalid_argument("packet times must be non-decreasing");

  std::vector<double> f(kNumConnectionFeatures, 0.0);
  const auto& pkts = flow.packets;
  const int n = static_cast<int>(pkts.size());

  std::vector<double> times, out_times, in_times;
  std::vector<double> out_order, in_order;
  for (int i = 0; i < n; ++i) {
    times.push_back(pkts[i].time);
    if (pkts[i].direction == Direction::Outgoing) {
      out_times.push_back(pkts[i].time);
      out_order.push_back(double(i));
    } else {
      in_times.push_back(pkts[i].time);
      in_order.push_back(double(i));
    }
  }

  auto gaps = [](const std::vector<double>& t) {
    std::vector<double> g;
    for (std::size_t i = 1; i < t.size(); ++i) g.push_back(t[i] - t[i - 1]);
    return g;
  };
  const std::vector<double> ia_lists[3] = {gaps(times), gaps(out_times),
                                           gaps(in_times)};
  for (int k = 0; k < 3; ++k) {
    f[4 * k + 0] = stats::maximum(ia_lists[k]);
    f[4 * k + 1] = stats::mean(ia_lists[k]);
    f[4 * k + 2] = stats::stddev(ia_lists[k]);
    f[4 * k + 3] = stats::pct(ia_lists[k], 75);
  }

  const std::vector<double>* time_lists[3] = {&times, &out_times, &in_times};
  static constexpr double kQuartiles[4] = {25, 50, 75, 100};
  for (int k = 0; k < 3; ++k)
    for (int q = 0; q < 4; ++q)
      f[12 + 4 * k + q] = stats::pct(*time_lists[k], kQuartiles[q]);

  const int n_out = static_cast<int>(out_times.size());
  const int n_in = static_cast<int>(in_times.size());
  f[24] = n;
  f[25] = n_out;
  f[26] = n_in;

  const int head = std::min(n, 30);
  for (int i = 0; i < head; ++i)
    (pkts[i].direction == Direction::Outgoing ? f[27] : f[28]) += 1.0;
  for (int i = std::max(0, n - 30); i < n; ++i)
    (pkts[i].direction == Direction::Outgoing ? f[29] : f[30]) += 1.0;

  // Outgoing count per consecutive 20-packet chunk (last chunk may be short).
  std::vector<double> concentration;
  for (int start = 0; start < n; start += 20) {
    double c = 0;
    for (int i = start; i < std::min(n, start + 20); ++i)
      c += pkts[i].direction == Direction::Outgoing;
    concentration.push_back(c);
  }
  f[31] = stats::stddev(concentration);
  f[32] = stats::mean(concentration);
  f[39] = stats::median(concentration);
  f[43] = stats::maximum(concentration);

  // Packet count per whole second from flow start to the last packet.
  const int n_seconds = static_cast<int>(std::floor(times.back())) + 1;
  std::vector<double> pps(n_seconds, 0.0);
  for (double t : times) pps[static_cast<int>(std::floor(t))] += 1.0;
  f[33] = stats::mean(pps);
  f[34] = stats::stddev(pps);
  f[40] = stats::median(pps);
  f[41] = stats::minimum(pps);
  f[42] = stats::maximum(pps);

  f[35] = stats::mean(out_order);
  f[36] = stats::mean(in_order);
  f[37] = stats::stddev(out_order);
  f[38] = stats::stddev(in_order);

  f[44] = 100.0 * double(n_in) / double(n);
  f[45] = 100.0 * double(n_out) / double(n);

  // Alternative concentration: the chunk list sum-pooled into the 71 spans
  // of the fixed layout, zero-padded when there are fewer chunks than spans.
  constexpr int kAltSpans = 71;
  const int n_chunks = static_cast<int>(concentration.size());
  if (n_chunks <= kAltSpans) {
    for (int i = 0; i < n_chunks; ++i) f[46 + i] = concentration[i];
  } else {
    for (int i = 0; i < n_chunks; ++i)
      f[46 + (i * kAltSpans) / n_chunks] += concentration[i];
  }

  // Alternative packets per second: first 21 one-second buckets.
  for (int s = 0; s < std::min(n_seconds, 21); ++s) f[117 + s] = pps[s];

  auto range_sum = [&](int lo, int hi) {
    double s = 0;
    for (int i = lo; i <= hi; ++i) s += f[i];
    return s;
  };
  f[138] = range_sum(46, 116);
  f[139] = range_sum(117, 137);
  f[140] = range_sum(0, 11);
  f[141] = range_sum(12, 23);
  f[142] = range_sum(24, 26);
  // 143-174 stay zero.
  return f;
}

inline bool is_standard_tor_port(int port) {
  return port == 443 || port == 9001 || port == 9030;
}

/// Host-level features (indices 175-214) of one session.
inline std::vector<double> host_features(const HostSession& session) {
  std::vector<double> f(kNumHostFeatures, 0.0);
  auto set = [&](int index, double v) { f[index - 175] = v; };
  const auto& conns = session.connections;

  set(175, double(conns.size()));

  int failed = 0;
  for (const auto& c : conns)
    failed += (c.state == ConnState::S0 || c.state == ConnState::REJ);
  set(176, failed);

  double span = 0.0;
  if (!conns.empty()) {
    double first = conns[0].start, last_end = conns[0].start + conns[0].duration;
    for (const auto& c : conns) {
      first = std::min(first, c.start);
      last_end = std::max(last_end, c.start + c.duration);
    }
    span = last_end - first;
  }
  set(177, span > 0.0 ? double(conns.size()) / span : 0.0);
  set(178, span > 0.0 ? double(failed) / span : 0.0);

  std::vector<double> ports, nonstandard;
  for (const auto& c : conns) {
    ports.push_back(double(c.dest_port));
    if (!is_standard_tor_port(c.dest_port))
      nonstandard.push_back(double(c.dest_port));
  }
  std::vector<double> unique_ports = ports;
  std::sort(unique_ports.begin(), unique_ports.end());
  unique_ports.erase(std::unique(unique_ports.begin(), unique_ports.end()),
                     unique_ports.end());
  set(179, double(unique_ports.size()));
  set(180, stats::mode(ports));
  std::vector<double> unique_nonstd = nonstandard;
  std::sort(unique_nonstd.begin(), unique_nonstd.end());
  unique_nonstd.erase(
      std::unique(unique_nonstd.begin(), unique_nonstd.end()),
      unique_nonstd.end());
  set(181, double(unique_nonstd.size()));
  set(182, stats::mode(nonstandard));

  std::vector<double> durations;
  for (const auto& c : conns) durations.push_back(c.duration);
  set(183, stats::mean(durations));
  set(184, stats::minimum(durations));
  set(185, stats::maximum(durations));
  int short_conns = 0;
  for (double d : durations) short_conns += (d <= 60.0);
  set(186, short_conns);

  std::vector<double> starts;
  for (const auto& c : conns) starts.push_back(c.start);
  std::sort(starts.begin(), starts.end());
  std::vector<double> start_gaps;
  for (std::size_t i = 1; i < starts.size(); ++i)
    start_gaps.push_back(starts[i] - starts[i - 1]);
  set(187, stats::mean(start_gaps));

  std::vector<double> pkts_total, data_total, data_sent, pkts_sent,
      pkts_recv, data_recv;
  for (const auto& c : conns) {
    pkts_total.push_back(c.pkts_sent + c.pkts_recv);
    data_total.push_back(c.bytes_sent + c.bytes_recv);
    data_sent.push_back(c.bytes_sent);
    pkts_sent.push_back(c.pkts_sent);
    pkts_recv.push_back(c.pkts_recv);
    data_recv.push_back(c.bytes_recv);
  }
  const std::vector<double>* groups[6] = {&pkts_total, &data_total,
                                          &data_sent,  &pkts_sent,
                                          &pkts_recv,  &data_recv};
  for (int g = 0; g < 6; ++g) {
    set(188 + 3 * g, stats::mean(*groups[g]));
    set(189 + 3 * g, stats::median(*groups[g]));
    set(190 + 3 * g, stats::mode(*groups[g]));
  }

  set(206, session.dns_nxdomain);
  set(207, session.dns_refused);
  set(208, session.dns_servfail);
  set(209, session.onion_accesses);
  set(210, session.unique_onion_domains);
  set(211, session.rejected_onion_queries);
  set(212, session.onion_domains_total);
  set(213, session.consensus_links);
  set(214, session.tor_keyword_urls);
  return f;
}

/// Full 215-wide vector: the session's flows merged time-ordered into one
/// packet sequence for the connection-level half, host statistics for the
/// rest.
inline std::vector<double> featurize(const HostSession& session) {
  bool have_packets = false;
  for (const auto& flow : session.flows)
    if (!flow.packets.empty()) have_packets = true;
  if (!have_packets && session.connections.empty())
    throw std::invalid_argument(
        "session has neither flows nor connections: " + session.host_id);

  std::vector<double> out(kNumFeatures, 0.0);
  if (have_packets) {
    FlowTrace merged;
    for (const auto& flow : session.flows)
      merged.packets.insert(merged.packets.end(), flow.packets.begin(),
                            flow.packets.end());
    std::stable_sort(merged.packets.begin(), merged.packets.end(),
                     [](const PacketMeta& a, const PacketMeta& b) {
                       return a.time < b.time;
                     });
    auto conn = connection_features(merged);
    std::copy(conn.begin(), conn.end(), out.begin());
  }
  auto host = host_features(session);
  std::copy(host.begin(), host.end(), out.begin() + kNumConnectionFeatures);
  return out;
}

// ---- Session log (JSON lines) ----

namespace detail {

inline ConnState parse_state(const std::string& s) {
  if (s == "established") return ConnState::Established;
  if (s == "S0") return ConnState::S0;
  if (s == "REJ") return ConnState::REJ;
  throw std::runtime_error("unknown connection state: " + s);
}

inline const char* state_name(ConnState s) {
  switch (s) {
    case ConnState::Established: return "established";
    case ConnState::S0: return "S0";
    case ConnState::REJ: return "REJ";
  }
  return "established";
}

}  // namespace detail

inline HostSession session_from_json(const nlohmann::json& j) {
  HostSession s;
  s.host_id = j.value("host_id", std::string());
  if (j.contains("connections"))
    for (const auto& cj : j.at("connections")) {
      TorConnRecord c;
      c.start = cj.value("start", 0.0);
      c.duration = cj.value("duration", 0.0);
      c.pkts_sent = cj.value("pkts_sent", 0.0);
      c.pkts_recv = cj.value("pkts_recv", 0.0);
      c.bytes_sent = cj.value("bytes_sent", 0.0);
      c.bytes_recv = cj.value("bytes_recv", 0.0);
      c.dest_port = cj.value("dest_port", 443);
      c.state = detail::parse_state(cj.value("state", "established"));
      if (c.duration < 0) throw std::runtime_error("negative duration");
      if (c.dest_port < 1 || c.dest_port > 65535)
        throw std::runtime_error("destination port out of range");
      s.connections.push_back(c);
    }
  if (j.contains("flows"))
    for (const auto& fj : j.at("flows")) {
      FlowTrace flow;
      for (const auto& pj : fj) {
        PacketMeta p;
        p.time = pj.at(0).get<double>();
        const std::string dir = pj.at(1).get<std::string>();
        if (dir == "out")
          p.direction = Direction::Outgoing;
        else if (dir == "in")
          p.direction = Direction::Incoming;
        else
          throw std::runtime_error("packet direction must be 'in' or 'out'");
        flow.packets.push_back(p);
      }
      s.flows.push_back(std::move(flow));
    }
  s.dns_nxdomain = j.value("dns_nxdomain", 0.0);
  s.dns_refused = j.value("dns_refused", 0.0);
  s.dns_servfail = j.value("dns_servfail", 0.0);
  s.onion_accesses = j.value("onion_accesses", 0.0);
  s.unique_onion_domains = j.value("unique_onion_domains", 0.0);
  s.rejected_onion_queries = j.value("rejected_onion_queries", 0.0);
  s.onion_domains_total = j.value("onion_domains_total", 0.0);
  s.consensus_links = j.value("consensus_links", 0.0);
  s.tor_keyword_urls = j.value("tor_keyword_urls", 0.0);
  if (j.contains("labels")) {
    std::string joined;
    for (const auto& l : j.at("labels")) {
      if (!joined.empty()) joined += '|';
      joined += l.get<std::string>();
    }
    s.labels = LabelSet::parse(joined);
  }
  return s;
}

inline std::vector<HostSession> load_session_log(const std::string& path) {
  auto lines = csv::read_lines(path);
  std::vector<HostSession> sessions;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      sessions.push_back(session_from_json(nlohmann::json::parse(lines[i])));
    } catch (const std::exception& e) {
      throw std::runtime_error("session log line " + std::to_string(i + 1) +
                               ": " + e.what());
    }
  }
  return sessions;
}

/// Featurizes a session log into a dataset against the full schema.
/// Sessions without labels are rejected, since the canonical CSV format
/// requires 1-4 labels per row.
inline Dataset featurize_sessions(const std::vector<HostSession>& sessions) {
  Dataset d;
  d.schema = default_schema();
  d.name = "featurized";
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto& s = sessions[i];
    if (s.labels.empty())
      throw std::runtime_error("session " + std::to_string(i + 1) + " (" +
                               s.host_id + ") carries no labels");
    TraceSample t;
    t.features = featurize(s);
    t.labels = s.labels;
    t.source_id = s.host_id;
    d.samples.push_back(std::move(t));
  }
  return d;
}

}  // namespace torml
