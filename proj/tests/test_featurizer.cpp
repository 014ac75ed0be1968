#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "torml/featurizer.hpp"
#include "torml/random.hpp"

using namespace torml;

namespace {

FlowTrace flow_of(std::initializer_list<std::pair<double, char>> pkts) {
  FlowTrace f;
  for (auto [t, d] : pkts)
    f.packets.push_back(
        {t, d == 'o' ? Direction::Outgoing : Direction::Incoming});
  return f;
}

FlowTrace random_flow(Rng& rng, int max_pkts = 120) {
  FlowTrace f;
  const int n = 1 + int(rng.below(max_pkts));
  double t = 0;
  for (int i = 0; i < n; ++i) {
    t += rng.uniform() * 0.8;
    f.packets.push_back(
        {t, rng.uniform() < 0.5 ? Direction::Outgoing : Direction::Incoming});
  }
  return f;
}

TorConnRecord conn(double start, double duration,
                   ConnState state = ConnState::Established) {
  TorConnRecord c;
  c.start = start;
  c.duration = duration;
  c.state = state;
  return c;
}

}  // namespace

TEST_CASE("connection features of a small outgoing-only flow") {
  auto f = connection_features(flow_of({{0, 'o'}, {1, 'o'}, {2, 'o'}, {3, 'o'}}));
  REQUIRE(int(f.size()) == 175);
  CHECK(f[24] == 4.0);   // total packets
  CHECK(f[25] == 4.0);   // outgoing
  CHECK(f[26] == 0.0);   // incoming
  CHECK(f[44] == 0.0);   // percent incoming
  CHECK(f[45] == 100.0);
  CHECK(f[16] == Catch::Approx(0.75));  // p25 of outgoing packet times
  CHECK(f[17] == Catch::Approx(1.5));   // p50
  // Inter-arrival gaps are all 1s.
  CHECK(f[0] == 1.0);
  CHECK(f[1] == 1.0);
  CHECK(f[2] == 0.0);
  CHECK(f[3] == 1.0);
  // Incoming lists are empty: zero convention.
  for (int i = 8; i <= 11; ++i) CHECK(f[i] == 0.0);
  CHECK(f[36] == 0.0);
}

TEST_CASE("single packet flow hits the empty-aggregate conventions") {
  auto f = connection_features(flow_of({{0.4, 'i'}}));
  for (int i = 0; i <= 11; ++i) CHECK(f[i] == 0.0);
  CHECK(f[24] == 1.0);
  CHECK(f[44] == 100.0);
  CHECK(f[45] == 0.0);
}

TEST_CASE("padded indices stay zero and vectors stay finite") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto f = connection_features(random_flow(rng));
    for (int i = 143; i <= 174; ++i) CHECK(f[i] == 0.0);
    for (double v : f) CHECK(std::isfinite(v));
    CHECK(f[44] + f[45] == Catch::Approx(100.0));
  }
}

TEST_CASE("time percentile features match the percentile op directly") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    auto flow = random_flow(rng);
    auto f = connection_features(flow);
    std::vector<double> total, out, in;
    for (const auto& p : flow.packets) {
      total.push_back(p.time);
      (p.direction == Direction::Outgoing ? out : in).push_back(p.time);
    }
    const double q[4] = {25, 50, 75, 100};
    for (int k = 0; k < 4; ++k) {
      CHECK(f[12 + k] == percentile(total, q[k]));
      if (!out.empty()) CHECK(f[16 + k] == percentile(out, q[k]));
      if (!in.empty()) CHECK(f[20 + k] == percentile(in, q[k]));
    }
  }
}

TEST_CASE("empty flow is rejected, unordered times are rejected") {
  CHECK_THROWS(connection_features(FlowTrace{}));
  FlowTrace bad;
  bad.packets = {{2.0, Direction::Outgoing}, {1.0, Direction::Outgoing}};
  CHECK_THROWS(connection_features(bad));
}

TEST_CASE("host features on a three-connection session") {
  HostSession s;
  s.connections = {conn(100, 10), conn(200, 20, ConnState::S0),
                   conn(300, 33.42, ConnState::REJ)};
  auto f = host_features(s);
  REQUIRE(int(f.size()) == 40);
  CHECK(f[175 - 175] == 3.0);
  CHECK(f[176 - 175] == 2.0);
  CHECK(f[183 - 175] == Catch::Approx(21.14));
  CHECK(f[184 - 175] == 10.0);
  CHECK(f[185 - 175] == Catch::Approx(33.42));
  CHECK(f[186 - 175] == 3.0);    // all under a minute
  CHECK(f[187 - 175] == 100.0);  // start gaps 100, 100
  // Observation span runs from the first start to the last end.
  CHECK(f[177 - 175] == Catch::Approx(3.0 / 233.42));
}

TEST_CASE("empty session yields zeros for the aggregate block") {
  HostSession s;
  s.dns_nxdomain = 7;
  auto f = host_features(s);
  for (int i = 175; i <= 205; ++i) CHECK(f[i - 175] == 0.0);
  CHECK(f[206 - 175] == 7.0);
}

TEST_CASE("port statistics distinguish non-standard ports") {
  HostSession s;
  auto c = [&](int port) {
    TorConnRecord r;
    r.dest_port = port;
    s.connections.push_back(r);
  };
  c(443);
  c(443);
  c(9001);
  c(8333);
  c(8333);
  c(4444);
  auto f = host_features(s);
  CHECK(f[179 - 175] == 4.0);  // distinct ports
  CHECK(f[180 - 175] == 443.0);
  CHECK(f[181 - 175] == 2.0);  // distinct non-standard
  CHECK(f[182 - 175] == 8333.0);
}

TEST_CASE("mode ties resolve to the smallest value") {
  HostSession s;
  TorConnRecord a, b;
  a.pkts_sent = 9;
  b.pkts_sent = 4;
  s.connections = {a, b};
  auto f = host_features(s);
  CHECK(f[199 - 175] == 4.0);
}

TEST_CASE("featurize composes the two halves") {
  HostSession s;
  s.connections = {conn(0, 12)};
  s.flows.push_back(flow_of({{0, 'o'}, {0.5, 'i'}, {1.5, 'o'}}));
  auto v = featurize(s);
  REQUIRE(int(v.size()) == 215);
  auto conn_part = connection_features(s.flows[0]);
  auto host_part = host_features(s);
  for (int i = 0; i < 175; ++i) CHECK(v[i] == conn_part[i]);
  for (int i = 0; i < 40; ++i) CHECK(v[175 + i] == host_part[i]);

  // Locality: only the touched counter changes.
  HostSession s2 = s;
  s2.dns_nxdomain = 3;
  auto v2 = featurize(s2);
  for (int i = 0; i < 215; ++i) CHECK(v2[i] == (i == 206 ? 3.0 : v[i]));

  CHECK(featurize(s) == v);  // deterministic

  HostSession empty;
  CHECK_THROWS(featurize(empty));
}

TEST_CASE("featurize merges flows by time") {
  HostSession s;
  s.connections = {conn(0, 5)};
  s.flows.push_back(flow_of({{0.0, 'o'}, {2.0, 'o'}}));
  s.flows.push_back(flow_of({{1.0, 'i'}}));
  auto v = featurize(s);
  CHECK(v[24] == 3.0);
  CHECK(v[35] == 1.0);  // outgoing packets sit at merged positions 0 and 2
  CHECK(v[36] == 1.0);  // incoming packet at merged position 1
}

TEST_CASE("monotone duration response") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    HostSession s;
    const int n = 1 + int(rng.below(6));
    for (int i = 0; i < n; ++i)
      s.connections.push_back(conn(rng.uniform() * 100, rng.uniform() * 50));
    HostSession longer = s;
    for (auto& c : longer.connections) c.duration += 1.0 + rng.uniform() * 5;
    auto f1 = host_features(s), f2 = host_features(longer);
    CHECK(f2[183 - 175] > f1[183 - 175]);
    CHECK(f2[185 - 175] >= f1[185 - 175]);
  }
}

TEST_CASE("session log round trip") {
  const auto path =
      (std::filesystem::temp_directory_path() / "torml_sessions.jsonl")
          .string();
  std::ofstream out(path);
  out << R"({"host_id":"h1","connections":[{"start":0,"duration":12,"pkts_sent":40,"pkts_recv":60,"bytes_sent":2000,"bytes_recv":9000,"dest_port":443,"state":"established"}],"flows":[[[0,"out"],[0.5,"in"]]],"dns_nxdomain":2,"labels":["Ransomware"]})"
      << "\n";
  out << R"({"host_id":"h2","connections":[{"start":5,"duration":1,"state":"S0"}],"flows":[],"labels":["Downloader","Grayware"]})"
      << "\n";
  out.close();

  auto sessions = load_session_log(path);
  REQUIRE(sessions.size() == 2);
  CHECK(sessions[0].host_id == "h1");
  CHECK(sessions[0].connections[0].pkts_recv == 60.0);
  CHECK(sessions[0].flows[0].packets[1].direction == Direction::Incoming);
  CHECK(sessions[0].labels == LabelSet::of({Label::Ransomware}));

  Dataset d = featurize_sessions(sessions);
  CHECK(d.size() == 2);
  CHECK(d.samples[0].source_id == "h1");
  CHECK(d.samples[0].features[206] == 2.0);
  CHECK(d.samples[1].features[176] == 1.0);

  std::ofstream bad(path);
  bad << R"({"host_id":"h3","connections":[{"start":1,"duration":-4}]})"
      << "\n";
  bad.close();
  CHECK_THROWS_WITH(load_session_log(path),
                    Catch::Matchers::ContainsSubstring("line 1"));
  std::remove(path.c_str());
}

TEST_CASE("unlabeled sessions cannot become CSV rows") {
  HostSession s;
  s.connections = {conn(0, 3)};
  CHECK_THROWS(featurize_sessions({s}));
}
