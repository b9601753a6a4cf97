#include <catch2/catch_amalgamated.hpp>

#include <thread>

#include "sgm/comm.hpp"
#include "sgm/runtime.hpp"

using namespace sgm;

TEST_CASE("thread channels preserve per-sender order") {
  ThreadComm comm(2);
  for (std::uint32_t i = 0; i < 100; ++i) comm.send(0, 1, 7, {i});
  comm.close_stage(0, 7);
  comm.close_stage(1, 7);
  std::uint32_t expect = 0;
  while (auto m = comm.recv(1, 7)) {
    REQUIRE(m->src == 0);
    REQUIRE(m->payload == std::vector<std::uint32_t>{expect++});
  }
  REQUIRE(expect == 100);
}

TEST_CASE("stage isolation") {
  ThreadComm comm(1);
  comm.send(0, 0, 1, {11});
  comm.send(0, 0, 2, {22});
  comm.close_stage(0, 1);
  comm.close_stage(0, 2);
  auto m2 = comm.recv(0, 2);
  REQUIRE(m2);
  REQUIRE(m2->payload == std::vector<std::uint32_t>{22});
  REQUIRE(!comm.recv(0, 2));
  auto m1 = comm.recv(0, 1);
  REQUIRE(m1);
  REQUIRE(m1->payload == std::vector<std::uint32_t>{11});
}

TEST_CASE("generic shuffle: parity example, conservation, empty stream") {
  ThreadComm comm(2);
  Engine engine(comm);
  std::vector<std::vector<std::vector<std::uint32_t>>> got(2);
  engine.run([&](WorkerCtx& ctx) {
    std::vector<std::vector<std::uint32_t>> mine;
    if (ctx.worker_id == 0) mine = {{0, 10}, {1, 11}, {2, 12}, {3, 13}};
    got[ctx.worker_id] = shuffle_tuples(*ctx.comm, ctx.worker_id, ctx.next_stage(), mine,
                                        [](const std::vector<std::uint32_t>& t) { return t[0]; });
  });
  REQUIRE(got[0].size() == 2);
  REQUIRE(got[1].size() == 2);
  for (auto& t : got[0]) REQUIRE(t[0] % 2 == 0);
  for (auto& t : got[1]) REQUIRE(t[0] % 2 == 1);
  std::uint64_t sent = comm.counters(0).sent_integers + comm.counters(1).sent_integers;
  std::uint64_t recv = comm.counters(0).recv_integers + comm.counters(1).recv_integers;
  REQUIRE(sent == recv);
  REQUIRE(sent > 0);

  // Empty stream: no deliveries, counters unchanged.
  ThreadComm comm2(2);
  Engine engine2(comm2);
  engine2.run([&](WorkerCtx& ctx) {
    auto r = shuffle_tuples(*ctx.comm, ctx.worker_id, ctx.next_stage(), {},
                            [](const std::vector<std::uint32_t>& t) { return t[0]; });
    REQUIRE(r.empty());
  });
  REQUIRE(comm2.counters(0).sent_integers == 0);
  REQUIRE(comm2.counters(0).recv_integers == 0);
}

TEST_CASE("tcp channels deliver across ranks with the same contract") {
  // Two ranks in one process, four workers split two/two.
  std::vector<std::string> endpoints{"127.0.0.1:37411", "127.0.0.1:37412"};
  std::unique_ptr<TcpComm> a, b;
  std::thread ta([&] { a = std::make_unique<TcpComm>(0, endpoints, 4); });
  std::thread tb([&] { b = std::make_unique<TcpComm>(1, endpoints, 4); });
  ta.join();
  tb.join();
  REQUIRE(a->local_workers() == std::vector<std::uint32_t>{0, 1});
  REQUIRE(b->local_workers() == std::vector<std::uint32_t>{2, 3});

  for (std::uint32_t i = 0; i < 50; ++i) a->send(0, 3, 5, {i, i + 1});
  a->close_stage(0, 5);
  a->close_stage(1, 5);
  b->close_stage(2, 5);
  b->close_stage(3, 5);
  std::uint32_t expect = 0;
  while (auto m = b->recv(3, 5)) {
    REQUIRE(m->src == 0);
    REQUIRE(m->payload == std::vector<std::uint32_t>{expect, expect + 1});
    expect++;
  }
  REQUIRE(expect == 50);
  // Drain the other mailboxes so shutdown is clean.
  while (b->recv(2, 5)) {
  }
  while (a->recv(0, 5)) {
  }
  while (a->recv(1, 5)) {
  }
}

TEST_CASE("abort flag unblocks receivers") {
  ThreadComm comm(1);
  std::thread waiter([&] {
    REQUIRE_THROWS_AS(comm.recv(0, 9), ResourceCapExceeded);
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(30));
  comm.abort_flag().raise(ResourceCapExceeded::Kind::Time, "test abort");
  waiter.join();
}
