// Operator surface for the subgraph matching engine: ingest graphs, build
// partitions, print plans, run strategies, and verify against the reference
// enumerator.

#include <CLI11.hpp>

#include <sys/resource.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <thread>

#include "sgm/graph.hpp"
#include "sgm/oracle.hpp"
#include "sgm/partition.hpp"
#include "sgm/plan.hpp"
#include "sgm/strategies.hpp"

using namespace sgm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitTimeout = 10;
constexpr int kExitOom = 11;
constexpr int kExitVerifyFail = 12;

std::uint64_t peak_rss_bytes() {
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  return static_cast<std::uint64_t>(ru.ru_maxrss) * 1024ull;
}

DataGraph load_graph(const std::string& path, const std::string& labels_path, bool relabel) {
  if (looks_like_csr_file(path)) {
    DataGraph g = load_csr_file(path);
    if (!labels_path.empty()) {
      std::ifstream ls(labels_path);
      if (!ls) throw ParseError("cannot open " + labels_path);
      g = apply_labels(g, ls);
    }
    return g;
  }
  std::ifstream es(path);
  if (!es) throw ParseError("cannot open " + path);
  std::optional<std::ifstream> ls;
  if (!labels_path.empty()) {
    ls.emplace(labels_path);
    if (!*ls) throw ParseError("cannot open " + labels_path);
  }
  auto loaded = load_edge_list(es, ls ? &*ls : nullptr);
  if (!relabel) return std::move(loaded.graph);
  return relabel_by_degree(loaded.graph).first;
}

QueryGraph load_query(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open " + path);
  return parse_query(is);
}

PartitionMode parse_partition_mode(const std::string& s) {
  if (s == "hash") return PartitionMode::Hash;
  if (s == "tri") return PartitionMode::Triangle;
  if (s == "tri-ordered") return PartitionMode::TriangleOrdered;
  throw ConfigError("unknown partition mode: " + s);
}

// Watchdog enforcing --time-limit / --mem-limit on a running query.
class Watchdog {
 public:
  Watchdog(AbortFlag& abort, std::uint64_t time_limit_ms, std::uint64_t mem_limit_mb)
      : abort_(abort), time_limit_ms_(time_limit_ms), mem_limit_mb_(mem_limit_mb) {
    if (time_limit_ms_ == 0 && mem_limit_mb_ == 0) return;
    thread_ = std::thread([this] { loop(); });
  }
  ~Watchdog() {
    done_.store(true);
    if (thread_.joinable()) thread_.join();
  }

 private:
  void loop() {
    auto start = std::chrono::steady_clock::now();
    while (!done_.load()) {
      if (time_limit_ms_ > 0) {
        auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - start)
                      .count();
        if (ms > static_cast<long long>(time_limit_ms_)) {
          abort_.raise(ResourceCapExceeded::Kind::Time, "time limit exceeded");
          return;
        }
      }
      if (mem_limit_mb_ > 0 && peak_rss_bytes() > mem_limit_mb_ * 1024ull * 1024ull) {
        abort_.raise(ResourceCapExceeded::Kind::Memory, "memory limit exceeded");
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

  AbortFlag& abort_;
  std::uint64_t time_limit_ms_, mem_limit_mb_;
  std::atomic<bool> done_{false};
  std::thread thread_;
};

struct RunFlags {
  std::string strategy = "woptjoin";
  bool batching = true;
  bool trindexing = false;
  bool compression = false;
  std::uint64_t batch_size = 1'000'000;
  std::uint32_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::string partition = "";
  std::string cost_model = "er";
  bool enumerate = false;
  std::string output;
  std::uint64_t time_limit_ms = 0;
  std::uint64_t mem_limit_mb = 0;
  std::string hosts;  // comma-separated host:port list (multi-process)
  std::uint32_t rank = 0;
  std::string plan_file;
  std::string partition_dir;  // restore dumped partitions instead of building
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--strategy", f.strategy, "binjoin|woptjoin|shrcube|fullrep")
      ->default_val(f.strategy);
  cmd->add_flag("--batching,!--no-batching", f.batching, "split work by batching-vertex ranges");
  cmd->add_flag("--trindexing", f.trindexing, "use the triangle partition and clique units/groups");
  cmd->add_flag("--compression", f.compression, "keep trailing matches as candidate arrays");
  cmd->add_option("--batch-size", f.batch_size, "batching vertex ids per batch");
  cmd->add_option("--workers", f.workers, "total workers");
  cmd->add_option("--partition", f.partition, "hash|tri|tri-ordered (default from flags)");
  cmd->add_option("--cost-model", f.cost_model, "er|degree");
  cmd->add_flag("--enumerate", f.enumerate, "write matches instead of counting");
  cmd->add_option("--output", f.output, "result file base (enumerate mode)");
  cmd->add_option("--time-limit", f.time_limit_ms, "wall clock cap in milliseconds");
  cmd->add_option("--mem-limit", f.mem_limit_mb, "peak RSS cap in MiB");
  cmd->add_option("--hosts", f.hosts, "host:port list; enables TCP deployment");
  cmd->add_option("--rank", f.rank, "this process's rank in --hosts");
  cmd->add_option("--plan", f.plan_file, "replay a dumped binjoin plan");
  cmd->add_option("--partition-dir", f.partition_dir, "restore partitions dumped by `partition`");
}

StrategyConfig to_config(const RunFlags& f) {
  StrategyConfig cfg;
  auto s = strategy_from_name(f.strategy);
  if (!s) throw ConfigError("unknown strategy: " + f.strategy);
  cfg.strategy = *s;
  cfg.batching = f.batching;
  cfg.trindexing = f.trindexing;
  cfg.compression = f.compression;
  cfg.batch_size = f.batch_size;
  cfg.enumerate = f.enumerate;
  cfg.output_path = f.output;
  cfg.cost_mode = f.cost_model == "degree" ? CostMode::DegreeStats : CostMode::ER;
  if (!f.partition.empty())
    cfg.ordered_triangle_partition = parse_partition_mode(f.partition) == PartitionMode::TriangleOrdered;
  return cfg;
}

std::unique_ptr<Comm> make_comm(const RunFlags& f) {
  if (f.hosts.empty()) return std::make_unique<ThreadComm>(f.workers);
  std::vector<std::string> endpoints;
  std::stringstream ss(f.hosts);
  std::string tok;
  while (std::getline(ss, tok, ',')) endpoints.push_back(tok);
  return std::make_unique<TcpComm>(f.rank, endpoints, f.workers);
}

void print_metrics_csv(std::ostream& os, const std::string& query, const StrategyConfig& cfg,
                       const RunResult& r) {
  std::string opts;
  if (cfg.opts_apply()) {
    opts += cfg.batching ? "b" : "";
    opts += cfg.trindexing ? "t" : "";
    opts += cfg.compression ? "c" : "";
  }
  if (opts.empty()) opts = "-";
  double t = 0, t_comp = 0;
  std::uint64_t max_recv = 0;
  for (const auto& c : r.workers) {
    if (c.total_seconds >= t) {
      t = c.total_seconds;
      t_comp = c.comp_seconds;
    }
    max_recv = std::max(max_recv, c.recv_integers);
  }
  os << "query,strategy,opts,T,T_comp,T_comm,max_recv_integers,peak_mem,result_count\n";
  os << query << "," << strategy_name(cfg.strategy) << "," << opts << "," << t << "," << t_comp
     << "," << (t - t_comp) << "," << max_recv << "," << peak_rss_bytes() << "," << r.count
     << "\n";
}

int cmd_ingest(const std::string& in, const std::string& labels, const std::string& out) {
  DataGraph g = load_graph(in, labels, true);
  save_csr_file(g, out);
  auto s = stats(g);
  std::cerr << "ingested N=" << s.n << " M=" << s.m << " avg_deg=" << s.avg_degree
            << " max_deg=" << s.max_degree << (g.has_labels() ? " labelled" : "") << "\n";
  return kExitOk;
}

int cmd_stats(const std::string& in) {
  DataGraph g = load_graph(in, "", false);
  auto s = stats(g);
  std::cout << "N=" << s.n << " M=" << s.m << " avg_degree=" << s.avg_degree
            << " max_degree=" << s.max_degree << "\n";
  if (!s.label_frequencies.empty()) {
    std::cout << "labels:";
    for (auto [l, c] : s.label_frequencies) std::cout << " " << l << ":" << c;
    std::cout << "\n";
  }
  return kExitOk;
}

int cmd_partition(const std::string& in, std::uint32_t w, const std::string& mode,
                  const std::string& outdir) {
  DataGraph g = load_graph(in, "", false);
  PartitionConfig cfg{w, parse_partition_mode(mode), std::nullopt};
  auto parts = GraphPartition::build(g, cfg);
  std::filesystem::create_directories(outdir);
  auto sizes = partition_sizes(parts);
  for (std::uint32_t i = 0; i < w; ++i) {
    std::ofstream os(outdir + "/part-" + std::to_string(i) + ".bin", std::ios::binary);
    parts[i].save(os);
    std::cout << "worker " << i << ": owned_entries=" << sizes[i].owned_entries
              << " extra_edges=" << sizes[i].extra_edges << "\n";
  }
  return kExitOk;
}

int cmd_plan(const std::string& graph_path, const std::string& query_path, const RunFlags& f,
             const std::string& dump_path) {
  DataGraph g = load_graph(graph_path, "", false);
  QueryGraph q = load_query(query_path);
  CostModel model =
      f.cost_model == "degree" ? CostModel::degree_stats(g) : CostModel::er(stats(g));
  auto strategy = strategy_from_name(f.strategy);
  if (!strategy) throw ConfigError("unknown strategy: " + f.strategy);
  switch (*strategy) {
    case Strategy::BinJoin: {
      auto plan = optimal_binjoin_plan(q, f.trindexing ? UnitMode::CliqueAndStar : UnitMode::Star,
                                       model);
      select_batching_vertex(plan);
      if (f.compression) annotate_binjoin_compression(q, plan);
      print_binjoin_plan(q, plan, std::cout);
      if (!dump_path.empty()) {
        std::ofstream os(dump_path);
        dump_binjoin_plan(plan, os);
      }
      break;
    }
    case Strategy::WOptJoin: {
      auto order = f.compression ? choose_wopt_order(q) : greedy_matching_order(q);
      if (!f.compression) order.compressed.assign(order.order.size(), false);
      print_wopt_order(q, order, std::cout);
      if (!dump_path.empty()) {
        std::ofstream os(dump_path);
        dump_wopt_order(order, os);
      }
      break;
    }
    case Strategy::ShrCube: {
      auto shares = hypercube_shares(q, f.workers, model);
      std::cout << "shares:";
      for (auto b : shares.buckets) std::cout << " " << b;
      std::cout << "  (uses " << shares.used_workers() << "/" << f.workers << " workers)\n";
      break;
    }
    case Strategy::FullRep: {
      auto order = crystal_order(q);
      print_wopt_order(q, order, std::cout);
      break;
    }
  }
  return kExitOk;
}

int cmd_run(const std::string& graph_path, const std::string& query_path,
            const std::string& labels, RunFlags& f) {
  DataGraph g = load_graph(graph_path, labels, !looks_like_csr_file(graph_path));
  QueryGraph q = load_query(query_path);
  StrategyConfig cfg = to_config(f);
  if (!f.plan_file.empty()) {
    std::ifstream is(f.plan_file);
    if (!is) throw ParseError("cannot open " + f.plan_file);
    std::string kind;
    is >> kind;
    is.seekg(0);
    if (kind == "wopt")
      cfg.wopt_order_override = std::make_shared<WOptOrder>(parse_wopt_order(q, is));
    else
      cfg.binjoin_plan_override = std::make_shared<BinJoinPlan>(parse_binjoin_plan(is));
  }
  auto comm = make_comm(f);
  std::vector<GraphPartition> restored;
  if (!f.partition_dir.empty()) {
    for (std::uint32_t i = 0; i < f.workers; ++i) {
      std::ifstream is(f.partition_dir + "/part-" + std::to_string(i) + ".bin", std::ios::binary);
      if (!is) throw ParseError("missing partition file for worker " + std::to_string(i));
      restored.push_back(GraphPartition::load(is));
    }
  }
  Watchdog dog(comm->abort_flag(), f.time_limit_ms, f.mem_limit_mb);
  try {
    auto result = run_query(*comm, q, g, cfg, nullptr, restored.empty() ? nullptr : &restored);
    const bool primary = f.hosts.empty() || f.rank == 0;
    if (primary) print_metrics_csv(std::cout, query_path, cfg, result);
    return kExitOk;
  } catch (const ResourceCapExceeded& e) {
    std::cerr << (e.kind == ResourceCapExceeded::Kind::Time ? "OT: " : "OOM: ") << e.what()
              << "\n";
    return e.kind == ResourceCapExceeded::Kind::Time ? kExitTimeout : kExitOom;
  }
}

int cmd_verify(const std::string& graph_path, const std::string& queries_dir,
               std::uint32_t trials, std::uint64_t seed, std::uint32_t workers,
               bool inject_fault, double fixed_p) {
  std::vector<std::pair<std::string, DataGraph>> graphs;
  if (!graph_path.empty() && graph_path != "-")
    graphs.emplace_back(graph_path, load_graph(graph_path, "", false));
  std::mt19937_64 rng(seed);
  for (std::uint32_t t = 0; t < trials; ++t) {
    double p = fixed_p > 0 ? fixed_p : ((t % 3 == 0) ? 0.1 : (t % 3 == 1 ? 0.2 : 0.3));
    std::uint64_t s = rng();
    std::mt19937_64 grng(s);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<std::pair<VertexId, VertexId>> edges;
    for (VertexId u = 0; u < 30; ++u)
      for (VertexId v = u + 1; v < 30; ++v)
        if (dist(grng) < p) edges.emplace_back(u, v);
    graphs.emplace_back("G(30," + std::to_string(p) + ")#" + std::to_string(t),
                        DataGraph::from_edges(30, edges));
  }

  std::vector<std::string> query_files;
  for (auto& e : std::filesystem::directory_iterator(queries_dir))
    if (e.path().extension() == ".q") query_files.push_back(e.path().string());
  std::sort(query_files.begin(), query_files.end());
  if (query_files.empty()) throw ConfigError("no .q files in " + queries_dir);

  std::uint64_t pass = 0, fail = 0;
  bool fault_armed = inject_fault;
  for (auto& [gname, g] : graphs) {
    for (auto& qf : query_files) {
      QueryGraph q = load_query(qf);
      auto oracle = brute_force(q, g, !q.labelled(), q.labelled());
      for (auto strat :
           {Strategy::BinJoin, Strategy::WOptJoin, Strategy::ShrCube, Strategy::FullRep}) {
        const bool opts = strat == Strategy::BinJoin || strat == Strategy::WOptJoin;
        for (int b = 0; b <= (opts ? 1 : 0); ++b)
          for (int t = 0; t <= (opts ? 1 : 0); ++t)
            for (int c = 0; c <= (opts ? 1 : 0); ++c) {
              StrategyConfig cfg;
              cfg.strategy = strat;
              cfg.batching = b;
              cfg.trindexing = t;
              cfg.compression = c;
              cfg.batch_size = 11;
              if (fault_armed) {
                cfg.inject_fault = true;
                fault_armed = false;
              }
              RunHooks hooks;
              hooks.collect_matches = true;
              ThreadComm comm(workers);
              auto r = run_query(comm, q, g, cfg, &hooks);
              auto diff = compare(oracle, r.matches);
              if (diff.equal) {
                pass++;
              } else {
                fail++;
                std::cout << "FAIL " << gname << " " << std::filesystem::path(qf).stem().string()
                          << " " << strategy_name(strat) << " b=" << b << " t=" << t
                          << " c=" << c << "\n  " << diff.to_string() << "\n";
              }
            }
      }
    }
  }
  std::cout << (fail == 0 ? "PASS" : "FAIL") << " (" << pass << " passed, " << fail
            << " failed)\n";
  return fail == 0 ? kExitOk : kExitVerifyFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distributed subgraph matching engine"};
  app.require_subcommand(1);

  std::string in, labels, out = "graph.csr", queries_dir = "queries";
  std::string graph_path, query_path, dump_path, partition_mode = "hash", outdir = "parts";
  std::uint32_t trials = 0, workers = std::max(1u, std::thread::hardware_concurrency());
  std::uint64_t seed = 42;
  double fixed_p = 0.0;
  bool inject_fault = false;
  RunFlags flags;

  auto* ingest = app.add_subcommand("ingest", "edge list or CSR -> degree-relabeled binary CSR");
  ingest->add_option("input", in)->required();
  ingest->add_option("--labels", labels, "vertex label text file");
  ingest->add_option("-o,--output", out, "output CSR path");

  auto* stats_cmd = app.add_subcommand("stats", "print graph statistics");
  stats_cmd->add_option("input", in)->required();

  auto* part = app.add_subcommand("partition", "build and dump per-worker partitions");
  part->add_option("input", in)->required();
  part->add_option("--workers", workers);
  part->add_option("--partition", partition_mode, "hash|tri|tri-ordered");
  part->add_option("-o,--output", outdir, "output directory");

  auto* plan = app.add_subcommand("plan", "print the execution plan for a query");
  plan->add_option("graph", graph_path)->required();
  plan->add_option("query", query_path)->required();
  plan->add_option("--plan-dump", dump_path, "write a machine-readable plan");
  add_run_flags(plan, flags);

  auto* run = app.add_subcommand("run", "execute a query and print metrics CSV");
  run->add_option("graph", graph_path)->required();
  run->add_option("query", query_path)->required();
  run->add_option("--labels", labels, "vertex label text file");
  add_run_flags(run, flags);

  auto* verify = app.add_subcommand("verify", "run every strategy x flag combo vs the oracle");
  verify->add_option("graph", graph_path, "graph path or '-' for seeded graphs only")->required();
  verify->add_option("--queries", queries_dir, "query corpus directory");
  verify->add_option("--trials", trials, "number of seeded random graphs");
  verify->add_option("--seed", seed);
  verify->add_option("--workers", workers);
  verify->add_option("--p", fixed_p, "edge density for seeded graphs (default: cycle 0.1/0.2/0.3)");
  verify->add_flag("--inject-fault", inject_fault, "drop one tuple in the first run (self-test)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) return cmd_ingest(in, labels, out);
    if (stats_cmd->parsed()) return cmd_stats(in);
    if (part->parsed()) return cmd_partition(in, workers, partition_mode, outdir);
    if (plan->parsed()) return cmd_plan(graph_path, query_path, flags, dump_path);
    if (run->parsed()) return cmd_run(graph_path, query_path, labels, flags);
    if (verify->parsed())
      return cmd_verify(graph_path, queries_dir, trials, seed, workers, inject_fault, fixed_p);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
