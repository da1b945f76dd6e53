#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "qgnn/assigner/plan.hpp"
#include "qgnn/assigner/serialize.hpp"
#include "qgnn/assigner/solve.hpp"
#include "qgnn/assigner/trace.hpp"
#include "qgnn/commsim/cost_model.hpp"
#include "qgnn/commsim/exchange.hpp"
#include "qgnn/commsim/sim_clock.hpp"
#include "qgnn/common/errors.hpp"
#include "qgnn/graphcore/coeffs.hpp"
#include "qgnn/graphcore/partition.hpp"
#include "qgnn/quantcodec/codec.hpp"
#include "qgnn/tensorops/aggregate.hpp"
#include "qgnn/tensorops/matrix.hpp"
#include "qgnn/tensorops/model.hpp"
#include "qgnn/tensorops/optim.hpp"
#include "qgnn/trainer/metrics.hpp"

namespace qgnn {

enum class BitMode { kFp, kFixed, kUniform, kAdaptive };
enum class ExecMode { kRoundRobin, kThreads };

struct TrainSettings {
  AggMode agg = AggMode::kGcn;
  std::vector<std::size_t> dims;  // feature dim, hidden dims..., classes
  bool layer_norm = false;
  double dropout = 0.0;
  OptKind opt = OptKind::kAdam;
  double lr = 0.01;

  BitMode bit_mode = BitMode::kAdaptive;
  int fixed_bits = 8;
  double lambda = 0.5;
  std::size_t group_size = 4;
  std::size_t period = 50;

  std::size_t epochs = 200;
  uint64_t seed = 7;
  std::size_t n_parts = 4;
  ExecMode exec = ExecMode::kRoundRobin;

  CostModel cost;  // must cover n_parts devices
  double flop_rate = 2e-10;   // seconds per flop
  double quant_rate = 1.5e-9; // seconds per (de)quantized element

  std::string out_dir;    // empty: keep results in memory only
  std::string run_name = "run";

  std::vector<Matrix> initial_weights;  // optional override
  bool capture_grads = false;           // keep final-epoch summed gradients
};

struct ResolveRecord {
  uint64_t epoch = 0;
  uint64_t version = 0;
  double objective = 0.0;
  double variance_term = 0.0;
  double z_seconds = 0.0;
  double uniform_variance = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::vector<Matrix> final_weights;
  std::vector<ResolveRecord> resolves;
  std::vector<Matrix> last_grads;
  std::map<TensorKey, InstanceStats> final_stats;
  double m_bound = 0.0;  // running max aggregated-input row norm
  double n_bound = 0.0;  // running max aggregated-gradient row norm
  double final_loss = 0.0;
  double final_val_acc = 0.0;
  double final_test_acc = 0.0;
};

// Distributed training engine over simulated devices. Every epoch runs a
// fixed phase schedule; each phase touches one device's state plus read-only
// shared data, so the round-robin and threaded drivers produce identical
// results.
class Engine {
 public:
  Engine(const Graph& g, const TrainSettings& s) : graph_(g), s_(s) {
    if (s_.dims.size() < 2) throw std::invalid_argument("engine: dims must list in and out");
    if (s_.cost.num_devices != s_.n_parts)
      throw std::invalid_argument("engine: cost model size != n_parts");
    if (g.features.rows != g.num_nodes || g.features.cols != s_.dims.front())
      throw std::invalid_argument("engine: feature shape mismatch");
    if (g.labels.size() != g.num_nodes) throw std::invalid_argument("engine: missing labels");
    if (s_.bit_mode == BitMode::kFixed && !is_valid_bit_width(s_.fixed_bits))
      throw std::invalid_argument("engine: fixed bit width must be 2, 4, or 8");
    if (const char* env = std::getenv("ADAQP_DETERMINISTIC"))
      if (std::string(env) == "1") s_.exec = ExecMode::kRoundRobin;
    n_layers_ = s_.dims.size() - 1;
    root_ = RngStream(s_.seed);
    setup();
  }

  TrainResult run() {
    TrainResult res;
    res.resolves.reserve(8);
    for (std::size_t e = 1; e <= s_.epochs; ++e) {
      epoch_ = e;
      run_epoch(res);
    }
    res.final_weights = devs_[0].weights;
    res.final_stats = gather_stats();
    if (!res.epochs.empty()) {
      res.final_loss = res.epochs.back().train_loss;
      res.final_val_acc = res.epochs.back().val_acc;
      res.final_test_acc = res.epochs.back().test_acc;
    }
    res.m_bound = m_bound_;
    res.n_bound = n_bound_;
    if (s_.capture_grads) res.last_grads = devs_[0].summed;
    if (!s_.out_dir.empty()) flush_outputs(res);
    return res;
  }

  // master-side view of current statistics (tracing windows + static weights)
  std::map<TensorKey, InstanceStats> gather_stats() const {
    std::map<TensorKey, InstanceStats> stats;
    for (const TensorKey& key : keys_) {
      InstanceStats inst;
      for (uint32_t p = 0; p < n_parts_(); ++p) {
        for (uint32_t q = 0; q < n_parts_(); ++q) {
          if (p == q) continue;
          const auto& ids = key.dir == Direction::kForward ? parts_[p].remote_out[q]
                                                           : parts_[p].remote_in[q];
          if (ids.empty()) continue;
          const TraceWindow& w = devs_[p].traces.windows.at(key)[q];
          PairStats ps;
          ps.src = p;
          ps.dst = q;
          for (std::size_t i = 0; i < ids.size(); ++i) {
            if (!w.traced(i)) continue;
            MessageStats m;
            m.id = ids[i];
            m.dim = dims_of(key);
            m.lo = w.lo[i];
            m.hi = w.hi[i];
            m.sum_alpha_sq = key.dir == Direction::kForward ? devs_[q].rx_alpha_sq[p][i] : 1.0;
            ps.messages.push_back(m);
          }
          if (!ps.messages.empty()) inst.pairs.push_back(std::move(ps));
        }
      }
      stats[key] = std::move(inst);
    }
    return stats;
  }

  const BitWidthPlan& plan() const { return devs_[0].plan; }

 private:
  struct Device {
    uint32_t id = 0;
    Partition part;
    DeviceAggView view;
    Matrix feat;
    std::vector<int32_t> labels;
    std::vector<uint32_t> train_rows, val_rows, test_rows;

    std::vector<Matrix> weights, wgrad, summed;
    OptimizerState opt;
    GnnModel shape;  // activation/norm flags; weights live in `weights`

    std::vector<Matrix> h;           // h[0..L]
    std::vector<LayerCache> caches;  // per layer
    std::vector<Matrix> remote_h;    // per tensor key index (forward inputs)
    Matrix dh, dh_next, gbar, dz;

    SimClock clock;
    SimClock epoch_mark;
    TraceStore traces;
    BitWidthPlan plan;
    BitWidthPlan::Lookup lookup;

    std::vector<std::vector<uint32_t>> out_rows;      // [q] rows of remote_out ids
    std::vector<std::vector<double>> rx_alpha_sq;     // [src] per remote_in msg
    // static flop units
    double units_central_agg = 0, units_marginal_agg_local = 0, units_marginal_agg_remote = 0;
    double units_all_local = 0;
    uint64_t out_msg_rows = 0;  // total messages sent forward per tensor

    // per-epoch accounting
    std::vector<uint64_t> bytes_pair;  // N entries: bytes sent to each target
    uint64_t msgs_b2 = 0, msgs_b4 = 0, msgs_b8 = 0, msgs_fp = 0;
    double loss_partial = 0.0;
    std::size_t val_correct = 0, test_correct = 0;
    double max_hbar = 0.0, max_gbar = 0.0;  // squared row-norm maxima
  };

  uint32_t n_parts_() const { return static_cast<uint32_t>(s_.n_parts); }
  uint64_t dims_of(TensorKey key) const { return s_.dims[key.layer]; }

  void setup() {
    parts_ = partition_graph(graph_, s_.n_parts, s_.seed);
    coeffs_ = compute_coeffs(graph_, s_.agg);

    GnnModel model = GnnModel::init(s_.agg, s_.dims, s_.seed);
    if (!s_.initial_weights.empty()) {
      if (s_.initial_weights.size() != model.layers.size())
        throw std::invalid_argument("engine: initial weight count mismatch");
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        check_shape(model.layers[l].weight.same_shape(s_.initial_weights[l]), "initial weights");
        model.layers[l].weight = s_.initial_weights[l];
      }
    }
    model.layer_norm = s_.layer_norm;
    model.dropout = s_.dropout;

    keys_ = make_keys();

    devs_.resize(s_.n_parts);
    for (uint32_t d = 0; d < n_parts_(); ++d) {
      Device& dev = devs_[d];
      dev.id = d;
      dev.part = parts_[d];
      dev.view = DeviceAggView::build(graph_, dev.part, coeffs_);
      const std::size_t n_owned = dev.part.owned.size();
      dev.feat = Matrix(n_owned, graph_.features.cols);
      dev.labels.resize(n_owned);
      for (std::size_t i = 0; i < n_owned; ++i) {
        const NodeId v = dev.part.owned[i];
        for (std::size_t j = 0; j < graph_.features.cols; ++j)
          dev.feat(i, j) = graph_.features(v, j);
        dev.labels[i] = graph_.labels[v];
        if (graph_.train_mask[v]) dev.train_rows.push_back(static_cast<uint32_t>(i));
        if (graph_.val_mask[v]) dev.val_rows.push_back(static_cast<uint32_t>(i));
        if (graph_.test_mask[v]) dev.test_rows.push_back(static_cast<uint32_t>(i));
      }
      dev.shape = model;
      dev.weights = model.weights();
      dev.opt = OptimizerState::make(s_.opt, s_.lr, dev.weights);
      dev.wgrad = dev.weights;
      dev.summed = dev.weights;
      dev.h.assign(n_layers_ + 1, Matrix());
      dev.h[0] = dev.feat;
      dev.caches.resize(n_layers_);
      dev.remote_h.assign(n_layers_, Matrix());
      dev.out_rows.resize(s_.n_parts);
      for (uint32_t q = 0; q < n_parts_(); ++q)
        for (NodeId v : dev.part.remote_out[q])
          dev.out_rows[q].push_back(dev.view.row_of_node.at(v));
      dev.bytes_pair.assign(s_.n_parts, 0);

      // squared consumption weights of incoming forward messages
      dev.rx_alpha_sq.resize(s_.n_parts);
      for (uint32_t p = 0; p < n_parts_(); ++p)
        dev.rx_alpha_sq[p].assign(dev.part.remote_in[p].size(), 0.0);
      for (std::size_t r = 0; r < n_owned; ++r) {
        for (std::size_t e = dev.view.remote_ptr[r]; e < dev.view.remote_ptr[r + 1]; ++e) {
          const uint32_t slot = dev.view.remote_slot[e];
          const uint32_t src = dev.view.slot_owner[slot];
          const std::size_t idx = slot - dev.view.device_slot_offset[src];
          dev.rx_alpha_sq[src][idx] += dev.view.remote_alpha[e] * dev.view.remote_alpha[e];
        }
      }

      for (uint32_t r : dev.view.central_rows)
        dev.units_central_agg += 1.0 + static_cast<double>(dev.view.local_ptr[r + 1] -
                                                           dev.view.local_ptr[r]);
      for (uint32_t r : dev.view.marginal_rows) {
        dev.units_marginal_agg_local += 1.0 + static_cast<double>(dev.view.local_ptr[r + 1] -
                                                                  dev.view.local_ptr[r]);
        dev.units_marginal_agg_remote += static_cast<double>(dev.view.remote_ptr[r + 1] -
                                                             dev.view.remote_ptr[r]);
      }
      dev.units_all_local = dev.units_central_agg + dev.units_marginal_agg_local;
      for (uint32_t q = 0; q < n_parts_(); ++q) dev.out_msg_rows += dev.part.remote_out[q].size();

      for (const TensorKey& key : keys_) {
        auto& windows = dev.traces.windows[key];
        windows.resize(s_.n_parts);
        for (uint32_t q = 0; q < n_parts_(); ++q)
          windows[q].reset(key.dir == Direction::kForward ? dev.part.remote_out[q].size()
                                                          : dev.part.remote_in[q].size());
      }
    }

    // initial all-8 plan over the static message universe
    if (s_.bit_mode == BitMode::kAdaptive) {
      std::map<TensorKey, InstanceStats> universe;
      for (const TensorKey& key : keys_) {
        InstanceStats inst;
        for (uint32_t p = 0; p < n_parts_(); ++p) {
          for (uint32_t q = 0; q < n_parts_(); ++q) {
            if (p == q) continue;
            const auto& ids = key.dir == Direction::kForward ? parts_[p].remote_out[q]
                                                             : parts_[p].remote_in[q];
            if (ids.empty()) continue;
            PairStats ps;
            ps.src = p;
            ps.dst = q;
            for (NodeId id : ids) ps.messages.push_back({id, dims_of(key), 0.0, 0.0, 1.0});
            inst.pairs.push_back(std::move(ps));
          }
        }
        universe[key] = std::move(inst);
      }
      const BitWidthPlan init = initial_plan(universe);
      for (Device& dev : devs_) {
        dev.plan = init;
        dev.lookup = dev.plan.make_lookup();
      }
    }

    global_train_ = global_val_ = global_test_ = 0;
    for (NodeId v = 0; v < graph_.num_nodes; ++v) {
      global_train_ += graph_.train_mask[v] != 0;
      global_val_ += graph_.val_mask[v] != 0;
      global_test_ += graph_.test_mask[v] != 0;
    }
    if (global_train_ == 0) throw std::invalid_argument("engine: empty train mask");

    board_.assign(s_.n_parts, std::vector<ExchangePayload>(s_.n_parts));
    fwd_comm_set_.assign(s_.n_parts, std::vector<uint8_t>(s_.n_parts, 0));
    bwd_comm_set_.assign(s_.n_parts, std::vector<uint8_t>(s_.n_parts, 0));
    for (uint32_t p = 0; p < n_parts_(); ++p)
      for (uint32_t q = 0; q < n_parts_(); ++q) {
        if (p == q) continue;
        fwd_comm_set_[p][q] = !parts_[p].remote_out[q].empty();
        bwd_comm_set_[p][q] = !parts_[p].remote_in[q].empty();
      }

    param_count_ = 0;
    for (const Matrix& w : devs_[0].weights) param_count_ += w.data.size();
  }

  std::vector<TensorKey> make_keys() const {
    std::vector<TensorKey> keys;
    for (std::size_t t = 0; t < n_layers_; ++t)
      keys.push_back({static_cast<uint32_t>(t), Direction::kForward});
    for (std::size_t t = 1; t < n_layers_; ++t)
      keys.push_back({static_cast<uint32_t>(t), Direction::kBackward});
    return keys;
  }

  // --- drivers -------------------------------------------------------------

  void for_devices(const std::function<void(std::size_t)>& f) {
    if (s_.exec == ExecMode::kRoundRobin || s_.n_parts == 1) {
      for (std::size_t d = 0; d < s_.n_parts; ++d) f(d);
      return;
    }
    {
      std::vector<std::jthread> workers;
      workers.reserve(s_.n_parts);
      for (std::size_t d = 0; d < s_.n_parts; ++d) {
        workers.emplace_back([this, &f, d]() {
          try {
            f(d);
          } catch (...) {
            std::lock_guard<std::mutex> lk(err_mu_);
            if (!worker_err_) worker_err_ = std::current_exception();
          }
        });
      }
    }
    if (worker_err_) {
      auto e = worker_err_;
      worker_err_ = nullptr;
      std::rethrow_exception(e);
    }
  }

  // --- per-epoch schedule ---------------------------------------------------

  void run_epoch(TrainResult& res) {
    for_devices([this](std::size_t d) { epoch_start(d); });
    for (std::size_t l = 1; l <= n_layers_; ++l) {
      for_devices([this, l](std::size_t d) { fwd_send(d, l); });
      // round times come from payload sizes; fixed here, before receivers
      // start draining the board
      pending_comm_t_ = comm_seconds(fwd_comm_set_);
      for_devices([this, l](std::size_t d) { fwd_finish(d, l); });
    }
    for_devices([this](std::size_t d) { loss_phase(d); });
    double loss = 0.0;
    for (const Device& dev : devs_) loss += dev.loss_partial;
    if (!std::isfinite(loss))
      throw DivergedError("epoch " + std::to_string(epoch_) + ": loss diverged");
    for (std::size_t l = n_layers_; l >= 2; --l) {
      for_devices([this, l](std::size_t d) { bwd_send(d, l); });
      pending_comm_t_ = comm_seconds(bwd_comm_set_);
      for_devices([this, l](std::size_t d) { bwd_finish(d, l); });
    }
    for_devices([this](std::size_t d) { bwd_last(d); });
    for_devices([this](std::size_t d) { allreduce_and_step(d); });

    EpochMetrics em = collect_metrics(loss);
    if (s_.bit_mode == BitMode::kAdaptive) {
      auto stats = gather_stats();
      auto maybe = reassignment_round(epoch_, s_.period, stats, s_.cost, s_.lambda,
                                      s_.group_size, devs_[0].plan.version);
      if (maybe) {
        res.resolves.push_back({epoch_, maybe->plan.version, maybe->objective,
                                maybe->variance_term, maybe->z_seconds,
                                maybe->uniform_variance});
        pending_stats_ = std::move(stats);
        pending_plan_ = std::move(maybe->plan);
        for_devices([this](std::size_t d) { adopt_plan(d); });
        // consistency check across the fleet before the next exchange
        std::vector<BitWidthPlan> all;
        for (const Device& dev : devs_) all.push_back(dev.plan);
        negotiate_buffers(all);
      }
      em.plan_version = devs_[0].plan.version;
    }
    res.epochs.push_back(std::move(em));
  }

  void epoch_start(std::size_t d) {
    Device& dev = devs_[d];
    dev.epoch_mark = dev.clock;
    for (Matrix& g : dev.wgrad) std::fill(g.data.begin(), g.data.end(), 0.0);
    std::fill(dev.bytes_pair.begin(), dev.bytes_pair.end(), 0);
    dev.msgs_b2 = dev.msgs_b4 = dev.msgs_b8 = dev.msgs_fp = 0;
    dev.loss_partial = 0.0;
    dev.val_correct = dev.test_correct = 0;
  }

  int message_bits(TensorKey key, uint32_t src, uint32_t dst, uint32_t id,
                   const Device& dev) const {
    switch (s_.bit_mode) {
      case BitMode::kFixed:
        return s_.fixed_bits;
      case BitMode::kUniform: {
        RngStream r = root_.fork({0x3u, epoch_, key_code(key), src, dst, id});
        return kBitChoices[r.next_below(3)];
      }
      case BitMode::kAdaptive:
        return dev.lookup.bits_for(key, src, dst, id);
      case BitMode::kFp:
        break;
    }
    throw std::invalid_argument("message_bits: fp mode has no bit width");
  }

  static uint64_t key_code(TensorKey key) {
    return key.layer * 2 + (key.dir == Direction::kBackward ? 1 : 0);
  }

  // Builds one outgoing payload; values[i] must follow the agreed id order.
  void send_payloads(Device& dev, TensorKey key, const std::function<bool(uint32_t)>& has_ids,
                     const std::function<std::span<const NodeId>(uint32_t)>& ids_of,
                     const std::function<std::span<const double>(uint32_t, std::size_t)>& value_of) {
    const uint64_t dim = dims_of(key);
    uint64_t quant_elems = 0;
    for (uint32_t q = 0; q < n_parts_(); ++q) {
      if (q == dev.id || !has_ids(q)) continue;
      const auto ids = ids_of(q);
      TraceWindow& win = dev.traces.window(key, q);
      ExchangePayload payload;
      payload.source = dev.id;
      payload.target = q;
      payload.plan_version = dev.plan.version;
      if (s_.bit_mode == BitMode::kFp) {
        payload.bytes.resize(ids.size() * dim * sizeof(double));
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const auto vals = value_of(q, i);
          win.update(i, vals);
          std::memcpy(payload.bytes.data() + i * dim * sizeof(double), vals.data(),
                      dim * sizeof(double));
        }
        dev.msgs_fp += ids.size();
      } else {
        std::vector<MessageView> msgs(ids.size());
        std::vector<int> bits(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const auto vals = value_of(q, i);
          win.update(i, vals);
          msgs[i] = {ids[i], vals};
          bits[i] = message_bits(key, dev.id, q, ids[i], dev);
          quant_elems += dim;
          (bits[i] == 2 ? dev.msgs_b2 : bits[i] == 4 ? dev.msgs_b4 : dev.msgs_b8) += 1;
        }
        std::map<uint32_t, int> bit_of;
        for (std::size_t i = 0; i < ids.size(); ++i) bit_of[ids[i]] = bits[i];
        EncodedSet set = encode_message_set(
            msgs, [&bit_of](uint32_t id) { return bit_of.at(id); },
            root_.fork({0x2u, epoch_, key_code(key), dev.id, q}));
        payload.bytes = std::move(set.bytes);
        payload.index = std::move(set.index);
      }
      dev.bytes_pair[q] += payload.bytes.size();
      board_[dev.id][q] = std::move(payload);
    }
    if (quant_elems > 0) dev.clock.add_quant(static_cast<double>(quant_elems) * s_.quant_rate);
  }

  double comm_seconds(const std::vector<std::vector<uint8_t>>& comm_set) const {
    double total = 0.0;
    const uint32_t n = n_parts_();
    for (uint32_t r = 1; r < n; ++r) {
      double round_t = 0.0;
      for (uint32_t d = 0; d < n; ++d) {
        const uint32_t t = ring_target(d, r, n);
        const ExchangePayload& p = board_[d][t];
        if (p.empty() && !comm_set[d][t]) continue;
        round_t = std::max(
            round_t, s_.cost.transfer_seconds(d, t, 8.0 * static_cast<double>(p.bytes.size())));
      }
      total += round_t;
    }
    return total;
  }

  // Decodes one incoming payload into per-id rows delivered through `sink`.
  void receive_payload(Device& dev, TensorKey key, uint32_t src, std::span<const NodeId> ids,
                       uint64_t& dequant_elems,
                       const std::function<double*(uint32_t)>& row_of) {
    ExchangePayload payload = std::move(board_[src][dev.id]);
    board_[src][dev.id] = ExchangePayload{};
    if (payload.bytes.empty()) throw ProtocolError("exchange: missing payload");
    if (payload.source != src || payload.target != dev.id)
      throw ProtocolError("exchange: misrouted payload");
    const uint64_t dim = dims_of(key);
    if (s_.bit_mode == BitMode::kFp) {
      if (payload.index.has_value()) throw ProtocolError("exchange: unexpected index in fp mode");
      if (payload.bytes.size() != ids.size() * dim * sizeof(double))
        throw ProtocolError("exchange: fp payload size mismatch");
      for (std::size_t i = 0; i < ids.size(); ++i)
        std::memcpy(row_of(ids[i]), payload.bytes.data() + i * dim * sizeof(double),
                    dim * sizeof(double));
      return;
    }
    if (payload.plan_version != dev.plan.version)
      throw ProtocolError("exchange: plan version skew");
    if (!payload.index.has_value()) throw ProtocolError("exchange: missing retrieval index");
    uint64_t expect_bytes = 0;
    for (NodeId id : ids)
      expect_bytes += chunk_wire_bytes(dim, message_bits(key, src, dev.id, id, dev));
    if (payload.bytes.size() != expect_bytes)
      throw ProtocolError("exchange: negotiated buffer size mismatch");
    const auto decoded = decode_message_set(payload.bytes, *payload.index);
    if (decoded.size() != ids.size()) throw DecodeError("exchange: message count mismatch");
    std::vector<char> seen(ids.size(), 0);
    for (const DecodedMessage& m : decoded) {
      auto it = std::lower_bound(ids.begin(), ids.end(), m.id);
      if (it == ids.end() || *it != m.id) throw DecodeError("exchange: unexpected message id");
      const std::size_t i = static_cast<std::size_t>(it - ids.begin());
      if (seen[i]) throw DecodeError("exchange: duplicate message id");
      seen[i] = 1;
      if (m.values.size() != dim) throw DecodeError("exchange: message dim mismatch");
      std::memcpy(row_of(m.id), m.values.data(), dim * sizeof(double));
      dequant_elems += dim;
    }
  }

  void fwd_send(std::size_t d, std::size_t l) {
    Device& dev = devs_[d];
    const std::size_t t = l - 1;
    const std::size_t din = s_.dims[t], dout = s_.dims[l];
    const std::size_t n_owned = dev.part.owned.size();
    LayerCache& cache = dev.caches[t];
    cache.h_agg = Matrix(n_owned, din);
    cache.pre_act = Matrix(n_owned, dout);
    if (s_.layer_norm) {
      cache.act_in = Matrix(n_owned, dout);
      cache.inv_std.assign(n_owned, 0.0);
    }
    if (s_.dropout > 0.0 && l < n_layers_) cache.drop_mask = Matrix(n_owned, dout);
    dev.h[l] = Matrix(n_owned, dout);
    dev.remote_h[t] = Matrix(dev.view.num_remote, din);

    const TensorKey key{static_cast<uint32_t>(t), Direction::kForward};
    const Matrix& src_h = dev.h[t];
    send_payloads(
        dev, key, [&](uint32_t q) { return !dev.part.remote_out[q].empty(); },
        [&](uint32_t q) { return std::span<const NodeId>(dev.part.remote_out[q]); },
        [&](uint32_t q, std::size_t i) { return src_h.row(dev.out_rows[q][i]); });
  }

  void fwd_finish(std::size_t d, std::size_t l) {
    Device& dev = devs_[d];
    const std::size_t t = l - 1;
    const std::size_t din = s_.dims[t], dout = s_.dims[l];
    const TensorKey key{static_cast<uint32_t>(t), Direction::kForward};
    const double comm_t = pending_comm_t_;

    LayerCache& cache = dev.caches[t];
    aggregate_rows(dev.view, dev.h[t], dev.remote_h[t], dev.view.central_rows, cache.h_agg);
    const GnnLayer layer{dev.weights[t], dev.shape.layers[t].act};
    const RngStream drop_rng = root_.fork({0x4u, epoch_, static_cast<uint64_t>(l), dev.id});
    layer_forward_rows(layer, dev.shape, cache, dev.view.central_rows, dev.h[l], drop_rng);
    const double central_t =
        flops_forward(dev.units_central_agg, 0.0, dev.view.central_rows.size(), din, dout) *
        s_.flop_rate;
    dev.clock.add_overlap(comm_t, central_t);

    uint64_t dequant_elems = 0;
    Matrix& remote = dev.remote_h[t];
    for (uint32_t p = 0; p < n_parts_(); ++p) {
      if (p == dev.id || dev.part.remote_in[p].empty()) continue;
      const std::size_t base = dev.view.device_slot_offset[p];
      const auto& ids = dev.part.remote_in[p];
      receive_payload(dev, key, p, ids, dequant_elems, [&](uint32_t id) {
        const auto it = std::lower_bound(ids.begin(), ids.end(), id);
        const std::size_t slot = base + static_cast<std::size_t>(it - ids.begin());
        return remote.data.data() + slot * din;
      });
    }
    if (dequant_elems > 0)
      dev.clock.add_quant(static_cast<double>(dequant_elems) * s_.quant_rate);

    aggregate_rows(dev.view, dev.h[t], remote, dev.view.marginal_rows, cache.h_agg);
    layer_forward_rows(layer, dev.shape, cache, dev.view.marginal_rows, dev.h[l], drop_rng);
    const double marginal_t =
        flops_forward(dev.units_marginal_agg_local, dev.units_marginal_agg_remote,
                      dev.view.marginal_rows.size(), din, dout) *
        s_.flop_rate;
    dev.clock.add_marginal(marginal_t);

    for (std::size_t r = 0; r < dev.part.owned.size(); ++r) {
      double nrm = 0.0;
      for (std::size_t j = 0; j < din; ++j) nrm += cache.h_agg(r, j) * cache.h_agg(r, j);
      dev.max_hbar = std::max(dev.max_hbar, nrm);
    }
  }

  double flops_forward(double agg_units_local, double agg_units_remote, std::size_t rows,
                       std::size_t din, std::size_t dout) const {
    double f = (agg_units_local + agg_units_remote) * 2.0 * static_cast<double>(din);
    f += static_cast<double>(rows) * 2.0 * static_cast<double>(din) * static_cast<double>(dout);
    f += static_cast<double>(rows) * static_cast<double>(dout);  // activation
    if (s_.layer_norm) f += static_cast<double>(rows) * 8.0 * static_cast<double>(dout);
    if (s_.dropout > 0.0) f += static_cast<double>(rows) * 2.0 * static_cast<double>(dout);
    return f;
  }

  void loss_phase(std::size_t d) {
    Device& dev = devs_[d];
    const Matrix& logits = dev.h[n_layers_];
    auto [sum, grad] = masked_ce_partial(logits, dev.labels, dev.train_rows,
                                         1.0 / static_cast<double>(global_train_));
    dev.loss_partial = sum;
    dev.dh = std::move(grad);
    dev.val_correct = count_correct(logits, dev.labels, dev.val_rows);
    dev.test_correct = count_correct(logits, dev.labels, dev.test_rows);
    const double flops =
        static_cast<double>(dev.part.owned.size()) * 8.0 * static_cast<double>(logits.cols);
    dev.clock.add_central(flops * s_.flop_rate);
  }

  void bwd_send(std::size_t d, std::size_t l) {
    Device& dev = devs_[d];
    const std::size_t t = l - 1;
    const std::size_t din = s_.dims[t], dout = s_.dims[l];
    const std::size_t n_owned = dev.part.owned.size();
    LayerCache& cache = dev.caches[t];
    const GnnLayer layer{dev.weights[t], dev.shape.layers[t].act};

    dev.dz = Matrix(n_owned, dout);
    dev.gbar = Matrix(n_owned, din);
    layer_backward_rows(layer, dev.shape, cache, dev.dh, dev.view.marginal_rows, dev.dz);
    input_grad_rows(layer, dev.dz, dev.view.marginal_rows, dev.gbar);
    const Matrix partials = backward_remote_partials(dev.view, dev.gbar);
    const double pre_t =
        (static_cast<double>(dev.view.marginal_rows.size()) *
             (chain_flops(dout) + 2.0 * static_cast<double>(din) * static_cast<double>(dout)) +
         dev.units_marginal_agg_remote * 2.0 * static_cast<double>(din)) *
        s_.flop_rate;
    dev.clock.add_marginal(pre_t);

    const TensorKey key{static_cast<uint32_t>(t), Direction::kBackward};
    send_payloads(
        dev, key, [&](uint32_t q) { return !dev.part.remote_in[q].empty(); },
        [&](uint32_t q) { return std::span<const NodeId>(dev.part.remote_in[q]); },
        [&](uint32_t q, std::size_t i) {
          return partials.row(dev.view.device_slot_offset[q] + i);
        });
  }

  void bwd_finish(std::size_t d, std::size_t l) {
    Device& dev = devs_[d];
    const std::size_t t = l - 1;
    const std::size_t din = s_.dims[t], dout = s_.dims[l];
    const TensorKey key{static_cast<uint32_t>(t), Direction::kBackward};
    const double comm_t = pending_comm_t_;

    LayerCache& cache = dev.caches[t];
    const GnnLayer layer{dev.weights[t], dev.shape.layers[t].act};
    layer_backward_rows(layer, dev.shape, cache, dev.dh, dev.view.central_rows, dev.dz);
    input_grad_rows(layer, dev.dz, dev.view.central_rows, dev.gbar);
    add_inplace(dev.wgrad[t], matmul_transa(cache.h_agg, dev.dz));
    const std::size_t n_owned = dev.part.owned.size();
    dev.dh_next = Matrix(n_owned, din);
    std::vector<uint32_t> all_rows(n_owned);
    for (std::size_t i = 0; i < n_owned; ++i) all_rows[i] = static_cast<uint32_t>(i);
    aggregate_backward_local(dev.view, dev.gbar, all_rows, dev.dh_next);
    const double central_t =
        (static_cast<double>(dev.view.central_rows.size()) *
             (chain_flops(dout) + 2.0 * static_cast<double>(din) * static_cast<double>(dout)) +
         static_cast<double>(n_owned) * 2.0 * static_cast<double>(din) *
             static_cast<double>(dout) +
         dev.units_all_local * 2.0 * static_cast<double>(din)) *
        s_.flop_rate;
    dev.clock.add_overlap(comm_t, central_t);

    track_gbar_norms(dev, din);

    uint64_t dequant_elems = 0;
    uint64_t partial_rows = 0;
    for (uint32_t p = 0; p < n_parts_(); ++p) {
      if (p == dev.id || dev.part.remote_out[p].empty()) continue;
      const auto& ids = dev.part.remote_out[p];
      partial_rows += ids.size();
      Matrix incoming(ids.size(), din);
      receive_payload(dev, key, p, ids, dequant_elems, [&](uint32_t id) {
        const auto it = std::lower_bound(ids.begin(), ids.end(), id);
        return incoming.data.data() + static_cast<std::size_t>(it - ids.begin()) * din;
      });
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = dev.dh_next.data.data() + dev.view.row_of_node.at(ids[i]) * din;
        const double* src = incoming.data.data() + i * din;
        for (std::size_t j = 0; j < din; ++j) dst[j] += src[j];
      }
    }
    if (dequant_elems > 0)
      dev.clock.add_quant(static_cast<double>(dequant_elems) * s_.quant_rate);
    dev.clock.add_marginal(static_cast<double>(partial_rows) * 2.0 * static_cast<double>(din) *
                           s_.flop_rate);
    dev.dh = std::move(dev.dh_next);
  }

  // layer 1 backward: weight gradient only, nothing flows to the features
  void bwd_last(std::size_t d) {
    Device& dev = devs_[d];
    const std::size_t dout = s_.dims[1];
    const std::size_t din = s_.dims[0];
    const std::size_t n_owned = dev.part.owned.size();
    LayerCache& cache = dev.caches[0];
    const GnnLayer layer{dev.weights[0], dev.shape.layers[0].act};
    dev.dz = Matrix(n_owned, dout);
    std::vector<uint32_t> all_rows(n_owned);
    for (std::size_t i = 0; i < n_owned; ++i) all_rows[i] = static_cast<uint32_t>(i);
    layer_backward_rows(layer, dev.shape, cache, dev.dh, all_rows, dev.dz);
    add_inplace(dev.wgrad[0], matmul_transa(cache.h_agg, dev.dz));
    const double central_t = (static_cast<double>(n_owned) *
                              (chain_flops(dout) +
                               2.0 * static_cast<double>(din) * static_cast<double>(dout))) *
                             s_.flop_rate;
    dev.clock.add_overlap(0.0, central_t);
    // gradient norm bound at the first aggregation, tracked for diagnostics
    // only (not part of the simulated schedule)
    dev.gbar = Matrix(n_owned, din);
    input_grad_rows(layer, dev.dz, all_rows, dev.gbar);
    track_gbar_norms(dev, din);
  }

  double chain_flops(std::size_t dout) const {
    double f = static_cast<double>(dout);
    if (s_.layer_norm) f += 8.0 * static_cast<double>(dout);
    if (s_.dropout > 0.0) f += 2.0 * static_cast<double>(dout);
    return f;
  }

  void track_gbar_norms(Device& dev, std::size_t din) {
    for (std::size_t r = 0; r < dev.part.owned.size(); ++r) {
      double nrm = 0.0;
      for (std::size_t j = 0; j < din; ++j) nrm += dev.gbar(r, j) * dev.gbar(r, j);
      dev.max_gbar = std::max(dev.max_gbar, nrm);
    }
  }

  void allreduce_and_step(std::size_t d) {
    Device& dev = devs_[d];
    for (std::size_t i = 0; i < dev.summed.size(); ++i) {
      std::fill(dev.summed[i].data.begin(), dev.summed[i].data.end(), 0.0);
      for (std::size_t p = 0; p < s_.n_parts; ++p)
        add_inplace(dev.summed[i], devs_[p].wgrad[i]);
    }
    if (s_.n_parts > 1) {
      const double bits = static_cast<double>(param_count_) * 64.0;
      double round_t = 0.0;
      for (uint32_t p = 0; p < n_parts_(); ++p)
        round_t = std::max(round_t, s_.cost.transfer_seconds(p, (p + 1) % n_parts_(), bits));
      dev.clock.add_comm(static_cast<double>(s_.n_parts - 1) * round_t);
    }
    const double fold_flops = static_cast<double>(param_count_) * static_cast<double>(s_.n_parts);
    const double step_flops = static_cast<double>(param_count_) *
                              (s_.opt == OptKind::kAdam ? 12.0 : 2.0);
    dev.clock.add_central((fold_flops + step_flops) * s_.flop_rate);
    optimizer_step(dev.opt, dev.weights, dev.summed);
  }

  EpochMetrics collect_metrics(double loss) {
    EpochMetrics em;
    em.epoch = epoch_;
    em.train_loss = loss;
    std::size_t val_c = 0, test_c = 0;
    for (const Device& dev : devs_) {
      val_c += dev.val_correct;
      test_c += dev.test_correct;
    }
    em.val_acc = global_val_ ? static_cast<double>(val_c) / static_cast<double>(global_val_) : 0.0;
    em.test_acc =
        global_test_ ? static_cast<double>(test_c) / static_cast<double>(global_test_) : 0.0;

    std::size_t slow = 0;
    double slow_elapsed = -1.0;
    for (std::size_t d = 0; d < s_.n_parts; ++d) {
      const double delta = devs_[d].clock.elapsed - devs_[d].epoch_mark.elapsed;
      if (delta > slow_elapsed) {
        slow_elapsed = delta;
        slow = d;
      }
    }
    const SimClock& now = devs_[slow].clock;
    const SimClock& was = devs_[slow].epoch_mark;
    em.sim_total_s = now.elapsed - was.elapsed;
    em.sim_serialized_s = now.serialized - was.serialized;
    em.sim_comm_s = now.comm - was.comm;
    em.sim_quant_s = now.quant - was.quant;
    em.sim_central_s = now.central_comp - was.central_comp;
    em.sim_marginal_s = now.marginal_comp - was.marginal_comp;

    em.bytes_per_pair.assign(s_.n_parts * s_.n_parts, 0);
    for (const Device& dev : devs_) {
      for (std::size_t q = 0; q < s_.n_parts; ++q) {
        em.bytes_per_pair[dev.id * s_.n_parts + q] = dev.bytes_pair[q];
        em.bytes_total += dev.bytes_pair[q];
      }
      em.msgs_b2 += dev.msgs_b2;
      em.msgs_b4 += dev.msgs_b4;
      em.msgs_b8 += dev.msgs_b8;
      em.msgs_fp += dev.msgs_fp;
      m_bound_ = std::max(m_bound_, std::sqrt(dev.max_hbar));
      n_bound_ = std::max(n_bound_, std::sqrt(dev.max_gbar));
    }
    em.plan_version = s_.bit_mode == BitMode::kAdaptive ? devs_[0].plan.version : 0;
    return em;
  }

  void adopt_plan(std::size_t d) {
    Device& dev = devs_[d];
    dev.plan = pending_plan_;
    dev.lookup = dev.plan.make_lookup();
    for (const TensorKey& key : keys_) {
      auto& windows = dev.traces.windows[key];
      for (uint32_t q = 0; q < n_parts_(); ++q)
        windows[q].reset(key.dir == Direction::kForward ? dev.part.remote_out[q].size()
                                                        : dev.part.remote_in[q].size());
    }
  }

  void flush_outputs(const TrainResult& res) const;

  const Graph& graph_;
  TrainSettings s_;
  std::size_t n_layers_ = 0;
  std::vector<Partition> parts_;
  AggCoeffs coeffs_;
  std::vector<Device> devs_;
  std::vector<TensorKey> keys_;
  std::vector<std::vector<ExchangePayload>> board_;
  std::vector<std::vector<uint8_t>> fwd_comm_set_, bwd_comm_set_;
  std::size_t global_train_ = 0, global_val_ = 0, global_test_ = 0;
  uint64_t param_count_ = 0;
  std::size_t epoch_ = 0;
  RngStream root_{0};
  double pending_comm_t_ = 0.0;
  BitWidthPlan pending_plan_;
  std::map<TensorKey, InstanceStats> pending_stats_;
  double m_bound_ = 0.0, n_bound_ = 0.0;
  std::mutex err_mu_;
  std::exception_ptr worker_err_;
};

inline void Engine::flush_outputs(const TrainResult& res) const {
  namespace fs = std::filesystem;
  fs::create_directories(s_.out_dir);
  const fs::path base = fs::path(s_.out_dir) / s_.run_name;
  write_metrics_jsonl((base.string() + ".metrics.jsonl"), res.epochs);

  std::ofstream rf(base.string() + ".resolves.jsonl");
  if (!rf) throw IoError("cannot write " + base.string() + ".resolves.jsonl");
  for (const ResolveRecord& r : res.resolves) {
    nlohmann::json j{{"epoch", r.epoch},
                     {"version", r.version},
                     {"objective", r.objective},
                     {"variance_term", r.variance_term},
                     {"z_seconds", r.z_seconds},
                     {"uniform_variance", r.uniform_variance}};
    rf << j.dump() << "\n";
  }

  if (s_.bit_mode == BitMode::kAdaptive) {
    std::ofstream pf(base.string() + ".plan.json");
    if (!pf) throw IoError("cannot write " + base.string() + ".plan.json");
    pf << plan_to_json(devs_[0].plan).dump(2) << "\n";
    if (!pending_stats_.empty()) {
      std::ofstream sf(base.string() + ".stats.json");
      if (!sf) throw IoError("cannot write " + base.string() + ".stats.json");
      sf << stats_to_json(pending_stats_).dump(2) << "\n";
    }
  }
}

}  // namespace qgnn
