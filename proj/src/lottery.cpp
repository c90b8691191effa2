#include "swamp/lottery.hpp"

#include "swamp/rng.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>

namespace swamp {

long TrainSetup::steps_per_epoch() const {
  if (!train || train->size() == 0) throw std::invalid_argument("train setup: empty training set");
  if (batch_size < 1) throw std::invalid_argument("train setup: batch size must be positive");
  return static_cast<long>((train->size() + batch_size - 1) / batch_size);
}

long TrainSetup::swa_first_epoch() const {
  return static_cast<long>(std::floor(swa.start_fraction * static_cast<double>(epochs) + 1e-9));
}

TrainSetup make_setup(ModelSpec spec, const Dataset& train, PrunableKinds kinds) {
  TrainSetup s;
  s.layout = param_layout(spec);
  s.spec = std::move(spec);
  s.prunable_kinds = kinds;
  s.prunable = make_prunable_set(s.layout, kinds);
  s.decay_scope = weight_decay_scope(s.layout);
  s.train = &train;
  return s;
}

std::uint64_t particle_seed(std::uint64_t experiment_seed, Index cycle, Index particle) {
  return hash64(experiment_seed, static_cast<std::uint64_t>(cycle), static_cast<std::uint64_t>(particle));
}

std::uint64_t ticket_seed(std::uint64_t experiment_seed) {
  return hash64(experiment_seed, ~std::uint64_t{0}, 0);
}

namespace {

struct Loop {
  const TrainSetup& setup;
  ParamVector params;
  Eigen::VectorXf velocity;
  Eigen::VectorXf mask;
  Eigen::VectorXf grad;
};

float train_batch(Loop& loop, std::span<const Index> idx) {
  const Dataset& data = *loop.setup.train;
  const Tensorf batch = data.batch(idx);
  const std::vector<int> labels = data.batch_labels(idx);
  return loss_and_grad(loop.setup.spec, loop.params, &loop.mask, batch, labels, &loop.grad);
}

std::string context(Index cycle, Index particle, long step) {
  return "cycle " + std::to_string(cycle) + ", particle " + std::to_string(particle) + ", step " + std::to_string(step);
}

}  // namespace

MatchingTicket find_matching_ticket(const TrainSetup& setup, const ParamVector& init, long steps, float lr,
                                    std::uint64_t seed) {
  if (steps < 0) throw std::invalid_argument("matching ticket: negative step count");
  MatchingTicket ticket{init, steps, seed};
  if (steps == 0) return ticket;

  Loop loop{setup, init, Eigen::VectorXf::Zero(init.dim()), Eigen::VectorXf::Ones(init.dim()), {}};
  SgdConfig cfg = setup.sgd;
  cfg.lr0 = lr;
  cfg.schedule = Schedule{Schedule::Kind::Constant, 0, {}};
  const long spe = setup.steps_per_epoch();
  const BatchStream stream{setup.train->size(), setup.batch_size, (steps + spe - 1) / spe, seed};
  long t = 0;
  for (long e = 0; t < steps; ++e) {
    const auto perm = batch_order(stream, e);
    for (long b = 0; b < spe && t < steps; ++b) {
      const Index lo = b * setup.batch_size;
      const Index hi = std::min<Index>(lo + setup.batch_size, stream.length);
      const float loss = train_batch(loop, std::span<const Index>(perm).subspan(static_cast<std::size_t>(lo),
                                                                               static_cast<std::size_t>(hi - lo)));
      if (!std::isfinite(loss)) throw NonFiniteError("matching ticket: non-finite loss at step " + std::to_string(t));
      sgd_step(loop.params.values, loop.grad, loop.velocity, cfg, lr, loop.mask, setup.decay_scope, t);
      ++t;
    }
  }
  ticket.weights = std::move(loop.params);
  return ticket;
}

TrainResult train_particle(const TrainSetup& setup, const MatchingTicket& ticket, const Mask& mask,
                           std::uint64_t noise_seed, TrainMode mode, const TrainOptions& options) {
  if (ticket.weights.dim() != setup.prunable.dim()) {
    throw ShapeError("train_particle: ticket has " + std::to_string(ticket.weights.dim()) + " parameters, model has " +
                     std::to_string(setup.prunable.dim()));
  }
  const Eigen::VectorXf full_mask = mask.expand(setup.prunable);
  ParamVector start = ticket.weights;
  start.values = (full_mask.array() != 0.0f).select(start.values.array(), 0.0f).matrix();
  Loop loop{setup, std::move(start), Eigen::VectorXf::Zero(ticket.weights.dim()), full_mask, {}};

  SgdConfig cfg = setup.sgd;
  const long spe = setup.steps_per_epoch();
  const long total = setup.total_steps();
  if (cfg.schedule.kind == Schedule::Kind::Cosine && cfg.schedule.total_steps <= 0) cfg.schedule.total_steps = total;

  const bool swa = mode == TrainMode::Swa;
  const long swa_epoch = setup.swa_first_epoch();
  SwaAccumulator acc;
  acc.period = setup.swa.period_epochs * spe;
  acc.start_step = (swa_epoch + 1) * spe;

  TrainResult result;
  const BatchStream stream{setup.train->size(), setup.batch_size, setup.epochs, noise_seed};
  long t = 0;
  for (long e = 0; e < setup.epochs; ++e) {
    const auto perm = batch_order(stream, e);
    const bool constant_phase = swa && e >= swa_epoch;
    double epoch_loss = 0.0;
    for (long b = 0; b < spe; ++b) {
      const Index lo = b * setup.batch_size;
      const Index hi = std::min<Index>(lo + setup.batch_size, stream.length);
      const float loss = train_batch(loop, std::span<const Index>(perm).subspan(static_cast<std::size_t>(lo),
                                                                               static_cast<std::size_t>(hi - lo)));
      if (!std::isfinite(loss)) {
        throw NonFiniteError("train_particle: non-finite loss at " + context(options.cycle, options.particle, t));
      }
      const float lr = constant_phase ? setup.swa.lr : lr_at(cfg, t);
      try {
        sgd_step(loop.params.values, loop.grad, loop.velocity, cfg, lr, loop.mask, setup.decay_scope, t);
      } catch (const NonFiniteError&) {
        throw NonFiniteError("train_particle: non-finite gradient at " + context(options.cycle, options.particle, t));
      }
      ++t;
      epoch_loss += loss * static_cast<double>(hi - lo);
      if (options.on_step) {
        options.on_step(StepInfo{options.cycle, options.particle, t, e, loss, lr, loop.params.values, loop.velocity,
                                 loop.mask});
      }
    }
    result.final_epoch_loss = epoch_loss / static_cast<double>(stream.length);
    if (swa && swa_update(acc, loop.params.values, t) && options.keep_snapshots) {
      result.snapshots.push_back(loop.params.values);
    }
  }
  result.last_iterate = loop.params.values;
  if (swa) {
    result.params = swa_finalize(acc);
    result.swa_count = acc.count;
  } else {
    result.params = result.last_iterate;
  }
  return result;
}

Eigen::VectorXf average_particles(std::span<const Eigen::VectorXf> particles) {
  if (particles.empty()) throw std::invalid_argument("average_particles: no particles");
  Eigen::VectorXf sum = particles.front();
  for (std::size_t i = 1; i < particles.size(); ++i) {
    if (particles[i].size() != sum.size()) throw ShapeError("average_particles: particle sizes differ");
    sum += particles[i];
  }
  if (particles.size() == 1) return sum;
  return sum / static_cast<float>(particles.size());
}

namespace {

std::vector<TrainResult> train_particles(const TrainSetup& setup, const MatchingTicket& ticket, const Mask& mask,
                                         const std::vector<std::uint64_t>& seeds, TrainMode mode, Index cycle,
                                         int threads, const StepObserver& on_step) {
  const std::size_t n = seeds.size();
  std::vector<TrainResult> results(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t i) {
    try {
      TrainOptions opts;
      opts.cycle = cycle;
      opts.particle = static_cast<Index>(i + 1);
      opts.on_step = on_step;
      results[i] = train_particle(setup, ticket, mask, seeds[i], mode, opts);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) work(i);
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

CycleState run_cycle(const TrainSetup& setup, const LotteryConfig& cfg, const MatchingTicket& ticket, const Mask& mask,
                     Index cycle, const LotteryHooks& hooks) {
  Index count = cfg.particles;
  if (static_cast<std::size_t>(cycle) < cfg.particle_schedule.size()) {
    count = cfg.particle_schedule[static_cast<std::size_t>(cycle)];
  }
  if (count < 1) throw std::invalid_argument("cycle " + std::to_string(cycle) + ": particle count must be >= 1");

  CycleState state;
  state.cycle = cycle;
  state.mask = mask;
  state.sparsity = sparsity_of(mask);
  for (Index n = 1; n <= count; ++n) state.particle_seeds.push_back(particle_seed(cfg.seed, cycle, n));

  const TrainMode mode = cfg.swa ? TrainMode::Swa : TrainMode::Sgd;
  auto results = train_particles(setup, ticket, mask, state.particle_seeds, mode, cycle, cfg.threads, hooks.on_step);

  std::vector<Eigen::VectorXf> finals;
  finals.reserve(results.size());
  double loss = 0.0;
  for (auto& r : results) {
    loss += r.final_epoch_loss;
    finals.push_back(std::move(r.params));
  }
  state.train_loss = loss / static_cast<double>(results.size());
  state.averaged.segments = ticket.weights.segments;
  state.averaged.values = average_particles(finals);
  if (cfg.keep_particles) state.particles = std::move(finals);
  return state;
}

std::vector<CycleState> run_lottery(const TrainSetup& setup, const LotteryConfig& cfg, const LotteryHooks& hooks) {
  if (cfg.cycles < 0) throw std::invalid_argument("lottery: negative cycle count");
  const Model init = build_model(setup.spec, cfg.seed, setup.prunable_kinds);
  const MatchingTicket ticket =
      find_matching_ticket(setup, init.params, cfg.rewind_steps, cfg.ticket_lr, ticket_seed(cfg.seed));
  if (hooks.on_ticket) hooks.on_ticket(ticket);

  std::vector<CycleState> states;
  Mask mask = Mask::ones(setup.prunable.count());
  for (Index c = 0; c <= cfg.cycles; ++c) {
    CycleState state = run_cycle(setup, cfg, ticket, mask, c, hooks);
    Mask next = mask;
    if (c < cfg.cycles) {
      auto [pruned, event] = global_magnitude_prune(state.averaged.values, setup.prunable, mask, cfg.keep_ratio, c);
      state.prune = event;
      next = std::move(pruned);
    }
    if (hooks.on_cycle) hooks.on_cycle(state);
    states.push_back(std::move(state));
    mask = std::move(next);
  }
  return states;
}

}  // namespace

std::vector<CycleState> run_imp(const TrainSetup& setup, LotteryConfig cfg, const LotteryHooks& hooks) {
  cfg.particles = 1;
  cfg.particle_schedule.clear();
  cfg.swa = false;
  return run_lottery(setup, cfg, hooks);
}

std::vector<CycleState> run_swamp(const TrainSetup& setup, const LotteryConfig& cfg, const LotteryHooks& hooks) {
  if (cfg.particles < 1) throw std::invalid_argument("swamp: particle count must be >= 1");
  return run_lottery(setup, cfg, hooks);
}

CycleState run_with_mask(const TrainSetup& setup, const LotteryConfig& cfg, const Mask& mask,
                         const LotteryHooks& hooks) {
  if (mask.prunable_count() != setup.prunable.count()) {
    throw ShapeError("run_with_mask: mask covers " + std::to_string(mask.prunable_count()) + " coordinates, model has " +
                     std::to_string(setup.prunable.count()));
  }
  const Model init = build_model(setup.spec, cfg.seed, setup.prunable_kinds);
  const MatchingTicket ticket =
      find_matching_ticket(setup, init.params, cfg.rewind_steps, cfg.ticket_lr, ticket_seed(cfg.seed));
  if (hooks.on_ticket) hooks.on_ticket(ticket);
  CycleState state = run_cycle(setup, cfg, ticket, mask, 0, hooks);
  if (hooks.on_cycle) hooks.on_cycle(state);
  return state;
}

}  // namespace swamp
