#include "sdp/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sdp/errors.hpp"

namespace sdp {

void ScheduleSpec::check() const {
  if (!(eta_min >= 0.0) || !(eta_max >= eta_min)) {
    throw ConfigError("schedule: need 0 <= eta_min <= eta_max");
  }
  if (!(warmup_fraction >= 0.0) || !(warmup_fraction < 1.0)) {
    throw ConfigError("schedule.warmup_fraction must lie in [0, 1)");
  }
  if (kind == ScheduleKind::kMultistep) {
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (!(milestones[i] > 0.0 && milestones[i] < 1.0) ||
          (i > 0 && !(milestones[i] > milestones[i - 1]))) {
        throw ConfigError("schedule.milestones must be strictly increasing within (0, 1)");
      }
    }
    if (!(decay > 0.0)) throw ConfigError("schedule.decay must be positive");
  }
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kCosine ? "cosine" : "multistep";
}

ScheduleKind parse_schedule_kind(std::string_view text) {
  if (text == "cosine") return ScheduleKind::kCosine;
  if (text == "multistep") return ScheduleKind::kMultistep;
  throw ConfigError("schedule.kind must be 'cosine' or 'multistep', got '" + std::string(text) +
                    "'");
}

double lr_at(const ScheduleSpec& s, std::size_t step, std::size_t total_steps) {
  if (step >= total_steps) {
    throw UsageError("lr_at: step " + std::to_string(step) + " outside a run of " +
                     std::to_string(total_steps) + " steps");
  }
  const auto warmup = static_cast<std::size_t>(
      std::floor(s.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) {
    return s.eta_max * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (s.kind == ScheduleKind::kCosine) {
    const std::size_t span = total_steps - 1 - warmup;
    const double progress =
        span == 0 ? 0.0 : static_cast<double>(step - warmup) / static_cast<double>(span);
    return s.eta_min +
           0.5 * (s.eta_max - s.eta_min) * (1.0 + std::cos(std::numbers::pi * progress));
  }
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  const auto passed = std::count_if(s.milestones.begin(), s.milestones.end(),
                                    [&](double m) { return progress >= m; });
  return s.eta_max * std::pow(s.decay, static_cast<double>(passed));
}

std::size_t flop_matched_epochs(std::size_t epochs_full, std::size_t workers, std::size_t overlap) {
  if (overlap == 0) throw ConfigError("flop matching needs P >= 1");
  if (overlap > workers) {
    throw ConfigError("flop matching needs P <= N; got P=" + std::to_string(overlap) +
                      ", N=" + std::to_string(workers));
  }
  if (epochs_full == 0) throw ConfigError("epochs_full must be >= 1");
  return (epochs_full * workers + overlap - 1) / overlap;
}

}  // namespace sdp
