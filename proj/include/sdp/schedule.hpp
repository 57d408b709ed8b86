#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sdp {

enum class ScheduleKind { kCosine, kMultistep };

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::kCosine;
  double eta_max = 0.2;
  double eta_min = 0.002;
  double warmup_fraction = 0.05;
  std::vector<double> milestones{0.5, 0.75};
  double decay = 0.1;

  // Throws ConfigError on an inconsistent schedule.
  void check() const;
};

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view text);

// Linear warmup from 0 to eta_max over floor(warmup_fraction * total) steps,
// then cosine annealing to eta_min at the final step, or step decay at the
// milestone fractions of training.
double lr_at(const ScheduleSpec& schedule, std::size_t step, std::size_t total_steps);

// ceil(E_full * N / P): training length that matches the full model's compute.
std::size_t flop_matched_epochs(std::size_t epochs_full, std::size_t workers, std::size_t overlap);

}  // namespace sdp
