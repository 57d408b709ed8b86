#pragma once

#include "sdp/config.hpp"

namespace testing_support {

// Small residual-MLP run on blobs; a few hundred milliseconds end to end.
inline sdp::ExperimentConfig tiny_mlp_config() {
  sdp::ExperimentConfig c;
  c.arch = sdp::Architecture::kResidualMlp;
  c.mlp = {2, 16, 4, 3};
  c.dataset.kind = sdp::DatasetKind::kBlobs;
  c.dataset.train = 512;
  c.dataset.test = 128;
  c.dataset.classes = 3;
  c.dataset.features = 2;
  c.dataset.noise = 0.3;
  c.dataset.seed = 3;
  c.workers = 4;
  c.overlap = 4;
  c.batch_per_worker = 8;
  c.epochs_full = 2;
  c.schedule.eta_max = 0.01;
  c.schedule.eta_min = 0.0001;
  c.seed = 1;
  return c;
}

// Narrow mini-resnet on small synthetic images.
inline sdp::ExperimentConfig tiny_resnet_config() {
  sdp::ExperimentConfig c;
  c.resnet.channels = 8;
  c.resnet.blocks = 4;
  c.dataset.kind = sdp::DatasetKind::kImages;
  c.dataset.train = 256;
  c.dataset.test = 64;
  c.dataset.noise = 1.0;
  c.dataset.seed = 5;
  c.workers = 4;
  c.overlap = 4;
  c.batch_per_worker = 4;
  c.epochs_full = 1;
  c.schedule.eta_max = 0.05;
  c.seed = 2;
  return c;
}

}  // namespace testing_support
