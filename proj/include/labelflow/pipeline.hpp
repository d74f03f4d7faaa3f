#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "labelflow/core.hpp"
#include "labelflow/data.hpp"
#include "labelflow/micro.hpp"
#include "labelflow/transport.hpp"

namespace labelflow {

struct DigitsConfig {
    std::filesystem::path path;
    bool has_header = false;
    std::size_t n_samples = 320;
    std::size_t n_labeled = 40;
    double cutoff_frac = 0.1;
    OtMetric metric = OtMetric::cost;
    SinkhornOptions sinkhorn;
    InitSpec init;
    Scaling scaling = Scaling::plain;
    RunConfig run{1.0, 10.0, 1e-3, 20.0};  // dt <= 0 selects 0.9 x the stability bound
};

struct DigitsReport {
    DigitsSample sample;
    WassersteinGraph weights;            // indexed in sampled order
    LabeledCloud cloud;                  // anchors moved last
    WeightGraph graph;                   // weights in cloud order
    MicroResult micro;
    std::vector<int> predicted;          // per sample, sampled order
    std::size_t scored = 0;              // unlabeled samples
    std::size_t correct = 0;
    double accuracy = 0.0;
    std::vector<std::size_t> confusion;  // 10 x 10, row = true digit
};

/// Samples the digits file, builds Wasserstein weights, runs the ten-label
/// micro system and scores the argmax labels of the unlabeled samples.
DigitsReport run_digits(const DigitsConfig& cfg);

}  // namespace labelflow
