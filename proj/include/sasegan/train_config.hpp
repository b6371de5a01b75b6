#pragma once

#include <cstdint>

#include "sasegan/errors.hpp"
#include "sasegan/losses.hpp"

namespace sasegan {

struct TrainConfig {
    int epochs = 100;
    int batch_size = 50;
    double lr = 2e-4;
    double rmsprop_decay = 0.9;
    double rmsprop_eps = 1e-8;
    double lambda_l1 = kDefaultLambdaL1;
    std::uint64_t seed = 0;
    int max_steps = 0;        // 0: run the full epoch budget
    int checkpoint_every = 100;

    void validate() const {
        if (lr <= 0.0) throw InvalidConfig("lr must be > 0");
        if (lambda_l1 < 0.0) throw InvalidConfig("lambda_l1 must be >= 0");
        if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
        if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
        if (rmsprop_decay < 0.0 || rmsprop_decay >= 1.0)
            throw InvalidConfig("rmsprop_decay must be in [0, 1)");
    }

    bool operator==(const TrainConfig&) const = default;
};

}  // namespace sasegan
