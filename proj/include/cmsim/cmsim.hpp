#pragma once

// Umbrella header for the memristive crossbar committee-machine simulator.

#include "cmsim/committee.hpp"
#include "cmsim/dense_net.hpp"
#include "cmsim/device.hpp"
#include "cmsim/formats.hpp"
#include "cmsim/harness.hpp"
#include "cmsim/mapping.hpp"
#include "cmsim/mnist.hpp"
#include "cmsim/nonideal.hpp"
#include "cmsim/rng.hpp"
#include "cmsim/solver.hpp"
#include "cmsim/stats.hpp"
