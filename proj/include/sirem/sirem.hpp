#pragma once

#include "array.hpp"
#include "audio.hpp"
#include "baselines.hpp"
#include "coil.hpp"
#include "dataset.hpp"
#include "decoder.hpp"
#include "errors.hpp"
#include "fft.hpp"
#include "fusion.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "nufft.hpp"
#include "parallel.hpp"
#include "phantom.hpp"
#include "pipeline.hpp"
#include "policy.hpp"
#include "train.hpp"
#include "trajectory.hpp"
#include "types.hpp"
