#pragma once

#include "clipgrad/clip.hpp"
#include "clipgrad/error.hpp"
#include "clipgrad/harness/config.hpp"
#include "clipgrad/harness/emit.hpp"
#include "clipgrad/harness/instance_io.hpp"
#include "clipgrad/harness/runner.hpp"
#include "clipgrad/harness/verify.hpp"
#include "clipgrad/metrics.hpp"
#include "clipgrad/problems.hpp"
#include "clipgrad/rng.hpp"
#include "clipgrad/theory.hpp"
#include "clipgrad/version.hpp"
