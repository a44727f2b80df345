#pragma once

#include "sobotest/errors.hpp"
#include "sobotest/sequence_model.hpp"
#include "sobotest/sobolev_geometry.hpp"
#include "sobotest/regularity_test.hpp"
#include "sobotest/lower_bound.hpp"
#include "sobotest/parallel.hpp"
#include "sobotest/mc_harness.hpp"
#include "sobotest/json_io.hpp"
