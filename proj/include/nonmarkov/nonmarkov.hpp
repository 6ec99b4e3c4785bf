#pragma once

#include "nonmarkov/errors.hpp"
#include "nonmarkov/step_function.hpp"
#include "nonmarkov/multistate.hpp"
#include "nonmarkov/estimators.hpp"
#include "nonmarkov/covariance.hpp"
#include "nonmarkov/random.hpp"
#include "nonmarkov/parallel.hpp"
#include "nonmarkov/bootstrap.hpp"
#include "nonmarkov/bands.hpp"
#include "nonmarkov/elos.hpp"
#include "nonmarkov/simulator.hpp"
#include "nonmarkov/io.hpp"
#include "nonmarkov/coverage.hpp"
