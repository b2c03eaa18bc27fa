#pragma once

#include "qmeter/dynamics.hpp"
#include "qmeter/errors.hpp"
#include "qmeter/experiment.hpp"
#include "qmeter/gaussian_state.hpp"
#include "qmeter/kernel_io.hpp"
#include "qmeter/reduction_kernels.hpp"
#include "qmeter/sequence_engine.hpp"
#include "qmeter/sme_integrator.hpp"
#include "qmeter/spectra.hpp"
