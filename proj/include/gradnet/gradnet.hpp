#pragma once

#include "gradnet/numerics.hpp"
#include "gradnet/params.hpp"
#include "gradnet/activations.hpp"
#include "gradnet/networks.hpp"
#include "gradnet/builders.hpp"
#include "gradnet/gradcheck.hpp"
#include "gradnet/lse_oracle.hpp"
#include "gradnet/tasks.hpp"
#include "gradnet/train.hpp"
#include "gradnet/hamiltonian.hpp"
#include "gradnet/experiment.hpp"
