#pragma once

#include "bernnet/attack.hpp"
#include "bernnet/bernstein.hpp"
#include "bernnet/certify.hpp"
#include "bernnet/dataset.hpp"
#include "bernnet/gradients.hpp"
#include "bernnet/interval_bounds.hpp"
#include "bernnet/layers.hpp"
#include "bernnet/network.hpp"
#include "bernnet/parallel.hpp"
#include "bernnet/reach.hpp"
#include "bernnet/serialize.hpp"
#include "bernnet/training.hpp"
