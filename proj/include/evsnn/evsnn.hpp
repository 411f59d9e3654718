#pragma once

#include "evsnn/tensor.hpp"
#include "evsnn/ops.hpp"
#include "evsnn/optim.hpp"
#include "evsnn/gradcheck.hpp"
#include "evsnn/serialize.hpp"
#include "evsnn/event_io.hpp"
#include "evsnn/neurons.hpp"
#include "evsnn/network.hpp"
#include "evsnn/metrics.hpp"
#include "evsnn/synthetic.hpp"
#include "evsnn/losses.hpp"
#include "evsnn/trainer.hpp"
#include "evsnn/energy.hpp"
