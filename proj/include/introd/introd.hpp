#ifndef INTROD_INTROD_HPP_
#define INTROD_INTROD_HPP_

#include "introd/numcore.hpp"
#include "introd/rng.hpp"
#include "introd/binary_io.hpp"
#include "introd/biasgen.hpp"
#include "introd/network.hpp"
#include "introd/causal_teacher.hpp"
#include "introd/introd_core.hpp"
#include "introd/trainer_eval.hpp"
#include "introd/experiment.hpp"

#endif  // INTROD_INTROD_HPP_
