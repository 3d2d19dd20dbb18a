#pragma once

// Stochastic graph matching: learned matching distributions via a
// Gumbel-Sinkhorn relaxation with dummy nodes, iterative refinement, and
// Hungarian decoding.

#include "sgm/decode.hpp"
#include "sgm/encoder.hpp"
#include "sgm/graph.hpp"
#include "sgm/hungarian.hpp"
#include "sgm/matching.hpp"
#include "sgm/matrix.hpp"
#include "sgm/objectives.hpp"
#include "sgm/pair_io.hpp"
#include "sgm/refine.hpp"
#include "sgm/rng.hpp"
#include "sgm/sinkhorn.hpp"
#include "sgm/tape.hpp"
#include "sgm/train.hpp"
